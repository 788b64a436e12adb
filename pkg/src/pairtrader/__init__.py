"""Pairs trading with a Kalman filter whose gain is produced by a recurrent network."""

from .data import DataError, QuoteSeries, SyntheticSpec, generate_synthetic, load_csv, save_csv, split
from .engine import PRESETS, BacktestResult, FittedPipeline, PipelineSpec, compare, preset, run_backtest
from .gainnet import GainNetConfig, GainNetwork, load_checkpoint, run_knet, save_checkpoint
from .kalman import FilterDivergence, NoiseParams, estimate_noise, kf_step, run_kf
from .ledger import TradeStats, Transaction, compute_stats, pnl_series
from .policy import CUMULATIVE, INSTANTANEOUS, PolicyState, policy_step
from .ssmodel import ModelKind, StateSpaceSpec
from .training import TrainConfig, train_stage1, train_stage2

__version__ = "0.1.0"

__all__ = [
    "BacktestResult", "CUMULATIVE", "DataError", "FilterDivergence", "FittedPipeline", "GainNetConfig",
    "GainNetwork", "INSTANTANEOUS", "ModelKind", "NoiseParams", "PRESETS", "PipelineSpec", "PolicyState",
    "QuoteSeries", "StateSpaceSpec", "SyntheticSpec", "TradeStats", "TrainConfig", "Transaction", "compare",
    "compute_stats", "estimate_noise", "generate_synthetic", "kf_step", "load_checkpoint", "load_csv",
    "pnl_series", "policy_step", "preset", "run_backtest", "run_kf", "run_knet", "save_checkpoint", "save_csv",
    "split", "train_stage1", "train_stage2",
]
