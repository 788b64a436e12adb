"""Two-stage training of the gain network.

Stage 1 fits the network to one-step observation prediction on contiguous
batches. Stage 2 maximises the realised PnL: trades are executed with the
hard policy, and the gradient flows through a smoothed (Gaussian-CDF) version
of the open/close rules evaluated at the executed trades.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .data import QuoteSeries
from .engine import TradeBook
from .gainnet import GainNetwork, KNetMemory, run_knet, sequence_tensors
from .indicator import DEFAULT_MIN_SAMPLES, DEFAULT_WINDOW, rolling_zscores
from .kalman import FilterDivergence, initial_estimate
from .ledger import Transaction, reward_terms
from .policy import CUMULATIVE, SurrogateConfig, surrogate_step
from .ssmodel import StateSpaceSpec

log = logging.getLogger(__name__)

MAX_RETRIES = 3


@dataclass(frozen=True)
class TrainConfig:
    eta1: float = 1e-3
    eta2: float = 1e-4
    epochs1: int = 50
    epochs2: int = 30
    batches: int = 10
    bptt_truncation: int | None = 40
    gamma: float = 0.2
    grad_clip: float = 1.0
    seed: int = 0
    zscore_window: int = DEFAULT_WINDOW
    zscore_min_samples: int = DEFAULT_MIN_SAMPLES
    policy_mode: str = CUMULATIVE

    def __post_init__(self):
        if self.eta1 < 0 or self.eta2 < 0:
            raise ValueError("step sizes must be non-negative")
        if self.epochs1 < 0 or self.epochs2 < 0 or self.batches < 1:
            raise ValueError("epochs must be >= 0 and batches >= 1")


@dataclass
class TrainReport:
    stage1_losses: list[float] = field(default_factory=list)
    stage1_mse_db: float | None = None
    stage2_losses: list[float] = field(default_factory=list)
    stage2_pnl: list[float] = field(default_factory=list)
    stage2_mse_db: float | None = None
    best_epoch: int | None = None
    aborted: str | None = None
    checkpoints: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _to_db(mse: float) -> float:
    return 10.0 * math.log10(mse) if mse > 0 else -math.inf


def loss_stage1(net: GainNetwork, series: QuoteSeries, spec: StateSpaceSpec, x0=None,
                truncation: int | None = None, gains=None) -> torch.Tensor:
    """Mean squared one-step observation prediction error."""
    if len(series) < 2:
        raise ValueError("need at least 2 samples")
    if x0 is None:
        x0, _ = initial_estimate(series, spec)
    trace = run_knet(net, series, spec, x0, truncation=truncation, gains=gains)
    loss = (trace.innovation ** 2).sum(1).mean()
    if not torch.isfinite(loss):
        raise FilterDivergence("non-finite stage-1 loss")
    return loss


def _snapshot(net):
    return net.theta, [b.clone() for b in net.buffers()]


def _restore(net, snap):
    net.theta = snap[0]
    with torch.no_grad():
        for b, saved in zip(net.buffers(), snap[1]):
            b.copy_(saved)


def _clip_and_step(net, opt, max_norm):
    if max_norm:
        torch.nn.utils.clip_grad_norm_(net.parameters(), max_norm)
    opt.step()


def observation_mse(net: GainNetwork, series: QuoteSeries, spec: StateSpaceSpec, x0=None,
                    start: int = 0) -> float:
    """Observation MSE of a no-grad pass, averaged over days ``start`` onward."""
    if x0 is None:
        x0, _ = initial_estimate(series, spec)
    was_training = net.training
    net.eval()
    with torch.no_grad():
        trace = run_knet(net, series, spec, x0)
    net.train(was_training)
    return float((trace.innovation[start:] ** 2).sum(1).mean())


def train_stage1(net: GainNetwork, series: QuoteSeries, spec: StateSpaceSpec, cfg: TrainConfig,
                 x0=None, calibrate: bool = True, report: TrainReport | None = None):
    """Adam on the observation-prediction loss over ``cfg.batches`` contiguous
    batches per epoch; the filter state carries over between batches."""
    report = report or TrainReport()
    torch.manual_seed(cfg.seed)
    if x0 is None:
        x0, _ = initial_estimate(series, spec)
    if calibrate:
        net.calibrate(series, spec)
    tensors = sequence_tensors(series, spec)
    bounds = [(int(c[0]), int(c[-1]) + 1) for c in np.array_split(np.arange(len(series)), cfg.batches) if len(c)]
    opt = torch.optim.Adam(net.parameters(), lr=cfg.eta1)
    good = _snapshot(net)
    retries = 0
    epoch = 0
    while epoch < cfg.epochs1:
        net.train()
        memory = KNetMemory.start(x0, net.initial_hidden())
        total = 0.0
        try:
            for lo, hi in bounds:
                opt.zero_grad()
                trace = run_knet(net, series, spec, memory=memory, truncation=cfg.bptt_truncation,
                                 tensors=tensors, start=lo, stop=hi)
                loss = (trace.innovation ** 2).sum(1).mean()
                if not torch.isfinite(loss):
                    raise FilterDivergence(f"non-finite loss in epoch {epoch}")
                loss.backward()
                _clip_and_step(net, opt, cfg.grad_clip)
                memory = trace.memory.detach()
                total += loss.item() * (hi - lo)
        except FilterDivergence as exc:
            _restore(net, good)
            retries += 1
            if retries > MAX_RETRIES:
                report.aborted = f"stage 1: {exc}"
                log.warning("%s; keeping last good parameters", report.aborted)
                break
            log.warning("stage 1: %s; halving the step size", exc)
            opt = torch.optim.Adam(net.parameters(), lr=cfg.eta1 * 0.5 ** retries)
            continue
        report.stage1_losses.append(total / len(series))
        good = _snapshot(net)
        epoch += 1
    net.eval()
    report.stage1_mse_db = _to_db(observation_mse(net, series, spec, x0))
    return net, report


@dataclass
class Stage2Pass:
    loss: torch.Tensor
    surrogate: torch.Tensor
    pnl: float
    mse: float
    ledger: list[Transaction]
    timing: list[tuple[int, int]]


def _hard_trades(z: np.ndarray, valid: np.ndarray, hedges: np.ndarray, series: QuoteSeries, mode: str,
                 trade_start: int = 0) -> TradeBook:
    book = TradeBook(mode)
    T = len(series)
    for t in range(T):
        a, b = float(series.alpha[t]), float(series.beta[t])
        zt = float(z[t]) if valid[t] and t >= trade_start else None
        book.on_day(t, zt, float(hedges[t]), a, b, allow_open=t < T - 1)
    book.finish(T - 1, float(hedges[T - 1]), float(series.alpha[T - 1]), float(series.beta[T - 1]))
    return book


def surrogate_pnl(z: torch.Tensor, hedges: torch.Tensor, series: QuoteSeries, ledger, timing,
                  gamma: float, mode: str = CUMULATIVE) -> torch.Tensor:
    """Smoothed PnL of a fixed set of executed trades.

    Each reward uses the smoothed open value at the open day and, for
    cumulative closes driven by the indicator, the smoothed close value at the
    close day. Trade timing and the sign ``zeta`` stay fixed.
    """
    cfg = SurrogateConfig(gamma)
    u = lambda v: surrogate_step(v, cfg)  # noqa: E731
    total = z.new_zeros(())
    for tx, (gap_open, gap_close) in zip(ledger, timing):
        zo = z[tx.t_open]
        op = (u(-1.0 - zo) - u(zo - 1.0)) * u(float(gap_open))
        if mode == CUMULATIVE and not tx.forced:
            zc, zp = z[tx.t_close], z[tx.t_close - 1]
            op = op * u(-zp * zc) * (1.0 - u(float(gap_close)))
        r_beta, r_alpha = reward_terms(
            op, tx.zeta, hedges[tx.t_open], hedges[tx.t_close],
            float(series.alpha[tx.t_open]), float(series.alpha[tx.t_close]),
            float(series.beta[tx.t_open]), float(series.beta[tx.t_close]),
        )
        total = total + r_beta + r_alpha
    return total


def hard_pnl_tensor(hedges: torch.Tensor, series: QuoteSeries, ledger) -> torch.Tensor:
    total = hedges.new_zeros(())
    for tx in ledger:
        r_beta, r_alpha = reward_terms(
            tx.op_open, tx.zeta, hedges[tx.t_open], hedges[tx.t_close],
            float(series.alpha[tx.t_open]), float(series.alpha[tx.t_close]),
            float(series.beta[tx.t_open]), float(series.beta[tx.t_close]),
        )
        total = total + r_beta + r_alpha
    return total


def _hedge_tensor(trace, spec: StateSpaceSpec) -> torch.Tensor:
    idx = spec.hedge_index
    if idx is None:
        return torch.full((trace.x_hat.shape[0],), float(spec.static_hedge), dtype=trace.x_hat.dtype)
    return trace.x_hat[:, idx]


def loss_stage2(net: GainNetwork, series: QuoteSeries, spec: StateSpaceSpec, cfg: TrainConfig, x0=None,
                truncation: int | None = -1, tensors=None, trade_start: int = 0) -> Stage2Pass:
    """Negative realised PnL with straight-through surrogate gradients.

    The returned ``loss`` equals minus the hard PnL; its gradient is that of
    minus :func:`surrogate_pnl`. ``truncation=-1`` uses ``cfg.bptt_truncation``.
    """
    if x0 is None:
        x0, _ = initial_estimate(series, spec)
    trunc = cfg.bptt_truncation if truncation == -1 else truncation
    trace = run_knet(net, series, spec, x0, truncation=trunc, tensors=tensors)
    dy = trace.innovation[:, 0]
    if not bool(torch.isfinite(dy).all()):
        raise FilterDivergence("non-finite stage-2 innovation")
    z, valid = rolling_zscores(dy, cfg.zscore_window, cfg.zscore_min_samples)
    hedges = _hedge_tensor(trace, spec)
    book = _hard_trades(z.detach().numpy(), valid, hedges.detach().numpy(), series, cfg.policy_mode, trade_start)
    mse = float((trace.innovation.detach() ** 2).sum(1).mean())
    if not book.transactions:
        zero = dy.sum() * 0.0
        return Stage2Pass(zero, zero, 0.0, mse, [], [])
    soft = surrogate_pnl(z, hedges, series, book.transactions, book.timing, cfg.gamma, cfg.policy_mode)
    hard = hard_pnl_tensor(hedges, series, book.transactions)
    loss = -(soft + (hard - soft).detach())
    pnl = float(sum(tx.reward for tx in book.transactions))
    return Stage2Pass(loss, soft, pnl, mse, book.transactions, book.timing)


def train_stage2(net: GainNetwork, series: QuoteSeries, spec: StateSpaceSpec, cfg: TrainConfig,
                 x0=None, report: TrainReport | None = None):
    """Full-sequence Adam steps on the PnL loss; keeps the best-PnL parameters.

    Feature statistics stay frozen so every epoch's forward pass is an exact
    evaluation of the current parameters. Epoch 0 is the incoming checkpoint.
    """
    report = report or TrainReport()
    torch.manual_seed(cfg.seed)
    if x0 is None:
        x0, _ = initial_estimate(series, spec)
    tensors = sequence_tensors(series, spec)
    net.eval()
    opt = torch.optim.Adam(net.parameters(), lr=cfg.eta2)
    best = (-math.inf, None, None)
    good = net.theta
    retries = 0
    epoch = 0
    while epoch <= cfg.epochs2:
        opt.zero_grad()
        try:
            res = loss_stage2(net, series, spec, cfg, x0, tensors=tensors)
        except FilterDivergence as exc:
            retries += 1
            net.theta = good
            if retries > MAX_RETRIES or epoch == 0:
                report.aborted = f"stage 2: {exc}"
                log.warning("%s; keeping best parameters", report.aborted)
                break
            log.warning("stage 2: %s; halving the step size", exc)
            opt = torch.optim.Adam(net.parameters(), lr=cfg.eta2 * 0.5 ** retries)
            epoch -= 1
            report.stage2_pnl.pop()
            report.stage2_losses.pop()
            continue
        good = net.theta
        report.stage2_pnl.append(res.pnl)
        report.stage2_losses.append(res.loss.item())
        if res.pnl > best[0]:
            best = (res.pnl, net.theta, epoch)
        if epoch == cfg.epochs2:
            break
        if res.ledger:
            res.loss.backward()
            _clip_and_step(net, opt, cfg.grad_clip)
        epoch += 1
    if best[1] is not None:
        net.theta = best[1]
        report.best_epoch = best[2]
    report.stage2_mse_db = _to_db(observation_mse(net, series, spec, x0))
    return net, report


def evaluate(net: GainNetwork, series: QuoteSeries, spec: StateSpaceSpec, cfg: TrainConfig, x0=None,
             trade_start: int = 0) -> Stage2Pass:
    """Hard evaluation (no gradient) of PnL and observation MSE."""
    net.eval()
    with torch.no_grad():
        return loss_stage2(net, series, spec, cfg, x0, truncation=None, trade_start=trade_start)
