"""Day-by-day execution of tracker -> indicator -> Bollinger policy -> ledger."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .data import QuoteSeries
from .gainnet import GainNetwork, KNetMemory, knet_step
from .indicator import DEFAULT_MIN_SAMPLES, DEFAULT_WINDOW, RollingStd
from .kalman import (DEFAULT_GRID, FilterDivergence, FilterState, NoiseParams, estimate_noise, fit_spec,
                     initial_estimate, kf_step)
from .ledger import TradeStats, Transaction, compute_stats, pnl_series, spread_sign
from .policy import CUMULATIVE, POLICY_MODES, PolicyState, policy_step
from .ssmodel import ModelKind, StateSpaceSpec, evolution_matrix, observation, observation_operator

log = logging.getLogger(__name__)

KF = "kf"
LEARNED = "learned_gain"
FILTER_VARIANCE = "filter_variance"
SPREAD_VARIANCE = "spread_variance"
ROLLING_STD = "rolling_std"


@dataclass(frozen=True)
class PipelineSpec:
    name: str
    tracker: str
    model: ModelKind
    indicator: str
    policy_mode: str = CUMULATIVE
    checkpoint: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind.parse(self.model))
        if self.tracker not in (KF, LEARNED):
            raise ValueError(f"unknown tracker {self.tracker!r}")
        if self.indicator not in (FILTER_VARIANCE, SPREAD_VARIANCE, ROLLING_STD):
            raise ValueError(f"unknown indicator {self.indicator!r}")
        if self.policy_mode not in POLICY_MODES:
            raise ValueError(f"unknown policy mode {self.policy_mode!r}")
        if self.indicator == SPREAD_VARIANCE and self.model is ModelKind.CI:
            raise ValueError("the CI model has no spread state")

    def with_(self, **kw) -> "PipelineSpec":
        fields_ = dict(self.__dict__)
        fields_.update(kw)
        return PipelineSpec(**fields_)


PRESETS = {
    "B1": PipelineSpec("B1", KF, ModelKind.CI, FILTER_VARIANCE),
    "B2": PipelineSpec("B2", KF, ModelKind.PCI_CLEGG, SPREAD_VARIANCE),
    "B3": PipelineSpec("B3", LEARNED, ModelKind.CI, ROLLING_STD),
    "KBPT": PipelineSpec("KBPT", LEARNED, ModelKind.PCI_PROPOSED, ROLLING_STD),
}


def preset(name: str, policy_mode: str = CUMULATIVE) -> PipelineSpec:
    try:
        return PRESETS[name.strip().upper()].with_(policy_mode=policy_mode)
    except KeyError:
        raise ValueError(f"unknown pipeline {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class FittedPipeline:
    """A pipeline with everything needed to run: model, noise or network, warm start."""

    spec: PipelineSpec
    model: StateSpaceSpec
    x0: np.ndarray
    P0: np.ndarray | None = None
    noise: NoiseParams | None = None
    net: GainNetwork | None = None


def fit_model_based(spec: PipelineSpec, fit_series: QuoteSeries, init_series: QuoteSeries,
                    q_grid=DEFAULT_GRID, r_grid=DEFAULT_GRID, model: StateSpaceSpec | None = None) -> FittedPipeline:
    """Estimate rho/static hedge (unless ``model`` is given) and noise
    variances on ``fit_series``; the warm start comes from the head of
    ``init_series``."""
    model = model or fit_spec(fit_series, spec.model)
    x0, P0 = initial_estimate(init_series, model)
    noise = estimate_noise(fit_series, model, q_grid, r_grid)
    return FittedPipeline(spec, model, x0, P0, noise=noise)


class KFTracker:
    def __init__(self, fitted: FittedPipeline):
        self.model = fitted.model
        self.noise = fitted.noise
        self.F = evolution_matrix(self.model)
        self.state = FilterState.initial(fitted.x0, fitted.P0)

    def step(self, alpha: float, beta: float) -> FilterState:
        G = observation_operator(self.model, alpha)
        self.state = kf_step(self.state, self.F, G, observation(self.model, alpha, beta), self.noise)
        return self.state


class LearnedTracker:
    def __init__(self, fitted: FittedPipeline):
        self.model = fitted.model
        self.net = fitted.net
        self.net.eval()
        self.F = torch.as_tensor(np.diag(evolution_matrix(self.model)).copy(), dtype=torch.float64)
        self.memory = KNetMemory.start(fitted.x0, self.net.initial_hidden())

    def step(self, alpha: float, beta: float) -> FilterState:
        with torch.no_grad():
            x, dy, y_pred, self.memory = knet_step(
                self.memory, self.model, alpha, observation(self.model, alpha, beta), self.net, F=self.F)
        return FilterState(x.numpy(), None, y_pred.numpy(), dy.numpy())


@dataclass
class OpenPosition:
    t: int
    op: int
    zeta: int
    h: float
    alpha: float
    beta: float
    gap: int


@dataclass
class TradeBook:
    """Policy state machine plus transaction bookkeeping.

    ``timing`` holds, for each transaction, the values of ``tau_close -
    tau_open`` just before the open and just before the close; the training
    surrogate treats them as constants.
    """

    mode: str = CUMULATIVE
    state: PolicyState = field(default_factory=PolicyState)
    position: OpenPosition | None = None
    transactions: list[Transaction] = field(default_factory=list)
    timing: list[tuple[int, int]] = field(default_factory=list)

    def on_day(self, t: int, z: float | None, h: float, alpha: float, beta: float, allow_open: bool = True):
        gap_before = self.state.tau_close - self.state.tau_open
        action, self.state = policy_step(t, z, self.state, self.mode, allow_open)
        if action.close:
            self._close(t, h, alpha, beta, gap_before, forced=False)
            gap_before = self.state.tau_close - self.state.tau_open
        if action.open:
            self.position = OpenPosition(t, action.open, spread_sign(beta, h, alpha), h, alpha, beta, gap_before)
        return action

    def _close(self, t, h, alpha, beta, gap, forced):
        p = self.position
        self.transactions.append(Transaction(p.t, t, p.op, p.zeta, p.h, h, p.alpha, alpha, p.beta, beta, forced))
        self.timing.append((p.gap, gap))
        self.position = None

    def finish(self, t: int, h: float, alpha: float, beta: float) -> None:
        """Force-close any position still open at the end of the horizon."""
        if self.position is not None:
            self._close(t, h, alpha, beta, self.state.tau_close - self.state.tau_open, forced=True)


@dataclass
class BacktestResult:
    spec: PipelineSpec
    ledger: list[Transaction]
    pnl: np.ndarray
    stats: TradeStats
    start: int
    zscores: np.ndarray
    hedges: np.ndarray
    innovations: np.ndarray
    forced_close: bool
    error: str | None = None


def _indicator(kind: str, state: FilterState, model: StateSpaceSpec, roll: RollingStd, t: int,
               min_samples: int):
    if kind == ROLLING_STD:
        return roll.update_and_score(float(state.innovation[0]))
    if t < min_samples - 1:
        return None
    if kind == FILTER_VARIANCE:
        var = float(state.innovation_var[0, 0])
        return float(state.innovation[0]) / math.sqrt(var) if var > 0 else None
    i = model.spread_index
    var = float(state.P[i, i])
    return float(state.x_hat[i]) / math.sqrt(var) if var > 0 else None


def run_backtest(fitted: FittedPipeline, series: QuoteSeries, trade_start: int = 0,
                 window: int = DEFAULT_WINDOW, min_samples: int = DEFAULT_MIN_SAMPLES) -> BacktestResult:
    """Run the pipeline over every day of ``series``; trades only from ``trade_start``.

    Days before ``trade_start`` advance the tracker and the indicator window
    without trading, so an out-of-sample period can continue from in-sample
    history. Any position open at the last day is force-closed there.
    """
    spec, model = fitted.spec, fitted.model
    if spec.tracker == LEARNED and fitted.net is None:
        raise ValueError(f"{spec.name}: learned-gain tracker needs a trained network")
    if not 0 <= trade_start < len(series) - 1:
        raise ValueError("trade_start must leave at least two trading days")
    tracker = KFTracker(fitted) if spec.tracker == KF else LearnedTracker(fitted)
    roll = RollingStd(window, min_samples)
    book = TradeBook(spec.policy_mode)
    T = len(series)
    zs = np.full(T, np.nan)
    hs = np.full(T, np.nan)
    dys = np.full(T, np.nan)
    error = None
    last = T - 1
    for t in range(T):
        a, b = float(series.alpha[t]), float(series.beta[t])
        try:
            state = tracker.step(a, b)
        except FilterDivergence as exc:
            error = f"filter diverged at day {t}: {exc}"
            last = t - 1
            break
        h = float(model.hedge(state.x_hat))
        z = _indicator(spec.indicator, state, model, roll, t, min_samples)
        hs[t], dys[t] = h, float(state.innovation[0])
        if z is not None:
            zs[t] = z
        if t < trade_start:
            book.on_day(t, None, h, a, b)
            continue
        book.on_day(t, z, h, a, b, allow_open=t < T - 1)
    forced = False
    if last >= trade_start and book.position is not None:
        forced = True
        book.finish(last, hs[last], float(series.alpha[last]), float(series.beta[last]))
    horizon = T - trade_start
    pnl = pnl_series(book.transactions, horizon, start=trade_start)
    stats = compute_stats(book.transactions, horizon)
    if error:
        log.error("%s: %s", spec.name, error)
    return BacktestResult(spec, book.transactions, pnl, stats, trade_start, zs, hs, dys, forced, error)


def compare(pipelines: Sequence[FittedPipeline], series: QuoteSeries, trade_start: int = 0,
            window: int = DEFAULT_WINDOW, min_samples: int = DEFAULT_MIN_SAMPLES) -> dict[str, BacktestResult | str]:
    """Run several pipelines on one series. A failing pipeline yields an error
    string in place of its result and does not stop the others."""
    out: dict[str, BacktestResult | str] = {}
    for fitted in pipelines:
        try:
            out[fitted.spec.name] = run_backtest(fitted, series, trade_start, window, min_samples)
        except Exception as exc:  # reported per pipeline
            log.error("%s failed: %s", fitted.spec.name, exc)
            out[fitted.spec.name] = f"{type(exc).__name__}: {exc}"
    return out
