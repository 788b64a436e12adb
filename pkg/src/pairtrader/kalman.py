"""Model-based Kalman filtering and static parameter estimation."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import QuoteSeries
from .ssmodel import ModelKind, StateSpaceSpec, evolution_matrix, observation, observation_operator

DEFAULT_GRID = tuple(10.0 ** (k / 2.0) for k in range(-20, 1))
INIT_WINDOW = 100
LOGLIK_BURN_IN = 10


class FilterDivergence(ArithmeticError):
    """Raised when the filter cannot form a finite update."""


class DegenerateSeriesWarning(UserWarning):
    pass


@dataclass(frozen=True)
class NoiseParams:
    q: tuple[float, ...]
    r: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(v) for v in np.atleast_1d(self.q)))
        object.__setattr__(self, "r", tuple(float(v) for v in np.atleast_1d(self.r)))
        if min(self.q) < 0 or min(self.r) < 0:
            raise ValueError("noise variances must be non-negative")

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q)

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.r)


@dataclass(frozen=True, eq=False)
class FilterState:
    """Posterior after one step. ``innovation_var`` is the full predicted
    observation covariance (``obs_dim x obs_dim``)."""

    x_hat: np.ndarray
    P: np.ndarray
    y_pred: np.ndarray | None = None
    innovation: np.ndarray | None = None
    innovation_var: np.ndarray | None = None
    x_prior: np.ndarray | None = None
    gain: np.ndarray | None = None

    @classmethod
    def initial(cls, x0, P0) -> "FilterState":
        return cls(np.asarray(x0, dtype=float), np.asarray(P0, dtype=float))


def kf_step(state: FilterState, F: np.ndarray, G: np.ndarray, y, noise: NoiseParams) -> FilterState:
    """One predict/update cycle with a Joseph-form covariance update."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x_prior = F @ state.x_hat
    P_prior = F @ state.P @ F.T + noise.Q
    y_pred = G @ x_prior
    innovation = y - y_pred
    S = G @ P_prior @ G.T + noise.R
    PGt = P_prior @ G.T
    if not np.any(PGt):
        K = np.zeros_like(PGt)
    else:
        try:
            if np.linalg.cond(S) > 1e14:
                raise np.linalg.LinAlgError
            K = np.linalg.solve(S.T, PGt.T).T
        except np.linalg.LinAlgError:
            raise FilterDivergence("singular innovation covariance") from None
    x_hat = x_prior + K @ innovation
    A = np.eye(len(x_hat)) - K @ G
    P = A @ P_prior @ A.T + K @ noise.R @ K.T
    P = 0.5 * (P + P.T)
    if not (np.all(np.isfinite(x_hat)) and np.all(np.isfinite(P))):
        raise FilterDivergence("non-finite filter state")
    return FilterState(x_hat, P, y_pred, innovation, S, x_prior, K)


def ci_indicator(state: FilterState) -> float:
    """Innovation normalised by the filter's own predicted standard deviation."""
    var = float(state.innovation_var[0, 0])
    if not var > 0:
        raise ValueError("innovation variance must be positive")
    return float(state.innovation[0]) / math.sqrt(var)


def estimate_ci_params(alpha, beta) -> tuple[float, float]:
    """Least-squares fit of ``beta = h * alpha + mu``."""
    a = np.asarray(alpha, dtype=float)
    b = np.asarray(beta, dtype=float)
    if len(a) < 2 or len(a) != len(b):
        raise ValueError("need at least two aligned samples")
    da = a - a.mean()
    sxx = float(da @ da)
    if sxx <= 1e-14 * max(1.0, float(a @ a)):
        raise ValueError("alpha is constant; hedge ratio is not identifiable")
    h = float(da @ (b - b.mean())) / sxx
    return h, float(b.mean() - h * a.mean())


def estimate_ar1(residuals) -> float:
    """AR(1) coefficient by least squares without intercept, clamped to +-0.999."""
    s = np.asarray(residuals, dtype=float)
    if len(s) < 3:
        raise ValueError("need at least 3 residuals")
    denom = float(s[:-1] @ s[:-1])
    if denom == 0.0:
        warnings.warn("all-zero residuals; using rho = 0", DegenerateSeriesWarning, stacklevel=2)
        return 0.0
    rho = float(s[1:] @ s[:-1]) / denom
    return min(0.999, max(-0.999, rho))


def fit_spec(series: QuoteSeries, kind: ModelKind | str) -> StateSpaceSpec:
    """Static parameters (rho, static hedge) from a least-squares fit of ``series``."""
    kind = ModelKind.parse(kind)
    h, mu = estimate_ci_params(series.alpha, series.beta)
    if kind is ModelKind.CI:
        return StateSpaceSpec(kind)
    rho = estimate_ar1(series.beta - h * series.alpha - mu)
    return StateSpaceSpec(kind, rho=rho, static_hedge=h)


def initial_estimate(series: QuoteSeries, spec: StateSpaceSpec, window: int = INIT_WINDOW):
    """Warm start ``(x0, P0)`` from a least-squares fit over the first ``window`` points."""
    w = min(window, len(series))
    h, mu = estimate_ci_params(series.alpha[:w], series.beta[:w])
    if spec.kind is ModelKind.CI:
        x0 = np.array([h, mu])
    elif spec.kind is ModelKind.PCI_CLEGG:
        mu = float(np.mean(series.beta[:w] - spec.static_hedge * series.alpha[:w]))
        x0 = np.array([series.alpha[0], 0.0, mu])
    else:
        x0 = np.array([h, mu, 0.0])
    P0 = np.diag(0.1 * x0**2 + 1e-4)
    return x0, P0


def expand_noise(spec: StateSpaceSpec, q: float, r: float, q_spread: float | None = None,
                 alpha_var: float = 1e-4) -> NoiseParams:
    """Map grid scalars onto per-state variances.

    Random-walk states share ``q``; the AR(1) spread uses ``q_spread``
    (defaults to ``q``). In the Clegg layout the alpha row is noiseless and
    its state follows alpha's empirical increment variance.
    """
    qs = q if q_spread is None else q_spread
    if spec.kind is ModelKind.CI:
        return NoiseParams((q, q), (r,))
    if spec.kind is ModelKind.PCI_CLEGG:
        return NoiseParams((alpha_var, qs, q), (r, 0.0))
    return NoiseParams((q, q, qs), (r,))


@dataclass
class KFTrace:
    x_hat: np.ndarray
    x_prior: np.ndarray
    P: np.ndarray
    y_pred: np.ndarray
    innovation: np.ndarray
    innovation_var: np.ndarray
    gain: np.ndarray


def run_kf(series: QuoteSeries, spec: StateSpaceSpec, noise: NoiseParams, x0=None, P0=None) -> KFTrace:
    """Filter every day of ``series``; ``x0`` is the estimate before day 0."""
    if x0 is None or P0 is None:
        x0_d, P0_d = initial_estimate(series, spec)
        x0 = x0_d if x0 is None else x0
        P0 = P0_d if P0 is None else P0
    F = evolution_matrix(spec)
    state = FilterState.initial(x0, P0)
    T, n, m = len(series), spec.state_dim, spec.obs_dim
    out = KFTrace(
        np.empty((T, n)), np.empty((T, n)), np.empty((T, n, n)), np.empty((T, m)),
        np.empty((T, m)), np.empty((T, m, m)), np.empty((T, n, m)),
    )
    for t in range(T):
        a, b = series.alpha[t], series.beta[t]
        state = kf_step(state, F, observation_operator(spec, a), observation(spec, a, b), noise)
        out.x_hat[t] = state.x_hat
        out.x_prior[t] = state.x_prior
        out.P[t] = state.P
        out.y_pred[t] = state.y_pred
        out.innovation[t] = state.innovation
        out.innovation_var[t] = state.innovation_var
        out.gain[t] = state.gain
    return out


def batched_loglik(series: QuoteSeries, spec: StateSpaceSpec, candidates: list[NoiseParams],
                   x0=None, P0=None, burn_in: int = LOGLIK_BURN_IN) -> np.ndarray:
    """Gaussian innovation log-likelihood for many noise settings at once."""
    if x0 is None or P0 is None:
        x0, P0 = initial_estimate(series, spec)
    B, n, m = len(candidates), spec.state_dim, spec.obs_dim
    Q = np.stack([c.Q for c in candidates])
    R = np.stack([c.R for c in candidates])
    F = evolution_matrix(spec)
    x = np.tile(np.asarray(x0, dtype=float), (B, 1))
    P = np.tile(np.asarray(P0, dtype=float), (B, 1, 1))
    eye = np.eye(n)
    ll = np.zeros(B)
    with np.errstate(all="ignore"):
        for t in range(len(series)):
            a, b = series.alpha[t], series.beta[t]
            G = observation_operator(spec, a)
            y = observation(spec, a, b)
            x = x @ F.T
            P = F @ P @ F.T + Q
            PGt = P @ G.T
            S = G @ PGt + R
            dy = y - x @ G.T
            Sinv = np.linalg.inv(S)
            K = PGt @ Sinv
            x = x + np.einsum("bnm,bm->bn", K, dy)
            A = eye - K @ G
            P = A @ P @ A.transpose(0, 2, 1) + K @ R @ K.transpose(0, 2, 1)
            P = 0.5 * (P + P.transpose(0, 2, 1))
            if t >= burn_in:
                _, logdet = np.linalg.slogdet(S)
                maha = np.einsum("bm,bmk,bk->b", dy, Sinv, dy)
                ll += -0.5 * (m * math.log(2 * math.pi) + logdet + maha)
    ll[~np.isfinite(ll)] = -np.inf
    return ll


def estimate_noise(series: QuoteSeries, spec: StateSpaceSpec, q_grid=DEFAULT_GRID, r_grid=DEFAULT_GRID,
                   min_length: int = 100) -> NoiseParams:
    """Grid search for the noise variances maximising the innovation likelihood.

    Two-state models search ``(q, r)``; three-state models additionally search
    the spread variance over ``q_grid``. Ties resolve to the first candidate in
    grid order, so the result is deterministic.
    """
    if len(series) < min_length:
        raise ValueError(f"series too short for noise estimation ({len(series)} < {min_length})")
    q_grid = sorted(float(v) for v in q_grid)
    r_grid = sorted(float(v) for v in r_grid)
    alpha_var = float(np.var(np.diff(series.alpha))) or 1e-12
    if spec.state_dim == 2:
        combos = [(q, r, None) for q, r in itertools.product(q_grid, r_grid)]
    else:
        combos = [(q, r, qs) for q, qs, r in itertools.product(q_grid, q_grid, r_grid)]
    candidates = [expand_noise(spec, q, r, qs, alpha_var) for q, r, qs in combos]
    ll = batched_loglik(series, spec, candidates)
    if not np.any(np.isfinite(ll)):
        raise FilterDivergence("no grid candidate produced a finite likelihood")
    return candidates[int(np.argmax(ll))]
