"""Price-pair series: loading, splitting and synthetic generation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ssmodel import ModelKind, StateSpaceSpec, evolution_matrix, observation_operator

log = logging.getLogger(__name__)

CSV_COLUMNS = ("date", "alpha", "beta")
_MISSING = {"", "na", "nan", "null", "none", "n/a"}


class DataError(ValueError):
    pass


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class QuoteSeries:
    """Aligned prices of the pair (alpha, beta) indexed by trading day."""

    alpha: np.ndarray
    beta: np.ndarray
    label: str = ""
    dates: tuple[str, ...] | None = None
    day_index: np.ndarray = field(default=None)
    dropped_count: int = 0

    def __post_init__(self):
        alpha = _frozen(self.alpha)
        beta = _frozen(self.beta)
        if alpha.ndim != 1 or alpha.shape != beta.shape:
            raise DataError("alpha and beta must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
            raise DataError("prices must be finite")
        if np.any(alpha <= 0) or np.any(beta <= 0):
            raise DataError("prices must be strictly positive")
        if self.day_index is None:
            day_index = _frozen(np.arange(len(alpha)), dtype=np.int64)
        else:
            day_index = _frozen(self.day_index, dtype=np.int64)
            if day_index.shape != alpha.shape or np.any(np.diff(day_index) != 1):
                raise DataError("day_index must increase in unit steps")
        if self.dates is not None and len(self.dates) != len(alpha):
            raise DataError("dates must match the series length")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "day_index", day_index)
        if self.dates is not None:
            object.__setattr__(self, "dates", tuple(self.dates))

    def __len__(self) -> int:
        return len(self.alpha)

    def slice(self, start: int, stop: int | None = None) -> "QuoteSeries":
        stop = len(self) if stop is None else stop
        return QuoteSeries(
            self.alpha[start:stop],
            self.beta[start:stop],
            label=self.label,
            dates=None if self.dates is None else self.dates[start:stop],
            day_index=self.day_index[start:stop],
        )

    def __eq__(self, other):
        if not isinstance(other, QuoteSeries):
            return NotImplemented
        return (
            np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.beta, other.beta)
            and np.array_equal(self.day_index, other.day_index)
            and self.dates == other.dates
        )


@dataclass(frozen=True)
class DatasetSplit:
    in_sample: QuoteSeries
    out_of_sample: QuoteSeries

    def __post_init__(self):
        if self.out_of_sample.day_index[0] != self.in_sample.day_index[-1] + 1:
            raise DataError("out-of-sample must start one trading day after in-sample")


def _parse_price(text: str, row: int, column: str) -> float | None:
    token = text.strip()
    if token.lower() in _MISSING:
        return None
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"row {row}: malformed {column} value {token!r}") from None
    if math.isnan(value) or value <= 0:
        return None
    if math.isinf(value):
        raise DataError(f"row {row}: malformed {column} value {token!r}")
    return value


def load_csv(path: str | Path, label: str | None = None) -> QuoteSeries:
    """Read a ``date,alpha,beta`` file.

    Rows with a missing or non-positive price are dropped and counted in
    ``dropped_count``; the surviving rows are re-indexed from zero.
    """
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with handle:
        rows = [r for r in csv.reader(handle) if r and not r[0].startswith("#")]
    if not rows:
        raise DataError(f"{path}: fewer than 2 valid rows")
    header = [c.strip().lower() for c in rows[0]]
    try:
        cols = [header.index(name) for name in CSV_COLUMNS]
    except ValueError:
        raise DataError(f"{path}: header must name columns date, alpha, beta") from None

    dates, alpha, beta = [], [], []
    dropped = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) <= max(cols):
            dropped += 1
            continue
        a = _parse_price(row[cols[1]], lineno, "alpha")
        b = _parse_price(row[cols[2]], lineno, "beta")
        if a is None or b is None:
            dropped += 1
            continue
        dates.append(row[cols[0]].strip())
        alpha.append(a)
        beta.append(b)
    if len(alpha) < 2:
        raise DataError(f"{path}: fewer than 2 valid rows")
    if dropped:
        log.warning("%s: dropped %d rows with missing or non-positive prices", path, dropped)
    return QuoteSeries(
        alpha, beta, label=label if label is not None else path.stem, dates=dates, dropped_count=dropped
    )


def save_csv(series: QuoteSeries, path: str | Path, header_lines: Sequence[str] = ()) -> None:
    """Write a series so that :func:`load_csv` reproduces it bit-exactly."""
    path = Path(path)
    dates = series.dates or tuple(str(i) for i in series.day_index)
    with path.open("w", newline="") as handle:
        for line in header_lines:
            handle.write(f"# {line}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for d, a, b in zip(dates, series.alpha, series.beta):
            writer.writerow((d, repr(float(a)), repr(float(b))))


def split(series: QuoteSeries, in_sample_len: int) -> DatasetSplit:
    if not 0 < in_sample_len < len(series):
        raise DataError(f"in_sample_len must lie in (0, {len(series)}), got {in_sample_len}")
    return DatasetSplit(series.slice(0, in_sample_len), series.slice(in_sample_len))


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for simulating a pair from one of the state-space models.

    ``state_scales`` holds one noise standard deviation per state entry and
    ``obs_scale`` the observation-noise standard deviation. For the Clegg
    layout the first state entry is replaced by the simulated alpha price.
    ``hedge_drift`` is a deterministic per-step increment of the hedge
    component, used to build mismatched scenarios. ``rho`` optionally
    overrides the model's spread coefficient for simulation only, where the
    unit-root boundary ``|rho| = 1`` is allowed.
    """

    model: StateSpaceSpec
    length: int
    initial_state: tuple[float, ...]
    state_scales: tuple[float, ...] = ()
    obs_scale: float = 0.0
    noise_family: str = "gaussian"
    dof: float = 5.0
    seed: int = 0
    alpha0: float = 1.0
    alpha_drift: float = 0.0
    alpha_vol: float = 0.0
    hedge_drift: float = 0.0
    start_date: str = "2000-01-03"
    label: str = "synthetic"
    rho: float | None = None

    def __post_init__(self):
        n = self.model.state_dim
        if self.rho is not None and not abs(self.rho) <= 1.0:
            raise ValueError("simulation rho must satisfy |rho| <= 1")
        if self.length < 2:
            raise ValueError("length must be >= 2")
        if len(self.initial_state) != n:
            raise ValueError(f"initial_state needs {n} entries")
        scales = tuple(self.state_scales) or (0.0,) * n
        if len(scales) != n:
            raise ValueError(f"state_scales needs {n} entries")
        object.__setattr__(self, "state_scales", tuple(float(s) for s in scales))
        if min(self.state_scales) < 0 or self.obs_scale < 0 or self.alpha_vol < 0:
            raise ValueError("noise scales must be non-negative")
        if self.noise_family not in ("gaussian", "student_t"):
            raise ValueError(f"unknown noise family {self.noise_family!r}")
        if self.noise_family == "student_t" and not self.dof > 2:
            raise ValueError("student_t noise needs dof > 2")
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")


def _unit_noise(rng: np.random.Generator, spec: SyntheticSpec, shape) -> np.ndarray:
    if spec.noise_family == "gaussian":
        return rng.standard_normal(shape)
    return rng.standard_t(spec.dof, shape) * math.sqrt((spec.dof - 2.0) / spec.dof)


def business_dates(start: str, count: int) -> tuple[str, ...]:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    days = np.busday_offset(first, np.arange(count), roll="forward")
    return tuple(str(d) for d in days)


def generate_synthetic(spec: SyntheticSpec) -> tuple[QuoteSeries, np.ndarray]:
    """Simulate the chosen model forward.

    Returns the price series and the ``(length, state_dim)`` state trajectory.
    """
    rng = np.random.default_rng(spec.seed)
    L, n = spec.length, spec.model.state_dim
    alpha_shocks = rng.standard_normal(L - 1)
    state_noise = _unit_noise(rng, spec, (L, n)) * np.asarray(spec.state_scales)
    obs_noise = _unit_noise(rng, spec, L) * spec.obs_scale

    alpha = np.empty(L)
    alpha[0] = spec.alpha0
    alpha[1:] = spec.alpha0 * np.exp(np.cumsum(spec.alpha_drift + spec.alpha_vol * alpha_shocks))

    F = evolution_matrix(spec.model)
    if spec.rho is not None and spec.model.spread_index is not None:
        F[spec.model.spread_index, spec.model.spread_index] = spec.rho
    drift = np.zeros(n)
    if spec.model.hedge_index is not None:
        drift[spec.model.hedge_index] = spec.hedge_drift
    clegg = spec.model.kind is ModelKind.PCI_CLEGG

    states = np.empty((L, n))
    beta = np.empty(L)
    x = np.array(spec.initial_state, dtype=float)
    for t in range(L):
        if t > 0:
            x = F @ x + state_noise[t] + drift
        if clegg:
            x[0] = alpha[t]
        states[t] = x
        beta[t] = observation_operator(spec.model, alpha[t])[0] @ x + obs_noise[t]

    if np.any(beta <= 0):
        raise DataError("simulated beta is not strictly positive; raise the equilibrium level")
    series = QuoteSeries(alpha, beta, label=spec.label, dates=business_dates(spec.start_date, L))
    return series, states
