"""Bollinger-band open/close rules on a z-score, hard and smoothed."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch

CUMULATIVE = "cumulative"
INSTANTANEOUS = "instantaneous"
POLICY_MODES = (CUMULATIVE, INSTANTANEOUS)
DEFAULT_GAMMA = 0.2


def step(x: float) -> int:
    """Strict unit step: 1 for x > 0, else 0."""
    return 1 if x > 0 else 0


@dataclass(frozen=True)
class PolicyState:
    """Position bookkeeping; ``tau_open``/``tau_close`` are the days of the
    last open and close actions. A position is held while
    ``tau_open >= tau_close``; the sentinels make the first open legal."""

    tau_open: int = -1
    tau_close: int = 0
    open_dir: int = 0
    z_prev: float | None = None
    last_op: int = 0

    @property
    def gate(self) -> int:
        return step(self.tau_close - self.tau_open)

    @property
    def holding(self) -> bool:
        return self.gate == 0


@dataclass(frozen=True)
class SurrogateConfig:
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


def open_decision(z_t: float, state: PolicyState) -> int:
    return (step(-1.0 - z_t) - step(z_t - 1.0)) * state.gate


def close_cumulative(z_t: float, state: PolicyState) -> int:
    if state.z_prev is None:
        return 0
    return step(-state.z_prev * z_t) * (1 - state.gate)


def close_instantaneous(state: PolicyState) -> int:
    return step(abs(state.last_op))


@dataclass(frozen=True)
class Action:
    t: int
    close: int
    open: int


def policy_step(t: int, z_t: float | None, state: PolicyState, mode: str = CUMULATIVE,
                allow_open: bool = True) -> tuple[Action, PolicyState]:
    """Close check first, then open check, for day ``t``.

    A day without an indicator (warm-up) opens nothing and clears the
    previous z-score; an instantaneous position opened the day before is
    still closed.
    """
    if mode not in POLICY_MODES:
        raise ValueError(f"unknown policy mode {mode!r}")
    if z_t is None:
        cp = close_instantaneous(state) if mode == INSTANTANEOUS else 0
        if cp:
            state = replace(state, tau_close=t, open_dir=0)
        return Action(t, cp, 0), replace(state, z_prev=None, last_op=0)
    if mode == CUMULATIVE:
        cp = close_cumulative(z_t, state)
    else:
        cp = close_instantaneous(state)
    if cp:
        state = replace(state, tau_close=t, open_dir=0)
    op = open_decision(z_t, state) if allow_open else 0
    if op:
        state = replace(state, tau_open=t, open_dir=op)
    return Action(t, cp, op), replace(state, z_prev=z_t, last_op=op)


def surrogate_step(x, cfg: SurrogateConfig):
    """Gaussian CDF with standard deviation gamma; accepts floats or tensors."""
    if isinstance(x, torch.Tensor):
        return 0.5 * (1.0 + torch.erf(x / (cfg.gamma * math.sqrt(2.0))))
    return 0.5 * (1.0 + math.erf(x / (cfg.gamma * math.sqrt(2.0))))


def soft_decisions(z_t, z_prev, state: PolicyState, cfg: SurrogateConfig):
    """Smoothed open and cumulative-close values.

    The position timing inside the gating factor is taken from ``state`` and
    treated as a constant.
    """
    u = lambda v: surrogate_step(v, cfg)  # noqa: E731
    gate = u(float(state.tau_close - state.tau_open))
    op = (u(-1.0 - z_t) - u(z_t - 1.0)) * gate
    cp = 0.0 if z_prev is None else u(-z_prev * z_t) * (1.0 - gate)
    return op, cp
