"""State-space formulations for a pair of assets.

Three layouts are supported:

``CI``
    state ``[h, mu]`` (hedge ratio and equilibrium, both random walks),
    observation ``beta = h * alpha + mu + v``.
``PCI_CLEGG``
    state ``[a, s, mu]`` where ``a`` tracks the price of alpha, ``s`` is an
    AR(1) spread and ``mu`` a random walk; the hedge is static and the
    observation vector is ``[beta, alpha]``.
``PCI_PROPOSED``
    state ``[h, mu, s]`` with random-walk hedge and equilibrium and an AR(1)
    spread, observation ``beta = h * alpha + mu + s + v``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class ModelKind(str, enum.Enum):
    CI = "CI"
    PCI_CLEGG = "PCI_CLEGG"
    PCI_PROPOSED = "PCI_PROPOSED"

    @classmethod
    def parse(cls, value: "str | ModelKind") -> "ModelKind":
        if isinstance(value, ModelKind):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ValueError(f"unknown model kind {value!r}") from None


STATE_LABELS = {
    ModelKind.CI: ("h", "mu"),
    ModelKind.PCI_CLEGG: ("alpha", "s", "mu"),
    ModelKind.PCI_PROPOSED: ("h", "mu", "s"),
}


@dataclass(frozen=True)
class StateSpaceSpec:
    kind: ModelKind
    rho: float = 0.0
    static_hedge: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        if self.kind is not ModelKind.CI and not abs(self.rho) < 1.0:
            raise ValueError(f"|rho| must be < 1, got {self.rho}")
        if not np.isfinite(self.static_hedge):
            raise ValueError("static_hedge must be finite")

    @property
    def state_dim(self) -> int:
        return 2 if self.kind is ModelKind.CI else 3

    @property
    def obs_dim(self) -> int:
        return 2 if self.kind is ModelKind.PCI_CLEGG else 1

    @property
    def labels(self) -> tuple[str, ...]:
        return STATE_LABELS[self.kind]

    @property
    def hedge_index(self) -> int | None:
        """Index of the hedge ratio in the state vector, None when static."""
        return None if self.kind is ModelKind.PCI_CLEGG else 0

    @property
    def spread_index(self) -> int | None:
        return {ModelKind.CI: None, ModelKind.PCI_CLEGG: 1, ModelKind.PCI_PROPOSED: 2}[self.kind]

    def hedge(self, x) -> float:
        """Hedge ratio implied by a state estimate."""
        idx = self.hedge_index
        return float(self.static_hedge) if idx is None else x[idx]

    def to_config(self) -> dict:
        return {"model_kind": self.kind.value, "rho": self.rho, "static_hedge": self.static_hedge}


def evolution_matrix(spec: StateSpaceSpec) -> np.ndarray:
    if spec.kind is ModelKind.CI:
        return np.eye(2)
    if spec.kind is ModelKind.PCI_CLEGG:
        return np.diag([1.0, spec.rho, 1.0])
    return np.diag([1.0, 1.0, spec.rho])


def observation_operator(spec: StateSpaceSpec, alpha_t: float) -> np.ndarray:
    """Observation matrix of shape ``(obs_dim, state_dim)`` at price ``alpha_t``."""
    if not alpha_t > 0:
        raise ValueError(f"alpha_t must be positive, got {alpha_t}")
    if spec.kind is ModelKind.CI:
        return np.array([[alpha_t, 1.0]])
    if spec.kind is ModelKind.PCI_CLEGG:
        return np.array([[spec.static_hedge, 1.0, 1.0], [1.0, 0.0, 0.0]])
    return np.array([[alpha_t, 1.0, 1.0]])


def observation(spec: StateSpaceSpec, alpha_t: float, beta_t: float) -> np.ndarray:
    """Observation vector matching :func:`observation_operator` row order."""
    if spec.kind is ModelKind.PCI_CLEGG:
        return np.array([beta_t, alpha_t])
    return np.array([beta_t])
