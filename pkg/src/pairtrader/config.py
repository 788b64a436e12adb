"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .kalman import DEFAULT_GRID


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "0") else int(text)


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


def _opt_str(text: str) -> str | None:
    return text.strip() or None


@dataclass(frozen=True)
class RunConfig:
    data: str | None = None
    label: str | None = None
    in_sample_len: int = 2000
    pipelines: tuple[str, ...] = ("B1",)
    policy_mode: str = "cumulative"
    seed: int = 0
    out: str = "out"
    baseline_fit_on_test: bool = False
    q_grid: tuple[float, ...] = DEFAULT_GRID
    r_grid: tuple[float, ...] = DEFAULT_GRID
    zscore_window: int = 80
    zscore_min_samples: int = 10
    surrogate_gamma: float = 0.2
    eta1: float = 1e-3
    eta2: float = 1e-4
    epochs1: int = 50
    epochs2: int = 30
    batches: int = 10
    bptt_truncation: int | None = 40
    grad_clip: float = 1.0
    hidden_size: int = 40
    checkpoint_kbpt: str | None = None
    checkpoint_b3: str | None = None
    model_kind: str = "PCI_PROPOSED"
    rho: float | None = None
    static_hedge: float | None = None
    plots: bool = True
    synth_length: int = 3000
    synth_initial_state: tuple[float, ...] = (1.0, 0.1, 0.0)
    synth_state_scales: tuple[float, ...] = (1e-3, 1e-3, 5e-3)
    synth_obs_scale: float = 2e-3
    synth_noise_family: str = "gaussian"
    synth_dof: float = 5.0
    synth_alpha0: float = 1.0
    synth_alpha_drift: float = 0.0
    synth_alpha_vol: float = 0.005
    synth_hedge_drift: float = 0.0
    synth_start_date: str = "2000-01-03"
    base_dir: str = field(default=".", compare=False)

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def canonical(self) -> str:
        """Sorted ``key=value`` lines; the output directory and base dir are excluded."""
        lines = []
        for f in fields(self):
            if f.name in ("out", "base_dir", "data"):
                continue
            lines.append(f"{f.name}={getattr(self, f.name)!r}")
        data = self.path(self.data)
        if data is not None and data.exists():
            lines.append("data_sha256=" + hashlib.sha256(data.read_bytes()).hexdigest())
        return "\n".join(sorted(lines))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


_PARSERS = {
    "data": _opt_str, "label": _opt_str, "in_sample_len": int,
    "pipelines": lambda s: tuple(p.strip().upper() for p in s.split(",") if p.strip()),
    "policy_mode": str.strip, "seed": int, "out": str.strip, "baseline_fit_on_test": _bool,
    "q_grid": _floats, "r_grid": _floats, "zscore_window": int, "zscore_min_samples": int,
    "surrogate_gamma": float, "eta1": float, "eta2": float, "epochs1": int, "epochs2": int,
    "batches": int, "bptt_truncation": _opt_int, "grad_clip": float, "hidden_size": int,
    "checkpoint_kbpt": _opt_str, "checkpoint_b3": _opt_str, "model_kind": str.strip,
    "rho": _opt_float, "static_hedge": _opt_float, "plots": _bool,
    "synth_length": int, "synth_initial_state": _floats, "synth_state_scales": _floats,
    "synth_obs_scale": float, "synth_noise_family": str.strip, "synth_dof": float,
    "synth_alpha0": float, "synth_alpha_drift": float, "synth_alpha_vol": float,
    "synth_hedge_drift": float, "synth_start_date": str.strip,
}


def parse_value(key: str, text: str):
    if key not in _PARSERS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return _PARSERS[key](text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_config(text: str, base_dir: str | Path = ".") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = parse_value(key, value)
    return RunConfig(base_dir=str(base_dir), **values)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=path.parent)
