"""Recurrent network producing the Kalman gain, and the filter built on it.

The filter keeps the model-based prediction ``x_prior = F x_prev`` and
``y_pred = G x_prior`` and only replaces the gain computation::

    x_t = x_prior + K_t(theta) (y_t - y_pred)

``K_t`` comes from a GRU fed with four difference features:
observation difference, innovation, last update difference and last
evolution difference.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import QuoteSeries
from .kalman import FilterDivergence
from .ssmodel import ModelKind, StateSpaceSpec, evolution_matrix, observation, observation_operator

DTYPE = torch.float64
CHECKPOINT_FORMAT = "pairtrader-gainnet"


@dataclass(frozen=True)
class GainNetConfig:
    state_dim: int
    obs_dim: int
    hidden_size: int = 40
    proj_size: int = 40
    momentum: float = 0.99
    head_init_scale: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.hidden_size < self.state_dim**2:
            raise ValueError("hidden_size must be at least state_dim ** 2")

    @property
    def input_dim(self) -> int:
        return 2 * self.obs_dim + 2 * self.state_dim

    @classmethod
    def for_spec(cls, spec: StateSpaceSpec, **kw) -> "GainNetConfig":
        return cls(spec.state_dim, spec.obs_dim, **kw)


class GainNetwork(nn.Module):
    """Feature normaliser -> linear projection -> GRU cell -> linear gain head."""

    def __init__(self, config: GainNetConfig):
        super().__init__()
        self.config = config
        self.proj = nn.Linear(config.input_dim, config.proj_size, dtype=DTYPE)
        self.cell = nn.GRUCell(config.proj_size, config.hidden_size, dtype=DTYPE)
        self.head = nn.Linear(config.hidden_size, config.state_dim * config.obs_dim, dtype=DTYPE)
        self.register_buffer("feat_mean", torch.zeros(config.input_dim, dtype=DTYPE))
        self.register_buffer("feat_var", torch.ones(config.input_dim, dtype=DTYPE))
        self.register_buffer("output_scale", torch.ones(config.state_dim * config.obs_dim, dtype=DTYPE))
        self.reset_parameters(config.seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for layer, fan_in in ((self.proj, self.proj.in_features),
                                  (self.cell, self.cell.hidden_size),
                                  (self.head, self.head.in_features)):
                bound = fan_in ** -0.5
                if layer is self.head:
                    bound *= self.config.head_init_scale
                for p in layer.parameters():
                    p.copy_(torch.rand(p.shape, generator=gen, dtype=DTYPE) * 2 * bound - bound)

    def initial_hidden(self) -> torch.Tensor:
        return torch.zeros(self.config.hidden_size, dtype=DTYPE)

    @property
    def theta(self) -> torch.Tensor:
        return nn.utils.parameters_to_vector(self.parameters()).detach().clone()

    @theta.setter
    def theta(self, value) -> None:
        if isinstance(value, torch.Tensor):
            vec = value.detach().to(DTYPE).clone()
        else:
            vec = torch.as_tensor(np.array(value, dtype=float), dtype=DTYPE)
        nn.utils.vector_to_parameters(vec, self.parameters())

    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def calibrate(self, series: QuoteSeries, spec: StateSpaceSpec) -> None:
        """Set feature scales and gain output scaling from the price levels.

        Gain rows of states multiplied by alpha in the observation are scaled
        by ``1 / mean(alpha)`` so the product ``G K`` is price-level free.
        """
        n, m = spec.state_dim, spec.obs_dim
        ys = np.stack([observation(spec, a, b) for a, b in zip(series.alpha, series.beta)])
        dy_var = np.var(np.diff(ys, axis=0), axis=0) + 1e-16
        row_scale = np.ones(n)
        if spec.kind is not ModelKind.PCI_CLEGG:
            row_scale[0] = 1.0 / float(np.mean(series.alpha))
        out = np.repeat(row_scale, m)
        state_var = row_scale**2 * float(dy_var[0])
        var = np.concatenate([dy_var, dy_var, state_var, state_var])
        with torch.no_grad():
            self.feat_mean.zero_()
            self.feat_var.copy_(torch.as_tensor(var, dtype=DTYPE))
            self.output_scale.copy_(torch.as_tensor(out, dtype=DTYPE))

    def normalize(self, features: torch.Tensor) -> torch.Tensor:
        if self.training:
            with torch.no_grad():
                mom = self.config.momentum
                f = features.detach()
                self.feat_mean.mul_(mom).add_((1 - mom) * f)
                self.feat_var.mul_(mom).add_((1 - mom) * (f - self.feat_mean) ** 2)
        return (features - self.feat_mean) / torch.sqrt(self.feat_var + 1e-30)

    def forward(self, features: torch.Tensor, hidden: torch.Tensor):
        return gain_forward(self, features, hidden)


def gain_forward(net: GainNetwork, features: torch.Tensor, hidden: torch.Tensor):
    """Gain matrix ``(state_dim, obs_dim)`` and the advanced hidden state."""
    cfg = net.config
    u = net.proj(net.normalize(features))
    new_hidden = net.cell(u.unsqueeze(0), hidden.unsqueeze(0)).squeeze(0)
    gain = (net.head(new_hidden) * net.output_scale).reshape(cfg.state_dim, cfg.obs_dim)
    if not bool(torch.isfinite(gain).all()):
        raise FilterDivergence("non-finite gain network activation")
    return gain, new_hidden


@dataclass
class KNetMemory:
    """Quantities carried from one step to the next."""

    x_prev: torch.Tensor
    x_prev_prior: torch.Tensor
    x_prev2: torch.Tensor
    y_prev: torch.Tensor | None
    hidden: torch.Tensor

    @classmethod
    def start(cls, x0, hidden: torch.Tensor) -> "KNetMemory":
        x0 = torch.as_tensor(np.asarray(x0, dtype=float), dtype=DTYPE)
        return cls(x0, x0, x0, None, hidden)

    def detach(self) -> "KNetMemory":
        d = lambda v: None if v is None else v.detach()  # noqa: E731
        return KNetMemory(d(self.x_prev), d(self.x_prev_prior), d(self.x_prev2), d(self.y_prev), d(self.hidden))


def knet_step(mem: KNetMemory, spec: StateSpaceSpec, alpha_t: float, y_t, net: GainNetwork | None,
              gain=None, F=None, G=None):
    """One learned-gain filter step.

    ``gain`` overrides the network output (used to pin the gain to the
    analytic Kalman gain, or to zero). Returns ``(x_t, innovation, y_pred,
    memory')``.
    """
    if F is None:
        F = torch.as_tensor(np.diag(evolution_matrix(spec)).copy(), dtype=DTYPE)
    if G is None:
        G = torch.as_tensor(observation_operator(spec, alpha_t), dtype=DTYPE)
    y_t = torch.as_tensor(np.atleast_1d(y_t), dtype=DTYPE) if not isinstance(y_t, torch.Tensor) else y_t
    x_prior = F * mem.x_prev
    y_pred = G @ x_prior
    innovation = y_t - y_pred
    hidden = mem.hidden
    if gain is None:
        obs_diff = torch.zeros_like(y_t) if mem.y_prev is None else y_t - mem.y_prev
        features = torch.cat([obs_diff, innovation, mem.x_prev - mem.x_prev_prior, mem.x_prev - mem.x_prev2])
        gain, hidden = gain_forward(net, features, hidden)
    else:
        gain = torch.as_tensor(gain, dtype=DTYPE)
    x_t = x_prior + gain @ innovation
    return x_t, innovation, y_pred, KNetMemory(x_t, x_prior, mem.x_prev, y_t, hidden)


@dataclass
class KNetTrace:
    x_hat: torch.Tensor
    y_pred: torch.Tensor
    innovation: torch.Tensor
    memory: KNetMemory = field(repr=False)


def sequence_tensors(series: QuoteSeries, spec: StateSpaceSpec):
    """Observation operators ``(T, m, n)`` and observations ``(T, m)`` as tensors."""
    G = np.stack([observation_operator(spec, a) for a in series.alpha])
    Y = np.stack([observation(spec, a, b) for a, b in zip(series.alpha, series.beta)])
    return torch.as_tensor(G, dtype=DTYPE), torch.as_tensor(Y, dtype=DTYPE)


def run_knet(net: GainNetwork, series: QuoteSeries, spec: StateSpaceSpec, x0=None,
             memory: KNetMemory | None = None, truncation: int | None = None, gains=None,
             tensors=None, start: int = 0, stop: int | None = None) -> KNetTrace:
    """Filter ``series[start:stop]`` with the learned gain.

    ``truncation`` cuts the gradient path through the recursion every that
    many steps (None keeps the full graph). ``gains`` optionally supplies a
    fixed gain per step instead of the network.
    """
    stop = len(series) if stop is None else stop
    if memory is None:
        memory = KNetMemory.start(x0, net.initial_hidden() if net is not None else torch.zeros(1, dtype=DTYPE))
    G_all, Y_all = tensors if tensors is not None else sequence_tensors(series, spec)
    F = torch.as_tensor(np.diag(evolution_matrix(spec)).copy(), dtype=DTYPE)
    xs, yp, dys = [], [], []
    for k, t in enumerate(range(start, stop)):
        if truncation and k and k % truncation == 0:
            memory = memory.detach()
        x_t, dy, y_pred, memory = knet_step(
            memory, spec, float(series.alpha[t]), Y_all[t], net,
            gain=None if gains is None else gains[k], F=F, G=G_all[t],
        )
        xs.append(x_t)
        yp.append(y_pred)
        dys.append(dy)
    return KNetTrace(torch.stack(xs), torch.stack(yp), torch.stack(dys), memory)


def save_checkpoint(net: GainNetwork, path: str | Path, spec: StateSpaceSpec | None = None,
                    stage: str = "", extra: dict | None = None) -> None:
    """Single file: one JSON header line, then little-endian float64 payload."""
    parts = {
        "theta": net.theta.numpy(),
        "feat_mean": net.feat_mean.numpy(),
        "feat_var": net.feat_var.numpy(),
        "output_scale": net.output_scale.numpy(),
    }
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "config": asdict(net.config),
        "seed": net.config.seed,
        "stage": stage,
        "spec": spec.to_config() if spec is not None else None,
        "layout": [[k, int(v.size)] for k, v in parts.items()],
        "extra": extra or {},
    }
    payload = np.concatenate([v.ravel() for v in parts.values()]).astype("<f8")
    with Path(path).open("wb") as handle:
        handle.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        handle.write(payload.tobytes())


def load_checkpoint(path: str | Path) -> tuple[GainNetwork, dict]:
    with Path(path).open("rb") as handle:
        header = json.loads(handle.readline())
        payload = np.frombuffer(handle.read(), dtype="<f8")
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a gain-network checkpoint")
    net = GainNetwork(GainNetConfig(**header["config"]))
    offset = 0
    chunks = {}
    for name, size in header["layout"]:
        chunks[name] = payload[offset: offset + size]
        offset += size
    if offset != payload.size:
        raise ValueError(f"{path}: payload size mismatch")
    net.theta = chunks["theta"]
    with torch.no_grad():
        net.feat_mean.copy_(torch.as_tensor(chunks["feat_mean"].copy()))
        net.feat_var.copy_(torch.as_tensor(chunks["feat_var"].copy()))
        net.output_scale.copy_(torch.as_tensor(chunks["output_scale"].copy()))
    net.eval()
    return net, header


def spec_from_header(header: dict) -> StateSpaceSpec | None:
    s = header.get("spec")
    if not s:
        return None
    return StateSpaceSpec(ModelKind.parse(s["model_kind"]), rho=s["rho"], static_hedge=s["static_hedge"])
