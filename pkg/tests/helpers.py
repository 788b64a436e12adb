"""Shared oracles for the gradient and equivalence checks."""

import numpy as np
import torch

from pairtrader.gainnet import GainNetConfig, GainNetwork
from pairtrader.kalman import expand_noise, fit_spec, initial_estimate, run_kf


def tiny_net(spec, seed=0, hidden=None, proj=4, head_init_scale=1.0):
    hidden = hidden or spec.state_dim ** 2
    cfg = GainNetConfig.for_spec(spec, hidden_size=hidden, proj_size=proj, head_init_scale=head_init_scale, seed=seed)
    return GainNetwork(cfg)


def central_fd(f, theta: np.ndarray, eps=1e-6, index=None):
    """Central finite-difference gradient of a scalar function of a flat
    vector, optionally only at the entries in ``index``."""
    index = range(theta.size) if index is None else index
    g = np.empty(len(index))
    for k, i in enumerate(index):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += eps
        tm[i] -= eps
        g[k] = (f(tp) - f(tm)) / (2 * eps)
    return g


def sample_index(net, n_recurrent=80, seed=0):
    """All projection and head entries plus a seeded sample of recurrent ones."""
    sizes = [p.numel() for p in net.parameters()]
    names = [n for n, _ in net.named_parameters()]
    offsets = np.cumsum([0] + sizes)
    keep, recurrent = [], []
    for name, lo, hi in zip(names, offsets[:-1], offsets[1:]):
        (recurrent if name.startswith("cell") else keep).extend(range(lo, hi))
    rng = np.random.default_rng(seed)
    picked = rng.choice(recurrent, size=min(n_recurrent, len(recurrent)), replace=False)
    return sorted(keep + [int(i) for i in picked])


def rel_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    floor = 1e-6 * max(np.abs(numeric).max(), 1e-300)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def analytic_grad(net, loss_fn):
    net.zero_grad()
    loss_fn().backward()
    return np.concatenate([p.grad.detach().numpy().ravel() for p in net.parameters()])


def kf_oracle(series, kind, q=1e-6, r=1e-6, qs=1e-5):
    spec = fit_spec(series, kind)
    noise = expand_noise(spec, q, r, qs)
    x0, P0 = initial_estimate(series, spec)
    return spec, x0, run_kf(series, spec, noise, x0, P0)


def max_rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def as_np(t: torch.Tensor) -> np.ndarray:
    return t.detach().numpy()


ACCEPTANCE: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    return ok
