"""Rolling z-score of the innovation stream."""

from __future__ import annotations

import math
import warnings
from collections import deque

import numpy as np
import torch

from .kalman import DegenerateSeriesWarning

DEFAULT_WINDOW = 80
DEFAULT_MIN_SAMPLES = 10
_RESYNC_EVERY = 1000


class RollingStd:
    """Sliding-window mean/variance (population form) updated in O(1).

    The window expands until ``window`` samples have been seen. Running
    moments are recomputed from the buffer every ``_RESYNC_EVERY`` updates to
    stop round-off from accumulating.
    """

    def __init__(self, window: int = DEFAULT_WINDOW, min_samples: int = DEFAULT_MIN_SAMPLES):
        if window < 2 or not 2 <= min_samples <= window:
            raise ValueError("need window >= 2 and 2 <= min_samples <= window")
        self.window = window
        self.min_samples = min_samples
        self.buffer: deque[float] = deque(maxlen=window)
        self.count = 0
        self.degenerate = False
        self._mean = 0.0
        self._m2 = 0.0
        self._since_sync = 0

    def _resync(self):
        vals = np.fromiter(self.buffer, dtype=float)
        self._mean = float(vals.mean())
        self._m2 = float(((vals - self._mean) ** 2).sum())
        self._since_sync = 0

    def push(self, value: float) -> None:
        value = float(value)
        if not math.isfinite(value):
            raise ValueError("innovation must be finite")
        if len(self.buffer) < self.window:
            self.buffer.append(value)
            n = len(self.buffer)
            delta = value - self._mean
            self._mean += delta / n
            self._m2 += delta * (value - self._mean)
        else:
            old = self.buffer[0]
            self.buffer.append(value)
            old_mean = self._mean
            self._mean += (value - old) / self.window
            self._m2 += (value - old) * (value - self._mean + old - old_mean)
        self.count += 1
        self._since_sync += 1
        if self._since_sync >= _RESYNC_EVERY:
            self._resync()

    @property
    def std(self) -> float:
        return math.sqrt(max(self._m2, 0.0) / len(self.buffer)) if self.buffer else 0.0

    def update_and_score(self, innovation: float) -> float | None:
        """Push ``innovation`` and return its z-score, or None during warm-up."""
        self.push(innovation)
        if self.count < self.min_samples:
            return None
        sigma = self.std
        scale = max(abs(v) for v in self.buffer)
        if sigma <= 1e-12 * scale or sigma == 0.0:
            if not self.degenerate:
                warnings.warn("zero rolling variance; indicator undefined", DegenerateSeriesWarning, stacklevel=2)
            self.degenerate = True
            return None
        return float(innovation) / sigma


def rolling_std(values: torch.Tensor, window: int = DEFAULT_WINDOW) -> torch.Tensor:
    """Expanding-then-sliding population std for every index of a 1-D tensor.

    Differentiable counterpart of :class:`RollingStd`.
    """
    T = values.shape[0]
    padded = torch.cat([values.new_zeros(window - 1), values])
    frames = padded.unfold(0, window, 1)
    counts = torch.clamp(torch.arange(1, T + 1, dtype=values.dtype), max=window)
    mask = (torch.arange(window) >= (window - counts.long()).unsqueeze(1)).to(values.dtype)
    mean = (frames * mask).sum(1) / counts
    var = (((frames - mean.unsqueeze(1)) * mask) ** 2).sum(1) / counts
    return torch.sqrt(torch.clamp(var, min=1e-300))


def rolling_zscores(values: torch.Tensor, window: int = DEFAULT_WINDOW,
                    min_samples: int = DEFAULT_MIN_SAMPLES) -> tuple[torch.Tensor, np.ndarray]:
    """Z-scores of a whole innovation sequence plus a validity mask.

    Entries before ``min_samples`` or with a degenerate window are marked
    invalid (the streaming tracker returns None there).
    """
    sigma = rolling_std(values, window)
    z = values / sigma
    v = np.abs(values.detach().numpy())
    scale = np.lib.stride_tricks.sliding_window_view(np.concatenate([np.zeros(window - 1), v]), window).max(1)
    s = sigma.detach().numpy()
    valid = (np.arange(len(v)) >= min_samples - 1) & (s > 1e-12 * scale) & (s > 1e-150)
    return z, valid
