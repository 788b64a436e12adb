"""Figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
    "svg.hashsalt": "pairtrader",
}

COLORS = {"B1": "#1f77b4", "B2": "#ff7f0e", "B3": "#2ca02c", "KBPT": "#d62728"}


def figsize(scale: float = 1.0, ratio: float = 0.62) -> tuple[float, float]:
    width = 6.0 * scale
    return width, width * ratio


def plot_pnl(days: Sequence[int], curves: Mapping[str, np.ndarray], path: str | Path, title: str = "") -> Path:
    """PnL against day index, one line per pipeline."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        for name, values in curves.items():
            ax.plot(days, values, label=name, color=COLORS.get(name), lw=1.2)
        ax.axhline(0.0, color="0.6", lw=0.6)
        ax.set_xlabel("day index")
        ax.set_ylabel("PnL [USD]")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return Path(path)


def plot_training(stage1_losses, stage2_pnl, path: str | Path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=figsize(1.2, 0.4))
        if len(stage1_losses):
            ax1.semilogy(np.arange(1, len(stage1_losses) + 1), stage1_losses, color="k", lw=1)
        ax1.set_xlabel("stage-1 epoch")
        ax1.set_ylabel("observation MSE")
        ax2.plot(np.arange(len(stage2_pnl)), stage2_pnl, color=COLORS["KBPT"], lw=1)
        ax2.set_xlabel("stage-2 epoch")
        ax2.set_ylabel("training PnL [USD]")
        if title:
            fig.suptitle(title)
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return Path(path)
