"""Transaction accounting for $1 pair positions split by the hedge ratio."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

TRADING_DAYS = 252


@dataclass(frozen=True)
class Transaction:
    t_open: int
    t_close: int
    op_open: int
    zeta: int
    h_open: float
    h_close: float
    alpha_open: float
    alpha_close: float
    beta_open: float
    beta_close: float
    forced: bool = False

    @property
    def reward(self) -> float:
        return transaction_reward(self)

    @property
    def holding_days(self) -> int:
        return self.t_close - self.t_open


def spread_sign(beta: float, h: float, alpha: float) -> int:
    """Sign of ``beta - h * alpha``; zero maps to +1."""
    return -1 if beta - h * alpha < 0 else 1


def reward_terms(op, zeta, h_o, h_c, a_o, a_c, b_o, b_c):
    """Beta and alpha legs of a transaction reward.

    Works on floats and on tensors, so the training loss shares this formula.
    """
    w_o = 1.0 + abs(h_o)
    w_c = 1.0 + abs(h_c)
    r_beta = (b_c / w_c - b_o / w_o) * op * zeta
    r_alpha = (abs(h_o) * a_o / w_o - abs(h_c) * a_c / w_c) * op * zeta
    return r_beta, r_alpha


def transaction_reward(tx: Transaction) -> float:
    r_beta, r_alpha = reward_terms(
        tx.op_open, tx.zeta, tx.h_open, tx.h_close,
        tx.alpha_open, tx.alpha_close, tx.beta_open, tx.beta_close,
    )
    return float(r_beta + r_alpha)


def pnl_series(ledger: Sequence[Transaction], horizon: int, start: int = 0) -> np.ndarray:
    """Cumulative realised PnL for days ``start .. start + horizon - 1``."""
    closes = [tx.t_close for tx in ledger]
    if any(b < a for a, b in zip(closes, closes[1:])):
        raise ValueError("ledger must be sorted by close time")
    increments = np.zeros(horizon)
    for tx in ledger:
        idx = tx.t_close - start
        if 0 <= idx < horizon:
            increments[idx] += tx.reward
        elif idx < 0:
            increments[0] += tx.reward
    return np.cumsum(increments)


@dataclass(frozen=True)
class TradeStats:
    n_trades: int
    final_pnl: float
    annual_return_pct: float | None
    mean_return_per_trade_pct: float | None
    avg_holding_days: float | None
    avg_days_between_returns: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def compute_stats(ledger: Sequence[Transaction], horizon_days: int) -> TradeStats:
    if horizon_days <= 0:
        raise ValueError("horizon_days must be positive")
    rewards = np.array([tx.reward for tx in ledger])
    final = float(rewards.sum()) if len(rewards) else 0.0
    if not len(ledger):
        return TradeStats(0, 0.0, 0.0, None, None, None)
    closes = np.array([tx.t_close for tx in ledger])
    return TradeStats(
        n_trades=len(ledger),
        final_pnl=final,
        annual_return_pct=final * 100.0 * TRADING_DAYS / horizon_days,
        mean_return_per_trade_pct=float(rewards.mean() * 100.0),
        avg_holding_days=float(np.mean([tx.holding_days for tx in ledger])),
        avg_days_between_returns=float(np.diff(closes).mean()) if len(closes) > 1 else None,
    )


_FIELDS = [f.name for f in fields(Transaction)]


def write_ledger(ledgers: Mapping[str, Sequence[Transaction]], path: str | Path,
                 header_lines: Sequence[str] = ()) -> None:
    """One row per transaction, tagged with the pipeline that produced it."""
    with Path(path).open("w", newline="") as handle:
        for line in header_lines:
            handle.write(f"# {line}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["pipeline"] + _FIELDS + ["reward"])
        for name, ledger in ledgers.items():
            for tx in ledger:
                row = asdict(tx)
                writer.writerow([name] + [_fmt(row[k]) for k in _FIELDS] + [_fmt(tx.reward)])


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_ledger(path: str | Path) -> tuple[dict[str, list[Transaction]], dict[str, str]]:
    """Load a ledger CSV; returns transactions per pipeline and ``key=value`` header metadata."""
    meta: dict[str, str] = {}
    rows = []
    with Path(path).open(newline="") as handle:
        for line in handle:
            if line.startswith("#"):
                for token in line[1:].split():
                    if "=" in token:
                        k, v = token.split("=", 1)
                        meta[k] = v
            else:
                rows.append(line)
    ints = {"t_open", "t_close", "op_open", "zeta"}
    out: dict[str, list[Transaction]] = {}
    for rec in csv.DictReader(rows):
        kw = {}
        for k in _FIELDS:
            if k in ints:
                kw[k] = int(rec[k])
            elif k == "forced":
                kw[k] = rec[k] in ("1", "True", "true")
            else:
                kw[k] = float(rec[k])
        out.setdefault(rec.get("pipeline") or "default", []).append(Transaction(**kw))
    return out, meta
