"""Command-line entry point.

Every command reads a flat ``key = value`` config (``--config``); flags
override file values. Outputs carry a ``# config_sha256=... seed=...``
header. Failures print one line ``error: <kind>: <message>`` to stderr and
exit nonzero (2 for missing/invalid input, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .data import DataError, QuoteSeries, SyntheticSpec, generate_synthetic, load_csv, save_csv, split
from .engine import (KF, LEARNED, BacktestResult, FittedPipeline, PipelineSpec, compare, fit_model_based,
                     preset)
from .gainnet import GainNetConfig, GainNetwork, load_checkpoint, save_checkpoint, spec_from_header
from .kalman import fit_spec, initial_estimate
from .ledger import compute_stats, read_ledger, write_ledger
from .ssmodel import ModelKind, StateSpaceSpec
from .training import TrainConfig, TrainReport, train_stage1, train_stage2

log = logging.getLogger("pairtrader")

EXIT_INPUT = 2
EXIT_RUNTIME = 1


class InputError(Exception):
    """Bad or missing user input; exits with code 2."""


def header_lines(cfg: RunConfig, **extra) -> list[str]:
    lines = [f"config_sha256={cfg.digest()} seed={cfg.seed}"]
    lines += [f"{k}={v}" for k, v in extra.items()]
    return lines


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        eta1=cfg.eta1, eta2=cfg.eta2, epochs1=cfg.epochs1, epochs2=cfg.epochs2, batches=cfg.batches,
        bptt_truncation=cfg.bptt_truncation, gamma=cfg.surrogate_gamma, grad_clip=cfg.grad_clip,
        seed=cfg.seed, zscore_window=cfg.zscore_window, zscore_min_samples=cfg.zscore_min_samples,
        policy_mode=cfg.policy_mode,
    )


def load_series(cfg: RunConfig) -> QuoteSeries:
    path = cfg.path(cfg.data)
    if path is None:
        raise InputError("config key 'data' is required")
    if not path.is_file():
        raise InputError(f"data file not found: {path}")
    return load_csv(path, label=cfg.label)


def model_for(cfg: RunConfig, fit_series: QuoteSeries, kind: ModelKind) -> StateSpaceSpec:
    model = fit_spec(fit_series, kind)
    if kind is ModelKind.CI:
        return model
    return StateSpaceSpec(
        kind,
        rho=model.rho if cfg.rho is None else cfg.rho,
        static_hedge=model.static_hedge if cfg.static_hedge is None else cfg.static_hedge,
    )


def train_learned(cfg: RunConfig, spec: PipelineSpec, series: QuoteSeries, train: QuoteSeries,
                  out: Path | None) -> tuple[FittedPipeline, TrainReport]:
    """Both training stages on the in-sample part; checkpoints go to ``out``."""
    model = model_for(cfg, train, spec.model)
    x0, _ = initial_estimate(series, model)
    net = GainNetwork(GainNetConfig.for_spec(model, hidden_size=cfg.hidden_size, proj_size=cfg.hidden_size,
                                             seed=cfg.seed))
    tcfg = train_config(cfg)
    log.info("%s: stage 1 (%d epochs) on %d days", spec.name, tcfg.epochs1, len(train))
    net, report = train_stage1(net, train, model, tcfg, x0)
    if out is not None:
        path = out / f"{spec.name.lower()}_stage1.ckpt"
        save_checkpoint(net, path, model, stage="stage1")
        report.checkpoints.append(path.name)
    log.info("%s: stage 2 (%d epochs)", spec.name, tcfg.epochs2)
    net, report = train_stage2(net, train, model, tcfg, x0, report=report)
    if out is not None:
        path = out / f"{spec.name.lower()}.ckpt"
        save_checkpoint(net, path, model, stage="stage2", extra={"best_epoch": report.best_epoch})
        report.checkpoints.append(path.name)
    return FittedPipeline(spec, model, np.asarray(x0), net=net), report


def build_pipelines(cfg: RunConfig, series: QuoteSeries, out: Path | None):
    if not 0 < cfg.in_sample_len < len(series) - 1:
        raise InputError(f"in_sample_len={cfg.in_sample_len} does not fit a series of {len(series)} days")
    parts = split(series, cfg.in_sample_len)
    fitted, reports = [], {}
    for name in cfg.pipelines:
        try:
            spec = preset(name, cfg.policy_mode)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        if spec.tracker == KF:
            fit_on = parts.out_of_sample if cfg.baseline_fit_on_test else parts.in_sample
            fitted.append(fit_model_based(spec, fit_on, series, cfg.q_grid, cfg.r_grid,
                                          model=model_for(cfg, fit_on, spec.model)))
            continue
        ckpt = cfg.checkpoint_kbpt if spec.name == "KBPT" else cfg.checkpoint_b3
        if ckpt:
            path = cfg.path(ckpt)
            if not path.is_file():
                raise InputError(f"checkpoint not found: {path}")
            net, header = load_checkpoint(path)
            model = spec_from_header(header) or model_for(cfg, parts.in_sample, spec.model)
            if model.kind is not spec.model:
                raise InputError(f"{path}: checkpoint model {model.kind.value} does not match {spec.name}")
            x0, _ = initial_estimate(series, model)
            fitted.append(FittedPipeline(spec.with_(checkpoint=str(path)), model, np.asarray(x0), net=net))
        else:
            pipe, report = train_learned(cfg, spec, series, parts.in_sample, out)
            fitted.append(pipe)
            reports[spec.name] = report
    return fitted, reports


def write_outputs(cfg: RunConfig, series: QuoteSeries, results: dict, out: Path, reports: dict) -> dict:
    start = cfg.in_sample_len
    meta = dict(label=series.label, trade_start=start, forced_close_policy="close at final day")
    head = header_lines(cfg, **meta)
    ok = {k: v for k, v in results.items() if isinstance(v, BacktestResult)}
    days = np.arange(start, len(series))
    with (out / "pnl.csv").open("w") as handle:
        for line in head:
            handle.write(f"# {line}\n")
        handle.write(",".join(["day", "date", *ok]) + "\n")
        for i, t in enumerate(days):
            row = [str(int(t)), series.dates[t], *(repr(float(r.pnl[i])) for r in ok.values())]
            handle.write(",".join(row) + "\n")
    write_ledger({k: r.ledger for k, r in ok.items()}, out / "ledger.csv", head)
    stats = {
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "label": series.label,
        "trade_start": start,
        "horizon_days": int(len(days)),
        "policy_mode": cfg.policy_mode,
        "pipelines": {},
    }
    for name, res in results.items():
        if isinstance(res, BacktestResult):
            entry = res.stats.to_dict()
            entry.update(forced_close=res.forced_close, error=res.error,
                         checkpoint=res.spec.checkpoint, model=res.spec.model.value)
        else:
            entry = {"error": res}
        if name in reports:
            entry["training"] = reports[name].to_dict()
        stats["pipelines"][name] = entry
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    if cfg.plots and ok:
        from .plotting import plot_pnl

        plot_pnl(days, {k: r.pnl for k, r in ok.items()}, out / "pnl.png", title=series.label)
    return stats


def resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    over = {"seed": args.seed, "policy_mode": args.policy_mode, "out": args.out}
    if args.pipelines:
        over["pipelines"] = tuple(p.strip().upper() for p in args.pipelines.split(",") if p.strip())
    return cfg.with_overrides(**over)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_backtest(cfg: RunConfig) -> int:
    series = load_series(cfg)
    out = _outdir(cfg)
    fitted, reports = build_pipelines(cfg, series, out)
    results = compare(fitted, series, cfg.in_sample_len, cfg.zscore_window, cfg.zscore_min_samples)
    stats = write_outputs(cfg, series, results, out, reports)
    for name, entry in stats["pipelines"].items():
        if entry.get("error"):
            log.warning("%s: %s", name, entry["error"])
        else:
            log.info("%s: %d trades, final PnL %.4f", name, entry["n_trades"], entry["final_pnl"])
    failed = [n for n, e in stats["pipelines"].items() if e.get("error")]
    if failed:
        raise RuntimeError(f"pipelines failed: {','.join(failed)}")
    return 0


def cmd_compare(cfg: RunConfig) -> int:
    if cfg.pipelines == RunConfig().pipelines:
        cfg = cfg.with_overrides(pipelines=("B1", "B2", "B3", "KBPT"))
    code = cmd_backtest(cfg)
    stats = json.loads((Path(cfg.out) / "stats.json").read_text())
    cols = ["n_trades", "final_pnl", "annual_return_pct", "mean_return_per_trade_pct",
            "avg_holding_days", "avg_days_between_returns"]
    with (Path(cfg.out) / "compare.csv").open("w") as handle:
        handle.write(f"# config_sha256={stats['config_sha256']} seed={stats['seed']}\n")
        handle.write(",".join(["pipeline", *cols]) + "\n")
        for name, entry in stats["pipelines"].items():
            handle.write(",".join([name, *(repr(entry.get(c)) for c in cols)]) + "\n")
    return code


def cmd_train(cfg: RunConfig) -> int:
    series = load_series(cfg)
    out = _outdir(cfg)
    names = [n for n in cfg.pipelines if preset(n).tracker == LEARNED] or ["KBPT"]
    train = split(series, cfg.in_sample_len).in_sample if cfg.in_sample_len < len(series) else series
    summary = {"config_sha256": cfg.digest(), "seed": cfg.seed, "label": series.label, "pipelines": {}}
    for name in names:
        spec = preset(name, cfg.policy_mode)
        pipe, report = train_learned(cfg, spec, series, train, out)
        summary["pipelines"][name] = {"model": pipe.model.to_config(), **report.to_dict()}
        if cfg.plots:
            from .plotting import plot_training

            plot_training(report.stage1_losses, report.stage2_pnl, out / f"{name.lower()}_training.png", name)
    (out / "train.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_synth(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    kind = ModelKind.parse(cfg.model_kind)
    model = StateSpaceSpec(kind, rho=cfg.rho if cfg.rho is not None else 0.9,
                           static_hedge=cfg.static_hedge if cfg.static_hedge is not None else 1.0)
    n = model.state_dim
    spec = SyntheticSpec(
        model=model, length=cfg.synth_length, initial_state=cfg.synth_initial_state[:n],
        state_scales=cfg.synth_state_scales[:n], obs_scale=cfg.synth_obs_scale,
        noise_family=cfg.synth_noise_family, dof=cfg.synth_dof, seed=cfg.seed, alpha0=cfg.synth_alpha0,
        alpha_drift=cfg.synth_alpha_drift, alpha_vol=cfg.synth_alpha_vol, hedge_drift=cfg.synth_hedge_drift,
        start_date=cfg.synth_start_date, label=cfg.label or "synthetic",
    )
    series, states = generate_synthetic(spec)
    head = header_lines(cfg, model=kind.value, rho=model.rho, static_hedge=model.static_hedge)
    save_csv(series, out / "series.csv", head)
    with (out / "states.csv").open("w") as handle:
        for line in head:
            handle.write(f"# {line}\n")
        handle.write(",".join(["day", *model.labels]) + "\n")
        for t, row in enumerate(states):
            handle.write(",".join([str(t), *(repr(float(v)) for v in row)]) + "\n")
    return 0


def cmd_stats(cfg: RunConfig, ledger_path: str | None, horizon: int | None) -> int:
    if ledger_path is None:
        ledger_path = str(Path(cfg.out) / "ledger.csv")
    path = Path(ledger_path)
    if not path.is_file():
        raise InputError(f"ledger file not found: {path}")
    ledgers, meta = read_ledger(path)
    if horizon is None:
        last = max((tx.t_close for txs in ledgers.values() for tx in txs), default=-1)
        start = int(meta.get("trade_start", 0))
        horizon = max(last - start + 1, 1)
    result = {
        "source": str(path),
        "config_sha256": meta.get("config_sha256"),
        "seed": meta.get("seed"),
        "horizon_days": horizon,
        "pipelines": {k: compute_stats(v, horizon).to_dict() for k, v in ledgers.items()},
    }
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if cfg.out and cfg.out != RunConfig().out:
        _outdir(cfg)
        (Path(cfg.out) / "stats.json").write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairtrader", description="Learned-gain Kalman pairs trading")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("backtest", "run pipelines and write pnl/ledger/stats"),
                       ("compare", "backtest all pipelines and write a comparison table"),
                       ("train", "train learned-gain pipelines and write checkpoints"),
                       ("synth", "generate a synthetic pair"),
                       ("stats", "recompute trade statistics from a ledger file")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--pipelines", help="comma list from B1,B2,B3,KBPT")
        p.add_argument("--policy-mode", choices=("cumulative", "instantaneous"))
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "stats":
            p.add_argument("--ledger", help="ledger.csv to read (default <out>/ledger.csv)")
            p.add_argument("--horizon", type=int, help="horizon in days for annualisation")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    message = " ".join(str(message).split())
    print(f"error: {kind}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args)
        if args.command == "stats":
            return cmd_stats(cfg, args.ledger, args.horizon)
        return {"backtest": cmd_backtest, "compare": cmd_compare, "train": cmd_train,
                "synth": cmd_synth}[args.command](cfg)
    except (InputError, ConfigError, DataError) as exc:
        return _fail(type(exc).__name__, exc, EXIT_INPUT)
    except FileNotFoundError as exc:
        return _fail("FileNotFoundError", f"{exc.strerror}: {exc.filename}", EXIT_INPUT)
    except Exception as exc:  # top-level: one line, nonzero
        log.debug("failure", exc_info=True)
        return _fail(type(exc).__name__, exc, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
