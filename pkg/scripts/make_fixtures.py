"""Regenerate the committed fixture CSVs under src/pairtrader/fixtures.

No market data is bundled. Each fixture is a synthetic stand-in for a
real pair: same in-sample/out-of-sample lengths and split date, price
levels of the right order, heavy-tailed noise and a slowly drifting hedge
ratio so that none of the filters' models is exact.

    python scripts/make_fixtures.py [--out DIR]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from pairtrader.data import SyntheticSpec, generate_synthetic, save_csv
from pairtrader.ssmodel import ModelKind, StateSpaceSpec

FIXTURES = {
    # name: (in-sample end, n_in, n_out, alpha0, hedge, level mu, rho, state scales (h, mu, s), obs scale,
    #        hedge drift, seed); beta starts near hedge * alpha0 + mu at realistic price levels
    "chf_euro": ("2019-06-21", 2000, 944, 1.02, 0.80, 0.31, 0.90, (2e-4, 5e-5, 2.5e-3), 1.0e-3, 2e-5, 11),
    "aud_zar": ("2017-07-20", 2000, 1500, 0.75, 0.06, 0.030, 0.85, (1.5e-5, 4e-6, 2e-4), 8e-5, -1e-6, 12),
    "ewc_ewa_a": ("2010-01-29", 2000, 1500, 20.0, 0.60, 8.0, 0.92, (2e-4, 1e-3, 5e-2), 2e-2, 1e-5, 13),
    "ewc_ewa_b": ("2017-01-26", 2000, 1500, 25.0, 0.60, 6.0, 0.92, (2e-4, 1e-3, 5e-2), 2e-2, -1e-5, 14),
}

LABELS = {"chf_euro": "CHF-EURO", "aud_zar": "AUD-ZAR", "ewc_ewa_a": "EWC-EWA-A", "ewc_ewa_b": "EWC-EWA-B"}


def start_date(in_sample_end: str, n_in: int) -> str:
    return str(np.busday_offset(np.datetime64(in_sample_end), -(n_in - 1), roll="backward"))


def build(name: str):
    end, n_in, n_out, a0, hedge, level, rho, scales, obs, drift, seed = FIXTURES[name]
    spec = SyntheticSpec(
        model=StateSpaceSpec(ModelKind.PCI_PROPOSED, rho=rho),
        length=n_in + n_out,
        initial_state=(hedge, level, 0.0),
        state_scales=scales,
        obs_scale=obs,
        noise_family="student_t",
        dof=4.0,
        seed=seed,
        alpha0=a0,
        alpha_vol=0.005,
        hedge_drift=drift,
        start_date=start_date(end, n_in),
        label=LABELS[name],
    )
    return spec, generate_synthetic(spec)[0]


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/pairtrader/fixtures"))
    args = parser.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in FIXTURES:
        spec, series = build(name)
        n_in = FIXTURES[name][1]
        save_csv(series, out / f"{name}.csv", [
            f"label={spec.label}",
            "source=synthetic stand-in generated by scripts/make_fixtures.py (not market data)",
            f"in_sample_len={n_in} in_sample_end={series.dates[n_in - 1]} out_of_sample_start={series.dates[n_in]}",
            f"model=PCI_PROPOSED rho={spec.model.rho} noise=student_t dof={spec.dof} seed={spec.seed}",
        ])
        print(f"{name}: {len(series)} rows, split {series.dates[n_in - 1]} | {series.dates[n_in]}")


if __name__ == "__main__":
    main()
