#!/usr/bin/env python3
"""Model-based vs zero-hold forecasting over synthetic trips on a lossy channel.

Writes one trace CSV per trip plus a pooled ECDF table into --out.
"""
import argparse
from pathlib import Path

import numpy as np

from sldshdp import io
from sldshdp.mbc_sim import ChannelConfig, ScenarioConfig, ecdf_at, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trips", type=int, default=10)
    ap.add_argument("--steps", type=int, default=1200)
    ap.add_argument("--per", type=float, default=0.6)
    ap.add_argument("--refit-window", type=int, default=600)
    ap.add_argument("--sweeps", type=int, default=60)
    ap.add_argument("--burn-in", type=int, default=30)
    ap.add_argument("--threshold", type=float, default=1.0)
    ap.add_argument("--out", type=Path, default=Path("comparison_out"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    mbc, base = [], []
    for trip in range(args.trips):
        series, _ = io.generate_synthetic_trip(io.default_trip_spec(3, args.steps, 200), 600 + trip)
        config = ScenarioConfig(refit_window=args.refit_window, channel=ChannelConfig(args.per, trip),
                                sweeps=args.sweeps, burn_in=args.burn_in, fit_seed=trip)
        trace = run_scenario(series, config)
        io.write_trace(trace, args.out / f"trace_{trip:02d}.csv")
        mbc.append(trace.mbc_error)
        base.append(trace.baseline_error)
        print(f"trip {trip}: delivered {trace.delivered.mean():.2f}, median mbc "
              f"{np.median(trace.mbc_error):.4g}, baseline {np.median(trace.baseline_error):.4g}")

    mbc, base = np.concatenate(mbc), np.concatenate(base)
    io.write_ecdf(*io.ecdf_table(mbc, base), args.out / "ecdf.csv")
    print(f"pooled median: mbc {np.median(mbc):.4g}, baseline {np.median(base):.4g}")
    print(f"ECDF({args.threshold:g}): mbc {ecdf_at(mbc, args.threshold):.4f}, "
          f"baseline {ecdf_at(base, args.threshold):.4f}")


if __name__ == "__main__":
    main()
