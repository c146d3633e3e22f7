"""Command-line entry point: synth, fit, forecast, simulate, report."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .emission_ar import TimeSeries
from .forecast import filter_belief, forecast_k_step
from .hdp_hmm import HdpHyperParams, fit
from .mbc_sim import ChannelConfig, ScenarioConfig, ecdf_at, run_scenario

HYPER_DEFAULTS = {"lambda": 1.0, "psi": 1.0, "kappa": 50.0, "truncation": 20, "ar_order": 2}
SCENARIO_DEFAULTS = {"per": 0.6, "seed": 0, "horizon": "auto", "refit_window": 600,
                     "tx_rate": 10.0, "sweeps": 100, "burn_in": 50, "method": "mean"}


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _horizon(text):
    if text is None or text == "auto":
        return text
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"horizon must be a positive integer or 'auto', got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"horizon must be positive, got {value}")
    return value


def _add_hyper_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--lambda", dest="lam", type=float, default=None, help="transition DP concentration")
    g.add_argument("--psi", type=float, default=None, help="top-level DP concentration")
    g.add_argument("--kappa", type=float, default=None, help="sticky self-transition bias")
    g.add_argument("--truncation", type=int, default=None, help="weak-limit mode budget")
    g.add_argument("--ar-order", type=int, default=None)


def _add_sampler_flags(p, sweeps, burn_in):
    p.add_argument("--sweeps", type=int, default=None, help=f"Gibbs sweeps (default {sweeps})")
    p.add_argument("--burn-in", type=int, default=None, help=f"burn-in sweeps (default {burn_in})")


def _pick(args, name, config, key, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return config.get(key, default)


def _hypers(args, config=None) -> HdpHyperParams:
    config = config or {}
    return HdpHyperParams(
        lam=float(_pick(args, "lam", config, "lambda", HYPER_DEFAULTS["lambda"])),
        psi=float(_pick(args, "psi", config, "psi", HYPER_DEFAULTS["psi"])),
        kappa=float(_pick(args, "kappa", config, "kappa", HYPER_DEFAULTS["kappa"])),
        truncation=int(_pick(args, "truncation", config, "truncation", HYPER_DEFAULTS["truncation"])),
        ar_order=int(_pick(args, "ar_order", config, "ar_order", HYPER_DEFAULTS["ar_order"])),
    )


def _load(args) -> TimeSeries:
    schema = io.TripCsvSchema(tuple(args.channel) if args.channel else None)
    series = io.load_trip(args.trip, schema)
    if not args.channel:
        series = series.select(series.channels[:1])
    return series


def cmd_synth(args) -> None:
    spec = io.default_trip_spec(args.modes, args.steps, args.segment, args.ar_order,
                                args.noise_scale, dt=args.dt)
    series, truth = io.generate_synthetic_trip(spec, args.seed)
    out = Path(args.out)
    labels_out = Path(args.labels_out) if args.labels_out else _sibling(out, "_labels.csv")
    io.write_trip(series, out)
    io.write_labels(series.timestamps, truth.labels, labels_out)
    print(f"wrote {len(series)} samples to {out} and truth labels to {labels_out}")


def cmd_fit(args) -> None:
    series = _load(args)
    hypers = _hypers(args)
    sweeps = args.sweeps if args.sweeps is not None else 200
    burn_in = args.burn_in if args.burn_in is not None else 100
    result = fit(series, hypers, sweeps, burn_in, args.seed)
    out = Path(args.out)
    metadata = {"seed": args.seed, "sweeps": sweeps, "burn_in": burn_in,
                "data_hash": io.data_hash(series), "channels": list(series.channels),
                "trip": Path(args.trip).name}
    io.write_snapshot(result.model, out, metadata)
    labels_out = Path(args.labels_out) if args.labels_out else _sibling(out, "_modes.csv")
    io.write_labels(series.timestamps[result.modes.start:], result.modes.labels, labels_out)
    diag_out = Path(args.diagnostics_out) if args.diagnostics_out else _sibling(out, "_diagnostics.json")
    diag_out.write_text(json.dumps(result.diagnostics, indent=1, sort_keys=True) + "\n")
    occ = np.bincount(result.modes.labels, minlength=result.model.num_modes)
    print(f"fitted {len(series)} samples; occupied modes: {int(np.count_nonzero(occ))}; "
          f"snapshot {out}, labels {labels_out}, diagnostics {diag_out}")


def cmd_forecast(args) -> None:
    snap = io.read_snapshot_file(args.snapshot)
    model = snap.model
    channels = snap.metadata.get("channels")
    if not args.channel and channels:
        args.channel = channels
    series = _load(args)
    if series.dim != model.dim:
        raise ValueError(f"trip has {series.dim} channels, snapshot expects {model.dim}")
    if args.horizon == "auto":
        raise ValueError("forecast needs an explicit integer --horizon")
    end = len(series) if args.start_index is None else args.start_index + 1
    if not model.ar_order <= end <= len(series):
        raise ValueError(f"start index must lie in [{model.ar_order - 1}, {len(series) - 1}]")
    state = filter_belief(model, series.values[:end])
    preds = forecast_k_step(model, state, args.horizon, args.method)
    t_last = series.timestamps[end - 1]
    dt = series.dt if len(series) > 1 else 0.1
    out = Path(args.out)
    io.write_trip(TimeSeries.regular(preds, dt=dt, t0=t_last + dt, channels=series.channels), out)
    print(f"wrote {args.horizon}-step forecast to {out}")


def cmd_simulate(args) -> None:
    config = json.loads(Path(args.config).read_text()) if args.config else {}
    series = _load(args)
    seed = int(_pick(args, "seed", config, "seed", SCENARIO_DEFAULTS["seed"]))
    horizon = _horizon(_pick(args, "horizon", config, "horizon", SCENARIO_DEFAULTS["horizon"]))
    scenario = ScenarioConfig(
        tx_rate_hz=float(_pick(args, "tx_rate", config, "tx_rate", SCENARIO_DEFAULTS["tx_rate"])),
        refit_window=int(_pick(args, "refit_window", config, "refit_window", SCENARIO_DEFAULTS["refit_window"])),
        horizon=None if horizon == "auto" else horizon,
        channel=ChannelConfig(float(_pick(args, "per", config, "per", SCENARIO_DEFAULTS["per"])), seed),
        hypers=_hypers(args, config),
        sweeps=int(_pick(args, "sweeps", config, "sweeps", SCENARIO_DEFAULTS["sweeps"])),
        burn_in=int(_pick(args, "burn_in", config, "burn_in", SCENARIO_DEFAULTS["burn_in"])),
        fit_seed=seed,
        method=_pick(args, "method", config, "method", SCENARIO_DEFAULTS["method"]),
    )
    trace = run_scenario(series, scenario)
    out = Path(args.out)
    io.write_trace(trace, out)
    print(f"wrote {len(trace.time)} steps to {out}; delivered "
          f"{trace.diagnostics['delivered_packets']}/{trace.diagnostics['packets']} packets; "
          f"median error mbc {np.median(trace.mbc_error):.4g}, baseline {np.median(trace.baseline_error):.4g}")


def cmd_report(args) -> None:
    traces = [io.read_trace(p) for p in args.traces]
    mbc = np.concatenate([t.mbc_error for t in traces])
    base = np.concatenate([t.baseline_error for t in traces])
    if len(mbc) == 0:
        raise ValueError("traces contain no samples")
    grid, e_mbc, e_base = io.ecdf_table(mbc, base)
    io.write_ecdf(grid, e_mbc, e_base, args.out)
    print(f"{len(traces)} traces, {len(mbc)} samples; ECDF at {args.threshold:g}: "
          f"mbc {ecdf_at(mbc, args.threshold):.4f}, baseline {ecdf_at(base, args.threshold):.4f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sldshdp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic switching-AR trip and its true modes")
    p.add_argument("--modes", type=int, default=3)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--segment", type=int, default=200, help="steps per mode segment")
    p.add_argument("--ar-order", type=int, default=2)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--labels-out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit the model to a trip CSV")
    p.add_argument("--trip", required=True)
    p.add_argument("--channel", action="append", help="signal column(s) to model; default first")
    _add_hyper_flags(p)
    _add_sampler_flags(p, 200, 100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="snapshot JSON path")
    p.add_argument("--labels-out")
    p.add_argument("--diagnostics-out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("forecast", help="k-step forecast from a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--trip", required=True)
    p.add_argument("--channel", action="append")
    p.add_argument("--horizon", type=_horizon, default=10)
    p.add_argument("--start-index", type=int, default=None, help="last observed sample (default: end)")
    p.add_argument("--method", choices=("mean", "map-mode"), default="mean")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("simulate", help="run the lossy-channel forecasting scenario")
    p.add_argument("--trip", required=True)
    p.add_argument("--channel", action="append")
    p.add_argument("--config", help="JSON file with scenario settings; flags take precedence")
    p.add_argument("--per", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--horizon", type=_horizon, default=None)
    p.add_argument("--refit-window", type=int, default=None)
    p.add_argument("--tx-rate", type=float, default=None, help="packets per second")
    p.add_argument("--method", choices=("mean", "map-mode"), default=None)
    _add_hyper_flags(p)
    _add_sampler_flags(p, 100, 50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="ECDF of errors over one or more traces")
    p.add_argument("traces", nargs="+")
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (ValueError, KeyError, OSError, np.linalg.LinAlgError, RuntimeError) as err:
        msg = str(err).splitlines()[0] if str(err) else type(err).__name__
        print(f"sldshdp {args.command}: {type(err).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(cli_main())
