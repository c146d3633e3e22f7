"""CSV and JSON formats, plus the synthetic trip generator.

All numbers are written with 17 significant digits so that a value read
back is bit-identical to the value written.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .emission_ar import ArModeParams, MeasurementModel, MniwPrior, TimeSeries, simulate_switching_ar
from .hdp_hmm import HdpHyperParams, ModeSequence, SwitchingArModel
from .mbc_sim import SimTrace, ecdf_at

FORMAT_VERSION = "1"
TIME_COLUMN = "time_s"
TIMESTEP_TOL = 1e-6
TRACE_HEADER = ("time_s", "delivered", "mbc_error", "baseline_error", "mode")
ECDF_HEADER = ("threshold", "ecdf_mbc", "ecdf_baseline")


class TripFormatError(ValueError):
    pass


class MissingColumnError(TripFormatError):
    pass


class MissingValueError(TripFormatError):
    pass


class NonUniformTimestampError(TripFormatError):
    pass


class SnapshotFormatError(ValueError):
    pass


class SnapshotVersionError(SnapshotFormatError):
    pass


def fmt(x: float) -> str:
    return format(float(x), ".17g")


# --- trips -----------------------------------------------------------------

@dataclass(frozen=True)
class TripCsvSchema:
    """``time_s`` plus the signal columns to load (``None`` loads all of them)."""

    signals: tuple[str, ...] | None = None
    time_column: str = TIME_COLUMN


def load_trip(path, schema: TripCsvSchema | None = None) -> TimeSeries:
    schema = schema or TripCsvSchema()
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TripFormatError(f"{path}: file is empty") from None
        if schema.time_column not in header:
            raise MissingColumnError(f"{path}: missing required column {schema.time_column!r}")
        signals = schema.signals or tuple(h for h in header if h != schema.time_column)
        if not signals:
            raise MissingColumnError(f"{path}: no signal columns")
        for s in signals:
            if s not in header:
                raise MissingColumnError(f"{path}: missing signal column {s!r}")
        cols = [header.index(schema.time_column)] + [header.index(s) for s in signals]
        names = (schema.time_column,) + tuple(signals)
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            parsed = []
            for c, name in zip(cols, names):
                cell = row[c].strip() if c < len(row) else ""
                try:
                    value = float(cell)
                except ValueError:
                    value = math.nan
                if not math.isfinite(value):
                    raise MissingValueError(
                        f"{path}: line {line}: column {name!r} has missing or non-numeric value {cell!r}")
                parsed.append(value)
            rows.append((line, parsed))
    if not rows:
        raise TripFormatError(f"{path}: no data rows")
    data = np.array([p for _, p in rows])
    t = data[:, 0]
    if len(t) > 1:
        steps = np.diff(t)
        bad = np.flatnonzero((steps <= 0) | (np.abs(steps - steps[0]) > TIMESTEP_TOL))
        if len(bad):
            line = rows[bad[0] + 1][0]
            raise NonUniformTimestampError(
                f"{path}: line {line}: timestamp step {steps[bad[0]]!r} differs from {steps[0]!r}")
    return TimeSeries(t, data[:, 1:], tuple(signals))


def write_trip(series: TimeSeries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((TIME_COLUMN,) + series.channels)
        for t, row in zip(series.timestamps, series.values):
            w.writerow([fmt(t)] + [fmt(v) for v in row])


def write_labels(timestamps: np.ndarray, labels: np.ndarray, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((TIME_COLUMN, "mode"))
        for t, z in zip(timestamps, labels):
            w.writerow([fmt(t), int(z)])


def read_labels(path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([float(r[TIME_COLUMN]) for r in rows]),
            np.array([int(r["mode"]) for r in rows], dtype=np.int64))


# --- synthetic trips ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SyntheticTripSpec:
    """Piecewise switching-AR trip: segment ``i`` runs ``segment_modes[i]``.

    With ``segment_modes`` unset, segments cycle through the modes in order.
    """

    mode_params: tuple[ArModeParams, ...]
    segment_lengths: tuple[int, ...]
    init_window: np.ndarray
    segment_modes: tuple[int, ...] | None = None
    measurement_noise: float = 0.0
    dt: float = 0.1
    channels: tuple[str, ...] = ("speed_mps",)


def mode_library(num_modes: int, ar_order: int = 2, noise_scale: float = 1.0) -> tuple[ArModeParams, ...]:
    """Speed-like regimes: cruise, constant-acceleration trend, smooth slow-down, and more.

    Coefficients are for ``[y_{t-1}, y_{t-2}]``; with ``ar_order == 1`` the
    first-lag-only variants are used.
    """
    two_lag = [
        ((1.0, 0.0), 0.02),      # cruise: hold speed
        ((2.0, -1.0), 0.004),    # trend: keep current acceleration
        ((1.97, -0.9704), 0.01),  # slow-down towards standstill
        ((1.9, -0.905), 0.02),   # damped speed oscillation
        ((0.995, 0.0), 0.03),    # gentle drift down
    ]
    one_lag = [((1.0,), 0.02), ((0.99,), 0.03), ((1.004,), 0.01), ((0.97,), 0.05), ((0.995,), 0.02)]
    table = one_lag if ar_order == 1 else two_lag
    if not 1 <= num_modes <= len(table):
        raise ValueError(f"mode library has {len(table)} modes, asked for {num_modes}")
    out = []
    for coefs, sd in table[:num_modes]:
        lags = np.zeros((ar_order, 1, 1))
        lags[:len(coefs), 0, 0] = coefs
        out.append(ArModeParams(lags, [[(noise_scale * sd) ** 2]]))
    return tuple(out)


def default_trip_spec(num_modes: int = 3, steps: int = 2000, segment: int = 200,
                      ar_order: int = 2, noise_scale: float = 1.0, speed: float = 15.0,
                      dt: float = 0.1) -> SyntheticTripSpec:
    if steps < segment or segment < 1:
        raise ValueError("need steps >= segment >= 1")
    n_full, rest = divmod(steps, segment)
    lengths = (segment,) * n_full + ((rest,) if rest else ())
    return SyntheticTripSpec(mode_library(num_modes, ar_order, noise_scale), lengths,
                             np.full((ar_order, 1), speed), dt=dt)


def generate_synthetic_trip(spec: SyntheticTripSpec, seed) -> tuple[TimeSeries, ModeSequence]:
    M = len(spec.mode_params)
    modes = spec.segment_modes or tuple(i % M for i in range(len(spec.segment_lengths)))
    if len(modes) != len(spec.segment_lengths):
        raise ValueError("segment_modes and segment_lengths differ in length")
    labels = np.repeat(np.asarray(modes, dtype=np.int64), spec.segment_lengths)
    rng = np.random.default_rng(seed)
    measurement = None
    if spec.measurement_noise > 0:
        d = spec.mode_params[0].dim
        measurement = MeasurementModel(np.eye(d), spec.measurement_noise ** 2 * np.eye(d))
    series = simulate_switching_ar(labels, spec.mode_params, spec.init_window, rng,
                                   dt=spec.dt, channels=spec.channels, measurement=measurement)
    return series, ModeSequence(labels, M)


# --- snapshots ---------------------------------------------------------------

def _prior_to_dict(p: MniwPrior | None):
    if p is None:
        return None
    return {"mean_matrix": p.mean_matrix.tolist(), "col_precision": p.col_precision.tolist(),
            "iw_scale": p.iw_scale.tolist(), "iw_dof": p.iw_dof}


def hypers_to_dict(h: HdpHyperParams) -> dict:
    return {"lambda": h.lam, "psi": h.psi, "kappa": h.kappa, "truncation": h.truncation,
            "ar_order": h.ar_order, "emission_prior": _prior_to_dict(h.emission_prior)}


def hypers_from_dict(d: dict) -> HdpHyperParams:
    prior = d.get("emission_prior")
    return HdpHyperParams(lam=float(d["lambda"]), psi=float(d["psi"]), kappa=float(d["kappa"]),
                          truncation=int(d["truncation"]), ar_order=int(d["ar_order"]),
                          emission_prior=None if prior is None else MniwPrior(**prior))


def data_hash(series: TimeSeries) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(series.timestamps).tobytes())
    h.update(np.ascontiguousarray(series.values).tobytes())
    return h.hexdigest()


@dataclass(eq=False)
class ModelSnapshotFile:
    model: SwitchingArModel
    metadata: dict = field(default_factory=dict)
    format_version: str = FORMAT_VERSION


def snapshot_to_json(model: SwitchingArModel, metadata: dict | None = None) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "hyperparameters": hypers_to_dict(model.hypers),
        "global_weights": model.global_weights.tolist(),
        "transition": model.transition.tolist(),
        "modes": [{"lag_matrices": m.lag_matrices.tolist(), "noise_cov": m.noise_cov.tolist()}
                  for m in model.modes],
        "metadata": metadata or {},
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def write_snapshot(model: SwitchingArModel, path, metadata: dict | None = None) -> None:
    Path(path).write_text(snapshot_to_json(model, metadata))


def read_snapshot_file(path) -> ModelSnapshotFile:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise SnapshotFormatError(f"{path}: not valid JSON ({err})") from err
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise SnapshotFormatError(f"{path}: missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise SnapshotVersionError(
            f"{path}: snapshot format {doc['format_version']!r} is not supported (expected {FORMAT_VERSION!r})")
    try:
        hypers = hypers_from_dict(doc["hyperparameters"])
        modes = tuple(ArModeParams(np.array(m["lag_matrices"], dtype=float),
                                   np.array(m["noise_cov"], dtype=float)) for m in doc["modes"])
        model = SwitchingArModel(np.array(doc["global_weights"], dtype=float),
                                 np.array(doc["transition"], dtype=float), modes, hypers)
    except (KeyError, TypeError, ValueError) as err:
        raise SnapshotFormatError(f"{path}: inconsistent snapshot ({err})") from err
    return ModelSnapshotFile(model, doc.get("metadata", {}), doc["format_version"])


def read_snapshot(path) -> SwitchingArModel:
    return read_snapshot_file(path).model


# --- traces and ECDFs ---------------------------------------------------------

def write_trace(trace: SimTrace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in zip(trace.time, trace.delivered, trace.mbc_error, trace.baseline_error, trace.mode_labels):
            w.writerow([fmt(row[0]), int(row[1]), fmt(row[2]), fmt(row[3]), int(row[4])])


def read_trace(path) -> SimTrace:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != TRACE_HEADER:
            raise TripFormatError(f"{path}: expected header {','.join(TRACE_HEADER)}")
        rows = [r for r in reader if r]
    if not rows:
        return SimTrace(*(np.array([]) for _ in range(5)))
    cols = list(zip(*rows))
    return SimTrace(np.array(cols[0], dtype=float), np.array(cols[1], dtype=int).astype(bool),
                    np.array(cols[2], dtype=float), np.array(cols[3], dtype=float),
                    np.array(cols[4], dtype=np.int64))


def ecdf_table(mbc_errors, baseline_errors) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Both ECDFs evaluated on the union of observed error values."""
    m = np.asarray(mbc_errors, dtype=float)
    b = np.asarray(baseline_errors, dtype=float)
    grid = np.unique(np.concatenate([m, b]))
    return grid, ecdf_at(m, grid), ecdf_at(b, grid)


def write_ecdf(grid: Sequence[float], ecdf_mbc, ecdf_base, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ECDF_HEADER)
        for row in zip(grid, ecdf_mbc, ecdf_base):
            w.writerow([fmt(v) for v in row])
