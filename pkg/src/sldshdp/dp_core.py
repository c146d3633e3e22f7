"""Dirichlet-process primitives.

Truncated stick-breaking (GEM) weights and the Chinese restaurant process
seating rule. The truncated representation keeps ``L`` sticks and lets the
last one absorb whatever stick length is left, so the weights always form a
proper probability vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_TRUNCATION = 20

# Beta(1, lam) draws with small lam round to exactly 1.0 in double precision.
_MAX_FRACTION = float(np.nextafter(1.0, 0.0))
_MIN_FRACTION = float(np.finfo(float).tiny)


@dataclass(frozen=True, eq=False)
class StickWeights:
    """Stick fractions ``v`` and the weights they induce.

    ``fractions[-1]`` is always 1: the final stick takes the residual mass.
    """

    fractions: np.ndarray
    weights: np.ndarray

    @property
    def truncation(self) -> int:
        return len(self.weights)


def stick_weights_from_fractions(fractions: Sequence[float], truncation: int) -> StickWeights:
    """Break a unit stick with the given fractions.

    Only the first ``truncation`` fractions are used; the last of those is
    overridden to 1. Every supplied fraction must lie in (0, 1), except the
    overridden one which may already be 1.
    """
    if int(truncation) != truncation or truncation < 1:
        raise ValueError(f"truncation must be a positive integer, got {truncation!r}")
    truncation = int(truncation)
    v = np.array(fractions, dtype=float, ndmin=1)
    if v.ndim != 1:
        raise ValueError("fractions must be one-dimensional")
    if len(v) < truncation:
        raise ValueError(f"need at least {truncation} fractions, got {len(v)}")
    inside = (v > 0.0) & (v < 1.0)
    inside[truncation - 1] = 0.0 < v[truncation - 1] <= 1.0
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise ValueError(f"stick fraction {bad} = {v[bad]!r} is outside (0, 1)")

    v = v[:truncation].copy()
    v[-1] = 1.0
    remaining = np.ones(truncation)
    remaining[1:] = np.cumprod(1.0 - v[:-1])
    return StickWeights(fractions=v, weights=v * remaining)


def sample_stick_weights(concentration: float, truncation: int,
                         rng: np.random.Generator) -> StickWeights:
    """Draw truncated GEM(concentration) weights with Beta(1, concentration) fractions."""
    if not concentration > 0:
        raise ValueError(f"concentration must be positive, got {concentration!r}")
    if int(truncation) != truncation or truncation < 1:
        raise ValueError(f"truncation must be a positive integer, got {truncation!r}")
    v = rng.beta(1.0, concentration, size=int(truncation))
    np.clip(v, _MIN_FRACTION, _MAX_FRACTION, out=v)
    return stick_weights_from_fractions(v, truncation)


@dataclass(frozen=True)
class CrpState:
    """Occupancy counts of a Chinese restaurant with concentration ``concentration``."""

    counts: tuple[int, ...] = ()
    concentration: float = 1.0

    def __post_init__(self):
        if not self.concentration > 0:
            raise ValueError(f"concentration must be positive, got {self.concentration!r}")
        counts = tuple(int(c) for c in self.counts)
        if any(c < 1 for c in counts):
            raise ValueError("occupied tables must have count >= 1")
        object.__setattr__(self, "counts", counts)

    @property
    def num_customers(self) -> int:
        return sum(self.counts)

    @property
    def num_tables(self) -> int:
        return len(self.counts)

    def probabilities(self) -> np.ndarray:
        """Seating probabilities; the last entry is the new-table probability."""
        p = np.array(self.counts + (self.concentration,), dtype=float)
        return p / (self.num_customers + self.concentration)

    def seat(self, table: int) -> "CrpState":
        if table == self.num_tables:
            return CrpState(self.counts + (1,), self.concentration)
        if not 0 <= table < self.num_tables:
            raise ValueError(f"table {table} does not exist and is not the next new table")
        counts = list(self.counts)
        counts[table] += 1
        return CrpState(tuple(counts), self.concentration)


def crp_assign(state: CrpState, rng: np.random.Generator) -> tuple[int, CrpState]:
    """Seat one customer.

    Returns the chosen table (``state.num_tables`` means a new table) and the
    updated state.
    """
    u = rng.random() * (state.num_customers + state.concentration)
    acc = 0.0
    for j, c in enumerate(state.counts):
        acc += c
        if u < acc:
            return j, state.seat(j)
    return state.num_tables, state.seat(state.num_tables)


def crp_log_partition_prob(labels: Sequence[int], concentration: float) -> float:
    """Log probability of a seating sequence under the sequential CRP.

    Labels must be in arrival order: a customer opening a table gets the
    smallest unused label.
    """
    if not concentration > 0:
        raise ValueError(f"concentration must be positive, got {concentration!r}")
    counts: list[int] = []
    logp = 0.0
    for i, lab in enumerate(labels):
        if int(lab) != lab:
            raise ValueError(f"label {lab!r} at position {i} is not an integer")
        lab = int(lab)
        if lab == len(counts):
            logp += math.log(concentration / (i + concentration))
            counts.append(1)
        elif 0 <= lab < len(counts):
            logp += math.log(counts[lab] / (i + concentration))
            counts[lab] += 1
        else:
            raise ValueError(f"label {lab} at position {i} skips an unused table")
    return logp
