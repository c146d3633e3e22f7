"""Sticky HDP-HMM over switching AR modes, fitted by blocked Gibbs sampling.

The infinite model is approximated by its weak limit with ``L`` modes:

    beta        ~ Dir(psi/L, ..., psi/L)
    pi_j        ~ Dir(lam * beta + kappa * e_j)
    z_t | z_t-1 ~ pi_{z_{t-1}}
    theta_k     ~ MNIW prior

Randomness inside :func:`gibbs_sweep` is drawn from one generator per mode
("stream"), and pairwise quantities are visited in stream order, so a sweep
is equivariant under relabelling of modes when the streams are relabelled
with them.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .dp_core import DEFAULT_TRUNCATION, sample_stick_weights
from .emission_ar import (ArModeParams, MniwPrior, TimeSeries, ar_log_likelihoods,
                          ar_suff_stats, default_prior, lagged_design, mniw_update,
                          sample_mode_params)

ROW_TOL = 1e-10


class SeriesTooShortError(ValueError):
    pass


class LikelihoodMismatchError(ValueError):
    """Raised when no mode can explain an observation (an all ``-inf`` likelihood row)."""


class SweepError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class HdpHyperParams:
    lam: float = 1.0
    psi: float = 1.0
    kappa: float = 50.0
    truncation: int = DEFAULT_TRUNCATION
    ar_order: int = 2
    emission_prior: MniwPrior | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.psi > 0:
            raise ValueError(f"psi must be positive, got {self.psi}")
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa}")
        if int(self.truncation) != self.truncation or self.truncation < 1:
            raise ValueError(f"truncation must be a positive integer, got {self.truncation}")
        if int(self.ar_order) != self.ar_order or self.ar_order < 1:
            raise ValueError(f"ar_order must be a positive integer, got {self.ar_order}")
        if self.emission_prior is not None and self.emission_prior.order != self.ar_order:
            raise ValueError("emission prior order does not match ar_order")

    def prior_for(self, dim: int) -> MniwPrior:
        if self.emission_prior is None:
            return default_prior(dim, self.ar_order)
        if self.emission_prior.dim != dim:
            raise ValueError(f"emission prior has dimension {self.emission_prior.dim}, data {dim}")
        return self.emission_prior


def _check_simplex(name: str, p: np.ndarray, axis: int = -1) -> None:
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has negative or non-finite entries")
    if np.any(np.abs(p.sum(axis=axis) - 1.0) > ROW_TOL):
        raise ValueError(f"{name} does not sum to one")


@dataclass(frozen=True, eq=False)
class SwitchingArModel:
    """A fitted (or sampled) SLDS-HDP-HMM snapshot.

    ``global_weights`` doubles as the initial-mode distribution.
    """

    global_weights: np.ndarray
    transition: np.ndarray
    modes: tuple[ArModeParams, ...]
    hypers: HdpHyperParams

    def __post_init__(self):
        beta = np.asarray(self.global_weights, dtype=float)
        pi = np.asarray(self.transition, dtype=float)
        L = len(beta)
        if pi.shape != (L, L) or len(self.modes) != L:
            raise ValueError("global_weights, transition and modes disagree on the mode count")
        _check_simplex("global_weights", beta)
        _check_simplex("transition rows", pi, axis=1)
        orders = {(m.order, m.dim) for m in self.modes}
        if len(orders) != 1:
            raise ValueError("all modes must share the same AR order and dimension")
        object.__setattr__(self, "global_weights", beta)
        object.__setattr__(self, "transition", pi)
        object.__setattr__(self, "modes", tuple(self.modes))

    @property
    def num_modes(self) -> int:
        return len(self.modes)

    @property
    def ar_order(self) -> int:
        return self.modes[0].order

    @property
    def dim(self) -> int:
        return self.modes[0].dim

    @cached_property
    def dynamics(self) -> np.ndarray:
        """Stacked lag matrices of all modes, shape ``(L, d, d*r)``."""
        return np.stack([m.stacked for m in self.modes])

    def log_likelihoods(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Per-step, per-mode log densities, shape ``(len(X), L)``."""
        return np.column_stack([ar_log_likelihoods(m, X, Y) for m in self.modes])


@dataclass(frozen=True, eq=False)
class ModeSequence:
    """Mode labels for consecutive timesteps, starting at sample ``start``."""

    labels: np.ndarray
    num_modes: int
    start: int = 0

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_modes):
            raise ValueError(f"labels must lie in [0, {self.num_modes})")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    def occupancy(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_modes)


@dataclass(frozen=True, eq=False)
class GibbsState:
    model: SwitchingArModel
    modes: ModeSequence
    aux_counts: np.ndarray
    iteration: int = 0
    log_joint: float = float("nan")


@dataclass(eq=False)
class FitResult:
    model: SwitchingArModel
    modes: ModeSequence
    diagnostics: dict = field(default_factory=dict)


# --- Dirichlet / CRF building blocks -------------------------------------

def _dirichlet(rng: np.random.Generator, alpha: np.ndarray) -> np.ndarray:
    """Dirichlet draw that survives tiny concentrations; zero entries stay zero.

    Uses Gamma(a) = Gamma(a + 1) * U^(1/a) in log space.
    """
    alpha = np.asarray(alpha, dtype=float)
    out = np.zeros_like(alpha)
    pos = np.flatnonzero(alpha > 0)
    a = alpha[pos]
    logg = np.log(rng.gamma(a + 1.0)) + np.log1p(-rng.random(len(a))) / a
    logg -= logg.max()
    w = np.exp(logg)
    out[pos] = w / w.sum()
    return out


def _dirichlet_ordered(rng: np.random.Generator, alpha: np.ndarray, order: np.ndarray) -> np.ndarray:
    out = np.zeros_like(alpha, dtype=float)
    out[order] = _dirichlet(rng, alpha[order])
    return out


def _crp_tables(rng: np.random.Generator, customers: int, concentration: float) -> int:
    if customers == 0:
        return 0
    i = np.arange(1, customers)
    return 1 + int(np.count_nonzero(rng.random(customers - 1) < concentration / (concentration + i)))


def _aux_row(rng, counts_row, conc_row, order) -> np.ndarray:
    out = np.zeros(len(counts_row), dtype=np.int64)
    for k in order:
        out[k] = _crp_tables(rng, int(counts_row[k]), float(conc_row[k]))
    return out


def transition_counts(labels: np.ndarray, num_modes: int) -> np.ndarray:
    counts = np.zeros((num_modes, num_modes), dtype=np.int64)
    labels = np.asarray(labels)
    if len(labels) > 1:
        np.add.at(counts, (labels[:-1], labels[1:]), 1)
    return counts


def _sticky_concentration(beta, lam, kappa) -> np.ndarray:
    return lam * np.asarray(beta)[None, :] + kappa * np.eye(len(beta))


def sample_transition_rows(global_weights, lam: float, kappa: float, counts,
                           rng: np.random.Generator) -> np.ndarray:
    """Row ``j`` ~ Dir(lam * beta + kappa * e_j + counts[j])."""
    beta = np.asarray(global_weights, dtype=float)
    _check_simplex("global_weights", beta)
    counts = np.asarray(counts)
    if np.any(counts < 0):
        raise ValueError("transition counts must be non-negative")
    alpha = _sticky_concentration(beta, lam, kappa) + counts
    return np.vstack([_dirichlet(rng, row) for row in alpha])


def transition_posterior_mean(global_weights, lam: float, kappa: float, counts) -> np.ndarray:
    """Expected transition matrix under the row Dirichlets of :func:`sample_transition_rows`."""
    alpha = _sticky_concentration(np.asarray(global_weights, dtype=float), lam, kappa) + np.asarray(counts)
    return alpha / alpha.sum(axis=1, keepdims=True)


def sample_global_weights(aux_counts, psi: float, rng: np.random.Generator) -> np.ndarray:
    """beta ~ Dir(psi/L + column sums of the table counts)."""
    aux = np.asarray(aux_counts)
    if np.any(aux < 0):
        raise ValueError("table counts must be non-negative")
    L = aux.shape[1]
    return _dirichlet(rng, psi / L + aux.sum(axis=0))


def sample_aux_counts(counts, global_weights, lam: float, kappa: float,
                      rng: np.random.Generator, *, sticky_override: bool = False) -> np.ndarray:
    """Number of CRF tables serving each ``(j, k)`` transition.

    Cell ``(j, k)`` is the table count of a CRP with ``counts[j, k]``
    customers and concentration ``lam * beta_k + kappa * [j == k]``. With
    ``sticky_override`` the diagonal tables created by the self-transition
    bias are thinned out before they reach the top level.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if np.any(counts < 0):
        raise ValueError("transition counts must be non-negative")
    beta = np.asarray(global_weights, dtype=float)
    conc = _sticky_concentration(beta, lam, kappa)
    order = np.arange(len(beta))
    aux = np.vstack([_aux_row(rng, counts[j], conc[j], order) for j in order])
    if sticky_override:
        aux = _thin_override(aux, beta, lam, kappa, [rng] * len(beta))
    return aux


def _thin_override(aux, beta, lam, kappa, streams) -> np.ndarray:
    aux = aux.copy()
    for j, rng in enumerate(streams):
        if aux[j, j] > 0 and kappa > 0:
            aux[j, j] -= rng.binomial(aux[j, j], kappa / (kappa + lam * beta[j]))
    return aux


# --- message passing ----------------------------------------------------

def _validate_messages(transition, init_dist, log_likelihoods):
    pi = np.asarray(transition, dtype=float)
    init = np.asarray(init_dist, dtype=float)
    ll = np.atleast_2d(np.asarray(log_likelihoods, dtype=float))
    T, L = ll.shape
    if pi.shape != (L, L) or init.shape != (L,):
        raise ValueError(f"shape mismatch: transition {pi.shape}, init {init.shape}, likelihoods {ll.shape}")
    _check_simplex("transition rows", pi, axis=1)
    _check_simplex("init_dist", init)
    if np.any(np.isnan(ll)) or np.any(ll == np.inf):
        raise ValueError("log-likelihoods must be finite or -inf")
    dead = np.flatnonzero(np.all(ll == -np.inf, axis=1))
    if len(dead):
        raise LikelihoodMismatchError(f"every mode has zero likelihood at step {dead[0]}")
    return pi, init, ll


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def backward_messages(transition, log_likelihoods) -> np.ndarray:
    """``B[t, i] = log p(y_{t+1:T} | z_t = i)``."""
    pi = np.asarray(transition, dtype=float)
    ll = np.asarray(log_likelihoods, dtype=float)
    T, L = ll.shape
    B = np.zeros((T, L))
    for t in range(T - 2, -1, -1):
        v = ll[t + 1] + B[t + 1]
        m = v.max()
        B[t] = _log(pi @ np.exp(v - m)) + m
    return B


def _sample_path(pi, init, ll, B, gumbels) -> tuple[np.ndarray, float]:
    log_pi = _log(pi)
    first = _log(init) + ll[0] + B[0]
    log_marginal = float(logsumexp(first))
    if not np.isfinite(log_marginal):
        raise LikelihoodMismatchError("mode sequence has zero probability under the model")
    T = len(ll)
    z = np.empty(T, dtype=np.int64)
    z[0] = np.argmax(first + gumbels[0])
    post = ll + B
    for t in range(1, T):
        z[t] = np.argmax(log_pi[z[t - 1]] + post[t] + gumbels[t])
    return z, log_marginal


def forward_backward_sample(transition, init_dist, log_likelihoods,
                            rng: np.random.Generator) -> np.ndarray:
    """Jointly sample a mode path from its posterior.

    Backward messages are accumulated in log space; the path is then drawn
    forwards with the Gumbel-max trick.
    """
    pi, init, ll = _validate_messages(transition, init_dist, log_likelihoods)
    B = backward_messages(pi, ll)
    z, _ = _sample_path(pi, init, ll, B, rng.gumbel(size=ll.shape))
    return z


def viterbi(transition, init_dist, log_likelihoods) -> np.ndarray:
    """Most probable mode path; ties go to the lower mode index."""
    pi, init, ll = _validate_messages(transition, init_dist, log_likelihoods)
    log_pi = _log(pi)
    T, L = ll.shape
    delta = _log(init) + ll[0]
    back = np.zeros((T, L), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + log_pi
        back[t] = np.argmax(scores, axis=0)
        delta = scores[back[t], np.arange(L)] + ll[t]
    if not np.isfinite(delta.max()):
        raise LikelihoodMismatchError("no mode path has positive probability")
    z = np.empty(T, dtype=np.int64)
    z[-1] = np.argmax(delta)
    for t in range(T - 1, 0, -1):
        z[t - 1] = back[t, z[t]]
    return z


# --- Gibbs sampler ---------------------------------------------------------

def _seed_entropy(seed) -> list[int]:
    return [int(s) for s in np.atleast_1d(seed)]


def mode_streams(seed, iteration: int, stream_ids: Sequence[int]) -> list[np.random.Generator]:
    entropy = _seed_entropy(seed)
    return [np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(int(iteration), int(s))))
            for s in stream_ids]


def _values(data) -> np.ndarray:
    if isinstance(data, TimeSeries):
        return data.values
    v = np.asarray(data, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def log_joint(model: SwitchingArModel, labels: np.ndarray, ll: np.ndarray) -> float:
    """log p(y, z | theta, pi) with ``ll`` the per-mode log-likelihood matrix."""
    steps = np.arange(len(labels))
    lp = _log(model.global_weights[labels[0]]) + ll[steps, labels].sum()
    lp += _log(model.transition[labels[:-1], labels[1:]]).sum()
    return float(lp)


def gibbs_sweep(state: GibbsState, data, seed, stream_ids: Sequence[int] | None = None) -> GibbsState:
    """One blocked Gibbs sweep.

    Stages: per-mode likelihoods, joint mode-path sample, transition counts,
    CRF table counts, global weights, transition rows, and finally mode
    parameters (unoccupied modes are redrawn from the prior).
    """
    model = state.model
    hyp = model.hypers
    L, r = model.num_modes, model.ar_order
    values = _values(data)
    X, Y = lagged_design(values, r)
    if len(state.modes) != len(Y):
        raise SweepError(f"state has {len(state.modes)} labels but data gives {len(Y)} steps")
    stream_ids = np.arange(L) if stream_ids is None else np.asarray(stream_ids)
    if sorted(stream_ids.tolist()) != list(range(L)):
        raise ValueError("stream_ids must be a permutation of the mode indices")
    streams = mode_streams(seed, state.iteration, stream_ids)
    order = np.argsort(stream_ids, kind="stable")

    stage = "likelihoods"
    try:
        ll = model.log_likelihoods(X, Y)

        stage = "mode sequence"
        pi, init, ll = _validate_messages(model.transition, model.global_weights, ll)
        B = backward_messages(pi, ll)
        gumbels = np.column_stack([g.gumbel(size=len(ll)) for g in streams])
        labels, _ = _sample_path(pi, init, ll, B, gumbels)
        joint = log_joint(model, labels, ll)

        stage = "table counts"
        counts = transition_counts(labels, L)
        conc = _sticky_concentration(model.global_weights, hyp.lam, hyp.kappa)
        aux = np.vstack([_aux_row(streams[j], counts[j], conc[j], order) for j in range(L)])

        stage = "global weights"
        alpha = hyp.psi / L + aux.sum(axis=0)
        logg = np.array([np.log(g.gamma(a + 1.0)) + np.log1p(-g.random()) / a
                         for g, a in zip(streams, alpha)])
        beta = np.exp(logg - logg.max())
        beta /= beta.sum()

        stage = "transition rows"
        row_alpha = _sticky_concentration(beta, hyp.lam, hyp.kappa) + counts
        pi_new = np.vstack([_dirichlet_ordered(streams[j], row_alpha[j], order) for j in range(L)])

        stage = "mode parameters"
        prior = hyp.prior_for(values.shape[1])
        new_modes = []
        for k in range(L):
            mask = labels == k
            post = mniw_update(prior, ar_suff_stats(X[mask], Y[mask])) if mask.any() else prior
            new_modes.append(sample_mode_params(post, streams[k]))
    except (ValueError, np.linalg.LinAlgError) as err:
        raise SweepError(f"sweep {state.iteration} failed during {stage}: {err}") from err

    new_model = SwitchingArModel(beta, pi_new, tuple(new_modes), hyp)
    return GibbsState(new_model, ModeSequence(labels, L, start=r), aux, state.iteration + 1, joint)


def init_gibbs_state(data, hypers: HdpHyperParams, seed) -> GibbsState:
    """Prior draw of weights and a sticky label path; parameters conditioned on that path."""
    values = _values(data)
    L, r = hypers.truncation, hypers.ar_order
    X, Y = lagged_design(values, r)
    rng = np.random.default_rng(np.random.SeedSequence(_seed_entropy(seed)))
    beta = sample_stick_weights(hypers.psi, L, rng).weights
    beta = beta / beta.sum()
    pi = sample_transition_rows(beta, hypers.lam, hypers.kappa, np.zeros((L, L)), rng)
    labels = np.empty(len(Y), dtype=np.int64)
    labels[0] = rng.choice(L, p=beta)
    u = rng.random(len(Y))
    cum = np.cumsum(pi, axis=1)
    for t in range(1, len(Y)):
        labels[t] = min(int(np.searchsorted(cum[labels[t - 1]], u[t], side="right")), L - 1)
    prior = hypers.prior_for(values.shape[1])
    modes = []
    for k in range(L):
        mask = labels == k
        post = mniw_update(prior, ar_suff_stats(X[mask], Y[mask])) if mask.any() else prior
        modes.append(sample_mode_params(post, rng))
    model = SwitchingArModel(beta, pi, tuple(modes), hypers)
    return GibbsState(model, ModeSequence(labels, L, start=r), np.zeros((L, L), dtype=np.int64))


def occupied_modes(labels: np.ndarray, num_modes: int, min_fraction: float = 0.0) -> int:
    occ = np.bincount(np.asarray(labels), minlength=num_modes)
    return int(np.count_nonzero(occ > min_fraction * len(labels)))


def fit(data, hypers: HdpHyperParams, sweeps: int, burn_in: int, seed) -> FitResult:
    """Run the Gibbs chain and return the last sample as the model snapshot."""
    values = _values(data)
    if not sweeps > burn_in >= 0:
        raise ValueError(f"need sweeps > burn_in >= 0, got sweeps={sweeps}, burn_in={burn_in}")
    if len(values) < hypers.ar_order + 2:
        raise SeriesTooShortError(
            f"series has {len(values)} samples; at least {hypers.ar_order + 2} are needed "
            f"for AR order {hypers.ar_order}")
    state = init_gibbs_state(values, hypers, seed)
    occupied, trace = [], []
    for _ in range(sweeps):
        state = gibbs_sweep(state, values, seed)
        occupied.append(occupied_modes(state.modes.labels, state.model.num_modes))
        trace.append(state.log_joint)
    diagnostics = {
        "seed": _seed_entropy(seed),
        "sweeps": int(sweeps),
        "burn_in": int(burn_in),
        "snapshot": "last-sample",
        "occupied_modes": occupied,
        "log_joint": trace,
        "mean_occupied_after_burn_in": float(np.mean(occupied[burn_in:])),
    }
    return FitResult(state.model, state.modes, diagnostics)


def match_labels(inferred: np.ndarray, truth: np.ndarray) -> dict[int, int]:
    """Greedy maximum-overlap mapping from inferred to true labels."""
    inferred, truth = np.asarray(inferred), np.asarray(truth)
    if inferred.shape != truth.shape:
        raise ValueError("label sequences differ in length")
    a, b = np.unique(inferred), np.unique(truth)
    overlap = np.array([[np.count_nonzero((inferred == i) & (truth == j)) for j in b] for i in a])
    mapping: dict[int, int] = {}
    while overlap.size and overlap.max() > 0:
        i, j = np.unravel_index(np.argmax(overlap), overlap.shape)
        mapping[int(a[i])] = int(b[j])
        overlap[i, :] = -1
        overlap[:, j] = -1
    return mapping


def hamming_error(inferred: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of mislabelled steps after greedy label matching."""
    mapping = match_labels(inferred, truth)
    mapped = np.array([mapping.get(int(z), -1) for z in inferred])
    return float(np.mean(mapped != np.asarray(truth)))


def permute_state(state: GibbsState, perm: Sequence[int]) -> GibbsState:
    """Relabel modes so that old mode ``k`` becomes ``perm[k]``."""
    perm = np.asarray(perm)
    inv = np.argsort(perm)
    m = state.model
    model = SwitchingArModel(m.global_weights[inv], m.transition[np.ix_(inv, inv)],
                             tuple(m.modes[i] for i in inv), m.hypers)
    modes = replace(state.modes, labels=perm[state.modes.labels])
    return GibbsState(model, modes, state.aux_counts[np.ix_(inv, inv)], state.iteration, state.log_joint)
