import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enumerate_paths, stirling_table_probs
from sldshdp.emission_ar import ArModeParams, TimeSeries, simulate_switching_ar
from sldshdp.hdp_hmm import (GibbsState, HdpHyperParams, LikelihoodMismatchError, ModeSequence,
                             SeriesTooShortError, SwitchingArModel, backward_messages, fit,
                             forward_backward_sample, gibbs_sweep, hamming_error,
                             init_gibbs_state, match_labels, occupied_modes, permute_state,
                             sample_aux_counts, sample_global_weights, sample_transition_rows,
                             transition_counts, transition_posterior_mean, viterbi)


def random_instance(rng, T, L, spread=1.5):
    pi = rng.dirichlet(np.ones(L) * 2, size=L)
    init = rng.dirichlet(np.ones(L) * 2)
    ll = rng.normal(scale=spread, size=(T, L))
    return pi, init, ll


# --- Dirichlet stages ----------------------------------------------------

def test_rows_nonsticky_symmetric_mean(rng):
    rows = np.vstack([sample_transition_rows([0.5, 0.5], 2.0, 0.0, np.zeros((2, 2)), rng)
                      for _ in range(50000)])
    np.testing.assert_allclose(rows.mean(axis=0), [0.5, 0.5], atol=0.01)


def test_rows_sticky_self_transition(rng):
    beta = np.full(4, 0.25)
    rows = np.array([sample_transition_rows(beta, 1.0, 1000.0, np.zeros((4, 4)), rng)
                     for _ in range(2000)])
    mean_self = np.mean([np.diag(r) for r in rows])
    assert (1.0 * 0.25 + 1000) / 1001 >= 0.98
    assert mean_self >= 0.98


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.floats(0.01, 20), st.floats(0, 200), st.integers(0, 2**32 - 1))
def test_rows_row_stochastic(L, lam, kappa, seed):
    rng = np.random.default_rng(seed)
    beta = rng.dirichlet(np.ones(L) * 0.1)
    beta /= beta.sum()
    counts = rng.integers(0, 50, size=(L, L))
    pi = sample_transition_rows(beta, lam, kappa, counts, rng)
    assert np.all(pi >= 0)
    assert np.all(np.abs(pi.sum(axis=1) - 1) <= 1e-10)


def test_rows_reject_bad_beta(rng):
    with pytest.raises(ValueError):
        sample_transition_rows([0.5, 0.6], 1.0, 0.0, np.zeros((2, 2)), rng)


def test_rows_match_dirichlet_mean(rng):
    beta = np.array([0.6, 0.3, 0.1])
    counts = np.array([[5, 1, 0], [0, 2, 7], [3, 0, 0]])
    draws = np.array([sample_transition_rows(beta, 2.0, 3.0, counts, rng) for _ in range(20000)])
    np.testing.assert_allclose(draws.mean(axis=0), transition_posterior_mean(beta, 2.0, 3.0, counts), atol=0.01)


def test_kappa_zero_is_plain_hdp_rows():
    beta = np.array([0.2, 0.5, 0.3])
    counts = np.array([[4, 0, 1], [2, 2, 2], [0, 0, 9]])
    expected = (2.0 * beta + counts) / (2.0 * beta + counts).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(transition_posterior_mean(beta, 2.0, 0.0, counts), expected)


def test_single_mode_is_deterministic(rng):
    assert sample_transition_rows([1.0], 1.0, 5.0, [[3]], rng).tolist() == [[1.0]]
    assert sample_global_weights([[4]], 1.0, rng).tolist() == [1.0]
    assert forward_backward_sample([[1.0]], [1.0], rng.normal(size=(6, 1)), rng).tolist() == [0] * 6
    assert viterbi([[1.0]], [1.0], rng.normal(size=(6, 1))).tolist() == [0] * 6


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_rich_get_richer_transition_mean(L, seed):
    rng = np.random.default_rng(seed)
    beta = rng.dirichlet(np.ones(L))
    counts = rng.integers(0, 20, size=(L, L))
    j, k = rng.integers(L, size=2)
    base = transition_posterior_mean(beta, 1.0, 5.0, counts)[j, k]
    counts[j, k] += 1
    assert transition_posterior_mean(beta, 1.0, 5.0, counts)[j, k] > base


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 8), st.integers(0, 2**32 - 1))
def test_new_mode_mass_vanishes(L, seed):
    rng = np.random.default_rng(seed)
    beta = rng.dirichlet(np.ones(L))
    occupied = L // 2
    pattern = np.zeros((L, L))
    pattern[:occupied, :occupied] = rng.integers(1, 5, size=(occupied, occupied))
    masses = [transition_posterior_mean(beta, 1.0, 2.0, scale * pattern)[:occupied, occupied:].sum(axis=1)
              for scale in (0, 1, 10, 100, 1000)]
    assert np.all(np.diff(np.array(masses), axis=0) < 0)
    assert masses[-1].max() < 0.01


def test_global_weights_symmetric_without_counts(rng):
    L = 5
    draws = np.array([sample_global_weights(np.zeros((L, L)), 1.0, rng) for _ in range(20000)])
    np.testing.assert_allclose(draws.mean(axis=0), 1 / L, atol=0.01)
    assert np.all(np.abs(draws.sum(axis=1) - 1) < 1e-12)


def test_global_weights_follow_tables(rng):
    aux = np.zeros((10, 10))
    aux[:, 0] = 100
    draws = np.array([sample_global_weights(aux, 1.0, rng)[0] for _ in range(500)])
    assert draws.mean() > 0.95


def test_aux_counts_edge_cases(rng):
    counts = np.array([[0, 1], [1, 0]])
    aux = sample_aux_counts(counts, [0.5, 0.5], 1.0, 3.0, rng)
    np.testing.assert_array_equal(aux, counts)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.booleans())
def test_aux_counts_bounds(L, seed, override):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 30, size=(L, L)) * rng.integers(0, 2, size=(L, L))
    beta = rng.dirichlet(np.ones(L))
    aux = sample_aux_counts(counts, beta, 1.0, 10.0, rng, sticky_override=override)
    assert np.all(aux <= counts) and np.all(aux >= 0)
    if not override:
        np.testing.assert_array_equal(aux == 0, counts == 0)


def test_aux_counts_table_distribution(rng):
    # Single cell, 5 customers, concentration lam * beta = 1.
    draws = [sample_aux_counts([[5]], [1.0], 1.0, 0.0, rng)[0, 0] for _ in range(20000)]
    freq = np.bincount(draws, minlength=6) / len(draws)
    exact = stirling_table_probs(5, 1.0)
    assert abs(exact.sum() - 1) < 1e-12
    assert 0.5 * np.abs(freq - exact).sum() < 0.02


def test_transition_counts():
    np.testing.assert_array_equal(transition_counts(np.array([0, 0, 1, 1, 0]), 2), [[1, 1], [1, 1]])


# --- message passing -------------------------------------------------------

def test_backward_messages_match_enumeration(rng):
    pi, init, ll = random_instance(rng, 4, 3)
    paths, probs, lps = enumerate_paths(pi, init, ll)
    B = backward_messages(pi, ll)
    marginal = np.log(np.sum(np.exp(np.log(init) + ll[0] + B[0])))
    assert abs(marginal - np.log(np.sum(np.exp(lps)))) < 1e-10


def test_forward_backward_sample_matches_enumeration(rng):
    pi, init, ll = random_instance(rng, 4, 2)
    paths, probs, _ = enumerate_paths(pi, init, ll)
    n = 20000
    idx = {p: i for i, p in enumerate(paths)}
    freq = np.zeros(len(paths))
    for _ in range(n):
        freq[idx[tuple(forward_backward_sample(pi, init, ll, rng))]] += 1
    assert 0.5 * np.abs(freq / n - probs).sum() < 0.03


def test_forward_backward_persistence(rng):
    T = 6
    pi = np.array([[0.95, 0.05], [0.3, 0.7]])
    ll = np.zeros((T, 2))
    n = 20000
    stay = sum(np.all(forward_backward_sample(pi, [1.0, 0.0], ll, rng) == 0) for _ in range(n)) / n
    expected = 0.95 ** (T - 1)
    assert stay >= expected - 3 * np.sqrt(expected * (1 - expected) / n)


def test_forward_backward_rejects_dead_row(rng):
    ll = np.zeros((3, 2))
    ll[1] = -np.inf
    with pytest.raises(LikelihoodMismatchError):
        forward_backward_sample(np.full((2, 2), 0.5), [0.5, 0.5], ll, rng)
    with pytest.raises(LikelihoodMismatchError):
        viterbi(np.full((2, 2), 0.5), [0.5, 0.5], ll)
    with pytest.raises(ValueError):
        viterbi(np.full((2, 2), 0.5), [0.5, 0.5], np.full((3, 2), np.nan))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_viterbi_matches_brute_force(T, L, seed):
    rng = np.random.default_rng(seed)
    pi, init, ll = random_instance(rng, T, L)
    paths, probs, lps = enumerate_paths(pi, init, ll)
    best = viterbi(pi, init, ll)
    assert tuple(best) == paths[int(np.argmax(lps))]


def test_viterbi_follows_dominant_likelihoods(rng):
    T, L = 8, 3
    winners = rng.integers(L, size=T)
    ll = np.full((T, L), -1e6)
    ll[np.arange(T), winners] = 0.0
    np.testing.assert_array_equal(viterbi(np.full((L, L), 1 / L), np.full(L, 1 / L), ll), winners)


def test_viterbi_ties_go_low():
    ll = np.zeros((3, 2))
    np.testing.assert_array_equal(viterbi(np.full((2, 2), 0.5), [0.5, 0.5], ll), [0, 0, 0])


# --- Gibbs sampler ---------------------------------------------------------

def two_mode_series(seed, T=400):
    rng = np.random.default_rng(seed)
    modes = [ArModeParams([[[0.9]]], [[0.2]]), ArModeParams([[[-0.5]]], [[1.0]])]
    labels = np.repeat([0, 1, 0, 1], T // 4)
    return simulate_switching_ar(labels, modes, [[0.0]], rng), labels


def models_close(a: SwitchingArModel, b: SwitchingArModel, tol=1e-9):
    np.testing.assert_allclose(a.global_weights, b.global_weights, rtol=tol, atol=1e-300)
    np.testing.assert_allclose(a.transition, b.transition, rtol=tol, atol=1e-300)
    for ma, mb in zip(a.modes, b.modes):
        np.testing.assert_allclose(ma.lag_matrices, mb.lag_matrices, rtol=tol, atol=1e-12)
        np.testing.assert_allclose(ma.noise_cov, mb.noise_cov, rtol=tol, atol=1e-300)


def test_sweep_is_deterministic():
    series, _ = two_mode_series(0, 200)
    hyp = HdpHyperParams(ar_order=1, truncation=5)
    state = init_gibbs_state(series, hyp, 4)
    a = gibbs_sweep(state, series, 9)
    b = gibbs_sweep(state, series, 9)
    np.testing.assert_array_equal(a.modes.labels, b.modes.labels)
    np.testing.assert_array_equal(a.aux_counts, b.aux_counts)
    models_close(a.model, b.model, tol=0)
    assert a.iteration == state.iteration + 1


def test_sweep_label_permutation_equivariance():
    series, _ = two_mode_series(1, 200)
    hyp = HdpHyperParams(ar_order=1, truncation=5)
    state = gibbs_sweep(init_gibbs_state(series, hyp, 2), series, 3)
    perm = np.array([3, 0, 4, 1, 2])
    streams = np.argsort(perm)  # new mode perm[k] draws from old mode k's stream
    out = gibbs_sweep(state, series, 17)
    out_perm = gibbs_sweep(permute_state(state, perm), series, 17, stream_ids=streams)
    expected = permute_state(out, perm)
    np.testing.assert_array_equal(out_perm.modes.labels, expected.modes.labels)
    np.testing.assert_array_equal(out_perm.aux_counts, expected.aux_counts)
    models_close(out_perm.model, expected.model)


def test_sweep_rejects_mismatched_state():
    series, _ = two_mode_series(2, 200)
    state = init_gibbs_state(series, HdpHyperParams(ar_order=1, truncation=3), 0)
    with pytest.raises(Exception):
        gibbs_sweep(state, series.values[:100], 0)


def test_all_transitions_row_stochastic():
    series, _ = two_mode_series(3, 200)
    state = init_gibbs_state(series, HdpHyperParams(ar_order=1, truncation=6), 0)
    for _ in range(5):
        state = gibbs_sweep(state, series, 1)
        assert np.all(np.abs(state.model.transition.sum(axis=1) - 1) <= 1e-10)
        assert abs(state.model.global_weights.sum() - 1) <= 1e-10


def test_fit_single_mode_recovery():
    rng = np.random.default_rng(8)
    series = simulate_switching_ar(np.zeros(800, dtype=int), [ArModeParams([[[0.7]]], [[0.5]])], [[0.0]], rng)
    result = fit(series, HdpHyperParams(ar_order=1, truncation=10), 100, 50, 5)
    occ = result.modes.occupancy()
    assert occ.max() >= 0.99 * len(result.modes)
    assert np.all(np.isfinite(result.diagnostics["log_joint"]))
    assert len(result.diagnostics["occupied_modes"]) == 100


def test_fit_two_modes_segments():
    series, labels = two_mode_series(4, 800)
    result = fit(series, HdpHyperParams(ar_order=1, truncation=10), 120, 60, 0)
    assert occupied_modes(result.modes.labels, 10, 0.01) in (2, 3)
    assert hamming_error(result.modes.labels, labels[1:]) < 0.1


def test_fit_constant_signal():
    series = TimeSeries.regular(np.full(300, 4.2))
    result = fit(series, HdpHyperParams(), 30, 10, 0)
    assert result.modes.occupancy().max() >= 0.9 * len(result.modes)
    assert np.all(np.isfinite(result.diagnostics["log_joint"]))


def test_fit_rejects_short_and_bad_args():
    with pytest.raises(SeriesTooShortError):
        fit(TimeSeries.regular([1.0, 2.0, 3.0]), HdpHyperParams(ar_order=2), 5, 1, 0)
    with pytest.raises(ValueError):
        fit(TimeSeries.regular(np.arange(50.0)), HdpHyperParams(), 5, 5, 0)


def test_hyperparameter_validation():
    for kwargs in ({"lam": 0}, {"psi": -1}, {"kappa": -0.1}, {"truncation": 0}, {"ar_order": 0}):
        with pytest.raises(ValueError):
            HdpHyperParams(**kwargs)


def test_mode_sequence_bounds():
    with pytest.raises(ValueError):
        ModeSequence([0, 3], 3)


def test_label_matching_greedy():
    truth = np.array([0, 0, 0, 1, 1, 2, 2, 2])
    inferred = np.array([5, 5, 5, 3, 3, 7, 7, 3])
    assert match_labels(inferred, truth) == {5: 0, 7: 2, 3: 1}
    assert hamming_error(inferred, truth) == pytest.approx(1 / 8)
