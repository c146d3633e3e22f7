import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import block_sizes, canonical, crp_prob_exact, ewens_prob, set_partitions
from sldshdp.dp_core import (CrpState, crp_assign, crp_log_partition_prob,
                             sample_stick_weights, stick_weights_from_fractions)


@pytest.mark.parametrize("fractions, L, expected", [
    ([1.0], 1, [1.0]),
    ([0.5, 0.5, 0.5], 3, [0.5, 0.25, 0.25]),
    ([0.2, 0.4, 0.9], 3, [0.2, 0.32, 0.48]),
])
def test_stick_weights_examples(fractions, L, expected):
    sw = stick_weights_from_fractions(fractions, L)
    np.testing.assert_allclose(sw.weights, expected, atol=1e-15)
    assert sw.truncation == L
    assert sw.fractions[-1] == 1.0


@pytest.mark.parametrize("bad", [[0.0, 0.5], [0.5, 1.5], [-0.1, 0.3], [1.0, 0.5]])
def test_stick_weights_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        stick_weights_from_fractions(bad, 2)


def test_stick_weights_rejects_bad_truncation():
    with pytest.raises(ValueError):
        stick_weights_from_fractions([0.5], 0)
    with pytest.raises(ValueError):
        stick_weights_from_fractions([0.5], 2)


@given(st.lists(st.floats(1e-6, 1 - 1e-6), min_size=1, max_size=60), st.data())
def test_stick_weights_recursion_and_sum(fractions, data):
    L = data.draw(st.integers(1, len(fractions)))
    sw = stick_weights_from_fractions(fractions, L)
    assert abs(sw.weights.sum() - 1.0) < 1e-12
    remaining = 1.0
    for k in range(L - 1):
        assert abs(sw.weights[k] - fractions[k] * remaining) < 1e-12
        remaining *= 1.0 - fractions[k]
    assert abs(sw.weights[-1] - remaining) < 1e-12


def test_sample_stick_weights_single_stick(rng):
    for lam in (0.01, 1.0, 100.0):
        np.testing.assert_array_equal(sample_stick_weights(lam, 1, rng).weights, [1.0])


def test_sample_stick_weights_deterministic():
    a = sample_stick_weights(2.0, 30, np.random.default_rng(5))
    b = sample_stick_weights(2.0, 30, np.random.default_rng(5))
    np.testing.assert_array_equal(a.weights, b.weights)


def test_sample_stick_weights_rejects_bad_concentration(rng):
    with pytest.raises(ValueError):
        sample_stick_weights(0.0, 5, rng)


@pytest.mark.parametrize("lam", [1.0, 0.1])
def test_first_stick_mean(lam):
    rng = np.random.default_rng(11)
    draws = [sample_stick_weights(lam, 50, rng).weights[0] for _ in range(20000)]
    # Beta(1, lam) has mean 1/(1+lam); 2e4 draws keep the MC error under 0.005.
    assert abs(np.mean(draws) - 1 / (1 + lam)) < 0.01


def test_tiny_concentration_stays_finite(rng):
    for _ in range(200):
        sw = sample_stick_weights(0.01, 50, rng)
        assert np.all(np.isfinite(sw.weights)) and np.all(sw.weights >= 0)
        assert abs(sw.weights.sum() - 1) < 1e-12


# --- CRP -------------------------------------------------------------------

def test_crp_first_customer_opens_table(rng):
    for lam in (0.1, 1.0, 10.0):
        table, state = crp_assign(CrpState((), lam), rng)
        assert table == 0 and state.counts == (1,)


def test_crp_probabilities_example():
    np.testing.assert_allclose(CrpState((2, 1), 1.0).probabilities(), [0.5, 0.25, 0.25])


def test_crp_three_customers_one_table_exact():
    assert crp_prob_exact((0, 0, 0), Fraction(1)) == Fraction(1, 3)
    assert math.isclose(math.exp(crp_log_partition_prob([0, 0, 0], 1.0)), 1 / 3, rel_tol=1e-15)


@pytest.mark.parametrize("labels, lam, expected", [
    ([0], 1.0, 0.0),
    ([0, 0, 0], 1.0, math.log(1 / 3)),
    ([0, 1], 2.0, math.log(2 / 3)),
])
def test_crp_log_partition_examples(labels, lam, expected):
    assert math.isclose(crp_log_partition_prob(labels, lam), expected, abs_tol=1e-15)


@pytest.mark.parametrize("labels", [[1], [0, 2], [0, 0, 3], [0, -1]])
def test_crp_log_partition_rejects_invalid(labels):
    with pytest.raises(ValueError):
        crp_log_partition_prob(labels, 1.0)


def test_crp_state_validation():
    with pytest.raises(ValueError):
        CrpState((1, 0), 1.0)
    with pytest.raises(ValueError):
        CrpState((1,), 0.0)


@pytest.mark.parametrize("lam", [0.5, 1.0, 5.0])
@pytest.mark.parametrize("n", [1, 3, 5, 7])
def test_crp_log_partition_matches_ewens_closed_form(n, lam):
    total = 0.0
    for labels in set_partitions(n):
        p = math.exp(crp_log_partition_prob(labels, lam))
        assert math.isclose(p, ewens_prob(labels, lam), rel_tol=1e-12)
        total += p
    assert abs(total - 1.0) < 1e-12


@pytest.mark.parametrize("n", [2, 4, 6])
def test_partition_exchangeability(n):
    rng = np.random.default_rng(n)
    for labels in set_partitions(n):
        p = crp_log_partition_prob(labels, 1.7)
        for _ in range(3):
            perm = rng.permutation(n)
            relabelled = canonical([labels[perm[i]] for i in range(n)])
            assert math.isclose(crp_log_partition_prob(relabelled, 1.7), p, rel_tol=1e-12)
            assert block_sizes(relabelled) == block_sizes(labels)


@given(st.lists(st.integers(1, 20), min_size=2, max_size=6), st.floats(0.05, 20), st.data())
def test_rich_get_richer(counts, lam, data):
    j = data.draw(st.integers(0, len(counts) - 1))
    donors = [i for i, c in enumerate(counts) if i != j and c >= 2]
    if not donors:
        counts = counts + [2]
        donors = [len(counts) - 1]
    i = data.draw(st.sampled_from(donors))
    moved = list(counts)
    moved[i] -= 1
    moved[j] += 1
    before = CrpState(tuple(counts), lam).probabilities()[j]
    after = CrpState(tuple(moved), lam).probabilities()[j]
    assert after > before


@settings(max_examples=50)
@given(st.lists(st.integers(1, 30), max_size=8), st.floats(0.01, 50))
def test_crp_probabilities_on_simplex(counts, lam):
    p = CrpState(tuple(counts), lam).probabilities()
    assert abs(p.sum() - 1) < 1e-12 and np.all(p > 0)


def test_crp_assign_frequencies_small(rng):
    state = CrpState((2, 1), 1.0)
    hits = np.bincount([crp_assign(state, rng)[0] for _ in range(40000)], minlength=3) / 40000
    np.testing.assert_allclose(hits, [0.5, 0.25, 0.25], atol=0.01)
