import json
import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_chain
from metastab.chain import (
    Chain,
    Measure,
    Trajectory,
    Uniformizer,
    build_chain,
    hit_within,
    occupation_time,
    occupation_times,
    stationary,
    transient_distribution,
    transient_matrix,
    tv_distance,
)
from metastab.errors import (
    DuplicateEntry,
    EmptyStateSet,
    NegativeRate,
    NonconvergentSeries,
    Reducible,
    SupportMismatch,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def dense_q(chain):
    return chain.generator("csr").toarray()


def null_space_stationary(chain):
    ns = sla.null_space(dense_q(chain).T)
    v = ns[:, 0]
    return v / v.sum()


# ---------------------------------------------------------------- build_chain


def test_symmetric_two_state_is_irreducible_with_unit_holding():
    c = build_chain(["a", "b"], [("a", "b", 1.0), ("b", "a", 1.0)])
    assert c.irreducible
    np.testing.assert_array_equal(c.holding, [1.0, 1.0])


def test_cycle_holding_rates():
    c = build_chain("abc", [("a", "b", 2.0), ("b", "c", 3.0), ("c", "a", 5.0)])
    assert c.irreducible
    np.testing.assert_array_equal(c.holding, [2.0, 3.0, 5.0])


def test_validation_errors():
    with pytest.raises(NegativeRate):
        build_chain("ab", [("a", "b", -0.5)])
    with pytest.raises(DuplicateEntry):
        build_chain("ab", [("a", "b", 1.0), ("a", "b", 2.0)])
    with pytest.raises(EmptyStateSet):
        build_chain("a", [])
    with pytest.raises(ValueError):
        build_chain("ab", [("a", "a", 1.0)])


def test_reducible_flag_and_stationary_error():
    c = build_chain("abc", [("a", "b", 1.0), ("b", "a", 1.0), ("b", "c", 1.0)])
    assert not c.irreducible
    with pytest.raises(Reducible):
        stationary(c)


def test_time_scale_multiplies_rates():
    c = build_chain("ab", [("a", "b", 1.0), ("b", "a", 3.0)], time_scale=10.0)
    np.testing.assert_array_equal(c.holding, [10.0, 30.0])
    np.testing.assert_array_equal(c.base_rates.toarray(), [[0, 1], [3, 0]])


def test_holding_equals_row_sums():
    c = random_chain(np.random.default_rng(1), 7)
    np.testing.assert_allclose(c.holding, c.rates.toarray().sum(axis=1), rtol=1e-12)


def test_json_round_trip_is_bit_faithful(tmp_path):
    c = build_chain([(0, 1), (1, 0), (2, 2)],
                    [((0, 1), (1, 0), 0.1), ((1, 0), (0, 1), 1 / 3), ((1, 0), (2, 2), 2.5),
                     ((2, 2), (0, 1), 7.0)], time_scale=4.0)
    path = tmp_path / "c.json"
    c.to_json(path)
    d = Chain.from_json(path)
    assert d.states == c.states
    assert d.time_scale == c.time_scale
    assert (d.base_rates != c.base_rates).nnz == 0
    assert json.loads(path.read_text())["time_scale"] == 4.0


# ---------------------------------------------------------------- stationary


def test_stationary_symmetric_two_state():
    c = build_chain("ab", [("a", "b", 1.0), ("b", "a", 1.0)])
    np.testing.assert_allclose(stationary(c).weights, [0.5, 0.5], atol=1e-15)


def test_stationary_zero_range_l2_n2():
    # (2,0) -> (1,1) at g(2) = 2 on each side, (1,1) -> (2,0) or (0,2) at g(1) = 1;
    # the null-space oracle of the explicit 3x3 generator gives (1/4, 1/2, 1/4)
    c = build_chain([(2, 0), (1, 1), (0, 2)],
                    [((2, 0), (1, 1), 2.0), ((0, 2), (1, 1), 2.0),
                     ((1, 1), (2, 0), 1.0), ((1, 1), (0, 2), 1.0)])
    np.testing.assert_allclose(null_space_stationary(c), [0.25, 0.5, 0.25], atol=1e-14)
    for method in ("auto", "lu"):
        np.testing.assert_allclose(stationary(c, method).weights, [0.25, 0.5, 0.25], atol=1e-14)


def test_stationary_birth_death_geometric():
    c = build_chain([0, 1, 2], [(0, 1, 2.0), (1, 2, 2.0), (1, 0, 1.0), (2, 1, 1.0)])
    np.testing.assert_allclose(stationary(c).weights, np.array([1, 2, 4]) / 7, atol=1e-15)


def test_stationary_lu_on_nonreversible_cycle():
    # a -> b -> c -> a only: mu proportional to 1 / rate
    c = build_chain("abc", [("a", "b", 2.0), ("b", "c", 3.0), ("c", "a", 5.0)])
    w = np.array([1 / 2, 1 / 3, 1 / 5])
    np.testing.assert_allclose(stationary(c).weights, w / w.sum(), atol=1e-15)
    with pytest.raises(ValueError):
        stationary(c, "balance")


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 9), st.booleans())
def test_stationary_residual_and_oracle(seed, n, rev):
    c = random_chain(np.random.default_rng(seed), n, reversible=rev)
    mu = stationary(c).weights
    assert abs(mu.sum() - 1) < 1e-12
    assert np.max(np.abs(mu @ dense_q(c))) <= 1e-10 * c.holding.max()
    np.testing.assert_allclose(mu, null_space_stationary(c), atol=1e-10)
    np.testing.assert_allclose(stationary(c, "lu").weights, mu, atol=1e-10)


# ---------------------------------------------------------------- transient


def test_transient_identity_at_zero():
    c = random_chain(np.random.default_rng(2), 5)
    init = Measure.from_weights(c.states, [0.1, 0.2, 0.3, 0.4, 0.0])
    np.testing.assert_array_equal(transient_distribution(c, init, 0.0).weights, init.weights)


def test_transient_equilibrates():
    c = build_chain("ab", [("a", "b", 1.0), ("b", "a", 1.0)])
    law = transient_distribution(c, Measure.dirac(c.states, 0), 40.0)
    np.testing.assert_allclose(law.weights, [0.5, 0.5], atol=1e-10)


def test_transient_cycle_matches_expm():
    c = build_chain("abc", [("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0)])
    ref = sla.expm(0.1 * dense_q(c))[0]
    law = transient_distribution(c, Measure.dirac(c.states, 0), 0.1)
    np.testing.assert_allclose(law.weights, ref, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 8), st.floats(0.01, 30.0))
def test_transient_matrix_matches_expm(seed, n, t):
    c = random_chain(np.random.default_rng(seed), n)
    np.testing.assert_allclose(transient_matrix(c, t), sla.expm(t * dense_q(c)), atol=1e-9)


def test_long_horizon_uses_substeps():
    # Lambda * t = 5e4 needs many sub-steps; the result must still be a law
    c = build_chain("ab", [("a", "b", 1000.0), ("b", "a", 3000.0)])
    law = transient_distribution(c, 0, 50.0)
    np.testing.assert_allclose(law.weights, [0.75, 0.25], atol=1e-10)


def test_nonconvergent_series_guard():
    c = build_chain("ab", [("a", "b", 1.0), ("b", "a", 1.0)])
    u = Uniformizer(c, max_terms=10)
    with pytest.raises(NonconvergentSeries):
        u.forward(np.array([1.0, 0.0]), 100.0)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 8), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_chapman_kolmogorov(seed, n, s, t):
    c = random_chain(np.random.default_rng(seed), n)
    init = Measure.dirac(c.states, 0)
    direct = transient_distribution(c, init, s + t)
    chained = transient_distribution(c, transient_distribution(c, init, s), t)
    np.testing.assert_allclose(direct.weights, chained.weights, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 8), st.floats(0.0, 10.0))
def test_stationary_is_fixed_point(seed, n, t):
    c = random_chain(np.random.default_rng(seed), n)
    mu = stationary(c)
    assert tv_distance(transient_distribution(c, mu, t), mu) <= 1e-9


# ---------------------------------------------------------------- tv distance


def test_tv_examples():
    s = ("a", "b")
    assert tv_distance(Measure.dirac(s, 0), Measure.dirac(s, 1)) == 1.0
    m = Measure.from_weights(s, [0.7, 0.3])
    assert tv_distance(m, m) == 0.0
    assert tv_distance(m, Measure.from_weights(s, [0.5, 0.5])) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(SupportMismatch):
        tv_distance(m, Measure.dirac(("a", "c"), 0))


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(2, 10))
def test_tv_is_a_metric(seed, n):
    rng = np.random.default_rng(seed)
    s = tuple(range(n))
    a, b, c = (Measure.from_weights(s, rng.random(n) + 1e-3) for _ in range(3))
    assert tv_distance(a, b) == tv_distance(b, a)
    assert tv_distance(a, c) <= tv_distance(a, b) + tv_distance(b, c) + 1e-15
    half = 0.5 * np.abs(a.weights - b.weights).sum()
    assert abs(tv_distance(a, b) - half) <= 1e-14


# ---------------------------------------------------------------- occupation


def van_loan_occupation(chain, A, t):
    """``int_0^t exp(sQ) 1_A ds`` from the block exponential [[Q, 1_A], [0, 0]]."""
    n = chain.n
    m = np.zeros((n + 1, n + 1))
    m[:n, :n] = dense_q(chain)
    m[np.asarray(A), n] = 1.0
    return sla.expm(t * m)[:n, n]


def test_occupation_full_and_empty_sets():
    c = random_chain(np.random.default_rng(3), 5)
    assert occupation_time(c, 0, range(5), 2.5) == 2.5
    assert occupation_time(c, 0, [], 2.5) == 0.0


def test_occupation_two_state_closed_form():
    c = build_chain("ab", [("a", "b", 1.0), ("b", "a", 1.0)])
    t = 1.0
    expected = t / 2 - (1 - math.exp(-2 * t)) / 4
    assert occupation_time(c, Measure.dirac(c.states, 0), [1], t) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(3, 8), st.floats(0.05, 20.0))
def test_occupation_matches_block_exponential(seed, n, t):
    rng = np.random.default_rng(seed)
    c = random_chain(rng, n)
    A = sorted(rng.choice(n, size=int(rng.integers(1, n)), replace=False).tolist())
    comp = sorted(set(range(n)) - set(A))
    occ = occupation_times(c, A, t)
    np.testing.assert_allclose(occ, van_loan_occupation(c, A, t), atol=1e-8 * t)
    np.testing.assert_allclose(occ + occupation_times(c, comp, t), t, atol=1e-8 * t)


def test_hit_within_matches_absorbing_expm():
    c = random_chain(np.random.default_rng(4), 6)
    A = [1, 4]
    q = dense_q(c)
    q[A, :] = 0.0
    ref = sla.expm(0.7 * q)[:, A].sum(axis=1)
    np.testing.assert_allclose(hit_within(c, A, 0.7), ref, atol=1e-10)


# ---------------------------------------------------------------- measures and paths


def test_measure_log_weights_survive_underflow():
    m = Measure.from_log_weights(("a", "b", "c"), [0.0, -800.0, -1600.0])
    assert m.weights[0] == 1.0
    assert m.log_weights[2] == pytest.approx(-1600.0)


def test_measure_conditioned_and_restricted():
    m = Measure.from_weights("abcd", [1, 2, 3, 4])
    np.testing.assert_allclose(m.conditioned([1, 3]).weights, [0, 1 / 3, 0, 2 / 3])
    np.testing.assert_allclose(m.restricted([1, 3]).weights, [1 / 3, 2 / 3])
    assert m.mass([0, 1]) == pytest.approx(0.3)


def test_trajectory_csv_round_trip(tmp_path):
    states = [(2, 0), (1, 1), (0, 2)]
    p = Trajectory.from_jumps([0, 1, 2, 1], [0.0, 0.25, 1.5, 2.0], 3.0)
    p.validate()
    p.to_csv(tmp_path / "p.csv", states)
    q = Trajectory.from_csv(tmp_path / "p.csv", states)
    assert q == p
    assert p.state_at(1.5) == 2
    assert p.states_at([0.0, 0.3, 2.9]) == [0, 1, 1]


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(((0, 0.0, 1.0), (0, 1.0, 2.0)), 2.0).validate()
    with pytest.raises(ValueError):
        Trajectory(((0, 0.0, 1.0), (1, 1.5, 2.0)), 2.0).validate()
