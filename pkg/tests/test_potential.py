import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_chain
from metastab.chain import Measure, build_chain, hit_within, stationary
from metastab.errors import BoundaryViolation, EtaInA, NotAFlow, NotReversible, Overlap
from metastab.models import zero_range
from metastab.potential import (
    capacity,
    delta_mass_bound,
    dirichlet_bound,
    exterior_boundary,
    harmonic_flow,
    hitting_prob_bound,
    mixing_time,
    mixing_time_bound,
    spectral_gap,
    thomson_bound,
    worst_tv,
)
from metastab.reductions import reflected_chain, trace_chain

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def two_sets(rng, n):
    perm = rng.permutation(n)
    ka = int(rng.integers(1, n))
    kb = int(rng.integers(1, n - ka + 1))
    return sorted(perm[:ka].tolist()), sorted(perm[ka:ka + kb].tolist())


def escape_oracle(chain, A, B):
    """Capacity from a dense solve of the equilibrium potential (V = 1 on A)."""
    q = chain.generator("csr").toarray()
    n = chain.n
    v = np.zeros(n)
    v[A] = 1.0
    free = [i for i in range(n) if i not in A and i not in B]
    if free:
        v[free] = np.linalg.solve(q[np.ix_(free, free)], -q[np.ix_(free, A)].sum(axis=1))
    mu = stationary(chain).weights
    return float(-(mu[A] * (q[A] @ v)).sum())


# ---------------------------------------------------------------- capacity


def test_two_state_capacity():
    c = build_chain("ab", [("a", "b", 1.0), ("b", "a", 1.0)])
    res = capacity(c, [0], [1])
    assert res.value == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_array_equal(res.potential, [1.0, 0.0])
    assert res.equilibrium_measure.weights.sum() == pytest.approx(1.0)


def test_overlap_rejected():
    c = random_chain(np.random.default_rng(0), 4)
    with pytest.raises(Overlap):
        capacity(c, [0, 1], [1, 2])


@settings(max_examples=50, deadline=None)
@given(seeds, st.integers(2, 8), st.booleans())
def test_capacity_matches_dense_oracle_and_is_symmetric(seed, n, rev):
    rng = np.random.default_rng(seed)
    c = random_chain(rng, n, reversible=rev)
    A, B = two_sets(rng, n)
    ab = capacity(c, A, B)
    ba = capacity(c, B, A)
    assert ab.value == pytest.approx(escape_oracle(c, A, B), rel=1e-9)
    assert ab.value == pytest.approx(ba.value, rel=1e-11)
    assert abs(ab.equilibrium_measure.weights.sum() - 1) <= 1e-10
    assert np.all((ab.potential >= 0) & (ab.potential <= 1))


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(3, 8))
def test_capacity_monotone_in_the_source_set(seed, n):
    rng = np.random.default_rng(seed)
    c = random_chain(rng, n)
    A, B = two_sets(rng, n)
    free = [i for i in range(n) if i not in A and i not in B]
    if not free:
        return
    bigger = sorted(A + [free[0]])
    assert capacity(c, A, B).value <= capacity(c, bigger, B).value * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(3, 8))
def test_dirichlet_and_thomson_sandwich(seed, n):
    rng = np.random.default_rng(seed)
    c = random_chain(rng, n, reversible=True)
    A, B = two_sets(rng, n)
    res = capacity(c, A, B)
    assert res.thomson_lower <= res.value * (1 + 1e-9)
    assert res.value <= res.dirichlet_upper * (1 + 1e-9)
    assert dirichlet_bound(c, A, B, res.potential) == pytest.approx(res.value, rel=1e-9)
    flow = harmonic_flow(c, A, B)
    assert thomson_bound(c, A, B, flow) == pytest.approx(res.value, rel=1e-9)
    # indicator of the A side of a cut is a valid (worse) test function
    ind = np.zeros(n)
    ind[A] = 1.0
    assert dirichlet_bound(c, A, B, ind) >= res.value * (1 - 1e-12)


def test_thomson_path_flow_and_perturbation():
    # path 0 - 1 - 2 - 3 with a shortcut 0 - 2; a unit flow along 0-1-2-3 gives
    # 1 / (sum of path resistances)
    cond = {(0, 1): 1.0, (1, 2): 2.0, (2, 3): 0.5, (0, 2): 1.5}
    pi = np.array([1.0, 2.0, 1.0, 3.0])
    entries = []
    for (i, j), k in cond.items():
        entries += [(i, j, k / pi[i]), (j, i, k / pi[j])]
    c = build_chain(range(4), entries)
    mu = pi / pi.sum()
    scale = pi.sum()
    path = sp.lil_matrix((4, 4))
    for i, j in [(0, 1), (1, 2), (2, 3)]:
        path[i, j] = 1.0
    resist = sum(scale / cond[e] for e in [(0, 1), (1, 2), (2, 3)])
    assert thomson_bound(c, [0], [3], path.tocsr()) == pytest.approx(1 / resist, rel=1e-12)
    cap = capacity(c, [0], [3]).value
    # a divergence-free loop added to the current makes it strictly worse
    flow = harmonic_flow(c, [0], [3]).toarray()
    loop = np.zeros((4, 4))
    for i, j in [(0, 1), (1, 2), (2, 0)]:
        loop[i, j] += 0.05
        loop[j, i] -= 0.05
    assert thomson_bound(c, [0], [3], flow + loop) < cap
    assert mu.sum() == pytest.approx(1.0)


def test_variational_errors():
    nonrev = build_chain("abc", [("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0)])
    with pytest.raises(NotReversible):
        dirichlet_bound(nonrev, [0], [2], [1.0, 0.5, 0.0])
    c = random_chain(np.random.default_rng(1), 4, reversible=True, extra_p=1.0)
    with pytest.raises(BoundaryViolation):
        dirichlet_bound(c, [0], [3], [0.9, 0.5, 0.5, 0.0])
    bad = np.zeros((4, 4))
    bad[0, 1] = 1.0
    with pytest.raises(NotAFlow):
        thomson_bound(c, [0], [3], bad)
    cap = capacity(nonrev, [0], [2])
    assert not cap.reversible and math.isnan(cap.dirichlet_upper)


# ---------------------------------------------------------------- spectral quantities


def test_two_state_gap_and_mixing_time():
    c = build_chain("ab", [("a", "b", 2.0), ("b", "a", 0.5)])
    assert spectral_gap(c).gap == pytest.approx(2.5, rel=1e-12)
    s = build_chain("ab", [("a", "b", 1.0), ("b", "a", 1.0)])
    # worst TV is exp(-2t)/2, equal to 1/(2e) at t = 1/2
    assert worst_tv(s, 0.3) == pytest.approx(math.exp(-0.6) / 2, abs=1e-14)
    assert mixing_time(s) == pytest.approx(0.5, rel=1e-9)
    assert mixing_time(s, threshold=1.0) == 0.0


def test_sparse_gap_route_agrees_with_dense():
    inst = zero_range(3, 60, 2.0)  # 1891 states: dense route
    import metastab.potential as pot

    dense = spectral_gap(inst.chain).gap
    old = pot.DENSE_EIG_LIMIT
    try:
        pot.DENSE_EIG_LIMIT = 10
        sparse = spectral_gap(inst.chain).gap
    finally:
        pot.DENSE_EIG_LIMIT = old
    assert sparse == pytest.approx(dense, rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(2, 7))
def test_worst_tv_eigen_route_matches_expm(seed, n):
    c = random_chain(np.random.default_rng(seed), n, reversible=True)
    mu = stationary(c).weights
    t = 0.37
    p = sla.expm(t * c.generator("csr").toarray())
    ref = np.max(0.5 * np.abs(p - mu).sum(axis=1))
    assert worst_tv(c, t) == pytest.approx(ref, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(4, 8))
def test_trace_mixing_bounded_by_reflected_relaxation(seed, n):
    rng = np.random.default_rng(seed)
    c = random_chain(rng, n, reversible=True, extra_p=1.0)
    A = sorted(rng.choice(n, size=int(rng.integers(2, n)), replace=False).tolist())
    mu = stationary(c).weights[A]
    mu = mu / mu.sum()
    tmix = mixing_time(trace_chain(c, A), mu=mu)
    trel = spectral_gap(reflected_chain(c, A), mu=mu).relaxation_time
    assert tmix <= mixing_time_bound(trel, mu) * (1 + 1e-9)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(2, 7))
def test_mixing_bounded_by_relaxation(seed, n):
    c = random_chain(np.random.default_rng(seed), n, reversible=True)
    mu = stationary(c).weights
    res = spectral_gap(c, with_mixing=True)
    assert 0 <= res.mixing_time <= mixing_time_bound(res.relaxation_time, mu) * (1 + 1e-9)


def test_reflected_tv_decay_bound_on_model_wells():
    inst = zero_range(2, 24, 2.0)
    c, part = inst.chain, inst.partition
    mu = stationary(c).weights
    for x in (1, 2):
        w = part.well(x)
        mux = mu[w] / mu[w].sum()
        refl = reflected_chain(c, w)
        gap = spectral_gap(refl, mu=mux).gap
        for t in (0.001, 0.01, 0.1):
            from metastab.chain import transient_distribution, tv_distance

            for k in range(w.size):
                law = transient_distribution(refl, Measure.dirac(refl.states, k), t)
                tv = tv_distance(law, Measure(refl.states, mux))
                assert tv <= mux[k] ** -0.5 * math.exp(-gap * t) + 1e-12


# ---------------------------------------------------------------- hitting bounds


@pytest.mark.parametrize("theta", [0.1, 1.0, 10.0])
@pytest.mark.parametrize("b", [0.01, 0.5, 3.0])
@pytest.mark.parametrize("gamma", [0.2, 1.0, 5.0])
def test_exponential_hitting_inequality(theta, b, gamma):
    # P[X <= b] for X ~ Exp(theta) against e^{gamma b} P[X < Exp(gamma)]
    assert 1 - math.exp(-theta * b) <= math.exp(gamma * b) * theta / (theta + gamma) + 1e-15


def test_hitting_bound_on_random_six_state_chains():
    rng = np.random.default_rng(2)
    for _ in range(100):
        c = random_chain(rng, 6)
        A = sorted(rng.choice(6, size=int(rng.integers(1, 5)), replace=False).tolist())
        eta = int(rng.choice([i for i in range(6) if i not in A]))
        b = float(np.exp(rng.uniform(-3, 1)))
        exact = hit_within(c, A, b)[eta]
        assert exact <= hitting_prob_bound(c, eta, A, b).bound + 1e-12


def test_hitting_bound_is_linear_for_small_b():
    c = random_chain(np.random.default_rng(3), 5)
    mu = stationary(c).weights
    slope = math.e * capacity(c, [0], [3, 4]).value / mu[0]
    for b in (1e-6, 1e-8):
        assert hitting_prob_bound(c, 0, [3, 4], b).bound == pytest.approx(slope * b, rel=1e-12)
    with pytest.raises(EtaInA):
        hitting_prob_bound(c, 3, [3, 4], 1.0)


def test_exterior_boundary():
    c = build_chain(range(4), [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0),
                               (2, 3, 1.0), (3, 2, 1.0)])
    np.testing.assert_array_equal(exterior_boundary(c, [0, 1]), [2])


# ---------------------------------------------------------------- delta-mass bound


def test_delta_mass_bound_on_partitioned_chains():
    rng = np.random.default_rng(4)
    done = 0
    while done < 100:
        n = int(rng.integers(4, 9))
        c = random_chain(rng, n, reversible=bool(rng.random() < 0.5), extra_p=0.6)
        perm = rng.permutation(n)
        delta = perm[:1]
        well = np.sort(perm[1:1 + int(rng.integers(1, n - 1))])
        try:
            reflected_chain(c, well)
        except Exception:
            continue
        eta = int(rng.choice(well))
        T = float(rng.uniform(0.05, 1.0))
        s = T + float(rng.uniform(0.05, 2.0))
        r = delta_mass_bound(c, eta, well, delta, T, s)
        assert r.exact <= r.bound + 1e-12
        done += 1


def test_delta_mass_bound_term_isolation():
    c = random_chain(np.random.default_rng(5), 5, reversible=True, extra_p=1.0)
    r = delta_mass_bound(c, 0, [0, 1, 2], [4], 600.0, 601.0)
    assert r.mixing_term < 1e-6
    assert r.bound == pytest.approx(r.exit_term + r.ratio_term, abs=1e-6)
    full = delta_mass_bound(c, 0, range(5), [], 0.5, 1.0)
    assert full.ratio_term == 0.0 and full.exit_term == 0.0 and full.exact == 0.0
