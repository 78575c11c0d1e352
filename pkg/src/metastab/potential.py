"""Potential theory on a finite chain.

Capacities with their Dirichlet and Thomson variational bounds, equilibrium
potentials and measures, spectral gaps, mixing times and hitting-time bounds
derived from the capacity of a gamma-enlarged chain.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .chain import (
    Chain,
    Measure,
    Uniformizer,
    hit_within,
    stationary,
    transient_distribution,
    transient_matrix,
    tv_distance,
)
from .errors import (
    BoundaryViolation,
    EmptySubset,
    EtaInA,
    NotAFlow,
    NotReversible,
    Overlap,
    Reducible,
)
from .reductions import as_index_array, harmonic_extension, reflected_chain

__all__ = [
    "CapacityResult",
    "SpectralResult",
    "HittingBound",
    "DeltaMassBound",
    "capacity",
    "dirichlet_form",
    "dirichlet_bound",
    "thomson_bound",
    "harmonic_flow",
    "spectral_gap",
    "mixing_time",
    "worst_tv",
    "exterior_boundary",
    "hitting_prob_bound",
    "delta_mass_bound",
    "mixing_time_bound",
]

DENSE_EIG_LIMIT = 2000
MIX_THRESHOLD = 1.0 / (2.0 * math.e)


def _mu(chain: Chain, mu) -> np.ndarray:
    if mu is None:
        return stationary(chain).weights
    if isinstance(mu, Measure):
        return mu.weights
    return np.asarray(mu, dtype=float)


def _conductances(chain: Chain, mu: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix(sp.diags(mu) @ chain.rates)


# ---------------------------------------------------------------------------
# capacities


@dataclass(frozen=True)
class CapacityResult:
    """Capacity between two disjoint sets and its by-products.

    Attributes
    ----------
    value : float
        ``sum_{eta in A} mu(eta) lambda(eta) P_eta[H_B < H_A^+]``.
    potential : ndarray
        Equilibrium potential ``P_eta[H_A < H_B]``, 1 on A and 0 on B.
    equilibrium_measure : Measure
        Escape-weighted probability measure on A.
    dirichlet_upper, thomson_lower : float
        Dirichlet form of the potential and Thomson value of the harmonic
        current.  Both equal ``value`` for reversible chains; they are NaN
        when the chain is not reversible.
    reversible : bool
    """

    value: float
    potential: np.ndarray
    equilibrium_measure: Measure
    dirichlet_upper: float
    thomson_lower: float
    reversible: bool
    escape: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "value": float(self.value),
            "dirichlet_upper": float(self.dirichlet_upper),
            "thomson_lower": float(self.thomson_lower),
            "reversible": self.reversible,
            "potential": [float(x) for x in self.potential],
            "equilibrium_measure": [float(x) for x in self.equilibrium_measure.weights],
        }


def _check_sets(chain: Chain, A, B):
    a = as_index_array(chain, A)
    b = as_index_array(chain, B)
    if a.size == 0 or b.size == 0:
        raise EmptySubset("capacity needs two nonempty sets")
    if np.intersect1d(a, b).size:
        raise Overlap("the two sets must be disjoint")
    return a, b


def dirichlet_form(chain: Chain, f, mu=None) -> float:
    """``(1/2) sum_{eta, xi} mu(eta) R(eta, xi) (f(xi) - f(eta))^2``."""
    mu = _mu(chain, mu)
    f = np.asarray(f, dtype=float)
    c = _conductances(chain, mu).tocoo()
    return float(0.5 * np.sum(c.data * (f[c.col] - f[c.row]) ** 2))


def capacity(chain: Chain, A, B, mu=None) -> CapacityResult:
    """Capacity between disjoint nonempty sets ``A`` and ``B``.

    The escape probabilities come from one harmonic solve on the complement
    of ``A`` and ``B`` followed by a one-step decomposition.  For reversible
    chains the Dirichlet form of the potential and the Thomson value of the
    harmonic current are computed as independent cross-checks.

    Raises
    ------
    Overlap
        ``A`` and ``B`` intersect.
    Reducible
        The chain is not irreducible.
    """
    if not chain.irreducible:
        raise Reducible("capacity needs an irreducible chain")
    a, b = _check_sets(chain, A, B)
    mu = _mu(chain, mu)
    # solve for the escape potential W = 1 - V directly: when W is tiny,
    # forming 1 - V would cancel every significant digit
    bnd = np.concatenate([a, b])
    vals = np.concatenate([np.zeros(a.size), np.ones(b.size)])
    w_esc = np.clip(harmonic_extension(chain, bnd, vals), 0.0, 1.0)
    v = 1.0 - w_esc
    r_a = chain.rates[a]
    out_flux = np.asarray(r_a @ w_esc).ravel()  # sum_xi R(eta, xi)(1 - V(xi))
    escape = out_flux / chain.holding[a]
    weights = mu[a] * out_flux
    value = float(weights.sum())
    support = tuple(chain.states[i] for i in a)
    eq = Measure(support, weights / value if value > 0 else weights)
    reversible = chain.is_reversible(mu, rtol=1e-9)
    if reversible:
        d_up = dirichlet_form(chain, v, mu)
        flow = harmonic_flow(chain, a, b, mu=mu, potential=v, value=value)
        t_low = _thomson_value(chain, mu, flow)
    else:
        d_up = t_low = float("nan")
    return CapacityResult(value, v, eq, d_up, t_low, reversible, escape)


def dirichlet_bound(chain: Chain, A, B, test_function, mu=None, atol: float = 1e-12) -> float:
    """Dirichlet-principle upper bound ``D(f)`` on the capacity.

    Raises
    ------
    NotReversible
        Detailed balance fails.
    BoundaryViolation
        ``f`` is not 1 on ``A`` and 0 on ``B``.
    """
    a, b = _check_sets(chain, A, B)
    mu = _mu(chain, mu)
    if not chain.is_reversible(mu, rtol=1e-9):
        raise NotReversible("the Dirichlet principle needs a reversible chain")
    f = np.asarray(test_function, dtype=float)
    if f.shape != (chain.n,):
        raise ValueError("test function has the wrong length")
    if np.max(np.abs(f[a] - 1.0)) > atol or np.max(np.abs(f[b])) > atol:
        raise BoundaryViolation("test function must be 1 on A and 0 on B")
    return dirichlet_form(chain, f, mu)


def harmonic_flow(chain: Chain, A, B, mu=None, *, potential=None, value=None) -> sp.csr_matrix:
    """Unit harmonic current ``mu(eta)R(eta,xi)(V(eta)-V(xi))/Cap`` from A to B."""
    mu = _mu(chain, mu)
    if potential is None or value is None:
        res = capacity(chain, A, B, mu)
        potential, value = res.potential, res.value
    c = _conductances(chain, mu).tocoo()
    data = c.data * (potential[c.row] - potential[c.col]) / value
    return sp.csr_matrix((data, (c.row, c.col)), shape=(chain.n, chain.n))


def _antisymmetric(flow) -> sp.csr_matrix:
    f = sp.csr_matrix(flow, dtype=float)
    asym = f + f.T
    scale = abs(f).max() if f.nnz else 0.0
    if asym.nnz == 0 or abs(asym).max() <= 1e-14 * max(scale, 1.0):
        return f
    # one orientation per edge was given
    return sp.csr_matrix(f - f.T)


def _thomson_value(chain: Chain, mu: np.ndarray, flow: sp.csr_matrix) -> float:
    cond = _conductances(chain, mu)
    cond = 0.5 * (cond + cond.T)
    upper = sp.triu(flow, k=1).tocoo()
    c = np.asarray(cond[upper.row, upper.col]).ravel()
    active = upper.data != 0
    if np.any(c[active] <= 0):
        raise NotAFlow("flow uses a pair of states with no transition")
    energy = float(np.sum(upper.data[active] ** 2 / c[active]))
    return 1.0 / energy if energy > 0 else float("inf")


def thomson_bound(chain: Chain, A, B, unit_flow, mu=None, tol: float = 1e-10) -> float:
    """Thomson-principle lower bound ``1 / energy(flow)`` on the capacity.

    Parameters
    ----------
    unit_flow : sparse or dense (n, n) matrix
        Either an antisymmetric flow, or a matrix giving the flow on each
        edge in one orientation only (it is antisymmetrized).

    Raises
    ------
    NotAFlow
        The divergence vanishes off ``A`` and ``B`` up to ``tol`` and the net
        flux out of ``A`` is one; otherwise this error is raised.  It is also
        raised when the flow uses a pair of states with no transition.
    NotReversible
        Detailed balance fails.
    """
    a, b = _check_sets(chain, A, B)
    mu = _mu(chain, mu)
    if not chain.is_reversible(mu, rtol=1e-9):
        raise NotReversible("Thomson's principle needs a reversible chain")
    flow = _antisymmetric(unit_flow)
    div = np.asarray(flow.sum(axis=1)).ravel()
    inner = np.ones(chain.n, dtype=bool)
    inner[a] = False
    inner[b] = False
    if inner.any() and np.max(np.abs(div[inner])) > tol:
        raise NotAFlow("flow is not divergence free off A and B")
    if abs(div[a].sum() - 1.0) > tol:
        raise NotAFlow(f"net flux out of A is {div[a].sum():.12g}, not 1")
    return _thomson_value(chain, mu, flow)


# ---------------------------------------------------------------------------
# spectral quantities


@dataclass(frozen=True)
class SpectralResult:
    """Spectral gap of ``-Q`` in ``L^2(mu)`` and derived time scales.

    For a non-reversible chain the gap of the additive symmetrization
    ``(Q + Q*) / 2`` is reported and ``reversible`` is false.
    """

    gap: float
    relaxation_time: float
    mixing_time: float
    reversible: bool

    def to_dict(self) -> dict:
        return {"gap": float(self.gap), "relaxation_time": float(self.relaxation_time),
                "mixing_time": float(self.mixing_time), "reversible": self.reversible}


def _symmetrized(chain: Chain, mu: np.ndarray) -> sp.csr_matrix:
    s = np.sqrt(mu)
    q = chain.generator("csr")
    m = sp.diags(s) @ q @ sp.diags(1.0 / s)
    return sp.csr_matrix(0.5 * (m + m.T))


def spectral_gap(chain: Chain, mu=None, *, with_mixing: bool = False,
                 threshold: float = MIX_THRESHOLD) -> SpectralResult:
    """Smallest nonzero eigenvalue of ``-Q`` in the ``mu``-weighted space.

    Dense symmetric solve up to 2000 states; above that, shift-invert
    Lanczos iteration near zero.

    Parameters
    ----------
    with_mixing : bool
        Also compute the mixing time (otherwise it is NaN).
    """
    if not chain.irreducible:
        raise Reducible("spectral gap of a reducible chain is zero")
    mu = _mu(chain, mu)
    rev = chain.is_reversible(mu, rtol=1e-9)
    if chain.n == 1:
        return SpectralResult(float("inf"), 0.0, 0.0, True)
    s = _symmetrized(chain, mu)
    if chain.n <= DENSE_EIG_LIMIT:
        w = np.linalg.eigvalsh(s.toarray())
        gap = float(-w[-2])
    else:
        scale = float(chain.holding.max())
        vals = eigsh(s.tocsc(), k=2, sigma=1e-9 * scale, which="LM",
                     return_eigenvectors=False, tol=1e-10)
        gap = float(-np.min(vals))
    mix = mixing_time(chain, threshold, mu=mu) if with_mixing else float("nan")
    return SpectralResult(gap, 1.0 / gap, mix, rev)


class _WorstTV:
    """Worst-case distance ``max_eta ||delta_eta S(t) - mu||_TV``."""

    def __init__(self, chain: Chain, mu: np.ndarray):
        self.chain = chain
        self.mu = mu
        self.eig = None
        rev = chain.is_reversible(mu, rtol=1e-9)
        spread = mu.max() / mu.min() if mu.min() > 0 else np.inf
        if rev and chain.n <= DENSE_EIG_LIMIT and spread <= 1e8:
            s = _symmetrized(chain, mu).toarray()
            w, u = np.linalg.eigh(s)
            # drop the stationary mode (largest eigenvalue, zero)
            self.eig = (w[:-1], u[:, :-1])
        else:
            self.unif = Uniformizer(chain)

    def __call__(self, t: float) -> float:
        mu = self.mu
        if t == 0:
            return float(np.max(1.0 - mu))
        if self.eig is not None:
            w, u = self.eig
            # modes with e^{w t} < e^{-46} change each entry by less than
            # 1e-20 * sqrt(spread) <= 1e-16 and are skipped
            keep = w * t > -46.0
            u = u[:, keep]
            m = (u * np.exp(w[keep] * t)) @ u.T
            sq = np.sqrt(mu)
            diff = m * (sq[None, :] / sq[:, None])
            return float(np.max(0.5 * np.abs(diff).sum(axis=1)))
        p = transient_matrix(self.chain, t, uniformizer=self.unif)
        return float(np.max(0.5 * np.abs(p - mu[None, :]).sum(axis=1)))


def worst_tv(chain: Chain, t: float, mu=None) -> float:
    """``max_eta ||delta_eta S(t) - mu||_TV``."""
    return _WorstTV(chain, _mu(chain, mu))(t)


def mixing_time(chain: Chain, threshold: float = MIX_THRESHOLD, mu=None,
                bisections: int = 40, rtol: float = 1e-9) -> float:
    """First time the worst-case TV distance to equilibrium is below ``threshold``.

    The search doubles ``t`` from ``1 / max(lambda)`` until the distance is
    below the threshold, then bisects until the bracket is narrower than
    ``rtol`` relative (at most ``bisections`` steps).  A warning is issued if
    the distance is seen to increase along the doubling grid.
    """
    if not chain.irreducible:
        raise Reducible("mixing time of a reducible chain is infinite")
    if threshold >= 1:
        return 0.0
    mu = _mu(chain, mu)
    d = _WorstTV(chain, mu)
    if d(0.0) <= threshold:
        return 0.0
    t = 1.0 / float(chain.holding.max())
    prev = d(0.0)
    lo = 0.0
    for _ in range(200):
        cur = d(t)
        if cur > prev + 1e-12:
            warnings.warn("worst-case TV distance increased along the search grid",
                          RuntimeWarning, stacklevel=2)
        if cur <= threshold:
            break
        lo, prev = t, cur
        t *= 2.0
    else:
        raise RuntimeError("mixing-time search did not terminate")
    hi = t
    for _ in range(bisections):
        if hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        if d(mid) <= threshold:
            hi = mid
        else:
            lo = mid
    return hi


def mixing_time_bound(relaxation_time: float, mu) -> float:
    """``T_rel * (1 + max_eta log(1 / mu(eta)))``."""
    w = mu.weights if isinstance(mu, Measure) else np.asarray(mu)
    return float(relaxation_time * (1.0 + np.max(np.log(1.0 / w))))


# ---------------------------------------------------------------------------
# hitting-time bounds


def exterior_boundary(chain: Chain, A) -> np.ndarray:
    """States outside ``A`` that can be reached in one jump from ``A``."""
    a = as_index_array(chain, A)
    reach = np.asarray(chain.rates[a].sum(axis=0)).ravel() > 0
    reach[a] = False
    return np.flatnonzero(reach)


@dataclass(frozen=True)
class HittingBound:
    """Capacity bound on ``P_eta[H_A <= b]``.

    ``bound`` is ``min(1, e b Cap(eta, A) / pi(eta))``.  ``coarse_bound``
    replaces the capacity by half the boundary flux into ``A``; it is
    reported as computed and is not guaranteed to dominate the probability
    (the flux is ``Cap(E minus A, A)`` itself, not twice it).
    """

    bound: float
    coarse_bound: float
    capacity: float
    pi_eta: float


def hitting_prob_bound(chain: Chain, eta: int, A, b: float, mu=None) -> HittingBound:
    """Upper bound for the probability of hitting ``A`` before time ``b``.

    Raises
    ------
    EtaInA
        ``eta`` belongs to ``A``.
    """
    a = as_index_array(chain, A)
    if eta in set(a.tolist()):
        raise EtaInA("the starting state must lie outside the target")
    if not b > 0:
        raise ValueError("b must be positive")
    mu = _mu(chain, mu)
    cap = capacity(chain, [eta], a, mu).value
    raw = math.e * b * cap / mu[eta]
    bnd = exterior_boundary(chain, a)
    flux = float(np.sum(mu[bnd] * np.asarray(chain.rates[bnd][:, a].sum(axis=1)).ravel()))
    coarse = math.e * b * flux / (2.0 * mu[eta])
    return HittingBound(min(1.0, raw), min(1.0, coarse), cap, float(mu[eta]))


@dataclass(frozen=True)
class DeltaMassBound:
    """Three-term bound on the mass a path started in a well puts outside it.

    ``exact <= exit_term + mixing_term + ratio_term == bound``.
    """

    exit_term: float
    mixing_term: float
    ratio_term: float
    bound: float
    exact: float

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in
                ("exit_term", "mixing_term", "ratio_term", "bound", "exact")}


def delta_mass_bound(chain: Chain, eta: int, well, delta, T: float, s: float,
                     mu=None) -> DeltaMassBound:
    """Bound ``P_eta[xi(s) in Delta]`` for ``eta`` in ``well``.

    The terms are the probability of leaving the well before ``T``, the
    distance at time ``T`` between the chain reflected in the well and the
    conditioned stationary measure, and ``mu(Delta) / mu(well)``.

    Parameters
    ----------
    well, delta : index sets
    T, s : float
        ``0 < T < s``.
    """
    if not 0 < T < s:
        raise ValueError("need 0 < T < s")
    w = as_index_array(chain, well)
    dl = as_index_array(chain, delta)
    if eta not in set(w.tolist()):
        raise ValueError("eta must lie in the well")
    mu = _mu(chain, mu)
    outside = np.setdiff1d(np.arange(chain.n), w)
    exit_term = float(hit_within(chain, outside, T)[eta]) if outside.size else 0.0
    refl = reflected_chain(chain, w)
    k = int(np.searchsorted(w, eta))
    law = transient_distribution(refl, Measure.dirac(refl.states, k), T)
    cond = Measure.from_weights(refl.states, mu[w])
    mixing_term = tv_distance(law, cond)
    ratio = float(mu[dl].sum() / mu[w].sum()) if dl.size else 0.0
    start = Measure.dirac(chain.states, eta)
    exact = float(transient_distribution(chain, start, s).mass(dl)) if dl.size else 0.0
    return DeltaMassBound(exit_term, mixing_term, ratio,
                          exit_term + mixing_term + ratio, exact)
