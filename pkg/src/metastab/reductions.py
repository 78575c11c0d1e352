"""Chain surgeries: trace on a subset, reflection, gamma-enlargement.

All reductions return a new :class:`~metastab.chain.Chain`.  The shared
primitive is a harmonic solve on the complement of a set, done with a single
sparse LU factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .chain import Chain, Measure, Trajectory
from .errors import (
    EmptySubset,
    NonpositiveGamma,
    Reducible,
    ReducibleReflection,
    TargetIsWholeSpace,
)

__all__ = [
    "HittingProfile",
    "hitting_profile",
    "harmonic_extension",
    "trace_chain",
    "reflected_chain",
    "enlarge_chain",
    "trace_surgery",
    "as_index_array",
]


def as_index_array(chain: Chain, subset) -> np.ndarray:
    """Sorted unique index array for a subset given as indices or a mask."""
    a = np.asarray(list(subset) if not isinstance(subset, np.ndarray) else subset)
    if a.dtype == bool:
        if a.shape != (chain.n,):
            raise ValueError("boolean mask has the wrong length")
        return np.flatnonzero(a)
    a = np.unique(a.astype(np.intp))
    if a.size and (a[0] < 0 or a[-1] >= chain.n):
        raise IndexError("state index out of range")
    return a


def _complement(n, idx):
    m = np.ones(n, dtype=bool)
    m[idx] = False
    return np.flatnonzero(m)


def _factor_off(chain: Chain, off: np.ndarray):
    """LU factorization of ``-Q`` restricted to the states ``off``."""
    q = -chain.generator("csr")[off][:, off]
    return splu(sp.csc_matrix(q))


def harmonic_extension(chain: Chain, boundary, values) -> np.ndarray:
    """Solve ``Q h = 0`` off ``boundary`` with ``h = values`` on it.

    Parameters
    ----------
    boundary : index array
        States where ``h`` is prescribed.
    values : array_like, shape (len(boundary),) or (len(boundary), k)
        Prescribed values; several right-hand sides share one factorization.

    Returns
    -------
    ndarray of shape (n,) or (n, k)
    """
    raw = np.asarray(boundary)
    vals = np.asarray(values, dtype=float)
    if raw.dtype == bool:
        bnd = as_index_array(chain, raw)
    else:
        raw = raw.astype(np.intp).ravel()
        if vals.shape[:1] != raw.shape:
            raise ValueError("one prescribed value per boundary state is required")
        order = np.argsort(raw, kind="stable")
        bnd, vals = raw[order], vals[order]
        if np.any(np.diff(bnd) == 0):
            raise ValueError("boundary states must be distinct")
        if bnd.size and (bnd[0] < 0 or bnd[-1] >= chain.n):
            raise IndexError("state index out of range")
    out_shape = (chain.n,) + vals.shape[1:]
    h = np.zeros(out_shape)
    h[bnd] = vals
    off = _complement(chain.n, bnd)
    if off.size == 0:
        return h
    rhs = chain.rates[off][:, bnd] @ vals
    lu = _factor_off(chain, off)
    h[off] = lu.solve(np.asarray(rhs))
    return h


@dataclass(frozen=True)
class HittingProfile:
    """Law of the entrance point in a target set and the mean hitting time."""

    source: int
    target_set: tuple
    absorb_probs: Measure
    mean_time: float


def hitting_profile(chain: Chain, source: int, target_set) -> HittingProfile:
    """Harmonic measure and mean hitting time of ``target_set`` from ``source``.

    The harmonic system is solved once in adjoint form: with ``G`` the
    Green kernel of the chain killed on the target, the row ``G(source, .)``
    gives both the entrance law ``G R_{.,A}`` and the mean time ``G 1``.

    Raises
    ------
    Reducible
        The chain is not irreducible.
    TargetIsWholeSpace
        The target contains every state.
    """
    if not chain.irreducible:
        raise Reducible("hitting laws need an irreducible chain")
    tgt = as_index_array(chain, target_set)
    if tgt.size == 0:
        raise EmptySubset("target set is empty")
    if tgt.size == chain.n:
        raise TargetIsWholeSpace("target set must be a proper subset")
    support = tuple(chain.states[i] for i in tgt)
    if source in set(tgt.tolist()):
        k = int(np.searchsorted(tgt, source))
        return HittingProfile(source, tuple(tgt.tolist()), Measure.dirac(support, k), 0.0)
    off = _complement(chain.n, tgt)
    q = -chain.generator("csr")[off][:, off]
    lu = splu(sp.csc_matrix(q.T))
    e = np.zeros(off.size)
    e[int(np.searchsorted(off, source))] = 1.0
    g = lu.solve(e)
    probs = np.asarray(chain.rates[off][:, tgt].T @ g).ravel()
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum()
    return HittingProfile(source, tuple(tgt.tolist()),
                          Measure(support, probs), float(g.sum()))


def trace_chain(chain: Chain, A, *, verify: bool = False) -> Chain:
    """Trace of ``chain`` on the subset ``A``.

    The trace rates are ``R_AA + R_AB (-Q_BB)^{-1} R_BA`` with the diagonal
    dropped, where ``B`` is the complement of ``A``.  One factorization of
    ``-Q_BB`` serves every boundary state.

    Parameters
    ----------
    A : indices or boolean mask
    verify : bool
        If true, check that the stationary law of the trace equals the
        stationary law of ``chain`` conditioned on ``A`` (tolerance 1e-9).

    Returns
    -------
    Chain
        States ``chain.states[A]`` in increasing index order, time scale 1
        (the rates already include the original speed-up).
    """
    if not chain.irreducible:
        raise Reducible("trace requires an irreducible chain")
    a = as_index_array(chain, A)
    if a.size == 0:
        raise EmptySubset("cannot trace on an empty set")
    states = tuple(chain.states[i] for i in a)
    if a.size == chain.n:
        return Chain(states, chain.rates, 1.0)
    b = _complement(chain.n, a)
    r = chain.rates
    r_aa = r[a][:, a]
    r_ab = r[a][:, b]
    r_ba = r[b][:, a].tocsc()
    # only boundary states of A (columns entered from B, rows that leave to B)
    # receive extra rate, so the correction is assembled as a small block
    cols = np.flatnonzero(np.diff(r_ba.indptr))
    rows = np.flatnonzero(np.diff(r_ab.indptr))
    rt = r_aa
    if cols.size and rows.size:
        lu = _factor_off(chain, b)
        h = lu.solve(r_ba[:, cols].toarray())
        h = np.clip(h, 0.0, None)
        block = np.asarray(r_ab[rows] @ h)
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        keep = (rr != cc) & (block > 0)
        extra = sp.csr_matrix((block[keep], (rr[keep], cc[keep])), shape=rt.shape)
        rt = rt + extra
    out = Chain(states, rt, 1.0)
    if verify:
        from .chain import stationary

        mu = stationary(chain).weights[a]
        mu = mu / mu.sum()
        nu = stationary(out).weights
        err = 0.5 * np.abs(mu - nu).sum()
        if err > 1e-9:
            raise AssertionError(f"trace stationarity check failed: TV {err:.3e}")
    return out


def reflected_chain(chain: Chain, A) -> Chain:
    """Chain restricted to ``A`` by deleting every jump that leaves ``A``.

    Raises
    ------
    ReducibleReflection
        When the restricted rate graph is not strongly connected.
    """
    a = as_index_array(chain, A)
    if a.size == 0:
        raise EmptySubset("cannot reflect on an empty set")
    states = tuple(chain.states[i] for i in a)
    r = chain.rates[a][:, a]
    if a.size > 1:
        ncomp, _ = connected_components(r, directed=True, connection="strong")
        if ncomp != 1:
            raise ReducibleReflection(
                f"the chain reflected on this set has {ncomp} communicating classes")
    return Chain(states, r, 1.0)


def enlarge_chain(chain: Chain, gamma: float) -> Chain:
    """Gamma-enlargement: add a copy ``E*`` linked to ``E`` at rate ``gamma``.

    State ``i`` of the copy has index ``n + i`` and descriptor
    ``(state, "*")``.  The copy has no internal rates.  The stationary law
    is ``(pi / 2, pi / 2)``.
    """
    if not gamma > 0:
        raise NonpositiveGamma(f"gamma must be positive, got {gamma}")
    if not chain.irreducible:
        raise Reducible("enlargement requires an irreducible chain")
    n = chain.n
    link = sp.identity(n, format="csr") * float(gamma)
    r = sp.bmat([[chain.rates, link], [link, None]], format="csr")
    states = chain.states + tuple((s, "*") for s in chain.states)
    return Chain(states, r, 1.0)


def trace_surgery(trajectory: Trajectory, A) -> Trajectory:
    """Excise the sojourns outside ``A`` and glue the remaining pieces.

    The time of the returned path is the time spent in ``A``.  Consecutive
    records with the same state are merged, so visits ``a, d, a`` with
    ``d`` outside ``A`` become one visit to ``a``.
    """
    keep = set(A)
    recs = []
    clock = 0.0
    for s, start, end in trajectory.records:
        if s not in keep:
            continue
        dur = end - start
        if dur <= 0:
            continue
        if recs and recs[-1][0] == s:
            s0, a0, _ = recs[-1]
            recs[-1] = (s0, a0, clock + dur)
        else:
            recs.append((s, clock, clock + dur))
        clock += dur
    return Trajectory(tuple(recs), clock)
