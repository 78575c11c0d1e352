"""Partitions into wells, label projections, condition checkers and
finite-N convergence comparators.

Every checker returns a :class:`ConditionReport`.  Maxima over starting
states are computed exhaustively: the quantities involved are all of the form
``S(t) f`` for a fixed function ``f``, which backward uniformization returns
for every starting state at once.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .chain import (
    Chain,
    Measure,
    Trajectory,
    Uniformizer,
    hit_within,
    occupation_times,
    stationary,
    transient_distribution,
    transient_matrix,
)
from .errors import NoBottoms, PartitionError, ProductTooLarge, PsiOnDelta
from .potential import (
    MIX_THRESHOLD,
    capacity,
    mixing_time,
    mixing_time_bound,
    spectral_gap,
    worst_tv,
)
from .reductions import hitting_profile, reflected_chain, trace_chain

__all__ = [
    "Partition",
    "ConditionReport",
    "CONDITION_IDS",
    "phi",
    "psi",
    "project",
    "check_h2",
    "check_delta_mass",
    "check_m1",
    "check_capest",
    "check_tracemixing2",
    "check_m2",
    "check_measure_ratios",
    "check_trace_mixing_estimate",
    "check",
    "estimate_limit_chain",
    "limit_rates_by_capacity",
    "fdd_compare",
    "limit_fdd",
    "state_convergence",
    "sweep",
    "trend_verdict",
]

CONDITION_IDS = ("H2", "C03", "M1", "M2a", "M2b", "B09A", "B09", "L08",
                 "CAPEST", "TMIX2", "TMIX3")

#: Number of grid points used for the supremum over ``[2 delta, 3 delta]``.
SUP_GRID = 32

#: Largest number of entries of an exact joint law of states.
PRODUCT_LIMIT = 4_000_000


# ---------------------------------------------------------------------------
# partitions


class Partition:
    """Wells ``E^1..E^n``, separating set ``Delta`` and optional bottoms.

    Parameters
    ----------
    wells : sequence of index collections
        Pairwise disjoint, nonempty subsets of ``range(n_states)``.
    n_states : int
    bottoms : sequence of index collections, optional
        ``B^x`` for each well, each contained in its well.

    Labels are ``1..n`` for the wells and ``0`` for ``Delta``.
    """

    def __init__(self, wells: Sequence, n_states: int, bottoms: Sequence | None = None):
        self.n_states = int(n_states)
        ws = [np.unique(np.asarray(list(w), dtype=np.intp)) for w in wells]
        if len(ws) < 2:
            raise PartitionError("a partition needs at least two wells")
        labels = np.zeros(self.n_states, dtype=np.intp)
        for x, w in enumerate(ws, start=1):
            if w.size == 0:
                raise PartitionError(f"well {x} is empty")
            if w[0] < 0 or w[-1] >= self.n_states:
                raise PartitionError(f"well {x} has an out-of-range state")
            if np.any(labels[w] != 0):
                raise PartitionError(f"well {x} overlaps another well")
            labels[w] = x
        for w in ws:
            w.flags.writeable = False
        labels.flags.writeable = False
        self.wells = tuple(ws)
        self.labels = labels
        self.delta = np.flatnonzero(labels == 0)
        self.delta.flags.writeable = False
        if bottoms is not None:
            bs = [np.unique(np.asarray(list(b), dtype=np.intp)) for b in bottoms]
            if len(bs) != len(ws):
                raise PartitionError("one bottom set per well is required")
            for x, (b, w) in enumerate(zip(bs, ws), start=1):
                if b.size == 0:
                    raise PartitionError(f"bottom of well {x} is empty")
                if np.any(labels[b] != x):
                    raise PartitionError(f"bottom of well {x} is not inside the well")
                b.flags.writeable = False
            self.bottoms = tuple(bs)
        else:
            self.bottoms = None

    @property
    def n_wells(self) -> int:
        return len(self.wells)

    @property
    def union(self) -> np.ndarray:
        """All states in some well, sorted."""
        return np.flatnonzero(self.labels > 0)

    def well(self, x: int) -> np.ndarray:
        """States of well ``x`` (labels start at 1)."""
        return self.wells[x - 1]

    def bottom(self, x: int) -> np.ndarray:
        if self.bottoms is None:
            raise NoBottoms("this partition has no bottom sets")
        return self.bottoms[x - 1]

    def require_bottoms(self):
        if self.bottoms is None:
            raise NoBottoms("this check needs bottom sets B^x")

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "wells": [w.tolist() for w in self.wells],
            "bottoms": None if self.bottoms is None else [b.tolist() for b in self.bottoms],
        }

    def to_json(self, path=None, **kwargs) -> str:
        text = json.dumps(self.to_dict(), **kwargs)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, doc: dict) -> "Partition":
        return cls(doc["wells"], doc["n_states"], doc.get("bottoms"))

    @classmethod
    def from_json(cls, text_or_path) -> "Partition":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            with open(text_or_path) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        sizes = [w.size for w in self.wells]
        return f"Partition(wells={sizes}, delta={self.delta.size})"


def phi(state: int, partition: Partition) -> int:
    """Well label of a state, 0 on ``Delta``."""
    return int(partition.labels[state])


def psi(state: int, partition: Partition) -> int:
    """Well label of a state outside ``Delta``.

    Raises
    ------
    PsiOnDelta
    """
    x = int(partition.labels[state])
    if x == 0:
        raise PsiOnDelta(f"state {state} lies in the separating set")
    return x


def _merge_labels(records):
    out = []
    for lab, a, b in records:
        if out and out[-1][0] == lab:
            out[-1] = (lab, out[-1][1], b)
        else:
            out.append((lab, a, b))
    return tuple(out)


def project(obj, partition: Partition, kind: str = "phi"):
    """Apply the label map to a state index or a trajectory.

    Parameters
    ----------
    obj : int or Trajectory
    kind : {"phi", "psi"}
        ``phi`` sends ``Delta`` to 0; ``psi`` refuses states in ``Delta``.
    """
    f = phi if kind == "phi" else psi
    if isinstance(obj, Trajectory):
        recs = [(f(s, partition), a, b) for s, a, b in obj.records]
        return Trajectory(_merge_labels(recs), obj.horizon)
    return f(int(obj), partition)


# ---------------------------------------------------------------------------
# reports


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


@dataclass
class ConditionReport:
    """Structured result of a condition check or convergence comparison.

    ``value`` is the headline scalar used for verdicts and sweeps; ``values``
    holds every computed quantity.
    """

    id: str
    params: dict
    values: dict
    verdict: str = "warn"
    sweep: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def value(self) -> float:
        return float(self.values["value"])

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "params": _clean(self.params),
            "values": _clean(self.values),
            "sweep": _clean(self.sweep),
            "verdict": self.verdict,
            "notes": list(self.notes),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _point_verdict(value: float, threshold: float | None) -> str:
    if threshold is not None:
        return "pass" if value <= threshold else "fail"
    return "pass" if value <= 1e-12 else "warn"


def trend_verdict(values: Sequence[float], direction: str = "decrease") -> str:
    """``trend-pass`` when the values move strictly in ``direction``.

    Steps smaller than ``1e-12`` (absolute) count as no movement.  At least
    three values are required.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 3:
        return "warn"
    steps = np.diff(v)
    ok = np.all(steps < -1e-12) if direction == "decrease" else np.all(steps > 1e-12)
    return "trend-pass" if ok else "fail"


# ---------------------------------------------------------------------------
# helpers


def _mu(chain, mu):
    if mu is None:
        return stationary(chain).weights
    return mu.weights if isinstance(mu, Measure) else np.asarray(mu, dtype=float)


def _start_states(partition: Partition, full_max: bool | None):
    # backward propagation yields every starting state at no extra cost, so
    # the maximum is always exhaustive; ``full_max`` is accepted for callers
    # that pass it explicitly
    return partition.union


# ---------------------------------------------------------------------------
# checkers


def check_h2(chain: Chain, partition: Partition, t: float, *, mu=None,
             full_max: bool | None = None, threshold: float | None = None) -> ConditionReport:
    """Maximal expected time spent in ``Delta`` during ``[0, t]``.

    The maximum runs over starting states in the wells.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    occ = occupation_times(chain, partition.delta, t)
    starts = _start_states(partition, full_max)
    k = int(starts[np.argmax(occ[starts])])
    value = float(occ[k])
    return ConditionReport(
        "H2", {"t": t}, {"value": value, "argmax": k, "ratio_to_t": value / t},
        _point_verdict(value, threshold),
        notes=["maximum over all starting states in the wells"])


def check_delta_mass(chain: Chain, partition: Partition, delta: float, *, mu=None,
                     full_max: bool | None = None, threshold: float | None = None,
                     grid: int = SUP_GRID) -> ConditionReport:
    """``max_x max_{eta in E^x} sup_{2 delta <= s <= 3 delta} P_eta[xi(s) in Delta]``.

    The supremum over ``s`` uses a uniform grid of ``grid`` points that is
    recorded in the report.  The well-ratio shortcut
    ``max_eta mu(Delta) / mu(eta)`` is reported alongside.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    mu = _mu(chain, mu)
    starts = _start_states(partition, full_max)
    f = np.zeros(chain.n)
    f[partition.delta] = 1.0
    unif = Uniformizer(chain)
    s_grid = np.linspace(2 * delta, 3 * delta, grid)
    u = unif.backward(f, s_grid[0])
    best = float(np.max(u[starts])) if partition.delta.size else 0.0
    best_s = s_grid[0]
    h = s_grid[1] - s_grid[0]
    if partition.delta.size:
        for s in s_grid[1:]:
            u = unif.backward(u, h)
            m = float(np.max(u[starts]))
            if m > best:
                best, best_s = m, s
    shortcut = float(mu[partition.delta].sum() / mu[starts].min())
    return ConditionReport(
        "C03", {"delta": delta, "grid": [float(x) for x in s_grid]},
        {"value": max(best, 0.0), "argmax_time": float(best_s),
         "measure_ratio_bound": shortcut},
        _point_verdict(best, threshold),
        notes=["maximum over all starting states in the wells",
               f"supremum over a {grid}-point grid on [2 delta, 3 delta]"])


def _well_trace(chain, partition, x):
    return trace_chain(chain, partition.well(x))


def _bottom_in_trace(partition, x):
    w = partition.well(x)
    return np.searchsorted(w, partition.bottom(x))


def check_capest(chain: Chain, partition: Partition, *, mu=None,
                 max_states: int = 4000) -> ConditionReport:
    """``max_x max_{eta in E^x minus B^x} mu(E^x minus B^x) / Cap(eta, B^x)``.

    Capacities are computed in the original chain.  When a well has more
    than ``max_states`` candidate states an evenly spaced subset is used and
    this is noted.
    """
    partition.require_bottoms()
    mu = _mu(chain, mu)
    per_well, notes = [], []
    for x in range(1, partition.n_wells + 1):
        w, b = partition.well(x), partition.bottom(x)
        rest = np.setdiff1d(w, b)
        if rest.size == 0:
            per_well.append(0.0)
            continue
        cand = rest
        if rest.size > max_states:
            cand = rest[np.linspace(0, rest.size - 1, max_states).astype(np.intp)]
            notes.append(f"well {x}: {max_states} of {rest.size} states evaluated")
        num = float(mu[rest].sum())
        worst = max(num / capacity(chain, [int(e)], b, mu).value for e in cand)
        per_well.append(worst)
    value = float(max(per_well))
    return ConditionReport("CAPEST", {}, {"value": value, "per_well": per_well},
                           _point_verdict(value, None), notes=notes)


def check_tracemixing2(chain: Chain, partition: Partition, *, mu=None,
                       threshold_tv: float = MIX_THRESHOLD) -> ConditionReport:
    """``max_x T_mix(trace on E^x) (1 + ln(1 / mu^x(B^x))) / mu^x(B^x)``."""
    partition.require_bottoms()
    mu = _mu(chain, mu)
    per_well, tmix = [], []
    for x in range(1, partition.n_wells + 1):
        w, b = partition.well(x), partition.bottom(x)
        mb = float(mu[b].sum() / mu[w].sum())
        tr = _well_trace(chain, partition, x)
        tm = mixing_time(tr, threshold_tv, mu=mu[w] / mu[w].sum())
        tmix.append(tm)
        per_well.append(tm * (1 + math.log(1 / mb)) / mb)
    value = float(max(per_well))
    return ConditionReport("TMIX2", {}, {"value": value, "per_well": per_well,
                                         "trace_mixing_times": tmix},
                           _point_verdict(value, None))


def check_m1(chain: Chain, partition: Partition, delta: float, *, mu=None,
             threshold: float | None = None, with_criteria: bool = True) -> ConditionReport:
    """``max_x sup_{eta in E^x} P_eta[H_{B^x} > delta]`` for the trace on ``E^x``.

    Also reports the Markov-inequality bound through mean hitting times,
    the iterated mixing bound, and (if ``with_criteria``) the two sufficient
    criteria computed by :func:`check_capest` and :func:`check_tracemixing2`.
    """
    partition.require_bottoms()
    if not delta > 0:
        raise ValueError("delta must be positive")
    mu = _mu(chain, mu)
    tails, markov, iterated = [], [], []
    for x in range(1, partition.n_wells + 1):
        w = partition.well(x)
        tr = _well_trace(chain, partition, x)
        b = _bottom_in_trace(partition, x)
        tail = 1.0 - hit_within(tr, b, delta)
        tails.append(float(tail.max()))
        if b.size == tr.n:
            markov.append(0.0)
            iterated.append(0.0)
            continue
        # exact mean hitting times on the trace chain
        means = [hitting_profile(tr, int(e), b).mean_time
                 for e in np.setdiff1d(np.arange(tr.n), b)]
        markov.append(min(1.0, max(means) / delta))
        mux = mu[w] / mu[w].sum()
        mb = float(mux[b].sum())
        tm = mixing_time(tr, mu=mux)
        theta = (1 + math.log(1 / mb)) * tm
        iterated.append((1 - mb / 2) ** math.floor(delta / theta) if theta > 0 else 0.0)
    value = float(max(tails))
    values = {"value": value, "per_well": tails, "markov_bound": max(markov),
              "iterated_bound": max(iterated)}
    if with_criteria:
        values["capest"] = check_capest(chain, partition, mu=mu).value
        values["tracemixing2"] = check_tracemixing2(chain, partition, mu=mu).value
    return ConditionReport("M1", {"delta": delta}, values, _point_verdict(value, threshold))


def check_m2(chain: Chain, partition: Partition, epsilon: float, *, mu=None,
             threshold: float | None = None):
    """Exit-before-``2 epsilon`` probability and reflected mixing from bottoms.

    Returns
    -------
    (ConditionReport, ConditionReport)
        Ids ``M2a`` (``sup_{B^x} P[H_Delta <= 2 epsilon]``) and ``M2b``
        (``sup_{B^x} ||delta_eta S^R(epsilon) - mu^x||_TV``).  For reversible
        chains ``M2b`` also carries the spectral shortcut
        ``max mu^x(eta)^{-1/2} exp(-gap epsilon)``.
    """
    partition.require_bottoms()
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    mu = _mu(chain, mu)
    reversible = chain.is_reversible(mu, rtol=1e-9)
    if partition.delta.size:
        hit = hit_within(chain, partition.delta, 2 * epsilon)
    else:
        hit = np.zeros(chain.n)
    a_vals, b_vals, short = [], [], []
    for x in range(1, partition.n_wells + 1):
        w, b = partition.well(x), partition.bottom(x)
        a_vals.append(float(hit[b].max()))
        refl = reflected_chain(chain, w)
        mux = mu[w] / mu[w].sum()
        kb = np.searchsorted(w, b)
        rows = transient_matrix(refl, epsilon, rows=kb)
        tv = 0.5 * np.abs(rows - mux[None, :]).sum(axis=1)
        b_vals.append(float(tv.max()))
        if reversible:
            gap = spectral_gap(refl, mu=mux).gap
            short.append(float(np.max(mux[kb] ** -0.5) * math.exp(-gap * epsilon)))
    ra = ConditionReport("M2a", {"epsilon": epsilon},
                         {"value": max(a_vals), "per_well": a_vals},
                         _point_verdict(max(a_vals), threshold))
    vb = {"value": max(b_vals), "per_well": b_vals}
    if reversible:
        vb["spectral_bound"] = max(short)
    rb = ConditionReport("M2b", {"epsilon": epsilon}, vb, _point_verdict(max(b_vals), threshold))
    return ra, rb


def check_measure_ratios(chain: Chain, partition: Partition, *, mu=None,
                         epsilon: float | None = None, c0: float = 10.0,
                         threshold: float | None = None) -> list:
    """Stationary-measure ratios between ``Delta``, the wells and the bottoms.

    Returns reports ``B09A`` (``max_y mu(Delta) / mu(E^y)``), ``B09``
    (spread ``max_y mu(E^y) / min_y mu(E^y)``, pass when at most ``c0``),
    ``L08`` (``max_{eta in wells} mu(Delta) / mu(eta)``) and, when
    ``epsilon`` and bottoms are given, ``TMIX3``.
    """
    mu = _mu(chain, mu)
    m_delta = float(mu[partition.delta].sum())
    m_wells = [float(mu[w].sum()) for w in partition.wells]
    ratios = [m_delta / m for m in m_wells]
    spread = max(m_wells) / min(m_wells)
    l08 = m_delta / float(mu[partition.union].min())
    reports = [
        ConditionReport("B09A", {}, {"value": max(ratios), "per_well": ratios,
                                     "well_masses": m_wells},
                        _point_verdict(max(ratios), threshold)),
        ConditionReport("B09", {"C0": c0}, {"value": spread},
                        "pass" if spread <= c0 else "fail"),
        ConditionReport("L08", {}, {"value": l08}, _point_verdict(l08, threshold)),
    ]
    if epsilon is not None and partition.bottoms is not None:
        per = []
        for x in range(1, partition.n_wells + 1):
            w, b = partition.well(x), partition.bottom(x)
            mux = mu[w] / mu[w].sum()
            mb = float(mu[b].sum() / mu[w].sum())
            tm = mixing_time(_well_trace(chain, partition, x), mu=mux)
            per.append(tm / epsilon / mb * (1 + math.log(1 / mb)))
        reports.append(ConditionReport("TMIX3", {"epsilon": epsilon},
                                       {"value": max(per), "per_well": per},
                                       _point_verdict(max(per), threshold)))
    return reports


def check_trace_mixing_estimate(chain: Chain, partition: Partition, *,
                                mu=None) -> ConditionReport:
    """Compare each well's trace mixing time with its reflected relaxation bound.

    For every well the mixing time of the trace chain on the well is set
    against ``T_rel(reflected) (1 + max_eta log(1 / mu^x(eta)))``.  The
    headline value is the largest ratio of the two; the verdict is ``pass``
    when no ratio exceeds one and ``warn`` when the chain is not reversible
    (the bound is only claimed for reversible chains).
    """
    mu = _mu(chain, mu)
    tmix, bounds, ratios = [], [], []
    for x in range(1, partition.n_wells + 1):
        w = partition.well(x)
        mux = mu[w] / mu[w].sum()
        if w.size == 1:
            tmix.append(0.0)
            bounds.append(0.0)
            ratios.append(0.0)
            continue
        tm = mixing_time(trace_chain(chain, w), mu=mux)
        trel = spectral_gap(reflected_chain(chain, w), mu=mux).relaxation_time
        bd = mixing_time_bound(trel, mux)
        tmix.append(tm)
        bounds.append(bd)
        ratios.append(tm / bd)
    value = float(max(ratios))
    reversible = chain.is_reversible(mu, rtol=1e-9)
    verdict = ("pass" if value <= 1.0 else "fail") if reversible else "warn"
    return ConditionReport("TMIXEST", {}, {"value": value, "trace_mixing_times": tmix,
                                           "bounds": bounds, "reversible": reversible},
                           verdict)


def check(chain: Chain, partition: Partition, cid: str, *, mu=None, **params) -> ConditionReport:
    """Run one condition by id.

    Parameters used: ``t`` (H2), ``delta`` (C03, M1), ``epsilon`` (M2a, M2b,
    TMIX3), ``c0`` (B09) and ``threshold`` (all).
    """
    thr = params.get("threshold")
    if cid not in CONDITION_IDS:
        raise KeyError(f"unknown condition id {cid!r}; choose from {', '.join(CONDITION_IDS)}")
    mu = _mu(chain, mu)
    if cid == "H2":
        return check_h2(chain, partition, params.get("t", 1.0), mu=mu, threshold=thr)
    if cid == "C03":
        return check_delta_mass(chain, partition, params.get("delta", 0.1), mu=mu, threshold=thr)
    if cid == "M1":
        return check_m1(chain, partition, params.get("delta", 0.1), mu=mu, threshold=thr,
                        with_criteria=False)
    if cid in ("M2a", "M2b"):
        ra, rb = check_m2(chain, partition, params.get("epsilon", 0.01), mu=mu, threshold=thr)
        return ra if cid == "M2a" else rb
    if cid == "CAPEST":
        return check_capest(chain, partition, mu=mu)
    if cid == "TMIX2":
        return check_tracemixing2(chain, partition, mu=mu)
    reps = check_measure_ratios(chain, partition, mu=mu, epsilon=params.get("epsilon"),
                                c0=params.get("c0", 10.0), threshold=thr)
    by_id = {r.id: r for r in reps}
    if cid not in by_id:
        raise ValueError(f"{cid} needs an epsilon parameter and bottom sets")
    return by_id[cid]


# ---------------------------------------------------------------------------
# limit chain and convergence


def estimate_limit_chain(chain: Chain, partition: Partition, *, mu=None) -> Chain:
    """Label chain with mean rates of the trace on the union of the wells.

    ``r(x, y) = sum_{eta in E^x} mu(eta) R^T(eta, E^y) / mu(E^x)`` where
    ``R^T`` are the rates of the trace chain on the union of the wells.  The
    returned chain has states ``1..n`` and time scale 1 (rates are in the
    time units of ``chain``).
    """
    mu = _mu(chain, mu)
    u = partition.union
    tr = trace_chain(chain, u)
    lab = partition.labels[u]
    r = tr.rates.tocoo()
    flow = np.zeros((partition.n_wells + 1, partition.n_wells + 1))
    np.add.at(flow, (lab[r.row], lab[r.col]), mu[u][r.row] * r.data)
    masses = np.array([mu[w].sum() for w in partition.wells])
    rates = flow[1:, 1:] / masses[:, None]
    np.fill_diagonal(rates, 0.0)
    import scipy.sparse as sp

    return Chain(tuple(range(1, partition.n_wells + 1)), sp.csr_matrix(rates), 1.0)


def limit_rates_by_capacity(chain: Chain, partition: Partition, *, mu=None) -> np.ndarray:
    """Label rates from capacities between unions of wells.

    ``mu(E^x) r(x, y) = (Cap(E^x, E~^x) + Cap(E^y, E~^y) - Cap(E^x u E^y, rest)) / 2``
    where ``E~^x`` is the union of the other wells and the last capacity is
    dropped when no other well remains.
    """
    mu = _mu(chain, mu)
    n = partition.n_wells
    wells = partition.wells

    def others(xs):
        rest = [wells[k] for k in range(n) if k not in xs]
        return np.concatenate(rest) if rest else np.array([], dtype=np.intp)

    single = [capacity(chain, wells[x], others([x]), mu).value for x in range(n)]
    out = np.zeros((n, n))
    for x in range(n):
        for y in range(n):
            if x == y:
                continue
            rest = others([x, y])
            pair = 0.0
            if rest.size:
                pair = capacity(chain, np.concatenate([wells[x], wells[y]]), rest, mu).value
            out[x, y] = 0.5 * (single[x] + single[y] - pair) / float(mu[wells[x]].sum())
    return out


def _default_init(chain, partition, init_well, init, mu):
    if init is not None:
        if partition.labels[init] != init_well:
            raise ValueError("initial state is not in the initial well")
        return int(init)
    if partition.bottoms is not None:
        b = partition.bottom(init_well)
    else:
        b = partition.well(init_well)
    return int(b[np.argmax(mu[b])])


def _check_times(times):
    ts = [float(t) for t in times]
    if any(t < 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("times must be nonnegative and strictly increasing")
    return ts


def limit_fdd(limit: Chain, x: int, times) -> dict:
    """Joint law ``P_x[X(t_1) = y_1, ...]`` of a label chain, keyed by tuples."""
    ts = _check_times(times)
    n = limit.n
    start = limit.states.index(x)
    v = np.zeros(n)
    v[start] = 1.0
    prev = 0.0
    unif = Uniformizer(limit)
    out = {}
    branches = [((), v)]
    for t in ts:
        nxt = []
        for key, vec in branches:
            w = unif.forward(vec, t - prev) if t > prev else vec
            for j in range(n):
                e = np.zeros(n)
                e[j] = w[j]
                nxt.append((key + (limit.states[j],), e))
        branches = nxt
        prev = t
    for key, vec in branches:
        out[key] = float(vec.sum())
    return out


def fdd_compare(chain: Chain, partition: Partition, limit: Chain | None, times,
                init_well: int, *, init: int | None = None, mu=None) -> ConditionReport:
    """Compare the label process with the limit chain at up to three times.

    The exact joint law of ``(Phi(xi(t_1)), ..., Phi(xi(t_k)))`` is built by
    propagating the law to each time, splitting it by label and propagating
    each piece further.
    """
    ts = _check_times(times)
    if len(ts) > 3:
        raise ProductTooLarge("exact joint label laws are limited to three times")
    mu = _mu(chain, mu)
    notes = []
    if limit is None:
        limit = estimate_limit_chain(chain, partition, mu=mu)
        notes.append("limit chain estimated from mean trace rates")
    eta = _default_init(chain, partition, init_well, init, mu)
    labels = partition.labels
    nlab = partition.n_wells + 1
    unif = Uniformizer(chain)
    v0 = np.zeros(chain.n)
    v0[eta] = 1.0
    branches = [((), v0)]
    prev = 0.0
    for t in ts:
        nxt = []
        for key, vec in branches:
            w = unif.forward(vec, t - prev) if t > prev else vec
            w = np.clip(w, 0.0, None)
            for y in range(nlab):
                piece = np.where(labels == y, w, 0.0)
                nxt.append((key + (y,), piece))
        branches = nxt
        prev = t
    exact = {key: float(vec.sum()) for key, vec in branches}
    total = sum(exact.values())
    exact = {k: p / total for k, p in exact.items()}
    lim = limit_fdd(limit, init_well, ts)
    diffs = {k: abs(exact[k] - lim.get(k, 0.0)) for k in exact}
    max_diff = max(diffs.values())
    zero_mass = sum(p for k, p in exact.items() if 0 in k)
    values = {
        "value": max_diff,
        "delta_mass": zero_mass,
        "exact": {",".join(map(str, k)): p for k, p in exact.items()},
        "limit": {",".join(map(str, k)): lim.get(k, 0.0) for k in exact},
    }
    return ConditionReport("FDD", {"times": ts, "init_well": init_well, "init": eta},
                           values, _point_verdict(max_diff, None), notes=notes)


def state_convergence(chain: Chain, partition: Partition, limit: Chain | None, times,
                      init_well: int, *, init: int | None = None, mu=None) -> ConditionReport:
    """TV distance between the law of ``(xi(t_1), ..., xi(t_k))`` and the mixture
    ``sum_y P_x[X(t_1) = y_1, ...] mu^{y_1} x ... x mu^{y_k}``.

    Raises
    ------
    ProductTooLarge
        For ``k > 2`` or when ``n**k`` exceeds :data:`PRODUCT_LIMIT`.
    """
    ts = _check_times(times)
    k = len(ts)
    if k > 2 or chain.n ** k > PRODUCT_LIMIT:
        raise ProductTooLarge(
            "exact joint state laws are limited to two times and "
            f"{PRODUCT_LIMIT} entries; use the Monte Carlo estimators instead")
    mu = _mu(chain, mu)
    notes = []
    if limit is None:
        limit = estimate_limit_chain(chain, partition, mu=mu)
        notes.append("limit chain estimated from mean trace rates")
    eta = _default_init(chain, partition, init_well, init, mu)
    conds = [np.where(partition.labels == x, mu, 0.0) for x in range(1, partition.n_wells + 1)]
    conds = [c / c.sum() for c in conds]
    lim = limit_fdd(limit, init_well, ts)
    unif = Uniformizer(chain)
    start = np.zeros(chain.n)
    start[eta] = 1.0
    law1 = np.clip(unif.forward(start, ts[0]), 0.0, None) if ts[0] > 0 else start
    law1 = law1 / law1.sum()
    if k == 1:
        target = sum(lim[(y,)] * conds[y - 1] for y in range(1, partition.n_wells + 1))
        tv = 0.5 * float(np.abs(law1 - target).sum())
    else:
        dt = ts[1] - ts[0]
        pm = transient_matrix(chain, dt, uniformizer=unif) if dt > 0 else np.eye(chain.n)
        joint = law1[:, None] * pm
        target = np.zeros_like(joint)
        for y1 in range(1, partition.n_wells + 1):
            for y2 in range(1, partition.n_wells + 1):
                target += lim[(y1, y2)] * np.outer(conds[y1 - 1], conds[y2 - 1])
        tv = 0.5 * float(np.abs(joint - target).sum())
    return ConditionReport("STATE", {"times": ts, "init_well": init_well, "init": eta},
                           {"value": tv}, _point_verdict(tv, None), notes=notes)


# ---------------------------------------------------------------------------
# sweeps


def _sweep_point(args):
    builder, n_value, cid, params = args
    inst = builder(n_value)
    chain, part = inst[0], inst[1]
    return check(chain, part, cid, **params)


def sweep(builder: Callable, n_values: Sequence[int], cid: str, *, workers: int = 1,
          direction: str = "decrease", **params) -> ConditionReport:
    """Evaluate a condition over a sequence of sizes and attach a trend verdict.

    Parameters
    ----------
    builder : callable
        ``builder(N)`` returns ``(chain, partition, ...)``; it must be
        picklable when ``workers > 1``.
    n_values : sequence of int
        Sizes, in the order used for the trend.
    workers : int
        Process count; results are merged in the order of ``n_values`` so the
        outcome does not depend on it.
    """
    jobs = [(builder, n, cid, params) for n in n_values]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            reports = list(ex.map(_sweep_point, jobs))
    else:
        reports = [_sweep_point(j) for j in jobs]
    values = [r.value for r in reports]
    if cid == "B09":
        verdict = "pass" if all(r.verdict == "pass" for r in reports) else "fail"
    else:
        verdict = trend_verdict(values, direction)
    last = reports[-1]
    return ConditionReport(
        cid, dict(params, N=list(n_values)), dict(last.values),
        verdict, [{"N": n, "value": v} for n, v in zip(n_values, values)],
        last.notes + [f"values field holds the N={n_values[-1]} point"])
