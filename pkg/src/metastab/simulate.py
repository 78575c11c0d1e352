"""Event-driven Monte Carlo for continuous-time chains.

Each path draws from its own counter-based Philox stream keyed by
``(seed, path_index)``, so a path never depends on how many paths were run
before it or on how the work was split between processes.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .chain import Chain, Measure, Trajectory
from .errors import NoExitsObserved, Reducible, TimesBeyondHorizon
from .reductions import trace_surgery

__all__ = [
    "SimConfig",
    "Estimate",
    "ExitLaw",
    "path_rng",
    "simulate_path",
    "gillespie",
    "sample_states",
    "empirical_fdd",
    "empirical_exit_law",
    "occupation_fraction",
    "worker_count",
]

_BLOCK = 256


def worker_count(requested: int | None = None) -> int:
    """Number of worker processes, capped by ``METASTAB_THREADS`` when set."""
    n = requested or 1
    cap = os.environ.get("METASTAB_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    Attributes
    ----------
    seed : int
        64-bit seed shared by all paths.
    paths : int
    horizon : float
    record : {"full", "sampled"}
        Keep whole trajectories, or only the states at ``times``.
    times : tuple of float, optional
        Sampling times for ``record="sampled"``.
    workers : int
        Worker processes; results do not depend on it.
    """

    seed: int
    paths: int
    horizon: float
    record: str = "full"
    times: tuple | None = None
    workers: int = 1

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError("paths must be at least 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.record not in ("full", "sampled"):
            raise ValueError("record must be 'full' or 'sampled'")
        if self.record == "sampled" and not self.times:
            raise ValueError("sampled recording needs times")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo estimate with its standard error and sample size."""

    value: float
    std_error: float
    n: int
    count: int | None = None

    def to_dict(self) -> dict:
        d = {"value": self.value, "std_error": self.std_error, "n": self.n}
        if self.count is not None:
            d["count"] = self.count
        return d


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, path_index)``."""
    key = np.array([seed, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class _JumpTable:
    """Cumulative jump probabilities per state in CSR layout.

    ``key`` holds ``row + cumulative probability`` so that a single sorted
    search finds the jump target for any batch of (state, uniform) pairs.
    """

    def __init__(self, chain: Chain):
        r = chain.rates
        self.indptr = r.indptr
        self.indices = r.indices
        self.holding = np.asarray(chain.holding, dtype=float)
        cum = np.empty_like(r.data)
        for i in range(chain.n):
            a, b = r.indptr[i], r.indptr[i + 1]
            if b > a:
                c = np.cumsum(r.data[a:b])
                cum[a:b] = c / c[-1]
        self.cum = cum
        rows = np.repeat(np.arange(chain.n), np.diff(r.indptr))
        self.key = rows + cum

    def targets(self, states, u):
        j = np.searchsorted(self.key, states + u, side="right")
        j = np.minimum(j, self.indptr[states + 1] - 1)
        return self.indices[j]


def _initial_state(init, chain: Chain, rng) -> int:
    if isinstance(init, Measure):
        w = init.weights
        return int(min(np.searchsorted(np.cumsum(w) / w.sum(), rng.random(), side="right"),
                       chain.n - 1))
    return int(init)


def _run(table: _JumpTable, start: int, horizon: float, rng, times=None):
    """Simulate one path; return (states, entry_times) or the sampled states."""
    t = 0.0
    s = start
    states = [s]
    entries = [0.0]
    buf = rng.random(_BLOCK)
    pos = 0
    sampled = None
    if times is not None:
        sampled = np.empty(len(times), dtype=np.int64)
        k = 0
    while True:
        lam = table.holding[s]
        if lam <= 0:
            t_next = math.inf
        else:
            if pos + 2 > _BLOCK:
                buf = rng.random(_BLOCK)
                pos = 0
            t_next = t - math.log1p(-buf[pos]) / lam
            u = buf[pos + 1]
            pos += 2
        if sampled is not None:
            while k < len(times) and times[k] < t_next:
                sampled[k] = s
                k += 1
            if k == len(times):
                return sampled
        if t_next >= horizon:
            break
        s = int(table.targets(np.array([s]), np.array([u]))[0])
        t = t_next
        states.append(s)
        entries.append(t)
    if sampled is not None:
        sampled[k:] = s
        return sampled
    return states, entries


def _run_sampled_batch(table: _JumpTable, starts: np.ndarray, rngs: list,
                       times: np.ndarray) -> np.ndarray:
    """Advance many paths in lockstep and record their states at ``times``.

    Every path reads its own stream in the same order as :func:`_run`, so the
    result is identical to running the paths one at a time.
    """
    m, K = starts.size, times.size
    s = starts.astype(np.int64)
    t = np.zeros(m)
    k = np.zeros(m, dtype=np.int64)
    out = np.empty((m, K), dtype=np.int64)
    buf = np.vstack([r.random(_BLOCK) for r in rngs])
    pos = 0
    active = np.arange(m)
    while active.size:
        if pos + 2 > _BLOCK:
            buf[active] = np.vstack([rngs[i].random(_BLOCK) for i in active])
            pos = 0
        ss = s[active]
        tn = t[active] - np.log1p(-buf[active, pos]) / table.holding[ss]
        u = buf[active, pos + 1]
        pos += 2
        ka = k[active]
        while True:
            hit = ka < K
            hit[hit] = times[ka[hit]] < tn[hit]
            if not hit.any():
                break
            out[active[hit], ka[hit]] = ss[hit]
            ka[hit] += 1
        k[active] = ka
        go = ka < K
        nxt = active[go]
        s[nxt] = table.targets(ss[go], u[go])
        t[nxt] = tn[go]
        active = nxt
    return out


def simulate_path(chain: Chain, init, horizon: float, seed: int, path_index: int,
                  *, table: _JumpTable | None = None) -> Trajectory:
    """One Gillespie path on ``[0, horizon]`` from its own random stream."""
    table = table or _JumpTable(chain)
    rng = path_rng(seed, path_index)
    start = _initial_state(init, chain, rng)
    states, entries = _run(table, start, horizon, rng)
    return Trajectory.from_jumps(states, entries, horizon)


def _chunk_paths(args):
    chain, init, cfg, lo, hi = args
    table = _JumpTable(chain)
    if cfg.record == "sampled":
        rngs = [path_rng(cfg.seed, p) for p in range(lo, hi)]
        starts = np.array([_initial_state(init, chain, r) for r in rngs], dtype=np.int64)
        block = _run_sampled_batch(table, starts, rngs, np.asarray(cfg.times, float))
        return list(block)
    out = []
    for p in range(lo, hi):
        rng = path_rng(cfg.seed, p)
        start = _initial_state(init, chain, rng)
        if cfg.record == "sampled":
            out.append(_run(table, start, cfg.horizon, rng, np.asarray(cfg.times, float)))
        else:
            st, en = _run(table, start, cfg.horizon, rng)
            out.append(Trajectory.from_jumps(st, en, cfg.horizon))
    return out


def _dispatch(chain, init, cfg):
    if not chain.irreducible:
        raise Reducible("simulation expects an irreducible chain")
    workers = worker_count(cfg.workers)
    if workers == 1 or cfg.paths < 2 * workers:
        return _chunk_paths((chain, init, cfg, 0, cfg.paths))
    from concurrent.futures import ProcessPoolExecutor

    edges = np.linspace(0, cfg.paths, workers + 1).astype(int)
    jobs = [(chain, init, cfg, int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_chunk_paths, jobs))
    return list(itertools.chain.from_iterable(parts))


def gillespie(chain: Chain, init, config: SimConfig) -> list:
    """Simulate ``config.paths`` independent paths.

    Parameters
    ----------
    init : int or Measure
        Starting state index, or an initial law sampled with the path's own
        stream.

    Returns
    -------
    list
        :class:`Trajectory` objects for ``record="full"``; arrays of state
        indices at ``config.times`` for ``record="sampled"``.
    """
    if config.record == "sampled":
        times = np.asarray(config.times, dtype=float)
        if np.any(times > config.horizon) or np.any(times < 0):
            raise TimesBeyondHorizon("sampling times must lie in [0, horizon]")
    return _dispatch(chain, init, config)


def sample_states(chain: Chain, init, times: Sequence[float], paths: int, seed: int,
                  workers: int = 1) -> np.ndarray:
    """States at ``times`` for each path, as a ``(paths, len(times))`` array."""
    times = tuple(float(t) for t in times)
    cfg = SimConfig(seed, paths, max(times) if max(times) > 0 else 1.0, "sampled", times, workers)
    return np.vstack(gillespie(chain, init, cfg))


def _as_state_matrix(paths, times):
    if isinstance(paths, np.ndarray):
        return paths
    rows = []
    for p in paths:
        if np.any(np.asarray(times) > p.horizon):
            raise TimesBeyondHorizon("requested time beyond the path horizon")
        rows.append(p.states_at(times))
    return np.asarray(rows, dtype=np.int64)


def empirical_fdd(paths, partition, times: Sequence[float]) -> dict:
    """Empirical joint law of the well labels at ``times``.

    Parameters
    ----------
    paths : list of Trajectory, or array of sampled states
        In the array form column ``j`` holds the states at ``times[j]``.
    partition : Partition
    times : sequence of float

    Returns
    -------
    dict
        Maps each label tuple (labels ``0..n``, 0 for the separating set) to
        an :class:`Estimate` with a binomial standard error.  The counts sum
        to the number of paths.
    """
    times = [float(t) for t in times]
    states = _as_state_matrix(paths, times)
    if states.ndim != 2 or states.shape[1] != len(times):
        raise ValueError("sampled states do not match the requested times")
    labels = partition.labels[states]
    n = labels.shape[0]
    nlab = partition.n_wells + 1
    codes = np.zeros(n, dtype=np.int64)
    for j in range(len(times)):
        codes = codes * nlab + labels[:, j]
    counts = np.bincount(codes, minlength=nlab ** len(times))
    out = {}
    for code, key in enumerate(itertools.product(range(nlab), repeat=len(times))):
        c = int(counts[code])
        p = c / n
        out[key] = Estimate(p, math.sqrt(p * (1 - p) / n), n, c)
    return out


@dataclass(frozen=True)
class ExitLaw:
    """Exit times from a well measured on the trace clock and the wall clock.

    ``ks_distance`` is ``sup_u |F_n(u) - (1 - e^{-u})|`` for the exit times
    divided by their mean, and ``ks_critical`` the 5% Kolmogorov level
    ``1.36 / sqrt(n)``.
    """

    mean_trace_time: Estimate
    mean_wall_time: Estimate
    ks_distance: float
    ks_critical: float
    exit_times: np.ndarray
    censored: int

    def cdf(self, u: float) -> float:
        return float(np.searchsorted(self.exit_times, u, side="right") / self.exit_times.size)

    def to_dict(self) -> dict:
        return {"mean_trace_time": self.mean_trace_time.to_dict(),
                "mean_wall_time": self.mean_wall_time.to_dict(),
                "ks_distance": self.ks_distance, "ks_critical": self.ks_critical,
                "exits": int(self.exit_times.size), "censored": self.censored}


def _mean_estimate(x: np.ndarray) -> Estimate:
    n = x.size
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return Estimate(float(x.mean()), se, n)


def empirical_exit_law(paths: Iterable[Trajectory], partition, well: int) -> ExitLaw:
    """Exit-time law from ``well`` into another well.

    The trace clock counts only time spent in the wells, as in the trace
    process on their union; the wall clock is the first hitting time of
    another well.  Paths that never exit are counted as censored.

    Raises
    ------
    NoExitsObserved
        When no path leaves the well before its horizon.
    """
    union = set(partition.union.tolist())
    labels = partition.labels
    trace_t, wall_t = [], []
    censored = 0
    for p in paths:
        if labels[p.records[0][0]] != well:
            raise ValueError("every path must start inside the well")
        wall = next((a for s, a, _ in p.records
                     if labels[s] != 0 and labels[s] != well), None)
        tr = trace_surgery(p, union)
        tr_exit = next((a for s, a, _ in tr.records if labels[s] != well), None)
        if wall is None:
            censored += 1
            continue
        wall_t.append(wall)
        trace_t.append(tr_exit)
    if not trace_t:
        raise NoExitsObserved("no path left the well before the horizon")
    x = np.sort(np.asarray(trace_t, dtype=float))
    n = x.size
    u = x / x.mean()
    f = 1.0 - np.exp(-u)
    i = np.arange(1, n + 1)
    ks = float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))
    return ExitLaw(_mean_estimate(x), _mean_estimate(np.asarray(wall_t, float)),
                   ks, 1.36 / math.sqrt(n), x, censored)


def occupation_fraction(paths: Iterable[Trajectory], A) -> Estimate:
    """Fraction of time spent in ``A``, averaged over paths."""
    keep = set(A)
    fr = []
    for p in paths:
        inside = sum(b - a for s, a, b in p.records if s in keep)
        fr.append(inside / p.horizon)
    return _mean_estimate(np.asarray(fr, dtype=float))
