"""Generators for four model families with metastable behaviour.

Each generator returns a :class:`ModelInstance` holding the speeded-up chain,
its partition into wells, the time scale, and the closed-form stationary
measure in log-space.  Unpacking an instance yields
``(chain, partition, theta)``.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .chain import Chain, Measure
from .errors import (
    NonSmoothBoundary,
    ParameterOutOfRange,
    SaddleNotFound,
    SpecParseError,
    StateSpaceTooLarge,
)
from .metastability import Partition

__all__ = [
    "ModelInstance",
    "ModelSpec",
    "compositions",
    "zero_range",
    "zero_range_g",
    "inclusion",
    "potential_walk",
    "singular_graph",
    "build_model",
    "FAMILIES",
]

MAX_STATES = 5_000_000


@dataclass
class ModelInstance:
    """A generated chain with its partition and bookkeeping.

    Attributes
    ----------
    chain : Chain
        Already speeded up by ``theta``.
    partition : Partition
    theta : float
    log_measure : ndarray
        Normalized log stationary weights from the closed-form expression.
    family : str
    params : dict
    info : dict
        Family-specific diagnostics (for example ``log_Z``).
    """

    chain: Chain
    partition: Partition
    theta: float
    log_measure: np.ndarray
    family: str
    params: dict
    info: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.chain, self.partition, self.theta))

    def __getitem__(self, k):
        return (self.chain, self.partition, self.theta)[k]

    @property
    def measure(self) -> Measure:
        return Measure(self.chain.states, np.exp(self.log_measure),
                       self.log_measure, True)


def _normalize_log(lw: np.ndarray):
    shift = lw.max()
    log_z = shift + math.log(np.exp(lw - shift).sum())
    return lw - log_z, log_z


# ---------------------------------------------------------------------------
# composition spaces


def compositions(N: int, L: int) -> list:
    """All ``L``-tuples of nonnegative integers summing to ``N``, in colex order.

    Colexicographic order compares the last coordinate first, so for
    ``L = 2`` the order is ``(N, 0), (N - 1, 1), ..., (0, N)``.
    """
    if L == 1:
        return [(N,)]
    out = []
    for last in range(N + 1):
        for head in compositions(N - last, L - 1):
            out.append(head + (last,))
    return out


def _composition_space(N, L):
    size = math.comb(N + L - 1, L - 1)
    if size > MAX_STATES:
        raise StateSpaceTooLarge(f"{size} configurations exceed the guard {MAX_STATES}")
    states = compositions(N, L)
    return states, np.array(states, dtype=np.int64).reshape(len(states), L)


def _particle_moves(states, arr, L, site_rate: Callable, directions):
    """Assemble a rate matrix for single-particle moves on the discrete torus.

    ``site_rate(eta_x, eta_y)`` gives the rate factor for moving one particle
    from ``x`` to ``y``; ``directions`` maps a displacement to its weight.
    Moves reaching the same target through different displacements (possible
    on small tori) are summed.
    """
    index = {s: i for i, s in enumerate(states)}
    rows, cols, vals = [], [], []
    n = len(states)
    for i in range(n):
        eta = arr[i]
        for x in range(L):
            if eta[x] == 0:
                continue
            for disp, wgt in directions:
                if wgt == 0:
                    continue
                y = (x + disp) % L
                if y == x:
                    continue
                r = wgt * site_rate(int(eta[x]), int(eta[y]))
                if r <= 0:
                    continue
                tgt = list(states[i])
                tgt[x] -= 1
                tgt[y] += 1
                rows.append(i)
                cols.append(index[tuple(tgt)])
                vals.append(r)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


# ---------------------------------------------------------------------------
# zero-range process


def zero_range_g(n, alpha: float):
    """Jump rate ``g(n) = a(n) / a(n - 1)`` with ``a(n) = n**alpha``, ``a(0) = 1``."""
    n = np.asarray(n, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(n >= 2, (n / np.maximum(n - 1, 1)) ** alpha, n)
    return g if g.ndim else float(g)


def zero_range(L: int, N: int, alpha: float, p: float = 0.5,
               ell: int | None = None) -> ModelInstance:
    """Condensing zero-range process on the discrete torus with ``L`` sites.

    Parameters
    ----------
    L, N : int
        Sites and particles.
    alpha : float
        Exponent of ``a(n) = n**alpha``.  Values ``alpha <= 1`` are accepted
        with a warning (outside the condensing regime).
    p : float
        Probability of a clockwise jump, in ``[1/2, 1]``.
    ell : int, optional
        Well depth: ``E^x = {eta_x >= N - ell}``.  Default ``max(1, N // 4)``.

    Returns
    -------
    ModelInstance
        Chain speeded up by ``theta = N**(1 + alpha)``; bottoms are the
        configurations with every particle on one site.
    """
    if L < 2 or N < 1:
        raise ParameterOutOfRange("need L >= 2 and N >= 1")
    if not 0.5 <= p <= 1:
        raise ParameterOutOfRange("p must lie in [1/2, 1]")
    if not alpha > 0:
        raise ParameterOutOfRange("alpha must be positive")
    if alpha <= 1:
        warnings.warn("alpha <= 1 lies outside the condensing regime", RuntimeWarning,
                      stacklevel=2)
    if ell is None:
        ell = max(1, N // 4)
    if not (1 <= ell and 2 * ell < N):
        raise ParameterOutOfRange("ell must satisfy 1 <= ell < N / 2")
    states, arr = _composition_space(N, L)

    def rate(nx, ny):
        return zero_range_g(nx, alpha)

    base = _particle_moves(states, arr, L, rate, [(1, p), (-1, 1 - p)])
    theta = float(N) ** (1 + alpha)
    chain = Chain(states, base, theta)
    log_a = alpha * np.log(np.maximum(arr, 1))
    log_mu, log_z = _normalize_log(-log_a.sum(axis=1))
    wells = [np.flatnonzero(arr[:, x] >= N - ell) for x in range(L)]
    bottoms = [np.flatnonzero(arr[:, x] == N) for x in range(L)]
    part = Partition(wells, len(states), bottoms)
    return ModelInstance(chain, part, theta, log_mu, "zero_range",
                         {"L": L, "N": N, "alpha": alpha, "p": p, "ell": ell},
                         {"log_Z": float(log_z + alpha * math.log(N))})


# ---------------------------------------------------------------------------
# inclusion process


def inclusion(L: int, N: int, d_N: float | None = None) -> ModelInstance:
    """Reversible inclusion process with rates ``eta_x (d_N + eta_y)``.

    Parameters
    ----------
    d_N : float, optional
        Defaults to ``1 / log(N)**2`` (``N >= 2``).

    Returns
    -------
    ModelInstance
        Chain speeded up by ``theta = 1 / d_N``, singleton wells at the
        configurations with all particles on one site.
    """
    if L < 2 or N < 1:
        raise ParameterOutOfRange("need L >= 2 and N >= 1")
    if d_N is None:
        if N < 2:
            raise ParameterOutOfRange("default d_N = 1/log(N)^2 needs N >= 2")
        d_N = 1.0 / math.log(N) ** 2
    if not d_N > 0:
        raise ParameterOutOfRange("d_N must be positive")
    if N >= 2 and d_N * math.log(N) > 1:
        warnings.warn("d_N log N is not small; wells may not be metastable",
                      RuntimeWarning, stacklevel=2)
    states, arr = _composition_space(N, L)

    def rate(nx, ny):
        return nx * (d_N + ny)

    base = _particle_moves(states, arr, L, rate, [(1, 1.0), (-1, 1.0)])
    theta = 1.0 / d_N
    chain = Chain(states, base, theta)
    # log w(k) = log Gamma(k + d) - log k! - log Gamma(d)
    log_w = gammaln(arr + d_N) - gammaln(arr + 1.0) - gammaln(d_N)
    log_mu, log_z = _normalize_log(log_w.sum(axis=1))
    wells = [np.flatnonzero(arr[:, x] == N) for x in range(L)]
    part = Partition(wells, len(states), wells)
    return ModelInstance(chain, part, theta, log_mu, "inclusion",
                         {"L": L, "N": N, "d_N": d_N}, {"log_Z": float(log_z)})


# ---------------------------------------------------------------------------
# random walk in a potential field


def _hessian_det(F, x, h=1e-4):
    x = np.asarray(x, dtype=float)
    d = x.size
    hess = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            ei = np.eye(d)[i] * h
            ej = np.eye(d)[j] * h
            hess[i, j] = (F(x + ei + ej) - F(x + ei - ej) - F(x - ei + ej) + F(x - ei - ej)) / (4 * h * h)
    return float(np.linalg.det(hess))


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)
        return ra != rb


def potential_walk(F: Callable, N: int, kappa: float, box: Sequence, *,
                   minima: Sequence | None = None, check_boundary: bool = True,
                   depth_tol: float = 1e-8) -> ModelInstance:
    """Reversible nearest-neighbour walk on ``box`` intersected with the lattice
    ``Z^d / N`` with stationary weights ``exp(-N F)``.

    Parameters
    ----------
    F : callable
        Maps a point (1-d array of length ``d``) to a float.
    N : int
        Inverse lattice spacing.
    kappa : float
        Well radius around each minimum.
    box : sequence of (low, high)
        Open box standing for the domain; lattice points strictly inside are
        kept.
    minima : sequence of points, optional
        Declared minima; by default the two strict discrete local minima are
        detected.
    check_boundary : bool
        Require ``F`` to increase towards the boundary of the box.

    Returns
    -------
    ModelInstance
        States are integer tuples ``k`` standing for the points ``k / N``.
        ``info`` holds ``h``, ``H``, the saddle, ``log_Z`` and the ratio of
        ``Z e^{N h} / (2 pi N)^{d/2}`` to the Hessian sum.
    """
    box = [tuple(map(float, b)) for b in box]
    d = len(box)
    ranges = []
    for lo, hi in box:
        k_lo = math.floor(lo * N) + 1
        k_hi = math.ceil(hi * N) - 1
        if k_hi < k_lo:
            raise ParameterOutOfRange("box contains no lattice point")
        ranges.append(range(k_lo, k_hi + 1))
    shape = tuple(len(r) for r in ranges)
    n = int(np.prod(shape))
    if n > MAX_STATES:
        raise StateSpaceTooLarge(f"{n} lattice points exceed the guard {MAX_STATES}")
    states = list(itertools.product(*ranges))
    pts = np.array(states, dtype=float) / N
    f = np.array([F(p) for p in pts], dtype=float)
    grid = np.arange(n).reshape(shape)
    rows, cols = [], []
    for axis in range(d):
        a = np.take(grid, np.arange(shape[axis] - 1), axis=axis).ravel()
        b = np.take(grid, np.arange(1, shape[axis]), axis=axis).ravel()
        rows += [a, b]
        cols += [b, a]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.exp(-0.5 * N * (f[cols] - f[rows]))
    base = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    # neighbour lists for detection
    adj = sp.csr_matrix((np.ones_like(vals), (rows, cols)), shape=(n, n))
    if check_boundary:
        _check_boundary(f, grid, shape)
    if minima is None:
        mins = [i for i in range(n)
                if np.all(f[adj.indices[adj.indptr[i]:adj.indptr[i + 1]]] > f[i])]
        if len(mins) != 2:
            raise SaddleNotFound(f"expected two strict local minima, found {len(mins)}")
        min_pts = [pts[i] for i in mins]
    else:
        min_pts = [np.asarray(m, dtype=float).reshape(d) for m in minima]
        if len(min_pts) != 2:
            raise ParameterOutOfRange("exactly two minima must be declared")
        mins = [int(np.argmin(np.sum((pts - m) ** 2, axis=1))) for m in min_pts]
    depths = [float(F(m)) for m in min_pts]
    if abs(depths[0] - depths[1]) > depth_tol:
        warnings.warn("the two minima have different depths", RuntimeWarning, stacklevel=2)
    h = min(depths)
    # lowest level at which the two minima are connected
    uf = _UnionFind(n)
    active = np.zeros(n, dtype=bool)
    saddle = None
    for i in np.argsort(f, kind="stable"):
        active[i] = True
        for j in adj.indices[adj.indptr[i]:adj.indptr[i + 1]]:
            if active[j]:
                uf.union(i, j)
        if uf.find(mins[0]) == uf.find(mins[1]):
            saddle = int(i)
            break
    if saddle is None:
        raise SaddleNotFound("the minima are not connected")
    H = float(f[saddle])
    theta = 2 * math.pi * N * math.exp((H - h) * N)
    chain = Chain(tuple(states), base, theta)
    log_mu, log_z = _normalize_log(-N * f)
    wells = [np.flatnonzero(np.sqrt(np.sum((pts - m) ** 2, axis=1)) <= kappa) for m in min_pts]
    for w in wells:
        if f[w].max() >= H:
            warnings.warn("kappa too large: a well reaches the saddle height",
                          RuntimeWarning, stacklevel=2)
    part = Partition(wells, n, [[i] for i in mins])
    dets = [_hessian_det(F, m) for m in min_pts]
    # degenerate minima (flat potential) have no Gaussian approximation
    hess_sum = sum(v ** -0.5 for v in dets) if min(dets) > 0 else math.nan
    scaled_z = math.exp(log_z + N * h - 0.5 * d * math.log(2 * math.pi * N))
    info = {"h": h, "H": H, "saddle": states[saddle], "log_Z": float(log_z),
            "scaled_Z": scaled_z, "hessian_sum": hess_sum,
            "scaled_Z_ratio": scaled_z / hess_sum, "minima": [states[i] for i in mins]}
    return ModelInstance(chain, part, theta, log_mu, "potential_walk",
                         {"N": N, "kappa": kappa, "box": box}, info)


def _check_boundary(f, grid, shape):
    """Every lattice point next to the box boundary must lie above its inner
    neighbour in the direction normal to that boundary."""
    for axis, size in enumerate(shape):
        if size < 2:
            continue
        for edge, inner in ((0, 1), (size - 1, size - 2)):
            e = np.take(grid, edge, axis=axis).ravel()
            i = np.take(grid, inner, axis=axis).ravel()
            if np.any(f[e] <= f[i]):
                raise NonSmoothBoundary(
                    "F does not increase towards the boundary of the box")


# ---------------------------------------------------------------------------
# random walk on four cubes glued at corners


def singular_graph(N: int, d: int = 2, ell: int | None = None, M: int | None = None,
                   *, compute_theta: bool = True) -> ModelInstance:
    """Walk on four ``d``-dimensional cubes of side ``N`` glued at single corners.

    The cubes are ``Q^i = w_i + I^2 x I^{d-2}`` for ``i = 0, 2`` and
    ``Q^i = w_i + I^2 x (-I)^{d-2}`` for ``i = 1, 3`` with ``I = {0..N}`` and
    ``w_0 = (0, N)``, ``w_1 = (N, 0)``, ``w_2 = (0, -N)``, ``w_3 = (-N, 0)``
    (padded with zeros).  A jump to ``eta +- e_j`` has rate 1 when
    ``eta -+ e_j`` is in the graph and rate 2 otherwise.

    Parameters
    ----------
    ell : int, optional
        Radius of the separating set around the four shared corners.
        Default ``max(1, N // 8)``.
    M : int, optional
        Margin of the bottom cubes ``w_x + J^2 x (+-J)^{d-2}`` with
        ``J = {M..N-M}``.  Default ``max(ell + 1, N // 4)``.
    compute_theta : bool
        The time scale is the inverse spectral gap of the unscaled walk; set
        to false to skip that eigenvalue computation (theta is then 1).

    Notes
    -----
    Well ``x + 1`` of the partition is ``Q^x`` minus the separating set.
    """
    if d < 2 or N < 4:
        raise ParameterOutOfRange("need d >= 2 and N >= 4")
    if ell is None:
        ell = max(1, N // 8)
    if M is None:
        M = max(ell + 1, N // 4)
    if not (1 <= ell and 2 * M <= N):
        raise ParameterOutOfRange("need ell >= 1 and 2 M <= N")
    if not ell < M:
        warnings.warn("ell >= M: bottoms may touch the separating set", RuntimeWarning,
                      stacklevel=2)
    size = 4 * (N + 1) ** d
    if size > MAX_STATES:
        raise StateSpaceTooLarge(f"{size} vertices exceed the guard {MAX_STATES}")
    zeros = (0,) * (d - 2)
    shifts = [(0, N) + zeros, (N, 0) + zeros, (0, -N) + zeros, (-N, 0) + zeros]
    rng = range(N + 1)
    cube_pts = []
    for i, w in enumerate(shifts):
        sign = 1 if i in (0, 2) else -1
        pts = []
        for c in itertools.product(rng, repeat=d):
            p = tuple(w[k] + (c[k] if k < 2 else sign * c[k]) for k in range(d))
            pts.append(p)
        cube_pts.append(pts)
    states, index, cube_of = [], {}, {}
    for i, pts in enumerate(cube_pts):
        for p in pts:
            if p not in index:
                index[p] = len(states)
                states.append(p)
                cube_of[p] = {i}
            else:
                cube_of[p].add(i)
    n = len(states)
    corners = [index[p] for p in states if len(cube_of[p]) > 1]
    rows, cols, vals = [], [], []
    n_out = np.zeros(n, dtype=int)
    for a, p in enumerate(states):
        for j in range(d):
            for s in (1, -1):
                q = list(p)
                q[j] += s
                q = tuple(q)
                if q not in index:
                    n_out[a] += 1
                    continue
                opp = list(p)
                opp[j] -= s
                rate = 1.0 if tuple(opp) in index else 2.0
                rows.append(a)
                cols.append(index[q])
                vals.append(rate)
    base = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    log_w = -np.log(2.0) * n_out.astype(float)
    log_w[corners] = -np.log(2.0) * (d - 1)
    log_mu, log_z = _normalize_log(log_w)
    # graph distance to the corners by breadth-first search
    from scipy.sparse.csgraph import shortest_path

    dist = shortest_path(base, method="D", unweighted=True, indices=corners).min(axis=0)
    in_delta = dist <= ell
    wells, bottoms = [], []
    J = range(M, N - M + 1)
    delta_set = set(np.flatnonzero(in_delta).tolist())
    for i, (w, pts) in enumerate(zip(shifts, cube_pts)):
        wells.append(np.array(sorted({index[p] for p in pts} - delta_set), dtype=np.intp))
        # (-1)^i is also the sign used to build cube i in the extra dimensions
        bsign = (-1) ** i
        bpts = [tuple(w[k] + (c[k] if k < 2 else bsign * c[k]) for k in range(d))
                for c in itertools.product(J, repeat=d)]
        bottoms.append(np.array(sorted(index[p] for p in bpts), dtype=np.intp))
    theta = 1.0
    unscaled = Chain(tuple(states), base, 1.0)
    info = {"log_Z": float(log_z), "corners": corners, "n_out": n_out.tolist()}
    if compute_theta:
        from .potential import spectral_gap

        gap = spectral_gap(unscaled, mu=np.exp(log_mu)).gap
        theta = 1.0 / gap
    chain = Chain(tuple(states), base, theta)
    part = Partition(wells, n, bottoms)
    return ModelInstance(chain, part, theta, log_mu, "singular_graph",
                         {"N": N, "d": d, "ell": ell, "M": M}, info)


# ---------------------------------------------------------------------------
# specs


def _double_well(x):
    x = np.asarray(x, dtype=float)
    return float(np.sum((x ** 2 - 1) ** 2))


#: Named potentials usable from configuration files.
POTENTIALS = {"double_well": _double_well}

FAMILIES = ("zero_range", "inclusion", "potential_walk", "singular_graph")


@dataclass
class ModelSpec:
    """Model family plus parameters, as read from TOML or JSON."""

    family: str
    params: dict

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        doc = dict(doc)
        if "model" in doc and isinstance(doc["model"], dict):
            doc = dict(doc["model"])
        family = doc.pop("family", None)
        if family not in FAMILIES:
            raise SpecParseError(f"unknown or missing model family {family!r}")
        params = doc.pop("parameters", None)
        if params is None:
            params = doc
        return cls(family, dict(params))

    @classmethod
    def from_text(cls, text: str, fmt: str = "toml") -> "ModelSpec":
        if fmt == "json":
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SpecParseError(f"line {exc.lineno}: {exc.msg}") from exc
        else:
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            try:
                doc = tomllib.loads(text)
            except tomllib.TOMLDecodeError as exc:
                raise SpecParseError(str(exc)) from exc
        return cls.from_dict(doc)

    @classmethod
    def from_file(cls, path) -> "ModelSpec":
        with open(path) as fh:
            text = fh.read()
        fmt = "json" if str(path).endswith(".json") else "toml"
        return cls.from_text(text, fmt)

    def with_params(self, **changes) -> "ModelSpec":
        return ModelSpec(self.family, {**self.params, **changes})

    def to_dict(self) -> dict:
        return {"family": self.family, "parameters": dict(self.params)}


def build_model(spec: ModelSpec) -> ModelInstance:
    """Instantiate a :class:`ModelSpec`.

    For ``potential_walk`` the parameter ``potential`` names an entry of
    :data:`POTENTIALS` (default ``"double_well"``).
    """
    try:
        return _build(spec.family, dict(spec.params))
    except KeyError as exc:
        raise SpecParseError(f"missing parameter {exc.args[0]!r} for {spec.family}") from None


def _build(family: str, p: dict) -> ModelInstance:
    if family == "zero_range":
        return zero_range(int(p["L"]), int(p["N"]), float(p.get("alpha", 2.0)),
                          float(p.get("p", 0.5)), p.get("ell"))
    if family == "inclusion":
        return inclusion(int(p["L"]), int(p["N"]), p.get("d_N"))
    if family == "potential_walk":
        name = p.get("potential", "double_well")
        if name not in POTENTIALS:
            raise SpecParseError(f"unknown potential {name!r}")
        return potential_walk(POTENTIALS[name], int(p["N"]), float(p.get("kappa", 0.5)),
                              p["box"], minima=p.get("minima"),
                              check_boundary=bool(p.get("check_boundary", True)))
    if family == "singular_graph":
        return singular_graph(int(p["N"]), int(p.get("d", 2)), p.get("ell"), p.get("M"))
    raise SpecParseError(f"unknown model family {family!r}")


class SpecBuilder:
    """Picklable ``N -> ModelInstance`` factory for sweeps."""

    def __init__(self, spec: ModelSpec, derived: Callable | None = None):
        self.spec = spec
        self.derived = derived

    def __call__(self, N: int) -> ModelInstance:
        params = {"N": N}
        if self.derived is not None:
            params.update(self.derived(N))
        return build_model(self.spec.with_params(**params))
