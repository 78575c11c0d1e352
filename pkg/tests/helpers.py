"""Random chain generators shared by the test modules."""

from __future__ import annotations

import numpy as np

from metastab.chain import build_chain


def _connected_edges(rng, n, extra_p):
    """Spanning-tree edges plus random extra pairs, as a set of (i, j) with i < j."""
    perm = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        a, b = int(perm[k]), int(perm[rng.integers(k)])
        edges.add((min(a, b), max(a, b)))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < extra_p:
                edges.add((i, j))
    return sorted(edges)


def random_chain(rng, n, *, reversible=False, extra_p=0.35, log_spread=2.0):
    """Random irreducible chain on ``range(n)``.

    Reversible chains use ``R(i, j) = c_ij / pi_i`` with symmetric
    conductances ``c`` and random ``pi``; otherwise both directions of each
    edge get independent log-uniform rates.
    """
    edges = _connected_edges(rng, n, extra_p)
    entries = []
    if reversible:
        pi = np.exp(rng.uniform(-log_spread, log_spread, n))
        for i, j in edges:
            c = float(np.exp(rng.uniform(-log_spread, log_spread)))
            entries += [(i, j, c / pi[i]), (j, i, c / pi[j])]
    else:
        for i, j in edges:
            entries += [(i, j, float(np.exp(rng.uniform(-log_spread, log_spread)))),
                        (j, i, float(np.exp(rng.uniform(-log_spread, log_spread))))]
    return build_chain(list(range(n)), entries)
