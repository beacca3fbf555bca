"""Minimum-cost bipartite assignment (Kuhn-Munkres with potentials)."""

from __future__ import annotations

import numpy as np


def linear_assignment(cost: np.ndarray) -> np.ndarray:
    """Optimal assignment for an ``n x m`` cost matrix with ``n <= m``.

    Returns ``cols`` with ``cols[i]`` the column given to row ``i``; the
    columns are distinct and ``sum(cost[i, cols[i]])`` is minimal.  Runs
    the shortest-augmenting-path form of the Hungarian method, O(n^2 m).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    n, m = cost.shape
    if n > m:
        raise ValueError(f"more rows ({n}) than columns ({m})")
    if n == 0:
        return np.zeros(0, dtype=np.intp)
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")

    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.intp)  # owner[j]: row (1-based) holding column j, 0 = free
    way = np.zeros(m + 1, dtype=np.intp)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            used_idx = np.nonzero(used)[0]
            u[owner[used_idx]] += delta
            v[used_idx] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    cols = np.empty(n, dtype=np.intp)
    for j in range(1, m + 1):
        if owner[j]:
            cols[owner[j] - 1] = j - 1
    return cols


def hungarian_match(cost: np.ndarray) -> np.ndarray:
    """Assign each ground-truth column of a ``queries x G`` cost matrix to a
    distinct query; returns ``query_of_gt`` (length ``G``)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be queries x G")
    nq, g = cost.shape
    if g > nq:
        raise ValueError(f"{g} ground-truth masks but only {nq} queries")
    return linear_assignment(cost.T)


def assignment_cost(cost: np.ndarray, query_of_gt: np.ndarray) -> float:
    """Total cost, summed in ground-truth order."""
    total = 0.0
    for g, q in enumerate(query_of_gt):
        total += float(cost[q, g])
    return total
