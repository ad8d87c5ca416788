"""Maximum-weight bipartite matching (Kuhn-Munkres)."""

from __future__ import annotations

import math

import numpy as np


def _hungarian_min(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix.

    Shortest-augmenting-path form with row/column potentials, O(n^3).
    Returns ``col_of_row``.
    """
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            used_idx = np.nonzero(used)[0]
            u[p[used_idx]] += delta
            v[used_idx] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row


def max_weight_matching(weights) -> list:
    """All (row, col) pairs of a maximum-weight matching.

    Negative weights are never worth taking; they are treated as "leave
    unmatched" by clipping to zero, and zero-weight pairs are dropped.
    """
    W = np.asarray(weights, dtype=float)
    if W.ndim != 2:
        raise ValueError("weights must be a 2-D matrix")
    n_rows, n_cols = W.shape
    if n_rows == 0 or n_cols == 0:
        return []
    if not np.all(np.isfinite(W)):
        raise ValueError("weights must be finite")
    n = max(n_rows, n_cols)
    padded = np.zeros((n, n))
    padded[:n_rows, :n_cols] = np.clip(W, 0.0, None)
    col_of_row = _hungarian_min(padded.max() - padded)
    return [(r, int(c)) for r, c in enumerate(col_of_row[:n_rows]) if c < n_cols and padded[r, c] > 0.0]


def assign(aff, min_overlap: float = 0.3) -> list:
    """Solve the association problem on an affinity matrix.

    ``aff`` may be an :class:`AffinityMatrix` or a plain 2-D array. The
    maximum-weight matching is computed first; pairs below ``min_overlap``
    are then discarded. Pairs are returned sorted by row.
    """
    W = getattr(aff, "values", aff)
    pairs = max_weight_matching(W)
    W = np.asarray(W, dtype=float)
    return sorted((r, c) for r, c in pairs if W[r, c] >= min_overlap)


def matching_weight(weights, pairs) -> float:
    """Total weight of ``pairs``, correctly rounded (independent of pair order)."""
    W = np.asarray(weights, dtype=float)
    return math.fsum(W[r, c] for r, c in pairs)
