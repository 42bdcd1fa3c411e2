"""Exact k-nearest-neighbour search with deterministic tie-breaking.

Brute force in row blocks.  Neighbours are ordered by distance and then by
sample index, and a point is never its own neighbour.  The O(n^2) cost is in
line with the pairwise work the bandwidth selectors already do.
"""
from __future__ import annotations

import numpy as np

from .kde import as_sample

_WORK_ELEMENTS = 1 << 23


def _order_row(d2_row: np.ndarray, k: int) -> np.ndarray:
    return np.argsort(d2_row, kind="stable")[:k]


def knn(sample, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and Euclidean distances of the ``k`` nearest other points.

    Returns
    -------
    idx : ndarray of int, shape (n, k)
    dist : ndarray, shape (n, k)
        Non-decreasing along each row.
    """
    X = as_sample(sample)
    n, d = X.shape
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n for neighbour search, got k={k}, n={n}")
    idx = np.empty((n, k), dtype=np.int64)
    d2 = np.empty((n, k))
    step = max(1, _WORK_ELEMENTS // (n * d))
    for s in range(0, n, step):
        e = min(n, s + step)
        diff = X[s:e, None, :] - X[None, :, :]
        D = np.einsum("ijk,ijk->ij", diff, diff)
        rows = np.arange(e - s)
        D[rows, rows + s] = np.inf
        part = np.argpartition(D, k - 1, axis=1)[:, :k]
        pd = np.take_along_axis(D, part, axis=1)
        # lexsort: last key is primary -> distance, then index
        order = np.lexsort((part, pd), axis=1)
        cand = np.take_along_axis(part, order, axis=1)
        cd = np.take_along_axis(pd, order, axis=1)
        # rows where points outside the candidate set tie with the k-th distance
        kth = cd[:, -1]
        n_le = np.sum(D <= kth[:, None], axis=1)
        for r in np.flatnonzero(n_le > k):
            cand[r] = _order_row(D[r], k)
            cd[r] = D[r, cand[r]]
        idx[s:e] = cand
        d2[s:e] = cd
    return idx, np.sqrt(d2)


def neighborhoods(sample, k: int) -> np.ndarray:
    """Translated neighbour coordinates ``X_j - X_i`` for every ``i``, shape ``(n, k, d)``."""
    X = as_sample(sample)
    idx, _ = knn(X, k)
    return X[idx] - X[:, None, :]
