"""Self-excluding leave-one-out likelihood for sample-point Gaussian KDEs.

For base factors ``L_j`` and a variance scale ``gamma`` (``H_j -> gamma H_j``)
the objective is

    -(1/n) sum_i log[ 1/(n-1) sum_{j != i} K_{gamma H_j}(X_i - X_j) ].

The pairwise Mahalanobis distances ``||L_j^{-1}(X_i - X_j)||^2`` do not depend
on ``gamma``, so they are computed once (cached when they fit in memory) and
every objective evaluation afterwards is a single log-sum-exp pass.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import DimensionMismatchError
from .kde import as_sample, validate_factor_array
from .linalg import LOG_2PI, BandwidthFactor, forward_substitute

# cache the full n x n distance matrix up to this many entries (~270 MB)
CACHE_LIMIT = 1 << 25
_WORK_ELEMENTS = 1 << 23


class LooObjective:
    """Leave-one-out negative log-likelihood as a function of a global variance scale.

    Parameters
    ----------
    sample : array_like, shape (n, d)
    factors : BandwidthFactor, or array of shape (n, d, d)
        Either one shared factor or one factor per sample point.
    """

    def __init__(self, sample, factors, cache_limit: int = CACHE_LIMIT):
        X = as_sample(sample)
        n, d = X.shape
        if n < 2:
            raise ValueError("leave-one-out objective needs at least two sample points")
        self._X = X
        if isinstance(factors, BandwidthFactor):
            if factors.dim != d:
                raise DimensionMismatchError(f"factor of dimension {factors.dim} for d={d}")
            self._shared = factors.matrix
            self._L = None
            self._base_const = np.full(n, -0.5 * d * LOG_2PI - factors.half_log_det())
            # whitened coordinates: ||L^{-1}(X_i - X_j)|| = ||Y_i - Y_j||
            self._Y = forward_substitute(self._shared, X)
        else:
            L = validate_factor_array(factors)
            if L.shape != (n, d, d):
                raise DimensionMismatchError(f"factors of shape {L.shape} for a sample of shape {X.shape}")
            self._shared = None
            self._L = L
            self._base_const = -0.5 * d * LOG_2PI - np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        self._row_step = max(1, _WORK_ELEMENTS // (n * (d if self._shared is None else 1)))
        self._cache = None
        if n * n <= cache_limit:
            self._cache = np.concatenate([blk for _, blk in self._blocks()], axis=0)

    @property
    def n(self) -> int:
        return self._X.shape[0]

    @property
    def dim(self) -> int:
        return self._X.shape[1]

    def _blocks(self):
        X = self._X
        n = X.shape[0]
        for s in range(0, n, self._row_step):
            e = min(n, s + self._row_step)
            if self._shared is not None:
                diff = self._Y[s:e, None, :] - self._Y[None, :, :]
                m = np.einsum("ijk,ijk->ij", diff, diff)
            else:
                z = X[s:e, None, :] - X[None, :, :]
                u = forward_substitute(self._L[None], z)
                m = np.einsum("ijk,ijk->ij", u, u)
            yield s, m

    def mahalanobis_blocks(self):
        """Yield ``(row_start, M_block)`` with ``M[i, j] = ||L_j^{-1}(X_i - X_j)||^2``."""
        if self._cache is not None:
            yield 0, self._cache
        else:
            yield from self._blocks()

    def _row_lse(self, m: np.ndarray, row0: int, gamma: float, buf: np.ndarray) -> np.ndarray:
        """Per-row log-sum-exp over ``j != i`` of the log kernels at scale ``gamma``."""
        a = buf[: m.shape[0]]
        np.multiply(m, -0.5 / gamma, out=a)
        a += (self._base_const - 0.5 * self.dim * math.log(gamma))[None, :]
        r = np.arange(m.shape[0])
        a[r, r + row0] = -np.inf
        mx = a.max(axis=1)
        a -= mx[:, None]
        np.exp(a, out=a)
        return np.log(a.sum(axis=1)) + mx

    def values(self, gammas) -> np.ndarray:
        """Objective at each variance scale in ``gammas``."""
        g = np.atleast_1d(np.asarray(gammas, dtype=np.float64))
        if np.any(~(g > 0)) or not np.all(np.isfinite(g)):
            raise ValueError(f"variance scales must be positive and finite, got {g}")
        totals = np.zeros(g.size)
        buf = None
        for s, m in self.mahalanobis_blocks():
            if buf is None or buf.shape[0] < m.shape[0]:
                buf = np.empty_like(m)
            for k, gamma in enumerate(g):
                totals[k] += np.sum(self._row_lse(m, s, float(gamma), buf))
        return -(totals / self.n) + math.log(self.n - 1)

    def __call__(self, gamma: float) -> float:
        return float(self.values([gamma])[0])

    def per_point(self, gamma: float) -> np.ndarray:
        """Leave-one-out log density of every sample point at variance scale ``gamma``."""
        if not gamma > 0:
            raise ValueError(f"variance scale must be positive, got {gamma}")
        out = np.empty(self.n)
        for s, m in self.mahalanobis_blocks():
            out[s : s + m.shape[0]] = self._row_lse(m, s, float(gamma), np.empty_like(m))
        return out - math.log(self.n - 1)
