"""Sample-point adaptive Gaussian KDE.

    f(x) = (1/n) * sum_i K_{H_i}(x - X_i)

with one bandwidth factor per sample point.  Everything is evaluated in the
log domain; kernel weights for the score are normalised by subtracting the
per-query log-sum-exp.
"""
from __future__ import annotations

import math
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import DimensionMismatchError, NonFiniteError
from .linalg import (
    DIAG_FLOOR,
    LOG_2PI,
    BandwidthFactor,
    backward_substitute_t,
    forward_substitute,
    log_sum_exp,
    stack_factors,
)

DEFAULT_CHUNK_SIZE = 1024
# upper bound on the (chunk, n, d) work arrays, in float64 elements
_MAX_WORK_ELEMENTS = 1 << 23


@runtime_checkable
class DensityModel(Protocol):
    """Anything with a log-density and its gradient (the score)."""

    dim: int

    def log_density(self, x): ...

    def score(self, x): ...


def as_sample(sample) -> np.ndarray:
    """Validate an ``(n, d)`` sample matrix and return it as float64."""
    X = np.asarray(sample, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise DimensionMismatchError(f"sample must be a non-empty (n, d) matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("sample contains non-finite entries")
    return X


def as_queries(x, dim: int) -> tuple[np.ndarray, bool]:
    """Coerce query points to ``(m, dim)``; report whether input was a single vector.

    A 1-D input of length ``dim`` is one point; for ``dim == 1`` any other
    1-D input is read as ``m`` scalar queries.
    """
    q = np.asarray(x, dtype=np.float64)
    single = q.ndim == 0 or (q.ndim == 1 and q.shape[0] == dim)
    if q.ndim == 0:
        q = q.reshape(1, 1)
    elif q.ndim == 1:
        q = q.reshape(1, -1) if single else q.reshape(-1, 1)
    if q.ndim != 2 or q.shape[1] != dim:
        raise DimensionMismatchError(f"query of shape {np.shape(x)} does not match dimension {dim}")
    if not np.all(np.isfinite(q)):
        raise NonFiniteError("query contains non-finite entries")
    return q, single


def validate_factor_array(factors) -> np.ndarray:
    """Check an ``(n, d, d)`` stack of lower-triangular factors; apply the diagonal floor."""
    L = np.tril(np.asarray(factors, dtype=np.float64))
    if L.ndim != 3 or L.shape[1] != L.shape[2]:
        raise DimensionMismatchError(f"factor array must be (n, d, d), got {L.shape}")
    if not np.all(np.isfinite(L)):
        raise NonFiniteError("bandwidth factors contain non-finite entries")
    diag = np.diagonal(L, axis1=1, axis2=2)
    if np.any(diag <= 0.0):
        raise ValueError("bandwidth factor diagonals must be positive")
    idx = np.arange(L.shape[1])
    L[:, idx, idx] = np.maximum(diag, DIAG_FLOOR)
    return L


def _chunks(m: int, n: int, d: int, chunk_size: int):
    step = max(1, min(chunk_size, _MAX_WORK_ELEMENTS // max(1, n * d)))
    for start in range(0, m, step):
        yield slice(start, min(m, start + step))


class SamplePointKde:
    """Gaussian KDE with a per-point bandwidth ``H_i = L_i L_i^T``.

    Parameters
    ----------
    sample : array_like, shape (n, d)
    factors : sequence of BandwidthFactor, or array of shape (n, d, d)
        Lower-triangular factors aligned with the rows of ``sample``.
    chunk_size : int
        Number of query points evaluated per block.
    """

    def __init__(self, sample, factors, chunk_size: int = DEFAULT_CHUNK_SIZE):
        X = as_sample(sample).copy()
        n, d = X.shape
        if isinstance(factors, np.ndarray):
            L = validate_factor_array(factors)
        else:
            factors = list(factors)
            L = stack_factors(factors)
        if L.shape != (n, d, d):
            raise DimensionMismatchError(
                f"{L.shape[0]} factors of dimension {L.shape[1]} for a sample of shape {X.shape}"
            )
        X.setflags(write=False)
        L.setflags(write=False)
        self._X = X
        self._L = L
        self._half_logdet = np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        self.chunk_size = int(chunk_size)

    @classmethod
    def with_global_factor(cls, sample, factor: BandwidthFactor, **kw) -> "SamplePointKde":
        X = as_sample(sample)
        return cls(X, [factor] * X.shape[0], **kw)

    @property
    def n(self) -> int:
        return self._X.shape[0]

    @property
    def dim(self) -> int:
        return self._X.shape[1]

    @property
    def sample(self) -> np.ndarray:
        return self._X

    @property
    def factor_array(self) -> np.ndarray:
        return self._L

    def factor(self, i: int) -> BandwidthFactor:
        return BandwidthFactor(self._L[i])

    @property
    def factors(self) -> list[BandwidthFactor]:
        return [BandwidthFactor(m) for m in self._L]

    def scaled(self, gamma: float) -> "SamplePointKde":
        """Estimator with every ``H_i`` replaced by ``gamma * H_i``."""
        if not gamma > 0:
            raise ValueError(f"scale must be positive, got {gamma}")
        return SamplePointKde(self._X, math.sqrt(gamma) * self._L, chunk_size=self.chunk_size)

    def _solve(self, q: np.ndarray):
        z = q[:, None, :] - self._X[None, :, :]
        u = forward_substitute(self._L[None], z)
        logk = -0.5 * self.dim * LOG_2PI - self._half_logdet[None, :] - 0.5 * np.sum(u * u, axis=-1)
        return logk, u

    def log_kernels(self, x) -> np.ndarray:
        """``log K_{H_i}(x_j - X_i)`` as an ``(m, n)`` matrix."""
        q, _ = as_queries(x, self.dim)
        return self._solve(q)[0]

    def log_density(self, x):
        q, single = as_queries(x, self.dim)
        out = np.empty(q.shape[0])
        log_n = math.log(self.n)
        for sl in _chunks(q.shape[0], self.n, self.dim, self.chunk_size):
            logk, _ = self._solve(q[sl])
            out[sl] = log_sum_exp(logk, axis=1) - log_n
        return float(out[0]) if single else out

    def score(self, x):
        q, single = as_queries(x, self.dim)
        out = np.empty_like(q)
        for sl in _chunks(q.shape[0], self.n, self.dim, self.chunk_size):
            logk, u = self._solve(q[sl])
            w = np.exp(logk - log_sum_exp(logk, axis=1)[:, None])
            # H_i^{-1} (x - X_i); the score is minus its weighted mean
            v = backward_substitute_t(self._L[None], u)
            out[sl] = -np.einsum("mn,mnd->md", w, v)
        return out[0] if single else out

    def loo_log_density(self, i: int) -> float:
        """Log density at ``X_i`` under the other ``n - 1`` kernels."""
        if self.n < 2:
            raise ValueError("leave-one-out density needs at least two sample points")
        if not 0 <= i < self.n:
            raise IndexError(f"sample index {i} out of range for n={self.n}")
        logk, _ = self._solve(self._X[i : i + 1])
        logk[0, i] = -np.inf
        return float(log_sum_exp(logk[0]) - math.log(self.n - 1))


def kde_log_density(model: SamplePointKde, x):
    return model.log_density(x)


def kde_score(model: SamplePointKde, x):
    return model.score(x)


def kde_loo_log_density(model: SamplePointKde, i: int) -> float:
    return model.loo_log_density(i)

