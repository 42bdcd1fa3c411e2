"""Bandwidth factors and log-domain Gaussian kernels.

A bandwidth matrix ``H`` is always handled through its lower-triangular
factor ``L`` (``H = L @ L.T``).  Solves go through triangular substitution;
nothing in here forms ``H^{-1}`` explicitly.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatchError, NonFiniteError

DIAG_FLOOR = 1e-8
LOG_2PI = math.log(2.0 * math.pi)


class BandwidthFactor:
    """Lower-triangular factor ``L`` of one SPD bandwidth matrix ``H = L L^T``.

    Diagonal entries must be positive; anything below ``DIAG_FLOOR`` is raised
    to the floor.  Instances are immutable.
    """

    __slots__ = ("_L",)

    def __init__(self, matrix):
        L = np.array(matrix, dtype=np.float64, copy=True)
        if L.ndim == 0:
            L = L.reshape(1, 1)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise DimensionMismatchError(f"bandwidth factor must be square, got shape {L.shape}")
        if not np.all(np.isfinite(L)):
            raise NonFiniteError("bandwidth factor has non-finite entries")
        L = np.tril(L)
        diag = np.diagonal(L)
        if np.any(diag <= 0.0):
            raise ValueError(f"bandwidth factor diagonal must be positive, got {diag}")
        idx = np.arange(L.shape[0])
        L[idx, idx] = np.maximum(diag, DIAG_FLOOR)
        L.setflags(write=False)
        self._L = L

    @classmethod
    def from_packed(cls, entries, dim: int) -> "BandwidthFactor":
        """Build from ``d(d+1)/2`` row-major packed lower-triangular entries."""
        entries = np.asarray(entries, dtype=np.float64).ravel()
        if entries.size != dim * (dim + 1) // 2:
            raise DimensionMismatchError(
                f"expected {dim * (dim + 1) // 2} packed entries for d={dim}, got {entries.size}"
            )
        L = np.zeros((dim, dim))
        L[np.tril_indices(dim)] = entries
        return cls(L)

    @classmethod
    def identity(cls, dim: int) -> "BandwidthFactor":
        return cls(np.eye(dim))

    @classmethod
    def diagonal(cls, values) -> "BandwidthFactor":
        return cls(np.diag(np.asarray(values, dtype=np.float64)))

    @property
    def dim(self) -> int:
        return self._L.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self._L

    @property
    def packed(self) -> np.ndarray:
        return self._L[np.tril_indices(self.dim)].copy()

    def covariance(self) -> np.ndarray:
        return self._L @ self._L.T

    def half_log_det(self) -> float:
        """``0.5 * log|H|``, i.e. the sum of log-diagonal entries of ``L``."""
        return float(np.sum(np.log(np.diagonal(self._L))))

    def scaled(self, c: float) -> "BandwidthFactor":
        """Factor of ``c**2 * H``."""
        return BandwidthFactor(c * self._L)

    def __eq__(self, other):
        if not isinstance(other, BandwidthFactor):
            return NotImplemented
        return np.array_equal(self._L, other._L)

    def __hash__(self):
        return hash(self._L.tobytes())

    def __repr__(self):
        return f"BandwidthFactor({self._L.tolist()})"


def _check_vector(z, dim: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0:
        z = z.reshape(1)
    if z.shape != (dim,):
        raise DimensionMismatchError(f"vector of shape {z.shape} does not match dimension {dim}")
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("non-finite entries in input vector")
    return z


def log_gaussian_kernel(z, L: BandwidthFactor) -> float:
    """Log of the Gaussian kernel ``K_H(z)`` with ``H = L L^T``."""
    z = _check_vector(z, L.dim)
    u = solve_triangular(L.matrix, z, lower=True)
    return -0.5 * L.dim * LOG_2PI - L.half_log_det() - 0.5 * float(u @ u)


def kernel_grad_premul(z, L: BandwidthFactor) -> np.ndarray:
    """Return ``H^{-1} (-z)``, the gradient of ``log K_H`` at ``z``."""
    z = _check_vector(z, L.dim)
    u = solve_triangular(L.matrix, z, lower=True)
    return -solve_triangular(L.matrix, u, lower=True, trans="T")


def log_sum_exp(values, axis=None):
    """Numerically stable ``log(sum(exp(values)))`` along ``axis``.

    All ``-inf`` slices give ``-inf``.  An empty reduction raises.
    """
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0 or (axis is not None and a.shape[axis] == 0):
        raise ValueError("log_sum_exp of an empty sequence")
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def forward_substitute(L: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Solve ``L u = z`` for lower-triangular ``L`` with broadcasting.

    ``L`` has shape ``(..., d, d)`` and ``z`` shape ``(..., d)``; leading axes
    broadcast against each other.  Intended for many small systems at once
    (one per sample point and query), where a per-system solver call would
    dominate.
    """
    d = L.shape[-1]
    shape = np.broadcast_shapes(L.shape[:-2], z.shape[:-1]) + (d,)
    u = np.empty(shape)
    for k in range(d):
        acc = z[..., k]
        if k:
            acc = acc - np.einsum("...j,...j->...", L[..., k, :k], u[..., :k])
        u[..., k] = acc / L[..., k, k]
    return u


def backward_substitute_t(L: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Solve ``L^T v = u`` for lower-triangular ``L`` with broadcasting."""
    d = L.shape[-1]
    shape = np.broadcast_shapes(L.shape[:-2], u.shape[:-1]) + (d,)
    v = np.empty(shape)
    for k in range(d - 1, -1, -1):
        acc = u[..., k]
        if k < d - 1:
            acc = acc - np.einsum("...j,...j->...", L[..., k + 1 :, k], v[..., k + 1 :])
        v[..., k] = acc / L[..., k, k]
    return v


def stack_factors(factors) -> np.ndarray:
    """Stack a sequence of ``BandwidthFactor`` into an ``(n, d, d)`` array."""
    mats = [f.matrix for f in factors]
    if not mats:
        raise ValueError("no bandwidth factors given")
    dims = {m.shape[0] for m in mats}
    if len(dims) != 1:
        raise DimensionMismatchError(f"bandwidth factors of mixed dimension {sorted(dims)}")
    return np.stack(mats)
