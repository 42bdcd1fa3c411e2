"""Classical bandwidth selectors: Silverman, LCV, Abramson and kNN local scaling.

Global rules return one ``BandwidthFactor``; adaptive rules return an
``AdaptiveSelection`` holding one factor per sample point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateSampleError
from .kde import SamplePointKde, as_sample
from .linalg import BandwidthFactor
from .loo import LooObjective
from .neighbors import knn

PILOT_FLOOR = 1e-300


def _default_grid() -> tuple[float, ...]:
    return tuple(np.logspace(-1.0, 1.0, 31).tolist())


@dataclass(frozen=True)
class SelectorConfig:
    lcv_grid: tuple[float, ...] = field(default_factory=_default_grid)
    knn_k: int | None = None  # None -> ceil(sqrt(n))
    knn_scale_grid: tuple[float, ...] = field(default_factory=_default_grid)
    abramson_alpha: float = 0.5

    def __post_init__(self):
        for name in ("lcv_grid", "knn_scale_grid"):
            grid = tuple(float(g) for g in getattr(self, name))
            if not grid or any(not (g > 0 and math.isfinite(g)) for g in grid):
                raise ConfigError(f"{name} must be a non-empty list of positive numbers")
            object.__setattr__(self, name, tuple(sorted(grid)))
        if self.knn_k is not None and int(self.knn_k) < 1:
            raise ConfigError("knn_k must be >= 1")

    def k_for(self, n: int) -> int:
        return int(self.knn_k) if self.knn_k is not None else math.ceil(math.sqrt(n))


@dataclass(frozen=True)
class GridScan:
    """Objective values of a one-dimensional grid search (smallest argmin wins ties)."""

    grid: np.ndarray
    objective: np.ndarray

    @property
    def index(self) -> int:
        return int(np.argmin(self.objective))

    @property
    def best(self) -> float:
        return float(self.grid[self.index])


@dataclass(frozen=True)
class AdaptiveSelection:
    """Per-point factors plus the quantities that produced them."""

    factors: np.ndarray  # (n, d, d)
    local_scale: np.ndarray  # lambda_i (Abramson) or r_i (kNN)
    global_scale: float
    warnings: tuple[str, ...] = ()

    def factor_list(self) -> list[BandwidthFactor]:
        return [BandwidthFactor(m) for m in self.factors]

    def kde(self, sample) -> SamplePointKde:
        return SamplePointKde(sample, self.factors)


def silverman(sample) -> BandwidthFactor:
    """Diagonal normal-reference rule ``sigma_j * (4 / ((d + 2) n))^(1 / (d + 4))``."""
    X = as_sample(sample)
    n, d = X.shape
    if n < 2:
        raise DegenerateSampleError("Silverman's rule needs at least two points")
    sd = np.std(X, axis=0, ddof=1)
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        raise DegenerateSampleError(f"coordinate {int(bad[0])} has zero sample variance")
    factor = (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))
    return BandwidthFactor.diagonal(sd * factor)


def lcv_scan(sample, cfg: SelectorConfig | None = None) -> tuple[GridScan, LooObjective]:
    """Leave-one-out likelihood over multipliers of the Silverman factor."""
    cfg = cfg or SelectorConfig()
    base = silverman(sample)
    objective = LooObjective(sample, base)
    grid = np.asarray(cfg.lcv_grid)
    return GridScan(grid, objective.values(grid**2)), objective


def lcv_select(sample, cfg: SelectorConfig | None = None) -> BandwidthFactor:
    scan, _ = lcv_scan(sample, cfg)
    return silverman(sample).scaled(scan.best)


def abramson_select(
    sample, cfg: SelectorConfig | None = None, lcv: tuple[GridScan, LooObjective] | None = None
) -> AdaptiveSelection:
    """Square-root-law rescaling of the LCV factor by a pilot KDE.

    ``lambda_i = (pilot(X_i) / g)^(-alpha)`` with ``g`` the geometric mean of
    the pilot values, and ``L_i = lambda_i * L_lcv``.  ``lcv`` may carry a
    result of ``lcv_scan`` for the same sample and config to avoid recomputing it.
    """
    cfg = cfg or SelectorConfig()
    X = as_sample(sample)
    n, d = X.shape
    scan, objective = lcv if lcv is not None else lcv_scan(X, cfg)
    h = scan.best
    L_glob = silverman(X).scaled(h)
    # pilot at X_i includes the point's own kernel: combine LOO sum with the self term
    loo = objective.per_point(h**2) + math.log(n - 1)
    self_term = -0.5 * d * math.log(2 * math.pi) - L_glob.half_log_det()
    log_pilot = np.logaddexp(loo, self_term) - math.log(n)
    warnings = []
    low = log_pilot < math.log(PILOT_FLOOR)
    if np.any(low):
        warnings.append(f"pilot density below {PILOT_FLOOR:g} at {int(low.sum())} points; clamped")
        log_pilot = np.maximum(log_pilot, math.log(PILOT_FLOOR))
    lam = np.exp(-cfg.abramson_alpha * (log_pilot - log_pilot.mean()))
    factors = lam[:, None, None] * L_glob.matrix[None]
    return AdaptiveSelection(factors, lam, h, tuple(warnings))


def knn_distances(sample, k: int) -> np.ndarray:
    """Distance from each point to its ``k``-th nearest other point, zeros floored."""
    _, dist = knn(sample, k)
    r = dist[:, -1].copy()
    if np.any(r <= 0):
        pos = dist[dist > 0]
        if pos.size == 0:
            raise DegenerateSampleError("all neighbour distances are zero")
        r[r <= 0] = pos.min()
    return r


def knn_scan(sample, cfg: SelectorConfig | None = None) -> tuple[GridScan, np.ndarray]:
    cfg = cfg or SelectorConfig()
    X = as_sample(sample)
    n, d = X.shape
    k = cfg.k_for(n)
    if n <= k:
        raise DegenerateSampleError(f"kNN selector needs n > k, got n={n}, k={k}")
    r = knn_distances(X, k)
    base = r[:, None, None] * np.eye(d)[None]
    grid = np.asarray(cfg.knn_scale_grid)
    return GridScan(grid, LooObjective(X, base).values(grid**2)), r


def knn_select(sample, cfg: SelectorConfig | None = None) -> AdaptiveSelection:
    """Isotropic ``H_i = (c r_i)^2 I`` with ``c`` chosen by leave-one-out likelihood."""
    X = as_sample(sample)
    scan, r = knn_scan(X, cfg)
    c = scan.best
    factors = (c * r)[:, None, None] * np.eye(X.shape[1])[None]
    return AdaptiveSelection(factors, r, c)
