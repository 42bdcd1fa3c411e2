"""Global scale calibration of per-point bandwidths by leave-one-out likelihood.

All recommended bandwidths are rescaled by one scalar, ``H_i -> gamma H_i``,
and ``gamma`` minimises the self-excluding leave-one-out NLL of the sample.
The search runs on ``log gamma``: a coarse log-grid locates a bracket, golden
section refines it, and ``gamma = 1`` is kept whenever nothing beats it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteError
from .kde import SamplePointKde
from .linalg import stack_factors
from .loo import LooObjective

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class FinetuneConfig:
    bracket: tuple[float, float] = (1e-2, 1e2)
    grid_points: int = 17
    tol: float = 1e-4  # absolute, in log gamma
    max_iter: int = 200

    def __post_init__(self):
        lo, hi = (float(v) for v in self.bracket)
        object.__setattr__(self, "bracket", (lo, hi))
        if not 0 < lo < 1 < hi:
            raise ConfigError(f"bracket must satisfy 0 < lo < 1 < hi, got {self.bracket}")
        if int(self.grid_points) < 3 or not self.tol > 0 or int(self.max_iter) < 1:
            raise ConfigError("need grid_points >= 3, tol > 0 and max_iter >= 1")


@dataclass
class FinetuneResult:
    gamma_star: float
    objective_at_gamma_star: float
    objective_at_one: float
    trace: list[tuple[float, float]] = field(default_factory=list)


def _as_factor_array(pre_factors) -> np.ndarray:
    if isinstance(pre_factors, np.ndarray):
        return pre_factors
    return stack_factors(list(pre_factors))


def loo_objective(sample, pre_factors, gamma: float) -> float:
    """Leave-one-out NLL of the sample with every bandwidth scaled by ``gamma``."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return LooObjective(sample, _as_factor_array(pre_factors))(gamma)


def golden_section(f, lo: float, hi: float, tol: float, max_iter: int = 200):
    """Minimise a unimodal ``f`` on ``[lo, hi]``; yields every evaluated ``(x, f(x))``."""
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    yield c, fc
    yield d, fd
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
            yield c, fc
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
            yield d, fd


def calibrate(sample, pre_factors, cfg: FinetuneConfig | None = None) -> FinetuneResult:
    """Find ``gamma*`` for the given per-point factors; never worse than ``gamma = 1``."""
    cfg = cfg or FinetuneConfig()
    objective = LooObjective(sample, _as_factor_array(pre_factors))
    lo, hi = (math.log(v) for v in cfg.bracket)
    t_grid = np.linspace(lo, hi, cfg.grid_points)
    grid_vals = objective.values(np.exp(t_grid))
    if not np.all(np.isfinite(grid_vals)):
        bad = float(np.exp(t_grid[~np.isfinite(grid_vals)][0]))
        raise NonFiniteError(f"leave-one-out objective is not finite at gamma={bad:g}")
    trace = [(float(math.exp(t)), float(v)) for t, v in zip(t_grid, grid_vals)]
    evaluated = list(zip(t_grid.tolist(), grid_vals.tolist()))

    k = int(np.argmin(grid_vals))
    a = t_grid[max(k - 1, 0)]
    b = t_grid[min(k + 1, cfg.grid_points - 1)]
    for t, v in golden_section(lambda t: objective(math.exp(t)), a, b, cfg.tol, cfg.max_iter):
        trace.append((math.exp(t), v))
        evaluated.append((t, v))

    t_best, v_best = min(evaluated, key=lambda tv: (tv[1], tv[0]))
    at_one = objective(1.0)
    trace.append((1.0, at_one))
    if not v_best < at_one:
        return FinetuneResult(1.0, at_one, at_one, trace)
    return FinetuneResult(math.exp(t_best), v_best, at_one, trace)


def finetune_kde(kde: SamplePointKde, cfg: FinetuneConfig | None = None) -> tuple[SamplePointKde, FinetuneResult]:
    result = calibrate(kde.sample, kde.factor_array, cfg)
    return kde.scaled(result.gamma_star), result
