"""Experiment orchestration.

For every ``(d, n)`` cell the runner draws ``n_instances`` targets.  Each
instance gets one test set and ``n_replicates`` fitting samples, and every
method is fitted to every sample.  All randomness is keyed:

* instance seed = ``derive_seed(master, scenario, d, n, instance)`` drives the
  target and the shared test set;
* run seed = ``derive_seed(instance seed, replicate)`` drives the fitting
  sample and per-method streams keyed by the method's registry index.

Jobs are ``(instance, replicate)`` pairs.  They are independent, so they run
in any order or in parallel without changing a single number.
"""
from __future__ import annotations

import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..errors import ConfigError
from ..rng import derive_seed, make_rng
from ..targets import ScenarioSpec, sample_prior
from .config import METHODS, ExperimentConfig
from .methods import REGISTRY, FitContext
from .metrics import normalized_nll

log = logging.getLogger(__name__)

# stream tags below an instance or run seed
_TARGET, _TEST, _FIT, _METHOD = range(4)


@dataclass(frozen=True)
class RunRecord:
    scenario: str
    d: int
    n: int
    method: str
    instance: int
    replicate: int
    nll: float
    seed: int
    error: str | None = None
    elapsed: float = field(default=0.0, compare=False)
    details: dict = field(default_factory=dict, compare=False)

    @property
    def ok(self) -> bool:
        return self.error is None and np.isfinite(self.nll)

    def sort_key(self):
        return (self.scenario, self.d, self.n, self.instance, self.replicate, METHODS.index(self.method))


@dataclass
class EvalReport:
    records: list[RunRecord]
    config: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    targets: dict = field(default_factory=dict)

    def __post_init__(self):
        self.records = sorted(self.records, key=RunRecord.sort_key)

    def cells(self):
        from .report import aggregate

        return aggregate(self.records)

    @property
    def n_failed(self) -> int:
        return sum(not r.ok for r in self.records)

    def status(self) -> str:
        """``"ok"``, ``"partial"`` (some runs failed) or ``"failed"`` (no cell has a value)."""
        if not self.n_failed:
            return "ok"
        if all(c.n_ok == 0 for c in self.cells().values()):
            return "failed"
        return "partial"


def instance_seed(cfg: ExperimentConfig, d: int, n: int, instance: int) -> int:
    return derive_seed(cfg.seed, cfg.scenario.key, d, n, instance)


def run_seed(cfg: ExperimentConfig, d: int, n: int, instance: int, replicate: int) -> int:
    return derive_seed(instance_seed(cfg, d, n, instance), replicate)


def draw_instance(cfg: ExperimentConfig, d: int, n: int, instance: int):
    """Target model and shared test set of one instance."""
    s = instance_seed(cfg, d, n, instance)
    target = sample_prior(ScenarioSpec(cfg.scenario, d, s), make_rng(s, _TARGET))
    test = target.sample(make_rng(s, _TEST), cfg.n_eval)
    return target, test


def run_job(cfg: ExperimentConfig, d: int, n: int, instance: int, replicate: int) -> list[RunRecord]:
    """Fit and evaluate every configured method on one fitting sample."""
    target, test = draw_instance(cfg, d, n, instance)
    seed = run_seed(cfg, d, n, instance, replicate)
    if not cfg.shared_test_set:
        test = target.sample(make_rng(seed, _TEST), cfg.n_eval)
    sample = target.sample(make_rng(seed, _FIT), n)
    ctx = FitContext(
        sample, target, cfg.selectors, cfg.finetune, cfg.checkpoint_for(d),
        method_seed=lambda m: derive_seed(seed, _METHOD, METHODS.index(m)),
    )
    out = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            fitted = REGISTRY[method](ctx)
            nll, err, details = normalized_nll(fitted.model, test), None, fitted.details
        except Exception as exc:  # isolate: one failing method must not sink the sweep
            log.warning("%s d=%d n=%d instance=%d replicate=%d failed: %s", method, d, n, instance, replicate, exc)
            nll, err, details = float("nan"), f"{type(exc).__name__}: {exc}", {}
        out.append(
            RunRecord(cfg.scenario.value, d, n, method, instance, replicate, nll, seed, err,
                      time.perf_counter() - t0, details)
        )
    return out


def _run_job_args(args):
    return run_job(*args)


def _init_worker():
    import torch

    torch.set_num_threads(1)


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None:
        env = os.environ.get("ADAKDE_JOBS")
        if env is None or not env.strip():
            return 1
        try:
            jobs = int(env)
        except ValueError:
            raise ConfigError(f"ADAKDE_JOBS must be an integer, got {env!r}") from None
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    return jobs


def run_experiment(cfg: ExperimentConfig, jobs: int | None = None, progress=None) -> EvalReport:
    """Run every ``(d, n, instance, replicate)`` job and collect the report.

    ``jobs`` defaults to ``$ADAKDE_JOBS`` or 1.  ``progress``, if given, is
    called with ``(done, total)`` after each job.
    """
    jobs = resolve_jobs(jobs)
    for d in cfg.dims:
        path = cfg.checkpoint_for(d)
        if path is not None and not path.exists() and {"NNKDE_pre", "NNKDE_fine"} & set(cfg.methods):
            raise ConfigError(f"checkpoint not found: {path}")
    grid = [
        (cfg, d, n, i, r)
        for d in cfg.dims
        for n in cfg.sample_sizes
        for i in range(cfg.n_instances)
        for r in range(cfg.n_replicates)
    ]
    t0 = time.perf_counter()
    records: list[RunRecord] = []
    if jobs == 1:
        results = map(_run_job_args, grid)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker)
        results = pool.map(_run_job_args, grid)
    try:
        for k, recs in enumerate(results, 1):
            records.extend(recs)
            if progress is not None:
                progress(k, len(grid))
    finally:
        if pool is not None:
            pool.shutdown()

    targets = {}
    for d in cfg.dims:
        for n in cfg.sample_sizes:
            for i in range(cfg.n_instances):
                target, _ = draw_instance(cfg, d, n, i)
                targets[f"d={d},n={n},instance={i}"] = target.to_dict()
    metadata = {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "jobs": jobs,
        "wall_clock_seconds": time.perf_counter() - t0,
        "shared_test_set": cfg.shared_test_set,
        "instance_seeds": {
            f"d={d},n={n}": [instance_seed(cfg, d, n, i) for i in range(cfg.n_instances)]
            for d in cfg.dims
            for n in cfg.sample_sizes
        },
    }
    return EvalReport(records, cfg.to_dict(), metadata, targets)
