"""Synthetic pre-training tasks.

Task ``t`` draws a mixture from the GMD prior with the stream keyed by
``(seed, t)``.  It then samples ``n_t`` fitting points and ``m_t`` queries and
labels the queries with the exact log-density and score.  Any task can be
regenerated on its own, so a task set is a lazy sequence.
"""
from __future__ import annotations

from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..neighbors import neighborhoods
from ..rng import make_rng
from ..targets import Scenario, ScenarioSpec, sample_prior


@dataclass(frozen=True)
class PretrainTask:
    task_id: int
    sample: np.ndarray  # (n_t, d)
    neighborhoods: np.ndarray  # (n_t, k_nn, d)
    queries: np.ndarray  # (m_t, d)
    query_logf: np.ndarray  # (m_t,)
    query_scores: np.ndarray  # (m_t, d)


def make_task(spec: ScenarioSpec, t: int, n_t: int, m_t: int, k_nn: int) -> PretrainTask:
    rng = make_rng(spec.seed, t)
    target = sample_prior(spec, rng)
    X = target.sample(rng, n_t)
    Q = target.sample(rng, m_t)
    logf = np.atleast_1d(target.log_density(Q))
    score = np.atleast_2d(target.score(Q)).reshape(m_t, spec.d)
    if not (np.all(np.isfinite(logf)) and np.all(np.isfinite(score))):
        raise FloatingPointError(f"non-finite oracle labels in task {t}")
    return PretrainTask(t, X, neighborhoods(X, k_nn), Q, logf, score)


class PretrainTaskSet(Sequence):
    """Lazy, indexable collection of ``n_tasks`` pre-training tasks."""

    def __init__(self, spec: ScenarioSpec, n_tasks: int, n_t: int, m_t: int, k_nn: int, offset: int = 0):
        if spec.family is not Scenario.GMD_F:
            raise ConfigError(f"pre-training tasks come from the GMD_F prior, not {spec.family.value}")
        if k_nn >= n_t:
            raise ConfigError(f"k_nn={k_nn} must be smaller than n_t={n_t}")
        self.spec, self.n_tasks, self.n_t, self.m_t, self.k_nn = spec, n_tasks, n_t, m_t, k_nn
        self.offset = offset

    def __len__(self) -> int:
        return self.n_tasks

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if not -self.n_tasks <= i < self.n_tasks:
            raise IndexError(i)
        i %= self.n_tasks
        return make_task(self.spec, self.offset + i, self.n_t, self.m_t, self.k_nn)


def generate_pretrain_tasks(spec: ScenarioSpec, n_tasks: int, n_t: int, m_t: int, k_nn: int) -> Iterator[PretrainTask]:
    yield from PretrainTaskSet(spec, n_tasks, n_t, m_t, k_nn)


def save_tasks(tasks: Sequence[PretrainTask], path) -> Path:
    """Store equally-sized tasks as one ``.npz`` shard."""
    path = Path(path)
    np.savez(
        path,
        task_id=np.array([t.task_id for t in tasks], dtype=np.int64),
        sample=np.stack([t.sample for t in tasks]),
        neighborhoods=np.stack([t.neighborhoods for t in tasks]),
        queries=np.stack([t.queries for t in tasks]),
        query_logf=np.stack([t.query_logf for t in tasks]),
        query_scores=np.stack([t.query_scores for t in tasks]),
    )
    return path


def load_tasks(path) -> list[PretrainTask]:
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    return [
        PretrainTask(
            int(arrays["task_id"][i]),
            arrays["sample"][i],
            arrays["neighborhoods"][i],
            arrays["queries"][i],
            arrays["query_logf"][i],
            arrays["query_scores"][i],
        )
        for i in range(len(arrays["task_id"]))
    ]
