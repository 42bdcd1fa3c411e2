"""Pre-training of the bandwidth recommender.

Per task, the loss is the mean Huber error of the induced KDE's log-density
at the query points plus ``lambda_score`` times the mean squared score error.
Both quantities come from a differentiable torch version of the sample-point
KDE, so gradients flow through the triangular solves into the network.
"""
from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
from torch.nn import functional as F

from ..errors import AdakdeError, ConfigError
from .network import BandwidthRecommender, RecommenderConfig
from ..rng import derive_seed, make_rng
from ..targets import Scenario, ScenarioSpec
from .tasks import PretrainTask, PretrainTaskSet

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


class TrainingError(AdakdeError, FloatingPointError):
    def __init__(self, task_id: int, message: str = "non-finite loss"):
        super().__init__(f"{message} in task {task_id}")
        self.task_id = task_id


@dataclass(frozen=True)
class TrainConfig:
    d: int = 2
    n_tasks: int = 2000
    n_t: int = 256
    m_t: int = 128
    batch: int = 16
    epochs: int = 20
    lr: float = 1e-3
    weight_decay: float = 1e-4
    lambda_score: float = 1e-2
    huber_delta: float = 1.0
    k_nn: int = 16
    width: int = 32
    n_blocks: int = 2
    n_heads: int = 2
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        positive = ("d", "n_tasks", "n_t", "m_t", "batch", "epochs", "k_nn", "width", "n_blocks", "n_heads")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lr < 0 or self.weight_decay < 0 or self.lambda_score < 0 or not self.huber_delta > 0:
            raise ConfigError("lr, weight_decay, lambda_score must be >= 0 and huber_delta > 0")

    @classmethod
    def full_scale(cls, d: int, **overrides) -> "TrainConfig":
        """Full-size settings: 500k tasks of 2048 points, batch 500, 3 blocks x 4 heads x 128."""
        base = dict(
            d=d, n_tasks=500_000, n_t=2048, m_t=1024, batch=500, epochs=1, lr=1e-4,
            weight_decay=1e-4, k_nn=32, width=128, n_blocks=3, n_heads=4,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def model_config(self) -> RecommenderConfig:
        return RecommenderConfig(
            d=self.d, k_nn=self.k_nn, width=self.width, n_blocks=self.n_blocks,
            n_heads=self.n_heads, dropout=self.dropout,
        )


def induced_kde(X: torch.Tensor, L: torch.Tensor, Q: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Log-density ``(m,)`` and score ``(m, d)`` of the sample-point KDE at queries ``Q``."""
    n, d = X.shape
    z = (Q[None, :, :] - X[:, None, :]).transpose(1, 2)  # (n, d, m)
    u = torch.linalg.solve_triangular(L, z, upper=False)
    logk = (
        -0.5 * d * _LOG_2PI
        - torch.log(torch.diagonal(L, dim1=-2, dim2=-1)).sum(-1)[:, None]
        - 0.5 * (u * u).sum(1)
    )  # (n, m)
    logf = torch.logsumexp(logk, dim=0) - math.log(n)
    w = torch.softmax(logk, dim=0)
    v = torch.linalg.solve_triangular(L.transpose(-1, -2), u, upper=True)  # H^{-1}(x - X_l)
    score = -(w[:, None, :] * v).sum(0).T
    return logf, score


@dataclass
class _TaskTensors:
    task_id: int
    sample: torch.Tensor
    nbh: torch.Tensor
    queries: torch.Tensor
    logf: torch.Tensor
    score: torch.Tensor

    @classmethod
    def of(cls, task: PretrainTask) -> "_TaskTensors":
        t = lambda a: torch.as_tensor(np.asarray(a, dtype=np.float64))  # noqa: E731
        return cls(task.task_id, t(task.sample), t(task.neighborhoods), t(task.queries),
                   t(task.query_logf), t(task.query_scores))


def loss_from_factors(L, task: _TaskTensors, lambda_score: float, huber_delta: float) -> torch.Tensor:
    logf, score = induced_kde(task.sample, L, task.queries)
    loss = F.huber_loss(logf, task.logf, delta=huber_delta, reduction="mean")
    if lambda_score:
        loss = loss + lambda_score * ((score - task.score) ** 2).sum(-1).mean()
    return loss


def pretrain_loss(
    model: BandwidthRecommender,
    task: PretrainTask | _TaskTensors,
    lambda_score: float = 1e-2,
    huber_delta: float = 1.0,
) -> torch.Tensor:
    """Hybrid loss for one task; a differentiable scalar tensor."""
    tt = task if isinstance(task, _TaskTensors) else _TaskTensors.of(task)
    return loss_from_factors(model(tt.nbh), tt, lambda_score, huber_delta)


@dataclass
class TrainResult:
    model: BandwidthRecommender
    epoch_losses: list[float] = field(default_factory=list)
    config: TrainConfig | None = None


def new_model(cfg: TrainConfig, seed: int) -> BandwidthRecommender:
    gen = torch.Generator().manual_seed(int(seed))
    return BandwidthRecommender(cfg.model_config(), generator=gen)


def mean_loss(model: BandwidthRecommender, tasks: Sequence[PretrainTask], cfg: TrainConfig) -> float:
    """Average loss over ``tasks`` in inference mode (no dropout, no gradients)."""
    was = model.training
    model.eval()
    try:
        with torch.no_grad():
            vals = [pretrain_loss(model, t, cfg.lambda_score, cfg.huber_delta).item() for t in tasks]
    finally:
        model.train(was)
    return float(np.mean(vals))


def train(
    cfg: TrainConfig,
    tasks: Sequence[PretrainTask],
    rng: np.random.Generator,
    model: BandwidthRecommender | None = None,
    callback=None,
) -> TrainResult:
    """AdamW over mini-batches of ``cfg.batch`` tasks for ``cfg.epochs`` passes.

    ``rng`` drives the weight initialisation, the batch order and the dropout
    masks, so a fixed seed gives bit-identical weights on a fixed thread count.
    """
    if model is None:
        model = new_model(cfg, int(rng.integers(2**63)))
    torch.manual_seed(int(rng.integers(2**63)))
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    result = TrainResult(model, config=cfg)
    cache: dict[int, _TaskTensors] = {}

    def get(i: int) -> _TaskTensors:
        if i not in cache:
            cache[i] = _TaskTensors.of(tasks[i])
        return cache[i]

    model.train()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(tasks))
        batch_losses = []
        for s in range(0, len(order), cfg.batch):
            opt.zero_grad(set_to_none=True)
            per_task = []
            for i in order[s : s + cfg.batch]:
                tt = get(int(i))
                loss = pretrain_loss(model, tt, cfg.lambda_score, cfg.huber_delta)
                if not torch.isfinite(loss):
                    raise TrainingError(tt.task_id)
                per_task.append(loss)
            batch_loss = torch.stack(per_task).mean()
            batch_loss.backward()
            opt.step()
            batch_losses.append(batch_loss.item())
        result.epoch_losses.append(float(np.mean(batch_losses)))
        log.info("epoch %d/%d  loss %.5f", epoch + 1, cfg.epochs, result.epoch_losses[-1])
        if callback is not None:
            callback(epoch, result.epoch_losses[-1], model)
    model.eval()
    return result


# stream tags under the training seed
_TASK_STREAM, _TRAIN_STREAM = 0, 1


def task_set(cfg: TrainConfig, offset: int = 0, n_tasks: int | None = None) -> PretrainTaskSet:
    """The lazy task set a config trains on; ``offset`` selects tasks beyond it (held-out data)."""
    spec = ScenarioSpec(Scenario.GMD_F, cfg.d, derive_seed(cfg.seed, _TASK_STREAM))
    return PretrainTaskSet(spec, n_tasks or cfg.n_tasks, cfg.n_t, cfg.m_t, cfg.k_nn, offset=offset)


def pretrain(cfg: TrainConfig, tasks: Sequence[PretrainTask] | None = None, callback=None) -> TrainResult:
    """Train a fresh recommender from ``cfg`` alone (tasks regenerated from ``cfg.seed`` if not given)."""
    if tasks is None:
        tasks = task_set(cfg)
    return train(cfg, tasks, make_rng(cfg.seed, _TRAIN_STREAM), callback=callback)
