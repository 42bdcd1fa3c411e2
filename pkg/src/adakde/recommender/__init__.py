"""Neural per-point bandwidth recommender: network, pre-training data, training and checkpoints."""
from .checkpoint import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    load_checkpoint,
    save_checkpoint,
)
from .network import (
    BandwidthRecommender,
    NonFiniteActivationError,
    RecommenderConfig,
    recommend,
    recommend_all,
    recommend_factors,
)
from .tasks import PretrainTask, PretrainTaskSet, generate_pretrain_tasks, load_tasks, make_task, save_tasks
from .training import (
    TrainConfig,
    TrainingError,
    TrainResult,
    induced_kde,
    mean_loss,
    new_model,
    pretrain,
    pretrain_loss,
    task_set,
    train,
)

__all__ = [
    "BandwidthRecommender",
    "CheckpointChecksumError",
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointTruncatedError",
    "CheckpointVersionError",
    "NonFiniteActivationError",
    "PretrainTask",
    "PretrainTaskSet",
    "RecommenderConfig",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "generate_pretrain_tasks",
    "induced_kde",
    "load_checkpoint",
    "load_tasks",
    "make_task",
    "mean_loss",
    "new_model",
    "pretrain",
    "pretrain_loss",
    "recommend",
    "recommend_all",
    "recommend_factors",
    "save_checkpoint",
    "save_tasks",
    "task_set",
    "train",
]
