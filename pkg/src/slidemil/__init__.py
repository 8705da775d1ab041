"""slidemil: multi-task multiple-instance learning on bags of instance features.

Bags of instance vectors are encoded by a small MLP, rated and pooled by
shared multi-head attention into one slide-level vector, and decoded by
per-task linear heads trained jointly with accumulated losses and a
single AdamW step per iteration.  Includes a frozen-encoder fine-tuning
protocol, ranking and agreement metrics, attention explainability
export, and training-energy accounting.
"""

from .checkpoint import CheckpointBundle, load_checkpoint, read_checkpoint, save_checkpoint
from .energy import EnergyEstimate, energy_estimate
from .finetune import FinetuneResult, finetune_protocol
from .metrics import (
    MetricReport,
    metric_auc,
    metric_balanced_accuracy,
    metric_macro_auc,
    metric_quadratic_kappa,
)
from .model import EncoderConfig, MultiTaskModel, forward_bag, freeze
from .pooling import AttentionMap, AttentionPoolParams, pool_attention, pool_max, pool_mean
from .tasks import TaskRegistry, TaskSpec
from .trainer import AugmentConfig, Bag, TrainConfig, multitask_step, sample_bag, train

__version__ = "0.1.0"

__all__ = [
    "AttentionMap",
    "AttentionPoolParams",
    "AugmentConfig",
    "Bag",
    "CheckpointBundle",
    "EncoderConfig",
    "EnergyEstimate",
    "FinetuneResult",
    "MetricReport",
    "MultiTaskModel",
    "TaskRegistry",
    "TaskSpec",
    "TrainConfig",
    "energy_estimate",
    "finetune_protocol",
    "forward_bag",
    "freeze",
    "load_checkpoint",
    "metric_auc",
    "metric_balanced_accuracy",
    "metric_macro_auc",
    "metric_quadratic_kappa",
    "multitask_step",
    "pool_attention",
    "pool_max",
    "pool_mean",
    "read_checkpoint",
    "sample_bag",
    "save_checkpoint",
    "train",
]
