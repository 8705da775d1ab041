"""Frozen-encoder fine-tuning on a downstream task.

Per repeat: rebuild the model from the pretrained checkpoint, freeze
encoder weights, initialize the aggregation module either from the
checkpoint (``pretrained_agg``) or afresh (``random_agg``), attach a
new zero head for the downstream task, train while monitoring
validation loss, and evaluate the best model on the test split.
Repeats use seeds ``seed + repeat_index`` and are summarized as
mean +/- std per metric with the raw values retained.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .checkpoint import CheckpointBundle, load_checkpoint
from .data import Cohort
from .errors import ConfigurationError, DataError
from .metrics import (
    MetricReport,
    metric_auc,
    metric_balanced_accuracy,
    metric_macro_auc,
    metric_quadratic_kappa,
)
from .model import EncoderConfig, MultiTaskModel, encoder_fingerprint, forward_bag, freeze
from .pooling import init_attention_pool
from .seeding import derive_rng
from .tasks import TaskRegistry, TaskSpec
from .tensor import ops
from .trainer import AugmentConfig, TrainConfig, sample_bag, train

INIT_MODES = ("random_agg", "pretrained_agg")


@dataclass
class RepeatOutcome:
    seed: int
    best_epoch: int | None
    metrics: dict[str, float]


@dataclass
class FinetuneResult:
    task_id: str
    init: str
    report: MetricReport
    repeats: list[RepeatOutcome] = field(default_factory=list)


def _downstream_model(
    bundle: CheckpointBundle, task: TaskSpec, init: str, rng_seed: int
) -> MultiTaskModel:
    pretrained, _, meta = load_checkpoint(bundle)
    cfg = EncoderConfig(
        input_width=int(meta["arch.input_width"]),
        hidden_widths=[int(w) for w in meta["arch.hidden_widths"].split(",") if w],
        output_width=int(meta["arch.output_width"]),
        activation=meta["arch.activation"],
    )
    model = MultiTaskModel(
        cfg,
        TaskRegistry([task]),
        heads=pretrained.pool.heads,
        att_dim=pretrained.pool.att_dim,
        dropout_p=float(meta["arch.dropout_p"]),
        rng=derive_rng(rng_seed, "downstream-model"),
    )
    for src, dst in zip(pretrained.encoder.parameters(), model.encoder.parameters()):
        dst.data = src.data.copy()
    if init == "pretrained_agg":
        for src, dst in zip(pretrained.pool.parameters(), model.pool.parameters()):
            dst.data = src.data.copy()
    else:
        model.pool = init_attention_pool(
            cfg.output_width,
            heads=pretrained.pool.heads,
            att_dim=pretrained.pool.att_dim,
            rng=derive_rng(rng_seed, "agg-init"),
        )
    return model


def _test_metrics(model, cohort: Cohort, task: TaskSpec, seed: int) -> dict[str, float]:
    scores, preds, truth = [], [], []
    for slide in cohort.slides_for(task.task_id, "test"):
        bag = sample_bag(
            slide, cohort.store, "val", derive_rng(seed, "testbag", slide.slide_id)
        )
        logits, _ = forward_bag(model, task.task_id, bag.features, mode="eval")
        probs = ops.softmax(logits, axis=0).data
        scores.append(probs)
        preds.append(int(np.argmax(probs)))
        truth.append(bag.labels[task.task_id])
    if not truth:
        raise DataError(f"task {task.task_id!r} has no test slides")

    scores = np.asarray(scores)
    out: dict[str, float] = {}
    if task.num_classes == 2:
        out["auc"] = metric_auc(scores[:, 1], truth)
    else:
        out["auc"] = metric_macro_auc(scores, truth, task.num_classes)
    if task.kind == "ordinal_as_multiclass":
        out["quadratic_kappa"] = metric_quadratic_kappa(preds, truth, task.num_classes)
    else:
        out["balanced_accuracy"] = metric_balanced_accuracy(preds, truth, task.num_classes)
    return out


def finetune_protocol(
    bundle: CheckpointBundle,
    cohort: Cohort,
    task: TaskSpec,
    repeats: int = 4,
    epochs: int = 15,
    lr: float = 1e-4,
    init: str = "pretrained_agg",
    seed: int = 0,
    augment: AugmentConfig | None = None,
) -> FinetuneResult:
    """Run the repeated frozen-encoder protocol and summarize test metrics."""
    if init not in INIT_MODES:
        raise ConfigurationError(f"init must be one of {INIT_MODES}, got {init!r}")
    if repeats < 1:
        raise ConfigurationError("repeats must be at least 1")

    raw: dict[str, list[float]] = {}
    outcomes: list[RepeatOutcome] = []
    for repeat in range(repeats):
        repeat_seed = seed + repeat
        model = _downstream_model(bundle, task, init, repeat_seed)
        freeze(model, "encoder")
        fingerprint = encoder_fingerprint(model)

        cfg = TrainConfig(
            seed=repeat_seed,
            epochs=epochs,
            lr=lr,
            augment=augment if augment is not None else AugmentConfig(enabled=False),
        )
        result = train(model, cohort, cfg)
        best_model, _, _ = load_checkpoint(result.best)
        if encoder_fingerprint(model) != fingerprint:
            raise ConfigurationError("frozen encoder changed during fine-tuning")

        metrics = _test_metrics(best_model, cohort, task, repeat_seed)
        outcomes.append(RepeatOutcome(repeat_seed, result.best_epoch, metrics))
        for name, value in metrics.items():
            raw.setdefault(name, []).append(value)

    report = MetricReport()
    for name, values in raw.items():
        report.add(name, values)
    return FinetuneResult(task.task_id, init, report, outcomes)
