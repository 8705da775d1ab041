"""End-to-end multi-task training.

One step draws a fresh bag per task, walks the tasks in registry order
accumulating each task's weighted loss gradient, then takes exactly one
AdamW step over all unfrozen parameters.  Every random choice comes
from a stream derived from (seed, purpose, epoch, step, ...), so two
runs with the same seed are bit-identical and a run can resume from any
recorded (epoch, step) point and reproduce the uninterrupted trace.

Validation bags are fixed-size, never augmented, and derived from the
slide id alone, so evaluating them cannot disturb training streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .checkpoint import CheckpointBundle, load_checkpoint, save_checkpoint
from .data import Cohort, check_split_coherence
from .data.manifest import SlideRecord
from .errors import (
    ConfigurationError,
    DataError,
    MetricUndefinedError,
    TrainingDivergenceError,
)
from .metrics import metric_auc, metric_macro_auc
from .model import MultiTaskModel, forward_bag
from .optim import OptimizerState, adamw_step
from .seeding import derive_rng
from .tensor import backward, ops, record


def canonical_float(x: float) -> str:
    return f"{float(x):.17g}"


@dataclass
class Bag:
    """One slide's sampled instances plus identity and weak labels."""

    features: np.ndarray  # [n x input_width]
    slide_id: str
    patient_id: str
    labels: dict[str, int]
    instance_ids: list[int]
    coords: np.ndarray | None = None


@dataclass
class AugmentConfig:
    """Feature-space stand-in for pixel augmentation: per-instance
    Gaussian jitter and random instance dropping, train bags only."""

    feature_jitter_sigma: float = 0.1
    instance_drop_p: float = 0.05
    enabled: bool = True

    def __post_init__(self):
        if self.feature_jitter_sigma < 0:
            raise ConfigurationError("feature_jitter_sigma must be nonnegative")
        if not 0.0 <= self.instance_drop_p < 1.0:
            raise ConfigurationError("instance_drop_p must be in [0, 1)")


@dataclass
class TrainConfig:
    seed: int
    bag_min: int = 64
    bag_max: int = 128
    val_bag: int = 128
    epochs: int = 200
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    bags_per_task: int = 1
    validate: bool = True
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.bag_min > self.bag_max or self.bag_min < 1:
            raise ConfigurationError(
                f"bag size range [{self.bag_min}, {self.bag_max}] is invalid"
            )
        if self.lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")
        if self.bags_per_task < 1:
            raise ConfigurationError("bags_per_task must be at least 1")


def sample_bag(
    slide: SlideRecord,
    store,
    mode: str,
    rng: np.random.Generator,
    size_range: tuple[int, int] = (64, 128),
    val_size: int = 128,
) -> Bag:
    """Draw a bag of instances from one slide.

    Train mode draws a uniform size in ``size_range`` without
    replacement (with replacement when the slide is smaller than the
    draw).  Val mode returns exactly ``val_size`` instances: all of them
    in original order when the slide is small enough, topped up with
    deterministic re-draws.
    """
    features = store.read(slide.feature_file)
    n = features.shape[0]
    if n < 1:
        raise DataError(f"slide {slide.slide_id!r} has no instances")

    if mode == "train":
        size = int(rng.integers(size_range[0], size_range[1] + 1))
        if n >= size:
            indices = rng.choice(n, size=size, replace=False)
        else:
            indices = rng.choice(n, size=size, replace=True)
    elif mode == "val":
        if n <= val_size:
            top_up = rng.choice(n, size=val_size - n, replace=True) if n < val_size else []
            indices = np.concatenate([np.arange(n), np.asarray(top_up, dtype=np.int64)])
        else:
            indices = rng.choice(n, size=val_size, replace=False)
    else:
        raise ConfigurationError(f"bag mode must be 'train' or 'val', got {mode!r}")

    indices = np.asarray(indices, dtype=np.int64)
    coords = store.read_coords(slide.feature_file)
    return Bag(
        features=features[indices],
        slide_id=slide.slide_id,
        patient_id=slide.patient_id,
        labels=dict(slide.labels),
        instance_ids=indices.tolist(),
        coords=None if coords is None else coords[indices],
    )


def augment_bag(bag: Bag, cfg: AugmentConfig, rng: np.random.Generator) -> Bag:
    """Jitter every instance, then drop instances, never below one."""
    if not cfg.enabled:
        return bag
    features = bag.features
    if cfg.feature_jitter_sigma > 0:
        features = features + rng.normal(0.0, cfg.feature_jitter_sigma, size=features.shape)
    if cfg.instance_drop_p > 0:
        keep = rng.random(features.shape[0]) >= cfg.instance_drop_p
        if not keep.any():
            keep[0] = True
        features = features[keep]
        instance_ids = [i for i, k in zip(bag.instance_ids, keep) if k]
        coords = None if bag.coords is None else bag.coords[keep]
    else:
        instance_ids = bag.instance_ids
        coords = bag.coords
    return replace(bag, features=features, instance_ids=instance_ids, coords=coords)


@dataclass
class StepReport:
    epoch: int
    step: int
    losses: dict[str, float]
    grad_norm: float


def multitask_step(
    model: MultiTaskModel,
    batch: dict[str, list[Bag]],
    optimizer_state: OptimizerState,
    cfg: TrainConfig,
    rng: np.random.Generator,
    epoch: int = 0,
    step: int = 0,
) -> StepReport:
    """Accumulate every task's gradients, then take one optimizer step.

    Expects gradients zeroed on entry and leaves them zeroed on exit.
    Raises on the first non-finite loss instead of skipping the step.
    """
    losses: dict[str, float] = {}
    for spec in model.registry:
        task_id = spec.task_id
        if task_id not in batch:
            continue
        bags = batch[task_id]
        bag_losses = []
        for bag in bags:
            with record():
                logits, _ = forward_bag(
                    model, task_id, bag.features, mode="train", rng=rng
                )
                loss = ops.cross_entropy_logits(
                    ops.reshape(logits, (1, spec.num_classes)), [bag.labels[task_id]]
                )
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDivergenceError(task_id, step, value)
                backward(ops.scale(loss, spec.loss_weight / len(bags)))
            bag_losses.append(value)
        losses[task_id] = float(np.mean(bag_losses))

    grad_sq = 0.0
    for p in model.parameters():
        if not p.frozen:
            grad_sq += float(np.sum(p.grad * p.grad))

    adamw_step(
        model.parameters(),
        optimizer_state,
        lr=cfg.lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    model.zero_grads()
    return StepReport(epoch, step, losses, float(np.sqrt(grad_sq)))


class TrainingLog:
    """Append-only ``epoch,task_id,split,loss,metric`` lines, flushed per epoch."""

    def __init__(self, path=None):
        self.lines: list[str] = []
        self.step_trace: list[StepReport] = []
        self.path = path
        self._flushed = 0

    def add_line(self, epoch: int, task_id: str, split: str, loss: float, metric) -> None:
        metric_text = "" if metric is None else canonical_float(metric)
        self.lines.append(f"{epoch},{task_id},{split},{canonical_float(loss)},{metric_text}")

    def flush(self) -> None:
        if self.path is None:
            return
        with open(self.path, "a", encoding="utf-8") as fh:
            for line in self.lines[self._flushed :]:
                fh.write(line + "\n")
        self._flushed = len(self.lines)

    def text(self) -> str:
        return "\n".join(self.lines) + ("\n" if self.lines else "")

    @staticmethod
    def parse(text: str) -> list[tuple[int, str, str, float, float | None]]:
        rows = []
        for line in text.splitlines():
            if not line:
                continue
            epoch, task_id, split, loss, metric = line.split(",")
            rows.append(
                (int(epoch), task_id, split, float(loss), float(metric) if metric else None)
            )
        return rows


@dataclass
class TrainResult:
    log: TrainingLog
    best: CheckpointBundle
    final: CheckpointBundle
    best_epoch: int | None
    best_val: float
    diverged: TrainingDivergenceError | None = None


def _epoch_task_order(n_slides: int, epoch_length: int, seed: int, epoch: int, task_index: int):
    """Slide indices for one task and epoch, cycling with reshuffles."""
    order = []
    cycle = 0
    while len(order) < epoch_length:
        perm = derive_rng(seed, "schedule", epoch, task_index, cycle).permutation(n_slides)
        order.extend(perm.tolist())
        cycle += 1
    return order[:epoch_length]


def _validation_metric(spec, scores, labels) -> float:
    try:
        if spec.num_classes == 2:
            return metric_auc(np.asarray(scores)[:, 1], labels)
        return metric_macro_auc(np.asarray(scores), labels, spec.num_classes)
    except MetricUndefinedError:
        return float("nan")


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def train(
    model: MultiTaskModel,
    cohort: Cohort,
    cfg: TrainConfig,
    log_path=None,
    resume: CheckpointBundle | None = None,
    stop_after_steps: int | None = None,
) -> TrainResult:
    """Run the multi-task loop and return the best-validation checkpoint.

    Epoch length is the largest task's training slide count; smaller
    tasks cycle with per-epoch reshuffles so every step still touches
    every task.  The best checkpoint minimizes the mean of per-task
    validation losses.  ``resume`` continues from the (epoch, step)
    counters stored in a bundle's metadata; ``stop_after_steps`` halts
    after that many global steps, leaving a resumable bundle.
    """
    registry = cohort.registry
    report = check_split_coherence(cohort.manifest, cohort.split)
    if not report.coherent:
        raise DataError("refusing to train on incoherent splits:\n" + report.format())

    train_slides = {spec.task_id: cohort.slides_for(spec.task_id, "train") for spec in registry}
    val_slides = {spec.task_id: cohort.slides_for(spec.task_id, "val") for spec in registry}
    if cfg.epochs > 0:
        for task_id, slides in train_slides.items():
            if not slides:
                raise DataError(f"task {task_id!r} has no training slides")
    epoch_length = max((len(s) for s in train_slides.values()), default=0)

    optimizer_state = OptimizerState()
    start_epoch, start_step, best_val = 0, 0, float("inf")
    global_step = 0
    if resume is not None:
        _, optimizer_state, meta = load_checkpoint(resume, model=model)
        start_epoch = int(meta.get("train.next_epoch", 0))
        start_step = int(meta.get("train.next_step", 0))
        best_val = float(meta.get("train.best_val", "inf"))
        global_step = int(meta.get("train.global_step", 0))

    def snapshot(next_epoch, next_step, extra=None):
        meta = {
            "train.seed": str(cfg.seed),
            "train.next_epoch": str(next_epoch),
            "train.next_step": str(next_step),
            "train.global_step": str(global_step),
            "train.best_val": canonical_float(best_val),
        }
        if extra:
            meta.update(extra)
        return save_checkpoint(model, optimizer_state, meta)

    log = TrainingLog(log_path)
    best_bundle = snapshot(start_epoch, start_step)
    best_epoch = None
    diverged = None

    for epoch in range(start_epoch, cfg.epochs):
        orders = {
            spec.task_id: _epoch_task_order(
                len(train_slides[spec.task_id]), epoch_length, cfg.seed, epoch, ti
            )
            for ti, spec in enumerate(registry)
        }
        epoch_losses: dict[str, list[float]] = {spec.task_id: [] for spec in registry}

        first_step = start_step if epoch == start_epoch else 0
        stopped = False
        for step in range(first_step, epoch_length):
            batch: dict[str, list[Bag]] = {}
            for ti, spec in enumerate(registry):
                slides = train_slides[spec.task_id]
                bags = []
                for b in range(cfg.bags_per_task):
                    slide = slides[orders[spec.task_id][step]]
                    bag = sample_bag(
                        slide,
                        cohort.store,
                        "train",
                        derive_rng(cfg.seed, "bag", epoch, step, ti, b),
                        size_range=(cfg.bag_min, cfg.bag_max),
                        val_size=cfg.val_bag,
                    )
                    bag = augment_bag(
                        bag, cfg.augment, derive_rng(cfg.seed, "augment", epoch, step, ti, b)
                    )
                    bags.append(bag)
                batch[spec.task_id] = bags

            try:
                step_report = multitask_step(
                    model,
                    batch,
                    optimizer_state,
                    cfg,
                    derive_rng(cfg.seed, "dropout", epoch, step),
                    epoch=epoch,
                    step=step,
                )
            except TrainingDivergenceError as err:
                diverged = err
                stopped = True
                break

            log.step_trace.append(step_report)
            for task_id, value in step_report.losses.items():
                epoch_losses[task_id].append(value)
            global_step += 1
            if stop_after_steps is not None and global_step >= stop_after_steps:
                final = snapshot(epoch, step + 1)
                log.flush()
                return TrainResult(log, best_bundle, final, best_epoch, best_val, diverged)

        if diverged is not None and stopped:
            break

        for spec in registry:
            values = epoch_losses[spec.task_id]
            log.add_line(epoch, spec.task_id, "train",
                         float(np.mean(values)) if values else float("nan"), None)

        if cfg.validate:
            val_means = []
            for spec in registry:
                losses, scores, labels = [], [], []
                for slide in val_slides[spec.task_id]:
                    bag = sample_bag(
                        slide,
                        cohort.store,
                        "val",
                        derive_rng(cfg.seed, "valbag", slide.slide_id),
                        size_range=(cfg.bag_min, cfg.bag_max),
                        val_size=cfg.val_bag,
                    )
                    logits, _ = forward_bag(model, spec.task_id, bag.features, mode="eval")
                    loss = ops.cross_entropy_logits(
                        ops.reshape(logits, (1, spec.num_classes)), [bag.labels[spec.task_id]]
                    )
                    losses.append(loss.item())
                    scores.append(_softmax_rows(logits.data))
                    labels.append(bag.labels[spec.task_id])
                mean_loss = float(np.mean(losses)) if losses else float("nan")
                metric = _validation_metric(spec, scores, labels) if losses else float("nan")
                log.add_line(epoch, spec.task_id, "val", mean_loss, metric)
                val_means.append(mean_loss)

            mean_val = float(np.mean(val_means)) if val_means else float("nan")
            if np.isfinite(mean_val) and mean_val < best_val:
                best_val = mean_val
                best_epoch = epoch
                extra = {"train.best_epoch": str(epoch)}
                for spec, value in zip(registry, val_means):
                    extra[f"val_loss.{spec.task_id}"] = canonical_float(value)
                best_bundle = snapshot(epoch + 1, 0, extra)

        log.flush()

    final = snapshot(cfg.epochs, 0)
    if not cfg.validate and diverged is None and cfg.epochs > 0:
        best_bundle = final
    return TrainResult(log, best_bundle, final, best_epoch, best_val, diverged)
