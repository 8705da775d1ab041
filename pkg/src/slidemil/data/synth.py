"""Synthetic multi-task bag cohorts with known signal structure.

Instances are background Gaussian noise.  Every task owns one concept
point per positive class (a scaled random unit direction); a slide
labeled positive for a task gets ``signal_fraction`` of its instances
shifted onto that concept.  Labels are therefore exact functions of the
generating seed, the per-slide signal instances are known ground truth
for attention checks, and a distance-counting oracle bounds achievable
performance before any training.

All tasks share the same background distribution, so representations
learned for one task transfer to the others.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from ..seeding import derive_rng
from ..tasks import TaskRegistry, TaskSpec
from .features import FeatureStore
from .manifest import Manifest, SlideRecord

PATCH_SIZE = 256


@dataclass
class SynthTask:
    task_id: str
    num_classes: int = 2
    kind: str = "binary"


@dataclass
class SynthConfig:
    n_slides: int = 600
    instances_per_slide: int = 200
    input_width: int = 32
    tasks: list[SynthTask] = field(
        default_factory=lambda: [
            SynthTask("task_a"),
            SynthTask("task_b"),
            SynthTask("task_c"),
        ]
    )
    signal_fraction: float = 0.1
    noise_sigma: float = 1.0
    concept_shift: float = 6.0
    max_slides_per_patient: int = 2
    seed: int = 0
    # Concept directions default to the cohort seed.  A downstream cohort
    # can reuse an upstream cohort's directions (fresh slides, shared
    # diagnostic concept) by pointing this at the upstream seed.
    concept_seed: int | None = None


@dataclass
class SynthCohort:
    manifest: Manifest
    store: FeatureStore
    # (slide_id, task_id) -> indices of the instances carrying that task's signal
    signal_indices: dict[tuple[str, str], np.ndarray]
    # (task_id, class) -> concept point in feature space, class >= 1
    concept_points: dict[tuple[str, int], np.ndarray]


def _concept_direction(seed: int, task_index: int, class_index: int, width: int) -> np.ndarray:
    rng = derive_rng(seed, "concept", task_index, class_index)
    v = rng.normal(size=width)
    return v / np.linalg.norm(v)


def _balanced_labels(n: int, classes: int, rng: np.random.Generator) -> np.ndarray:
    base = np.arange(n) % classes
    rng.shuffle(base)
    return base


def synth_generate(cfg: SynthConfig, root) -> SynthCohort:
    """Generate a cohort under ``root`` and return it with its ground truth."""
    if not cfg.tasks:
        raise ConfigurationError("at least one synthetic task is required")
    for task in cfg.tasks:
        if cfg.n_slides < 2 * task.num_classes:
            raise ConfigurationError(
                f"task {task.task_id!r}: {cfg.n_slides} slides cannot give "
                f"2 per class with {task.num_classes} classes"
            )
    if not 0.0 < cfg.signal_fraction <= 1.0:
        raise ConfigurationError(f"signal_fraction must be in (0, 1], got {cfg.signal_fraction}")

    root = Path(root)
    store = FeatureStore(root)
    registry = TaskRegistry(
        [TaskSpec(t.task_id, t.kind, t.num_classes, cohort_tag="synthetic") for t in cfg.tasks]
    )

    concept_seed = cfg.seed if cfg.concept_seed is None else cfg.concept_seed
    concept_points: dict[tuple[str, int], np.ndarray] = {}
    for ti, task in enumerate(cfg.tasks):
        for cls in range(1, task.num_classes):
            direction = _concept_direction(concept_seed, ti, cls, cfg.input_width)
            concept_points[(task.task_id, cls)] = cfg.concept_shift * direction

    label_rng = derive_rng(cfg.seed, "labels")
    labels_per_task = {
        task.task_id: _balanced_labels(cfg.n_slides, task.num_classes, label_rng)
        for task in cfg.tasks
    }

    patient_rng = derive_rng(cfg.seed, "patients")
    patient_of: list[str] = []
    patient_index = 0
    while len(patient_of) < cfg.n_slides:
        count = int(patient_rng.integers(1, cfg.max_slides_per_patient + 1))
        count = min(count, cfg.n_slides - len(patient_of))
        patient_of.extend([f"patient_{patient_index:05d}"] * count)
        patient_index += 1

    n_inst = cfg.instances_per_slide
    grid_width = int(np.ceil(np.sqrt(n_inst)))
    coords = np.stack(
        [(np.arange(n_inst) % grid_width) * PATCH_SIZE,
         (np.arange(n_inst) // grid_width) * PATCH_SIZE],
        axis=1,
    ).astype(np.uint32)
    signal_count = max(1, round(cfg.signal_fraction * n_inst))

    records: list[SlideRecord] = []
    signal_indices: dict[tuple[str, str], np.ndarray] = {}
    for si in range(cfg.n_slides):
        slide_id = f"slide_{si:05d}"
        rng = derive_rng(cfg.seed, "slide", si)
        features = cfg.noise_sigma * rng.normal(size=(n_inst, cfg.input_width))

        pool = rng.permutation(n_inst)
        cursor = 0
        labels: dict[str, int] = {}
        for task in cfg.tasks:
            cls = int(labels_per_task[task.task_id][si])
            labels[task.task_id] = cls
            if cls == 0:
                continue
            if cursor + signal_count <= n_inst:
                chosen = pool[cursor : cursor + signal_count]
                cursor += signal_count
            else:
                chosen = rng.choice(n_inst, size=signal_count, replace=False)
            features[chosen] += concept_points[(task.task_id, cls)]
            signal_indices[(slide_id, task.task_id)] = np.sort(chosen)

        feature_ref = f"features/{slide_id}.tcf"
        store.write(feature_ref, features.astype(np.float32), coords)
        records.append(SlideRecord(slide_id, patient_of[si], feature_ref, labels))

    manifest = Manifest(records, registry)
    return SynthCohort(manifest, store, signal_indices, concept_points)


def oracle_radius(cfg: SynthConfig) -> float:
    """Distance threshold halfway (in squared distance) between signal and noise."""
    return float(np.sqrt(cfg.noise_sigma**2 * cfg.input_width + cfg.concept_shift**2 / 2.0))


def oracle_concept_scores(
    cohort: SynthCohort, task_id: str, cfg: SynthConfig, positive_class: int = 1
) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Slide scores from the generating rule: instances near the concept point.

    Counts, per slide, the instances within :func:`oracle_radius` of the
    positive class concept.  This classifier sees the ground truth the
    generator used, so its AUC bounds what a trained model can reach and
    confirms the cohort is solvable at all.
    """
    concept = cohort.concept_points[(task_id, positive_class)]
    radius = oracle_radius(cfg)
    slide_ids, scores, labels = [], [], []
    for rec in cohort.manifest.records:
        if task_id not in rec.labels:
            continue
        features = cohort.store.read(rec.feature_file)
        dist = np.linalg.norm(features - concept[None, :], axis=1)
        slide_ids.append(rec.slide_id)
        scores.append(float(np.count_nonzero(dist <= radius)))
        labels.append(int(rec.labels[task_id] == positive_class))
    return slide_ids, np.asarray(scores), np.asarray(labels)
