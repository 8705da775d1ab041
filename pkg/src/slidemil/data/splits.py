"""Patient-level splits and the cross-task coherence check.

Splits are assigned per patient so no patient's slides ever span two
splits.  Because the assignment is global across tasks, coherence (no
validation or test slide of one task training another) holds by
construction; the checker exists to validate externally supplied,
possibly per-task, assignments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigurationError, DataError
from ..seeding import derive_rng
from .manifest import Manifest

SPLITS = ("train", "val", "test")


@dataclass
class SplitAssignment:
    by_slide: dict[str, str]
    stratification_warnings: list[str] = field(default_factory=list)

    def split_of(self, slide_id: str) -> str:
        if slide_id not in self.by_slide:
            raise DataError(f"slide {slide_id!r} has no split assignment")
        return self.by_slide[slide_id]

    def slides_in(self, split: str) -> set[str]:
        return {s for s, name in self.by_slide.items() if name == split}


def make_patient_splits(manifest: Manifest, fractions=(0.8, 0.2, 0.0), seed: int = 0) -> SplitAssignment:
    """Shuffle patients by seed and assign greedily to meet slide-count targets.

    Each patient goes, with all slides, to the split whose remaining
    deficit (target minus assigned slide count) is largest; ties resolve
    in train/val/test order.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ConfigurationError(f"expected 3 fractions (train, val, test), got {len(fractions)}")
    if any(f < 0 for f in fractions):
        raise ConfigurationError(f"fractions must be nonnegative, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"fractions must sum to 1, got {sum(fractions)}")

    patients = manifest.patients()
    total = len(manifest.records)
    targets = [f * total for f in fractions]
    assigned = [0, 0, 0]

    order = sorted(patients)
    derive_rng(seed, "patient-splits").shuffle(order)

    by_slide: dict[str, str] = {}
    for patient_id in order:
        slides = patients[patient_id]
        deficits = [targets[i] - assigned[i] for i in range(3)]
        pick = max(range(3), key=lambda i: (deficits[i], -i))
        assigned[pick] += len(slides)
        for rec in slides:
            by_slide[rec.slide_id] = SPLITS[pick]

    assignment = SplitAssignment(by_slide)
    populated_splits = sum(1 for f in fractions if f > 0)
    if populated_splits > 1:
        for spec in manifest.registry:
            landed = {by_slide[rec.slide_id] for rec in manifest.labeled_slides(spec.task_id)}
            if len(landed) == 1:
                assignment.stratification_warnings.append(
                    f"task {spec.task_id!r}: all labeled slides landed in "
                    f"{next(iter(landed))!r}"
                )
    return assignment


@dataclass
class CoherenceReport:
    violations: list[tuple[str, str, str]] = field(default_factory=list)

    @property
    def coherent(self) -> bool:
        return not self.violations

    def format(self) -> str:
        if self.coherent:
            return "coherent: no validation/test slide of any task trains another task\n"
        lines = [f"{len(self.violations)} coherence violation(s):"]
        for task_a, task_b, slide in self.violations:
            lines.append(f"  slide {slide!r}: held out for {task_a!r} but trains {task_b!r}")
        return "\n".join(lines) + "\n"


def check_split_coherence(manifest: Manifest, assignments) -> CoherenceReport:
    """List every (task A, task B, slide) where a held-out slide of A trains B.

    ``assignments`` is either one global :class:`SplitAssignment` or a
    mapping task_id -> assignment.  A slide counts for a task only if it
    is labeled for that task.
    """
    per_task: dict[str, SplitAssignment] = {}
    for spec in manifest.registry:
        if isinstance(assignments, SplitAssignment):
            per_task[spec.task_id] = assignments
        else:
            if spec.task_id not in assignments:
                raise DataError(f"no split assignment supplied for task {spec.task_id!r}")
            per_task[spec.task_id] = assignments[spec.task_id]

    held_out: dict[str, set[str]] = {}
    training: dict[str, set[str]] = {}
    for spec in manifest.registry:
        task_id = spec.task_id
        assignment = per_task[task_id]
        labeled = {rec.slide_id for rec in manifest.labeled_slides(task_id)}
        held_out[task_id] = {
            s for s in labeled if assignment.by_slide.get(s) in ("val", "test")
        }
        training[task_id] = {s for s in labeled if assignment.by_slide.get(s) == "train"}

    violations = []
    ids = manifest.registry.ids()
    for task_a in ids:
        for task_b in ids:
            if task_a == task_b:
                continue
            for slide in sorted(held_out[task_a] & training[task_b]):
                violations.append((task_a, task_b, slide))
    return CoherenceReport(violations)


def patient_atomicity_violations(manifest: Manifest, assignment: SplitAssignment) -> list[str]:
    """Patients whose slides span more than one split."""
    broken = []
    for patient_id, slides in manifest.patients().items():
        splits = {assignment.by_slide.get(rec.slide_id) for rec in slides}
        if len(splits) > 1:
            broken.append(patient_id)
    return sorted(broken)
