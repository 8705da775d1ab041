"""Cohort manifests: one row per slide, weak labels per task column.

Format: UTF-8 comma-separated text.  Lines starting with ``#`` are
comments.  The header row is

    slide_id,patient_id,feature_file,<task_id_1>,<task_id_2>,...

and an empty task cell means the slide is unlabeled for that task.
Fields must not contain commas.  The task registry lives in a sibling
file (``cohort.csv`` -> ``cohort.tasks.ini``); see :mod:`slidemil.tasks`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..errors import DataError
from ..tasks import TaskRegistry, read_registry, write_registry
from .features import read_header

FIXED_COLUMNS = ("slide_id", "patient_id", "feature_file")


@dataclass
class SlideRecord:
    slide_id: str
    patient_id: str
    feature_file: str
    labels: dict[str, int] = field(default_factory=dict)


@dataclass
class Manifest:
    records: list[SlideRecord]
    registry: TaskRegistry

    def record(self, slide_id: str) -> SlideRecord:
        for rec in self.records:
            if rec.slide_id == slide_id:
                return rec
        raise DataError(f"slide {slide_id!r} not in manifest")

    def labeled_slides(self, task_id: str) -> list[SlideRecord]:
        self.registry.get(task_id)
        return [rec for rec in self.records if task_id in rec.labels]

    def patients(self) -> dict[str, list[SlideRecord]]:
        out: dict[str, list[SlideRecord]] = {}
        for rec in self.records:
            out.setdefault(rec.patient_id, []).append(rec)
        return out


def default_registry_path(manifest_path) -> Path:
    return Path(manifest_path).with_suffix(".tasks.ini")


def parse_manifest(path, registry_path=None, check_features: bool = True) -> Manifest:
    """Parse and validate a manifest file.

    Every referenced feature file must exist with a consistent header
    (uniform width across the manifest) unless ``check_features`` is
    off.  Errors cite the offending line numbers.
    """
    path = Path(path)
    if registry_path is None:
        registry_path = default_registry_path(path)
    if not Path(registry_path).exists():
        raise DataError(f"task registry file not found at {registry_path}")
    registry = read_registry(registry_path)

    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = fh.read().splitlines()

    header = None
    header_line = 0
    rows: list[tuple[int, list[str]]] = []
    for lineno, line in enumerate(raw_lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        cells = [c.strip() for c in line.split(",")]
        if header is None:
            header = cells
            header_line = lineno
        else:
            rows.append((lineno, cells))

    if header is None:
        raise DataError(f"{path}: no header row found")
    if tuple(header[:3]) != FIXED_COLUMNS:
        raise DataError(
            f"{path} line {header_line}: header must start with "
            f"{','.join(FIXED_COLUMNS)}, got {','.join(header[:3])}"
        )
    task_columns = header[3:]
    for column in task_columns:
        if column not in registry:
            raise DataError(
                f"{path} line {header_line}: unknown task column {column!r} "
                f"(registered: {registry.ids()})"
            )

    records: list[SlideRecord] = []
    record_lines: list[int] = []
    seen: dict[str, int] = {}
    for lineno, cells in rows:
        if len(cells) != len(header):
            raise DataError(
                f"{path} line {lineno}: expected {len(header)} cells, got {len(cells)}"
            )
        slide_id, patient_id, feature_file = cells[:3]
        if slide_id in seen:
            raise DataError(
                f"{path}: duplicate slide_id {slide_id!r} on lines {seen[slide_id]} and {lineno}"
            )
        seen[slide_id] = lineno
        labels: dict[str, int] = {}
        for column, cell in zip(task_columns, cells[3:]):
            if cell == "":
                continue
            try:
                value = int(cell)
            except ValueError:
                raise DataError(
                    f"{path} line {lineno}: label {cell!r} for task {column!r} is not an integer"
                ) from None
            classes = registry.get(column).num_classes
            if not 0 <= value < classes:
                raise DataError(
                    f"{path} line {lineno}: label {value} for task {column!r} "
                    f"outside [0, {classes})"
                )
            labels[column] = value
        records.append(SlideRecord(slide_id, patient_id, feature_file, labels))
        record_lines.append(lineno)

    if check_features:
        width = None
        for rec, lineno in zip(records, record_lines):
            feature_path = path.parent / rec.feature_file
            if not feature_path.exists():
                raise DataError(
                    f"{path} line {lineno}: feature file {rec.feature_file!r} for "
                    f"slide {rec.slide_id!r} not found"
                )
            n, d = read_header(feature_path)
            if n < 1:
                raise DataError(f"{feature_path}: slide {rec.slide_id!r} has no instances")
            if width is None:
                width = d
            elif d != width:
                raise DataError(
                    f"{feature_path}: width {d} differs from manifest-wide width {width}"
                )

    return Manifest(records, registry)


def serialize_manifest(manifest: Manifest) -> str:
    task_ids = manifest.registry.ids()
    lines = [",".join([*FIXED_COLUMNS, *task_ids])]
    for rec in manifest.records:
        cells = [rec.slide_id, rec.patient_id, rec.feature_file]
        for task_id in task_ids:
            cells.append("" if task_id not in rec.labels else str(rec.labels[task_id]))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_manifest(manifest: Manifest, path, registry_path=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_manifest(manifest))
    if registry_path is None:
        registry_path = default_registry_path(path)
    write_registry(manifest.registry, registry_path)
