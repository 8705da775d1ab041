"""Weak-label task descriptions and the registry file format.

The registry is INI-style text, one section per task:

    [tumor_subtype]
    kind = multiclass
    classes = 3
    weight = 1.0
    cohort = lung

Section order is the canonical task order used everywhere a fixed
iteration order matters (loss accumulation, logging, checkpoints).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .errors import ConfigurationError, RegistryError

TASK_KINDS = ("binary", "multiclass", "ordinal_as_multiclass", "survival_event_binary")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    kind: str = "binary"
    num_classes: int = 2
    loss_weight: float = 1.0
    cohort_tag: str = ""

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigurationError(f"unknown task kind {self.kind!r} for {self.task_id!r}")
        if self.kind in ("binary", "survival_event_binary") and self.num_classes != 2:
            raise ConfigurationError(
                f"task {self.task_id!r}: kind {self.kind} requires 2 classes, "
                f"got {self.num_classes}"
            )
        if self.num_classes < 2:
            raise ConfigurationError(f"task {self.task_id!r}: needs at least 2 classes")
        if self.loss_weight <= 0:
            raise ConfigurationError(f"task {self.task_id!r}: loss weight must be positive")


@dataclass
class TaskRegistry:
    tasks: list[TaskSpec] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for spec in self.tasks:
            if spec.task_id in seen:
                raise RegistryError(f"duplicate task id {spec.task_id!r}")
            seen.add(spec.task_id)

    def __iter__(self):
        return iter(self.tasks)

    def __len__(self):
        return len(self.tasks)

    def __contains__(self, task_id: str):
        return any(t.task_id == task_id for t in self.tasks)

    def get(self, task_id: str) -> TaskSpec:
        for spec in self.tasks:
            if spec.task_id == task_id:
                return spec
        raise RegistryError(f"task {task_id!r} is not registered")

    def ids(self) -> list[str]:
        return [t.task_id for t in self.tasks]


def parse_registry(text: str) -> TaskRegistry:
    parser = configparser.ConfigParser()
    parser.read_string(text)
    tasks = []
    for section in parser.sections():
        block = parser[section]
        tasks.append(
            TaskSpec(
                task_id=section,
                kind=block.get("kind", "binary"),
                num_classes=block.getint("classes", 2),
                loss_weight=block.getfloat("weight", 1.0),
                cohort_tag=block.get("cohort", ""),
            )
        )
    return TaskRegistry(tasks)


def read_registry(path) -> TaskRegistry:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_registry(fh.read())


def format_registry(registry: TaskRegistry) -> str:
    parser = configparser.ConfigParser()
    for spec in registry:
        parser[spec.task_id] = {
            "kind": spec.kind,
            "classes": str(spec.num_classes),
            "weight": repr(spec.loss_weight),
            "cohort": spec.cohort_tag,
        }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def write_registry(registry: TaskRegistry, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_registry(registry))
