"""Cohort ingestion: manifests, feature containers, splits, synthetic data."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .features import FeatureStore, read_coords, read_features, read_header, write_features
from .manifest import (
    Manifest,
    SlideRecord,
    default_registry_path,
    parse_manifest,
    serialize_manifest,
    write_manifest,
)
from .splits import (
    CoherenceReport,
    SplitAssignment,
    check_split_coherence,
    make_patient_splits,
    patient_atomicity_violations,
)
from .synth import (
    SynthCohort,
    SynthConfig,
    SynthTask,
    oracle_concept_scores,
    oracle_radius,
    synth_generate,
)


@dataclass
class Cohort:
    """A manifest, its feature store, and a split assignment, ready to train."""

    manifest: Manifest
    store: FeatureStore
    split: SplitAssignment

    @classmethod
    def load(cls, manifest_path, split_fractions=(0.8, 0.2, 0.0), seed: int = 0,
             registry_path=None) -> "Cohort":
        manifest_path = Path(manifest_path)
        manifest = parse_manifest(manifest_path, registry_path=registry_path)
        store = FeatureStore(manifest_path.parent)
        split = make_patient_splits(manifest, split_fractions, seed)
        return cls(manifest, store, split)

    def slides_for(self, task_id: str, split: str) -> list[SlideRecord]:
        return [
            rec
            for rec in self.manifest.labeled_slides(task_id)
            if self.split.by_slide.get(rec.slide_id) == split
        ]

    @property
    def registry(self):
        return self.manifest.registry


__all__ = [
    "Cohort",
    "CoherenceReport",
    "FeatureStore",
    "Manifest",
    "SlideRecord",
    "SplitAssignment",
    "SynthCohort",
    "SynthConfig",
    "SynthTask",
    "check_split_coherence",
    "default_registry_path",
    "make_patient_splits",
    "oracle_concept_scores",
    "oracle_radius",
    "parse_manifest",
    "patient_atomicity_violations",
    "read_coords",
    "read_features",
    "read_header",
    "serialize_manifest",
    "synth_generate",
    "write_features",
    "write_manifest",
]
