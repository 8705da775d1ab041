"""Manifests, feature containers, splits, and the synthetic generator."""

import tracemalloc

import numpy as np
import pytest

from slidemil.data import (
    Cohort,
    FeatureStore,
    Manifest,
    SlideRecord,
    SplitAssignment,
    check_split_coherence,
    make_patient_splits,
    oracle_concept_scores,
    parse_manifest,
    patient_atomicity_violations,
    read_coords,
    read_features,
    serialize_manifest,
    synth_generate,
    write_features,
    write_manifest,
)
from slidemil.data.synth import SynthConfig, SynthTask
from slidemil.errors import ConfigurationError, DataError
from slidemil.metrics import metric_auc
from slidemil.tasks import TaskRegistry, TaskSpec, parse_registry, format_registry


REGISTRY_TEXT = """\
[tumor]
kind = binary
classes = 2
weight = 1.0

[grade]
kind = ordinal_as_multiclass
classes = 6
weight = 0.5
"""


def write_cohort_files(tmp_path, rows, registry_text=REGISTRY_TEXT, features=True):
    manifest_path = tmp_path / "cohort.csv"
    (tmp_path / "cohort.tasks.ini").write_text(registry_text)
    lines = ["# synthetic fixture", "slide_id,patient_id,feature_file,tumor,grade"]
    lines.extend(rows)
    manifest_path.write_text("\n".join(lines) + "\n")
    if features:
        rng = np.random.default_rng(0)
        for row in rows:
            cells = row.split(",")
            write_features(tmp_path / cells[2], rng.normal(size=(4, 3)).astype(np.float32))
    return manifest_path


class TestFeatureStore:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        values = rng.normal(size=(7, 5)).astype(np.float32)
        # Exercise signed zero, denormals, and large magnitudes.
        values[0, 0] = -0.0
        values[0, 1] = np.float32(1e-42)
        values[0, 2] = np.float32(3e38)
        path = tmp_path / "slide.tcf"
        write_features(path, values)
        loaded = read_features(path)
        assert loaded.dtype == np.float64
        assert np.array_equal(
            loaded.astype(np.float32).view(np.uint32), values.view(np.uint32)
        )

    def test_coords_round_trip(self, tmp_path):
        path = tmp_path / "slide.tcf"
        coords = np.array([[0, 0], [256, 0], [0, 256]], dtype=np.uint32)
        write_features(path, np.ones((3, 2), dtype=np.float32), coords)
        got = read_coords(path)
        assert np.array_equal(got, coords)

    def test_no_coords_returns_none(self, tmp_path):
        path = tmp_path / "slide.tcf"
        write_features(path, np.ones((2, 2), dtype=np.float32))
        assert read_coords(path) is None

    def test_truncated_payload_reports_byte_counts(self, tmp_path):
        path = tmp_path / "slide.tcf"
        write_features(path, np.ones((4, 4), dtype=np.float32))
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(DataError, match="expected 64 bytes, found 54"):
            read_features(path)

    def test_magic_mismatch(self, tmp_path):
        path = tmp_path / "slide.tcf"
        write_features(path, np.ones((2, 2), dtype=np.float32))
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="magic"):
            read_features(path)

    def test_overflowing_header_rejected(self, tmp_path):
        path = tmp_path / "slide.tcf"
        header = b"TCF1" + (2**20).to_bytes(4, "little") + (2**20).to_bytes(4, "little")
        path.write_bytes(header)
        with pytest.raises(DataError, match="limit"):
            read_features(path)

    def test_large_store_streams_slide_by_slide(self, tmp_path):
        """Reading a many-slide store must not hold the store resident."""
        store = FeatureStore(tmp_path)
        n, d = 1024, 512
        slide_bytes = n * d * 4
        n_slides = 64  # 128 MB of features on disk
        payload = np.random.default_rng(2).normal(size=(n, d)).astype(np.float32)
        for i in range(n_slides):
            store.write(f"s{i}.tcf", payload)

        tracemalloc.start()
        baseline, _ = tracemalloc.get_traced_memory()
        checksum = 0.0
        for i in range(n_slides):
            checksum += float(store.read(f"s{i}.tcf").sum())
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        assert np.isfinite(checksum)
        # float64 promotion makes one resident slide 2x its file size; allow
        # a few slides of slack but nothing near the 128 MB store size.
        assert peak - baseline < 8 * slide_bytes


class TestManifest:
    def test_empty_record_section(self, tmp_path):
        path = write_cohort_files(tmp_path, [])
        manifest = parse_manifest(path)
        assert manifest.records == []
        assert manifest.registry.ids() == ["tumor", "grade"]

    def test_duplicate_slide_id_cites_both_lines(self, tmp_path):
        rows = [
            "s1,p1,s1.tcf,0,",
            "s2,p1,s2.tcf,1,3",
            "s1,p2,s1b.tcf,,2",
        ]
        path = write_cohort_files(tmp_path, rows)
        with pytest.raises(DataError, match="lines 3 and 5"):
            parse_manifest(path)

    def test_round_trip_identity(self, tmp_path):
        rows = [
            "s1,p1,s1.tcf,0,",
            "s2,p1,s2.tcf,1,3",
            "s3,p2,s3.tcf,,5",
        ]
        path = write_cohort_files(tmp_path, rows)
        manifest = parse_manifest(path)
        out_path = tmp_path / "again.csv"
        write_manifest(manifest, out_path)
        again = parse_manifest(out_path, check_features=False)
        assert serialize_manifest(again) == serialize_manifest(manifest)
        assert [r.labels for r in again.records] == [r.labels for r in manifest.records]

    def test_unknown_task_column(self, tmp_path):
        manifest_path = tmp_path / "cohort.csv"
        (tmp_path / "cohort.tasks.ini").write_text(REGISTRY_TEXT)
        manifest_path.write_text("slide_id,patient_id,feature_file,mystery\n")
        with pytest.raises(DataError, match="mystery"):
            parse_manifest(manifest_path)

    def test_label_out_of_range_cites_line(self, tmp_path):
        path = write_cohort_files(tmp_path, ["s1,p1,s1.tcf,2,"])
        with pytest.raises(DataError, match="line 3"):
            parse_manifest(path)

    def test_non_integer_label(self, tmp_path):
        path = write_cohort_files(tmp_path, ["s1,p1,s1.tcf,yes,"])
        with pytest.raises(DataError, match="not an integer"):
            parse_manifest(path)

    def test_missing_feature_file(self, tmp_path):
        path = write_cohort_files(tmp_path, ["s1,p1,missing.tcf,0,"], features=False)
        with pytest.raises(DataError, match="missing.tcf"):
            parse_manifest(path)

    def test_registry_round_trip(self):
        registry = parse_registry(REGISTRY_TEXT)
        again = parse_registry(format_registry(registry))
        assert again.ids() == registry.ids()
        assert [t.num_classes for t in again] == [2, 6]
        assert [t.loss_weight for t in again] == [1.0, 0.5]


def toy_manifest(patient_slides, labels_by_slide=None, tasks=None):
    registry = TaskRegistry(tasks or [TaskSpec("t")])
    records = []
    for patient, slides in patient_slides.items():
        for slide in slides:
            labels = (labels_by_slide or {}).get(slide, {t.task_id: 0 for t in registry})
            records.append(SlideRecord(slide, patient, f"{slide}.tcf", dict(labels)))
    return Manifest(records, registry)


class TestSplits:
    def test_single_patient_all_in_train(self):
        manifest = toy_manifest({"p1": ["s1", "s2", "s3"]})
        assignment = make_patient_splits(manifest, (0.4, 0.3, 0.3), seed=1)
        assert all(v == "train" for v in assignment.by_slide.values())

    def test_ten_patients_exact_split(self):
        manifest = toy_manifest({f"p{i}": [f"s{i}"] for i in range(10)})
        assignment = make_patient_splits(manifest, (0.8, 0.2, 0.0), seed=2)
        counts = {name: len(assignment.slides_in(name)) for name in ("train", "val", "test")}
        assert counts == {"train": 8, "val": 2, "test": 0}

    def test_fractions_must_sum_to_one(self):
        manifest = toy_manifest({"p1": ["s1"]})
        with pytest.raises(ConfigurationError):
            make_patient_splits(manifest, (0.5, 0.2, 0.2), seed=0)

    def test_patient_atomicity_by_construction(self):
        rng = np.random.default_rng(3)
        patients = {
            f"p{i}": [f"s{i}_{j}" for j in range(int(rng.integers(1, 6)))] for i in range(50)
        }
        manifest = toy_manifest(patients)
        for seed in range(5):
            assignment = make_patient_splits(manifest, (0.6, 0.2, 0.2), seed=seed)
            assert patient_atomicity_violations(manifest, assignment) == []

    def test_achieved_fractions_close_to_targets(self):
        rng = np.random.default_rng(4)
        patients = {
            f"p{i}": [f"s{i}_{j}" for j in range(int(rng.integers(1, 5)))] for i in range(200)
        }
        manifest = toy_manifest(patients)
        total = len(manifest.records)
        for seed in range(20):
            assignment = make_patient_splits(manifest, (0.5, 0.25, 0.25), seed=seed)
            for name, target in zip(("train", "val", "test"), (0.5, 0.25, 0.25)):
                achieved = len(assignment.slides_in(name)) / total
                assert abs(achieved - target) <= 0.05, (seed, name, achieved)

    def test_stratification_warning(self):
        labels = {"s0": {"t": 0}, "s1": {}, "s2": {}, "s3": {}}
        manifest = toy_manifest({f"p{i}": [f"s{i}"] for i in range(4)}, labels)
        assignment = make_patient_splits(manifest, (0.75, 0.25, 0.0), seed=0)
        assert any("t" in w for w in assignment.stratification_warnings)


class TestCoherence:
    def test_single_task_always_coherent(self):
        manifest = toy_manifest({"p1": ["s1"], "p2": ["s2"]})
        assignment = SplitAssignment({"s1": "train", "s2": "val"})
        assert check_split_coherence(manifest, assignment).coherent

    def test_constructed_violation(self):
        tasks = [TaskSpec("a"), TaskSpec("b")]
        labels = {"s": {"a": 0, "b": 1}, "s2": {"a": 1, "b": 0}}
        manifest = toy_manifest({"p1": ["s"], "p2": ["s2"]}, labels, tasks)
        per_task = {
            "a": SplitAssignment({"s": "val", "s2": "train"}),
            "b": SplitAssignment({"s": "train", "s2": "val"}),
        }
        report = check_split_coherence(manifest, per_task)
        assert report.violations == [("a", "b", "s"), ("b", "a", "s2")]

    def test_global_split_coherent_by_construction(self):
        rng = np.random.default_rng(5)
        tasks = [TaskSpec(f"t{k}") for k in range(4)]
        labels = {}
        patients = {}
        for i in range(100):
            slide = f"s{i}"
            patients[f"p{i}"] = [slide]
            labels[slide] = {t.task_id: int(rng.integers(0, 2))
                             for t in tasks if rng.random() > 0.3}
        manifest = toy_manifest(patients, labels, tasks)
        assignment = make_patient_splits(manifest, (0.6, 0.2, 0.2), seed=1)
        assert check_split_coherence(manifest, assignment).coherent

    def test_matches_bruteforce_pairwise_intersection(self):
        rng = np.random.default_rng(6)
        tasks = [TaskSpec(f"t{k}") for k in range(4)]
        labels = {}
        patients = {}
        for i in range(100):
            slide = f"s{i}"
            patients[f"p{i}"] = [slide]
            labels[slide] = {t.task_id: int(rng.integers(0, 2))
                             for t in tasks if rng.random() > 0.4}
        manifest = toy_manifest(patients, labels, tasks)
        per_task = {
            t.task_id: SplitAssignment(
                {f"s{i}": ("train", "val", "test")[rng.integers(0, 3)] for i in range(100)}
            )
            for t in tasks
        }
        report = check_split_coherence(manifest, per_task)

        expected = set()
        for a in tasks:
            for b in tasks:
                if a.task_id == b.task_id:
                    continue
                held = {s for s, l in labels.items() if a.task_id in l
                        and per_task[a.task_id].by_slide[s] in ("val", "test")}
                trains = {s for s, l in labels.items() if b.task_id in l
                          and per_task[b.task_id].by_slide[s] == "train"}
                for s in held & trains:
                    expected.add((a.task_id, b.task_id, s))
        assert set(report.violations) == expected


class TestSynth:
    def small_cfg(self, **overrides):
        defaults = dict(
            n_slides=60,
            instances_per_slide=40,
            input_width=16,
            tasks=[SynthTask("task_a"), SynthTask("task_b")],
            signal_fraction=0.15,
            noise_sigma=1.0,
            concept_shift=6.0,
            seed=11,
        )
        defaults.update(overrides)
        return SynthConfig(**defaults)

    def test_reproducible_bit_identical(self, tmp_path):
        cfg = self.small_cfg()
        one = synth_generate(cfg, tmp_path / "a")
        two = synth_generate(cfg, tmp_path / "b")
        assert serialize_manifest(one.manifest) == serialize_manifest(two.manifest)
        for rec in one.manifest.records:
            assert np.array_equal(one.store.read(rec.feature_file), two.store.read(rec.feature_file))

    def test_labels_balanced_and_in_range(self, tmp_path):
        cfg = self.small_cfg()
        cohort = synth_generate(cfg, tmp_path)
        for task in cfg.tasks:
            values = [rec.labels[task.task_id] for rec in cohort.manifest.records]
            assert set(values) == {0, 1}
            assert abs(values.count(0) - values.count(1)) <= 1

    def test_signal_instances_are_shifted(self, tmp_path):
        cfg = self.small_cfg()
        cohort = synth_generate(cfg, tmp_path)
        concept = cohort.concept_points[("task_a", 1)]
        rec = next(r for r in cohort.manifest.records if r.labels["task_a"] == 1)
        features = cohort.store.read(rec.feature_file)
        signal = cohort.signal_indices[(rec.slide_id, "task_a")]
        # float32 storage keeps ~7 significant digits of the shift.
        sig_dist = np.linalg.norm(features[signal] - concept, axis=1).mean()
        others = np.setdiff1d(np.arange(cfg.instances_per_slide), signal)
        bg_dist = np.linalg.norm(features[others] - concept, axis=1).mean()
        assert sig_dist < bg_dist

    def test_grid_coords_written(self, tmp_path):
        cfg = self.small_cfg()
        cohort = synth_generate(cfg, tmp_path)
        coords = cohort.store.read_coords(cohort.manifest.records[0].feature_file)
        assert coords.shape == (cfg.instances_per_slide, 2)
        assert len({tuple(c) for c in coords.tolist()}) == cfg.instances_per_slide

    def test_infeasible_class_balance_rejected(self, tmp_path):
        cfg = self.small_cfg(n_slides=4, tasks=[SynthTask("t", num_classes=3, kind="multiclass")])
        with pytest.raises(ConfigurationError):
            synth_generate(cfg, tmp_path)

    def test_oracle_classifier_separates(self, tmp_path):
        cfg = self.small_cfg(n_slides=120, instances_per_slide=100)
        cohort = synth_generate(cfg, tmp_path)
        for task in cfg.tasks:
            _, scores, labels = oracle_concept_scores(cohort, task.task_id, cfg)
            assert metric_auc(scores, labels) >= 0.97

    def test_parses_back_from_disk(self, tmp_path):
        cfg = self.small_cfg()
        cohort = synth_generate(cfg, tmp_path)
        write_manifest(cohort.manifest, tmp_path / "cohort.csv")
        loaded = Cohort.load(tmp_path / "cohort.csv", (0.8, 0.2, 0.0), seed=0)
        assert len(loaded.manifest.records) == cfg.n_slides
        assert loaded.registry.ids() == ["task_a", "task_b"]
        train = loaded.slides_for("task_a", "train")
        val = loaded.slides_for("task_a", "val")
        assert len(train) + len(val) == cfg.n_slides
