"""Metrics against brute-force pairwise and confusion-matrix oracles."""

import numpy as np
import pytest

from slidemil.errors import MetricUndefinedError
from slidemil.metrics import (
    MetricReport,
    MetricSummary,
    metric_auc,
    metric_balanced_accuracy,
    metric_macro_auc,
    metric_quadratic_kappa,
)


def auc_bruteforce(scores, labels):
    """Direct Mann-Whitney count over every positive-negative pair."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def kappa_bruteforce(pred, truth, classes):
    """Independent confusion-matrix evaluation with explicit loops."""
    observed = [[0.0] * classes for _ in range(classes)]
    for p, t in zip(pred, truth):
        observed[t][p] += 1.0
    total = sum(sum(row) for row in observed)
    row_marg = [sum(observed[i][j] for j in range(classes)) for i in range(classes)]
    col_marg = [sum(observed[i][j] for i in range(classes)) for j in range(classes)]
    num = 0.0
    den = 0.0
    for i in range(classes):
        for j in range(classes):
            w = (i - j) ** 2 / (classes - 1) ** 2
            num += w * observed[i][j]
            den += w * row_marg[i] * col_marg[j] / total
    return 1.0 - num / den


class TestAuc:
    def test_perfect_separation(self):
        assert metric_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties(self):
        assert metric_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_fixture(self):
        scores = [0.1, 0.4, 0.35, 0.8]
        labels = [0, 0, 1, 1]
        assert metric_auc(scores, labels) == auc_bruteforce(scores, labels) == 0.75

    def test_matches_bruteforce_exactly(self):
        rng = np.random.default_rng(0)
        for trial in range(300):
            n = int(rng.integers(2, 60))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            # Quantized scores force plenty of ties.
            scores = np.round(rng.normal(size=n), 1)
            assert metric_auc(scores, labels) == auc_bruteforce(scores, labels), f"trial {trial}"

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=40)
        labels = rng.integers(0, 2, size=40)
        labels[:2] = [0, 1]
        base = metric_auc(scores, labels)
        assert metric_auc(np.exp(scores), labels) == base
        assert metric_auc(3.0 * scores + 7.0, labels) == base

    def test_single_class_undefined(self):
        with pytest.raises(MetricUndefinedError):
            metric_auc([0.1, 0.9], [1, 1])


class TestMacroAuc:
    def test_one_vs_rest_average(self):
        rng = np.random.default_rng(2)
        truth = rng.integers(0, 3, size=60)
        truth[:3] = [0, 1, 2]
        scores = rng.random(size=(60, 3))
        expected = np.mean(
            [auc_bruteforce(scores[:, c], (truth == c).astype(int)) for c in range(3)]
        )
        assert metric_macro_auc(scores, truth, 3) == pytest.approx(expected, abs=1e-12)


class TestBalancedAccuracy:
    def test_perfect(self):
        assert metric_balanced_accuracy([0, 1, 2], [0, 1, 2], 3) == 1.0

    def test_all_zero_on_balanced_binary(self):
        assert metric_balanced_accuracy([0, 0, 0, 0], [0, 0, 1, 1], 2) == 0.5

    def test_three_class_fixture(self):
        # Recalls 1.0, 0.5, 0.0 average to 0.5.
        truth = [0, 0, 1, 1, 2, 2]
        pred = [0, 0, 1, 0, 1, 1]
        assert metric_balanced_accuracy(pred, truth, 3) == 0.5

    def test_absent_class_excluded(self):
        assert metric_balanced_accuracy([0, 1], [0, 1], 3) == 1.0

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(3)
        truth = rng.integers(0, 4, size=50)
        pred = rng.integers(0, 4, size=50)
        base = metric_balanced_accuracy(pred, truth, 4)
        perm = rng.permutation(4)
        assert metric_balanced_accuracy(perm[pred], perm[truth], 4) == pytest.approx(base, abs=1e-12)

    def test_empty_undefined(self):
        with pytest.raises(MetricUndefinedError):
            metric_balanced_accuracy([], [], 2)


class TestQuadraticKappa:
    def test_perfect_agreement(self):
        assert metric_quadratic_kappa([0, 1, 2, 1], [0, 1, 2, 1], 3) == 1.0

    def test_chance_structured_matrix_is_zero(self):
        # Observed equals the outer product of its own marginals.
        truth = [0] * 4 + [1] * 4
        pred = [0, 0, 1, 1] * 2
        assert metric_quadratic_kappa(pred, truth, 2) == pytest.approx(0.0, abs=1e-12)

    def test_fixture_matches_bruteforce(self):
        truth = [0, 0, 1, 2]
        pred = [0, 1, 1, 2]
        got = metric_quadratic_kappa(pred, truth, 3)
        assert got == pytest.approx(kappa_bruteforce(pred, truth, 3), abs=1e-12)

    def test_matches_bruteforce_randomized(self):
        rng = np.random.default_rng(4)
        for trial in range(300):
            classes = int(rng.integers(2, 7))
            n = int(rng.integers(2, 80))
            truth = rng.integers(0, classes, size=n)
            pred = rng.integers(0, classes, size=n)
            try:
                got = metric_quadratic_kappa(pred.tolist(), truth.tolist(), classes)
            except MetricUndefinedError:
                assert len(set(truth) | set(pred)) == 1
                continue
            assert got == pytest.approx(
                kappa_bruteforce(pred.tolist(), truth.tolist(), classes), abs=1e-12
            ), f"trial {trial}"

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        truth = rng.integers(0, 4, size=30)
        pred = rng.integers(0, 4, size=30)
        assert metric_quadratic_kappa(pred, truth, 4) == pytest.approx(
            metric_quadratic_kappa(truth, pred, 4), abs=1e-14
        )

    def test_one_iff_equal(self):
        rng = np.random.default_rng(6)
        truth = rng.integers(0, 5, size=40)
        pred = truth.copy()
        pred[3] = (pred[3] + 1) % 5
        assert metric_quadratic_kappa(truth, truth, 5) == 1.0
        assert metric_quadratic_kappa(pred, truth, 5) < 1.0

    def test_all_one_class_undefined(self):
        with pytest.raises(MetricUndefinedError):
            metric_quadratic_kappa([1, 1, 1], [1, 1, 1], 3)


class TestMetricReport:
    def test_single_repeat_has_zero_std(self):
        summary = MetricSummary.from_values([0.8])
        assert summary.std == 0.0
        assert summary.n_repeats == 1

    def test_mean_std_recomputable_from_raws(self):
        report = MetricReport()
        summary = report.add("auc", [0.7, 0.8, 0.9, 0.75])
        assert summary.mean == pytest.approx(np.mean(summary.values))
        assert summary.std == pytest.approx(np.std(summary.values))
        assert min(summary.values) <= summary.mean <= max(summary.values)
