"""Classification metrics: AUC, balanced accuracy, quadratic kappa.

AUC is the Mann-Whitney statistic (probability a random positive
outranks a random negative, ties counting one half), computed from
average ranks.  Multiclass scores are aggregated one-vs-rest with a
macro average; that convention is a documented choice, not a claim
about any particular benchmark's protocol.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricUndefinedError


def metric_auc(scores, labels) -> float:
    """Area under the ROC curve for binary labels, ties counted as half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricUndefinedError(
            f"scores and labels must be equal-length vectors, got {scores.shape} and {labels.shape}"
        )
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = int(np.count_nonzero(labels == 0))
    if n_pos + n_neg != labels.size or n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError(
            f"AUC needs both classes in {{0,1}}, got {n_pos} positives / {n_neg} negatives"
        )

    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # Average rank over the tie group; 1-based ranks.
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1

    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def metric_macro_auc(score_matrix, truth, num_classes: int) -> float:
    """One-vs-rest AUC averaged over the classes present in truth."""
    score_matrix = np.asarray(score_matrix, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    per_class = []
    for cls in range(num_classes):
        positives = (truth == cls).astype(np.int64)
        if positives.sum() in (0, len(truth)):
            continue
        per_class.append(metric_auc(score_matrix[:, cls], positives))
    if not per_class:
        raise MetricUndefinedError("macro AUC undefined: no class separates the sample")
    return float(np.mean(per_class))


def metric_balanced_accuracy(pred, truth, num_classes: int) -> float:
    """Mean per-class recall over classes present in truth."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if truth.size == 0:
        raise MetricUndefinedError("balanced accuracy undefined on empty input")
    recalls = []
    for cls in range(num_classes):
        mask = truth == cls
        if not np.any(mask):
            continue
        recalls.append(float(np.mean(pred[mask] == cls)))
    return float(np.mean(recalls))


def metric_quadratic_kappa(pred, truth, num_classes: int) -> float:
    """Cohen's kappa with quadratic disagreement weights.

    1 - sum(w * observed) / sum(w * expected) with w_ij = (i-j)^2/(C-1)^2
    and expected the outer product of the marginals scaled to the total.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.size == 0:
        raise MetricUndefinedError("kappa needs equal-length nonempty predictions and truth")
    for name, values in (("pred", pred), ("truth", truth)):
        if values.min() < 0 or values.max() >= num_classes:
            raise MetricUndefinedError(f"{name} values outside [0, {num_classes})")

    c = num_classes
    observed = np.zeros((c, c), dtype=np.float64)
    np.add.at(observed, (truth, pred), 1.0)
    total = observed.sum()
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / total

    grid = np.arange(c, dtype=np.float64)
    weights = (grid[:, None] - grid[None, :]) ** 2 / (c - 1) ** 2

    expected_disagreement = float((weights * expected).sum())
    if expected_disagreement == 0.0:
        raise MetricUndefinedError("kappa undefined: zero expected disagreement")
    return 1.0 - float((weights * observed).sum()) / expected_disagreement


@dataclass
class MetricSummary:
    mean: float
    std: float
    n_repeats: int
    values: list[float] = field(default_factory=list)

    @classmethod
    def from_values(cls, values) -> "MetricSummary":
        values = [float(v) for v in values]
        if not values:
            raise MetricUndefinedError("cannot summarize zero repeats")
        mean = float(np.mean(values))
        std = 0.0 if len(values) == 1 else float(np.std(values))
        return cls(mean, std, len(values), values)


@dataclass
class MetricReport:
    """Per-metric mean and spread over repeats, raw values retained."""

    metrics: dict[str, MetricSummary] = field(default_factory=dict)

    def add(self, name: str, values) -> MetricSummary:
        summary = MetricSummary.from_values(values)
        self.metrics[name] = summary
        return summary

    def format(self) -> str:
        lines = []
        for name in sorted(self.metrics):
            s = self.metrics[name]
            lines.append(f"{name}: {s.mean:.4f} +/- {s.std:.4f} ({s.n_repeats} repeats)")
        return "\n".join(lines) + "\n"
