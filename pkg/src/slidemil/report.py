"""Figure rendering for the CLI report paths.

Every figure is written next to its delimited counterpart (training
log, attention CSV, metrics CSV) so a run directory is inspectable at
a glance.  Rendering is headless (Agg).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .trainer import TrainingLog


def save_training_curves(log_text: str, path) -> Path:
    """Per-task train/val loss over epochs, plus the val metric panel."""
    rows = TrainingLog.parse(log_text)
    tasks = sorted({task for _, task, _, _, _ in rows})
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))

    for task in tasks:
        for split, style in (("train", "--"), ("val", "-")):
            points = [(e, loss) for e, t, s, loss, _ in rows if t == task and s == split]
            if points:
                epochs, losses = zip(*points)
                axes[0].plot(epochs, losses, style, label=f"{task} {split}")
        metric_points = [(e, m) for e, t, s, _, m in rows
                         if t == task and s == "val" and m is not None and np.isfinite(m)]
        if metric_points:
            epochs, metrics = zip(*metric_points)
            axes[1].plot(epochs, metrics, "-", label=task)

    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].set_title("per-task loss")
    axes[0].legend(fontsize=7)
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("validation AUC")
    axes[1].set_title("validation metric")
    axes[1].set_ylim(0.0, 1.05)
    if tasks:
        axes[1].legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_attention_heatmap(values, coords, path, title: str = "mean attention") -> Path:
    """Mean attention weights placed on the instance coordinate grid."""
    coords = np.asarray(coords)
    values = np.asarray(values, dtype=np.float64)
    xs = np.unique(coords[:, 0])
    ys = np.unique(coords[:, 1])
    col = {x: i for i, x in enumerate(xs.tolist())}
    row = {y: i for i, y in enumerate(ys.tolist())}
    raster = np.full((len(ys), len(xs)), np.nan)
    for (x, y), value in zip(coords.tolist(), values.tolist()):
        raster[row[y], col[x]] = value

    fig, ax = plt.subplots(figsize=(5, 5))
    image = ax.imshow(raster, cmap="inferno", interpolation="nearest")
    fig.colorbar(image, ax=ax, shrink=0.8, label="attention weight")
    ax.set_title(title)
    ax.set_xlabel("grid column")
    ax.set_ylabel("grid row")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_metric_bars(named_reports, path, title: str = "test metrics") -> Path:
    """Mean +/- std bars, one group per report (e.g. per init mode)."""
    labels = list(named_reports)
    metric_names = sorted({m for report in named_reports.values() for m in report.metrics})
    width = 0.8 / max(1, len(labels))
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(metric_names), 4))
    base = np.arange(len(metric_names))
    for i, label in enumerate(labels):
        report = named_reports[label]
        means = [report.metrics[m].mean if m in report.metrics else np.nan for m in metric_names]
        stds = [report.metrics[m].std if m in report.metrics else 0.0 for m in metric_names]
        ax.bar(base + i * width, means, width, yerr=stds, capsize=3, label=label)
    ax.set_xticks(base + width * (len(labels) - 1) / 2)
    ax.set_xticklabels(metric_names)
    ax.set_ylim(0.0, 1.05)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_cohort_overview(manifest, path) -> Path:
    """Label counts per class for every task in the manifest."""
    tasks = manifest.registry.ids()
    fig, axes = plt.subplots(1, max(1, len(tasks)), figsize=(3 * max(1, len(tasks)), 3),
                             squeeze=False)
    for ax, task_id in zip(axes[0], tasks):
        spec = manifest.registry.get(task_id)
        counts = np.zeros(spec.num_classes, dtype=int)
        for rec in manifest.labeled_slides(task_id):
            counts[rec.labels[task_id]] += 1
        ax.bar(np.arange(spec.num_classes), counts)
        ax.set_title(task_id, fontsize=9)
        ax.set_xlabel("class")
        ax.set_ylabel("slides")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
