"""Command-line surface.

Subcommands: synth, train, finetune, eval, attend, energy, check-splits.
Every run writes a reproducibility block (resolved options, seed,
version) into its output directory, and report paths render matplotlib
figures next to their delimited outputs.  Exit codes: 0 success,
1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attention_export import export_attention
from .checkpoint import load_checkpoint, read_checkpoint, write_checkpoint
from .data import (
    Cohort,
    FeatureStore,
    SplitAssignment,
    check_split_coherence,
    make_patient_splits,
    parse_manifest,
    synth_generate,
    write_manifest,
)
from .data.synth import SynthConfig, SynthTask
from .energy import energy_estimate
from .errors import ConfigurationError, DataError, SlideMilError, ValidationError
from .finetune import finetune_protocol
from .metrics import (
    MetricReport,
    metric_auc,
    metric_balanced_accuracy,
    metric_macro_auc,
    metric_quadratic_kappa,
)
from .model import EncoderConfig, MultiTaskModel
from .seeding import derive_rng
from .tasks import TaskSpec, read_registry
from .trainer import AugmentConfig, TrainConfig, canonical_float, sample_bag, train

MANIFEST_NAME = "cohort.csv"


class CliParser(argparse.ArgumentParser):
    """Argument errors print usage and exit 1 (validation error)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def describe_version() -> str:
    version = f"slidemil {__version__}"
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if out.returncode == 0 and out.stdout.strip():
            version += f" ({out.stdout.strip()})"
    except (OSError, subprocess.SubprocessError):
        pass
    return version


def write_run_info(out_dir, command: str, options: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"command={command}", f"version={describe_version()}"]
    for key in sorted(options):
        lines.append(f"{key}={options[key]}")
    (out_dir / "run_info.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


class Settings:
    """Layered option lookup: CLI flag, then config file, then default."""

    def __init__(self, config_path=None):
        self.parser = configparser.ConfigParser()
        if config_path:
            if not Path(config_path).exists():
                raise ConfigurationError(f"config file {config_path} not found")
            self.parser.read(config_path)

    def get(self, flag_value, section: str, key: str, default, cast=str):
        if flag_value is not None:
            return flag_value
        if self.parser.has_option(section, key):
            text = self.parser.get(section, key)
            if cast is bool:
                return text.strip().lower() in ("1", "true", "yes", "on")
            return cast(text)
        return default


def parse_fractions(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigurationError(f"expected train,val,test fractions, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def require_seed(flag_value, settings: Settings, section: str):
    seed = settings.get(flag_value, section, "seed", None, int)
    if seed is None:
        raise ConfigurationError(
            f"--seed is required for this command (or a seed in the [{section}] config section)"
        )
    return int(seed)


def resolve_manifest(cohort_arg: str) -> Path:
    path = Path(cohort_arg)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"manifest not found at {path}")
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    settings = Settings(args.config)
    seed = settings.get(args.seed, "synth", "seed", 0, int)
    n_tasks = settings.get(args.tasks, "synth", "tasks", 3, int)
    cfg = SynthConfig(
        n_slides=settings.get(args.slides, "synth", "slides", 600, int),
        instances_per_slide=settings.get(args.instances, "synth", "instances", 200, int),
        input_width=settings.get(args.width, "synth", "width", 32, int),
        tasks=[SynthTask(f"task_{chr(97 + i)}") for i in range(n_tasks)],
        signal_fraction=settings.get(args.signal_fraction, "synth", "signal_fraction", 0.1, float),
        noise_sigma=settings.get(args.noise_sigma, "synth", "noise_sigma", 1.0, float),
        concept_shift=settings.get(args.shift, "synth", "shift", 6.0, float),
        seed=seed,
    )
    out = Path(args.out)
    cohort = synth_generate(cfg, out)
    write_manifest(cohort.manifest, out / MANIFEST_NAME)

    truth_lines = ["slide_id,task_id,signal_instances"]
    for (slide_id, task_id), indices in sorted(cohort.signal_indices.items()):
        truth_lines.append(f"{slide_id},{task_id},{' '.join(str(i) for i in indices)}")
    (out / "signal_instances.csv").write_text("\n".join(truth_lines) + "\n", encoding="utf-8")

    from .report import save_cohort_overview

    save_cohort_overview(cohort.manifest, out / "cohort_overview.png")
    write_run_info(out, "synth", {
        "seed": seed, "slides": cfg.n_slides, "instances": cfg.instances_per_slide,
        "width": cfg.input_width, "tasks": ",".join(t.task_id for t in cfg.tasks),
        "signal_fraction": cfg.signal_fraction, "noise_sigma": cfg.noise_sigma,
        "shift": cfg.concept_shift,
    })
    print(f"wrote {cfg.n_slides} slides, {len(cfg.tasks)} tasks to {out}")
    return 0


def _model_from_settings(settings: Settings, args, input_width: int, registry, seed: int):
    hidden_text = settings.get(args.hidden, "model", "hidden", "64", str)
    hidden = [int(w) for w in str(hidden_text).split(",") if w]
    cfg = EncoderConfig(
        input_width=input_width,
        hidden_widths=hidden,
        output_width=settings.get(args.dim, "model", "dim", 64, int),
        activation=settings.get(None, "model", "activation", "tanh", str),
    )
    att_dim = settings.get(args.att_dim, "model", "att_dim", None, int)
    return MultiTaskModel(
        cfg,
        registry,
        heads=settings.get(args.heads, "model", "heads", 8, int),
        att_dim=att_dim,
        dropout_p=settings.get(None, "model", "dropout", 0.1, float),
        rng=derive_rng(seed, "init"),
    )


def _train_config(settings: Settings, args, seed: int) -> TrainConfig:
    augment = AugmentConfig(
        feature_jitter_sigma=settings.get(None, "augment", "sigma", 0.1, float),
        instance_drop_p=settings.get(None, "augment", "drop_p", 0.05, float),
        enabled=settings.get(
            False if args.no_augment else None, "augment", "enabled", True, bool
        ),
    )
    return TrainConfig(
        seed=seed,
        bag_min=settings.get(args.bag_min, "train", "bag_min", 64, int),
        bag_max=settings.get(args.bag_max, "train", "bag_max", 128, int),
        val_bag=settings.get(args.val_bag, "train", "val_bag", 128, int),
        epochs=settings.get(args.epochs, "train", "epochs", 200, int),
        lr=settings.get(args.lr, "train", "lr", 1e-4, float),
        augment=augment,
    )


def _write_splits(cohort: Cohort, path) -> None:
    lines = ["slide_id,split"]
    for rec in cohort.manifest.records:
        lines.append(f"{rec.slide_id},{cohort.split.by_slide[rec.slide_id]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    settings = Settings(args.config)
    seed = require_seed(args.seed, settings, "train")
    fractions = parse_fractions(
        settings.get(args.fractions, "train", "fractions", "0.8,0.2,0.0", str)
    )
    manifest_path = resolve_manifest(args.cohort)
    cohort = Cohort.load(manifest_path, fractions, seed=seed)

    width = cohort.store.read_header(cohort.manifest.records[0].feature_file)[1]
    model = _model_from_settings(settings, args, width, cohort.registry, seed)
    cfg = _train_config(settings, args, seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "training_log.csv"
    if log_path.exists():
        log_path.unlink()

    result = train(model, cohort, cfg, log_path=log_path)

    write_checkpoint(result.best, out / "checkpoint_best.ckpt")
    write_checkpoint(result.final, out / "checkpoint_final.ckpt")
    _write_splits(cohort, out / "splits.csv")

    from .report import save_training_curves

    save_training_curves(result.log.text(), out / "training_curves.png")
    write_run_info(out, "train", {
        "seed": seed, "cohort": manifest_path, "epochs": cfg.epochs, "lr": cfg.lr,
        "bag_min": cfg.bag_min, "bag_max": cfg.bag_max, "val_bag": cfg.val_bag,
        "fractions": ",".join(str(f) for f in fractions),
        "augment.enabled": cfg.augment.enabled,
        "augment.sigma": cfg.augment.feature_jitter_sigma,
        "augment.drop_p": cfg.augment.instance_drop_p,
        "model.dim": model.encoder_config.output_width,
        "model.hidden": ",".join(str(w) for w in model.encoder_config.hidden_widths),
        "model.heads": model.pool.heads,
        "model.att_dim": model.pool.att_dim,
        "best_epoch": result.best_epoch,
        "best_val_loss": canonical_float(result.best_val),
    })

    if result.diverged is not None:
        print(f"training diverged: {result.diverged}", file=sys.stderr)
        return 2
    print(f"best epoch {result.best_epoch} (mean val loss {result.best_val:.4f}); "
          f"artifacts in {out}")
    return 0


def cmd_finetune(args) -> int:
    settings = Settings(args.config)
    seed = require_seed(args.seed, settings, "finetune")
    bundle = read_checkpoint(args.checkpoint)
    fractions = parse_fractions(
        settings.get(args.fractions, "finetune", "fractions", "0.4,0.1,0.5", str)
    )
    manifest_path = resolve_manifest(args.cohort)
    cohort = Cohort.load(manifest_path, fractions, seed=seed)
    task_id = args.task or cohort.registry.ids()[0]
    task = cohort.registry.get(task_id)

    inits = [args.init] if args.init != "both" else ["pretrained_agg", "random_agg"]
    repeats = settings.get(args.repeats, "finetune", "repeats", 4, int)
    epochs = settings.get(args.epochs, "finetune", "epochs", 15, int)
    lr = settings.get(args.lr, "finetune", "lr", 1e-4, float)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for init in inits:
        results[init] = finetune_protocol(
            bundle, cohort, task, repeats=repeats, epochs=epochs, lr=lr,
            init=init, seed=seed,
        )

    lines = ["init,metric,mean,std,n_repeats,raw_values"]
    for init, result in results.items():
        for name, summary in sorted(result.report.metrics.items()):
            raws = " ".join(canonical_float(v) for v in summary.values)
            lines.append(
                f"{init},{name},{canonical_float(summary.mean)},"
                f"{canonical_float(summary.std)},{summary.n_repeats},{raws}"
            )
    (out / "finetune_metrics.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    from .report import save_metric_bars

    save_metric_bars(
        {init: r.report for init, r in results.items()},
        out / "finetune_metrics.png",
        title=f"fine-tuning on {task_id}",
    )
    write_run_info(out, "finetune", {
        "seed": seed, "checkpoint": args.checkpoint, "cohort": manifest_path,
        "task": task_id, "repeats": repeats, "epochs": epochs, "lr": lr,
        "init": ",".join(inits), "fractions": ",".join(str(f) for f in fractions),
    })
    for init, result in results.items():
        print(f"[{init}]")
        print(result.report.format(), end="")
    return 0


def _eval_predictions(path, registry):
    rows = Path(path).read_text(encoding="utf-8").splitlines()
    if not rows:
        raise DataError(f"{path}: empty predictions file")
    header = rows[0].split(",")
    if header[:3] != ["slide_id", "task_id", "truth"]:
        raise DataError(f"{path}: header must start with slide_id,task_id,truth")
    by_task: dict[str, dict[str, list]] = {}
    for lineno, line in enumerate(rows[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.split(",")
        if len(cells) < 4:
            raise DataError(f"{path} line {lineno}: expected at least 4 cells")
        task_id = cells[1]
        spec = registry.get(task_id)
        bucket = by_task.setdefault(task_id, {"truth": [], "scores": []})
        bucket["truth"].append(int(cells[2]))
        scores = [float(c) for c in cells[3:] if c != ""]
        expected = 1 if spec.num_classes == 2 else spec.num_classes
        if len(scores) != expected:
            raise DataError(
                f"{path} line {lineno}: task {task_id!r} expects {expected} score "
                f"columns, got {len(scores)}"
            )
        bucket["scores"].append(scores)
    return by_task


def cmd_eval(args) -> int:
    registry = read_registry(args.registry)
    by_task = _eval_predictions(args.pred, registry)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["task_id,metric,value"]
    reports = {}
    for task_id, bucket in sorted(by_task.items()):
        spec = registry.get(task_id)
        truth = bucket["truth"]
        scores = np.asarray(bucket["scores"], dtype=np.float64)
        report = MetricReport()
        if spec.num_classes == 2:
            report.add("auc", [metric_auc(scores[:, 0], truth)])
            preds = (scores[:, 0] >= 0.5).astype(int)
        else:
            report.add("auc", [metric_macro_auc(scores, truth, spec.num_classes)])
            preds = np.argmax(scores, axis=1)
        if spec.kind == "ordinal_as_multiclass":
            report.add("quadratic_kappa",
                       [metric_quadratic_kappa(preds, truth, spec.num_classes)])
        else:
            report.add("balanced_accuracy",
                       [metric_balanced_accuracy(preds, truth, spec.num_classes)])
        reports[task_id] = report
        for name, summary in sorted(report.metrics.items()):
            lines.append(f"{task_id},{name},{canonical_float(summary.mean)}")
            print(f"{task_id} {name}: {summary.mean:.4f}")
    (out / "metrics.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    from .report import save_metric_bars

    save_metric_bars(reports, out / "metrics.png", title="evaluation")
    write_run_info(out, "eval", {"pred": args.pred, "registry": args.registry})
    return 0


def cmd_attend(args) -> int:
    bundle = read_checkpoint(args.checkpoint)
    model, _, _ = load_checkpoint(bundle)
    manifest_path = resolve_manifest(args.cohort)
    manifest = parse_manifest(manifest_path)
    store = FeatureStore(manifest_path.parent)
    task_id = args.task or model.registry.ids()[0]
    slide_id = args.slide or manifest.records[0].slide_id
    record = manifest.record(slide_id)

    seed = args.seed if args.seed is not None else 0
    bag = sample_bag(record, store, "val", derive_rng(seed, "valbag", slide_id),
                     val_size=args.bag_size)
    out = Path(args.out)
    paths, amap = export_attention(model, bag, task_id, out, raster=args.raster)

    if bag.coords is not None:
        from .report import save_attention_heatmap

        paths["png"] = save_attention_heatmap(
            amap.mean_over_heads(), bag.coords,
            out / f"attention_{slide_id}_{task_id}.png",
            title=f"{slide_id} / {task_id}",
        )
    write_run_info(out, "attend", {
        "seed": seed, "checkpoint": args.checkpoint, "cohort": manifest_path,
        "slide": slide_id, "task": task_id, "raster": args.raster,
        "bag_size": args.bag_size,
    })
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def cmd_energy(args) -> int:
    if "," in args.intensity:
        lo, hi = args.intensity.split(",")
        intensity = (float(lo), float(hi))
    else:
        intensity = float(args.intensity)
    estimate = energy_estimate(args.hours, args.watts, intensity)
    print(estimate.format(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "energy.txt").write_text(estimate.format(), encoding="utf-8")
        write_run_info(out, "energy", {
            "hours": args.hours, "watts": args.watts, "intensity": args.intensity,
        })
    return 0


def _read_splits_file(path) -> SplitAssignment | dict[str, SplitAssignment]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()
    if not rows:
        raise DataError(f"{path}: empty splits file")
    header = rows[0].split(",")
    if header == ["slide_id", "split"]:
        mapping = {}
        for line in rows[1:]:
            if not line.strip():
                continue
            slide_id, split = line.split(",")
            mapping[slide_id] = split
        return SplitAssignment(mapping)
    if header == ["slide_id", "task_id", "split"]:
        per_task: dict[str, dict[str, str]] = {}
        for line in rows[1:]:
            if not line.strip():
                continue
            slide_id, task_id, split = line.split(",")
            per_task.setdefault(task_id, {})[slide_id] = split
        return {task: SplitAssignment(mapping) for task, mapping in per_task.items()}
    raise DataError(
        f"{path}: header must be 'slide_id,split' or 'slide_id,task_id,split', "
        f"got {rows[0]!r}"
    )


def cmd_check_splits(args) -> int:
    manifest = parse_manifest(args.manifest, registry_path=args.registry,
                              check_features=False)
    assignments = _read_splits_file(args.splits)
    report = check_split_coherence(manifest, assignments)
    print(report.format(), end="")
    return 0 if report.coherent else 1


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> CliParser:
    parser = CliParser(prog="slidemil", description=__doc__)
    parser.add_argument("--version", action="version", version=describe_version())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-task cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--slides", type=int)
    p.add_argument("--instances", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--tasks", type=int)
    p.add_argument("--signal-fraction", dest="signal_fraction", type=float)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--shift", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="pretrain the multi-task model on a cohort")
    p.add_argument("--cohort", required=True, help="cohort directory or manifest path")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--bag-min", dest="bag_min", type=int)
    p.add_argument("--bag-max", dest="bag_max", type=int)
    p.add_argument("--val-bag", dest="val_bag", type=int)
    p.add_argument("--fractions", help="train,val,test split fractions")
    p.add_argument("--dim", type=int)
    p.add_argument("--hidden", help="comma-separated encoder hidden widths")
    p.add_argument("--heads", type=int)
    p.add_argument("--att-dim", dest="att_dim", type=int)
    p.add_argument("--no-augment", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="frozen-encoder fine-tuning protocol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--task")
    p.add_argument("--repeats", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--fractions")
    p.add_argument("--init", choices=["pretrained_agg", "random_agg", "both"],
                   default="both")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="metrics from a predictions file")
    p.add_argument("--pred", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attend", help="export attention weights for one slide")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--slide")
    p.add_argument("--task")
    p.add_argument("--seed", type=int)
    p.add_argument("--bag-size", dest="bag_size", type=int, default=128)
    p.add_argument("--raster", action="store_true", help="also write a P2 graymap")
    p.set_defaults(func=cmd_attend)

    p = sub.add_parser("energy", help="training energy and CO2 estimate")
    p.add_argument("--hours", type=float, required=True)
    p.add_argument("--watts", type=float, required=True)
    p.add_argument("--intensity", required=True,
                   help="kg CO2 per kWh, a value or low,high range")
    p.add_argument("--out")
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("check-splits", help="cross-task split coherence check")
    p.add_argument("--manifest", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--registry")
    p.set_defaults(func=cmd_check_splits)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SlideMilError as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
