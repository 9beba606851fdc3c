"""Command-line surface: train, eval, score, export-maps, sweep, inspect.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric failure.
The environment variable PATCHGUARD_THREADS caps sweep worker parallelism.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from .archive import SplitSpec, load_archive, split_train_val
from .errors import (
    ArchiveError,
    CannotSplitError,
    ConfigError,
    NumericOverflowError,
    PatchguardError,
    TrainingAbortedError,
)
from .metrics import compute_report
from .pipeline import build_bundle, check_bundle_matches, compute_maps, evaluate
from .scoring import classify, export_maps, select_threshold, write_scores_csv
from .training import HeadBundle, TrainConfig, dataset_hash, load_run, save_run, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_TRAIN_DEFAULTS = {
    "gmm": {"learning_rate": 1e-4, "weight_decay": 1e-4, "batch_size": 8},
    "nf": {"learning_rate": 1e-3, "weight_decay": 1e-5, "batch_size": 32},
}

SWEEP_PARAMS = ("num-gaussians", "flow-steps", "hidden-ratio", "learning-rate")


def _read_config_file(path):
    """Flat `key = value` config file; CLI flags override its entries."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _merged(args, key, cast, default):
    """Resolution order: CLI flag, config file, per-head default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if args.config_values and key in args.config_values:
        return cast(args.config_values[key])
    return default


def _train_config(args, head):
    defaults = _TRAIN_DEFAULTS[head]
    return TrainConfig(
        learning_rate=_merged(args, "learning_rate", float, defaults["learning_rate"]),
        weight_decay=_merged(args, "weight_decay", float, defaults["weight_decay"]),
        batch_size=_merged(args, "batch_size", int, defaults["batch_size"]),
        max_epochs=_merged(args, "max_epochs", int, 500),
        patience=_merged(args, "patience", int, 30),
        seed=_merged(args, "seed", int, 0),
    )


def _run_training(archive_path, head, out_dir, args, seed_offset=0,
                  num_gaussians=None, num_steps=None, hidden_ratio=None,
                  learning_rate=None):
    dataset = load_archive(archive_path)
    config = _train_config(args, head)
    config.seed += seed_offset
    if learning_rate is not None:
        config.learning_rate = learning_rate
    split = SplitSpec(
        seed=_merged(args, "split_seed", int, 0),
        train_fraction=_merged(args, "train_fraction", float, 0.8),
    )
    bundle = build_bundle(
        head, dataset.scales, seed=config.seed,
        num_gaussians=num_gaussians if num_gaussians is not None
        else _merged(args, "gaussians", int, None),
        num_steps=num_steps if num_steps is not None
        else _merged(args, "steps", int, None),
        hidden_ratio=hidden_ratio if hidden_ratio is not None
        else _merged(args, "hidden_ratio", float, 0.16),
        clamp_alpha=_merged(args, "clamp_alpha", float, 1.9),
    )
    check_bundle_matches(bundle, dataset)
    bundle, history = train(bundle, dataset, split, config)
    meta = {
        "archive": str(archive_path),
        "archive_sha256": dataset_hash(archive_path),
        "backbone": dataset.backbone,
        "split_seed": split.seed,
        "train_fraction": split.train_fraction,
        "train_seed": config.seed,
        "learning_rate": config.learning_rate,
        "weight_decay": config.weight_decay,
        "batch_size": config.batch_size,
        "max_epochs": config.max_epochs,
        "patience": config.patience,
    }
    save_run(bundle, history, out_dir, meta=meta)
    return bundle, history, meta


def cmd_train(args):
    _, history, _ = _run_training(args.archive, args.head, args.out, args)
    print(f"run written to {args.out} "
          f"(best epoch {history.best_epoch}, stopped at {history.stopped_epoch}, "
          f"best val loss {min(history.val_loss):.6f})")
    return EXIT_OK


def _val_image_scores(bundle, dataset, meta, args):
    split = SplitSpec(seed=int(meta["split_seed"]),
                      train_fraction=float(meta["train_fraction"]))
    _, val_part = split_train_val(dataset.train, split)
    maps = compute_maps(bundle, val_part, scale_index=args.layer,
                        batch_size=args.per_batch)
    return [m.image_score for m in maps]


def _load_run_for_archive(args):
    bundle, _, meta = load_run(args.run)
    dataset = load_archive(args.archive)
    check_bundle_matches(bundle, dataset)
    if args.layer is not None and not 0 <= args.layer < len(dataset.scales):
        raise ConfigError(
            f"--layer {args.layer} out of range for {len(dataset.scales)} scales"
        )
    return bundle, dataset, meta


def _threshold_from_args(bundle, dataset, meta, args):
    val_scores = _val_image_scores(bundle, dataset, meta, args)
    return select_threshold(val_scores, strategy=args.threshold_strategy,
                            q=args.quantile, source=str(args.run))


def _fmt(value):
    return "undefined" if value is None else f"{value:.4f}"


def cmd_eval(args):
    bundle, dataset, meta = _load_run_for_archive(args)
    if not dataset.test:
        raise ArchiveError("archive has no test samples to evaluate")
    threshold = _threshold_from_args(bundle, dataset, meta, args)
    maps = compute_maps(bundle, dataset.test, scale_index=args.layer,
                        batch_size=args.per_batch)
    labels = [s.label for s in dataset.test]
    masks = [s.mask for s in dataset.test]
    image_scores = [m.image_score for m in maps]
    report = compute_report(image_scores, labels, maps, masks, max_fpr=args.max_fpr)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    predictions = [classify(s, threshold) for s in image_scores]
    write_scores_csv(maps, [s.id for s in dataset.test], labels, predictions,
                     out / "scores.csv")
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "head", "backbone", "image_auroc", "prauc",
                         "pixel_auroc", "pro", "threshold", "n_test"])
        writer.writerow([
            Path(args.archive).stem, bundle.kind, dataset.backbone,
            _fmt(report.image_auroc), _fmt(report.prauc),
            _fmt(report.pixel_auroc), _fmt(report.pro_score),
            f"{threshold.value:.6f}", len(dataset.test),
        ])
    print(f"image_auroc={_fmt(report.image_auroc)} prauc={_fmt(report.prauc)} "
          f"pixel_auroc={_fmt(report.pixel_auroc)} pro={_fmt(report.pro_score)}")
    return EXIT_OK


def cmd_score(args):
    bundle, dataset, meta = _load_run_for_archive(args)
    threshold = _threshold_from_args(bundle, dataset, meta, args)
    maps = compute_maps(bundle, dataset.test, scale_index=args.layer,
                        batch_size=args.per_batch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    predictions = [classify(m.image_score, threshold) for m in maps]
    write_scores_csv(maps, [s.id for s in dataset.test],
                     [s.label for s in dataset.test], predictions,
                     out / "scores.csv")
    print(f"scored {len(maps)} test samples, threshold {threshold.value:.6f}")
    return EXIT_OK


def cmd_export_maps(args):
    bundle, dataset, meta = _load_run_for_archive(args)
    threshold = _threshold_from_args(bundle, dataset, meta, args)
    maps = compute_maps(bundle, dataset.test, scale_index=args.layer,
                        batch_size=args.per_batch)
    predictions = [classify(m.image_score, threshold) for m in maps]
    export_maps(maps, [s.id for s in dataset.test],
                [s.label for s in dataset.test], predictions, args.out)
    print(f"wrote {len(maps)} anomaly maps to {args.out}")
    return EXIT_OK


def _sweep_one(job):
    archive, head, param, value, args, index, out_root = job
    kwargs = {}
    if param == "num-gaussians":
        kwargs["num_gaussians"] = int(value)
    elif param == "flow-steps":
        kwargs["num_steps"] = int(value)
    elif param == "hidden-ratio":
        kwargs["hidden_ratio"] = float(value)
    elif param == "learning-rate":
        kwargs["learning_rate"] = float(value)
    run_dir = Path(out_root) / f"run_{index:02d}"
    bundle, history, meta = _run_training(archive, head, run_dir, args,
                                          seed_offset=index, **kwargs)
    dataset = load_archive(archive)
    _, report = evaluate(bundle, dataset)
    return {
        "value": value,
        "val_loss": min(history.val_loss),
        "image_auroc": report.image_auroc,
        "prauc": report.prauc,
        "pixel_auroc": report.pixel_auroc,
        "pro": report.pro_score,
    }


def cmd_sweep(args):
    if args.param not in SWEEP_PARAMS:
        raise ConfigError(
            f"unknown sweep parameter '{args.param}', expected one of {SWEEP_PARAMS}"
        )
    needs = {"num-gaussians": "gmm", "flow-steps": "nf", "hidden-ratio": "nf"}
    if args.param in needs and args.head != needs[args.param]:
        raise ConfigError(
            f"parameter '{args.param}' only applies to head '{needs[args.param]}'"
        )
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = [(args.archive, args.head, args.param, value, args, i, out_root)
            for i, value in enumerate(values)]
    n_workers = max(1, int(os.environ.get("PATCHGUARD_THREADS", "1")))
    if n_workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(job) for job in jobs]
    with open(out_root / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "val_loss", "image_auroc", "prauc",
                         "pixel_auroc", "pro"])
        for row in rows:
            writer.writerow([row["value"], f"{row['val_loss']:.6f}",
                             _fmt(row["image_auroc"]), _fmt(row["prauc"]),
                             _fmt(row["pixel_auroc"]), _fmt(row["pro"])])
    print(f"sweep over {args.param} = {values} written to {out_root / 'sweep.csv'}")
    return EXIT_OK


def cmd_inspect(args):
    dataset = load_archive(args.archive)
    n_anom = sum(1 for s in dataset.test if s.label == 1)
    n_masks = sum(1 for s in dataset.test if s.mask is not None)
    print(f"backbone: {dataset.backbone}")
    print(f"scales: {dataset.scales}")
    print(f"train samples: {len(dataset.train)}")
    print(f"test samples: {len(dataset.test)} "
          f"({n_anom} anomalous, {n_masks} with masks)")
    return EXIT_OK


def _add_common_eval_flags(p):
    p.add_argument("--run", required=True, help="run directory from `train`")
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layer", type=int, default=None,
                   help="restrict to one archive scale index")
    p.add_argument("--per-batch", type=int, default=None,
                   help="normalize scores per batch of this size instead of "
                        "over the whole evaluation set")
    p.add_argument("--threshold-strategy", choices=["quantile", "max"],
                   default="quantile")
    p.add_argument("--quantile", type=float, default=0.99)
    p.add_argument("--max-fpr", type=float, default=0.3)


def _add_train_flags(p):
    p.add_argument("--archive", required=True)
    p.add_argument("--head", choices=["gmm", "nf"], required=True)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--train-fraction", type=float, default=None)
    p.add_argument("--gaussians", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--hidden-ratio", type=float, default=None)
    p.add_argument("--clamp-alpha", type=float, default=None)
    p.add_argument("--lr", dest="learning_rate", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="patchguard",
        description="Train and evaluate anomaly-detection heads over "
                    "patch-embedding archives.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a head on an archive")
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="run directory to create")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute metrics.csv and scores.csv")
    _add_common_eval_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score the test split (scores.csv only)")
    _add_common_eval_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("export-maps", help="write grayscale anomaly-map PNGs")
    _add_common_eval_flags(p)
    p.set_defaults(func=cmd_export_maps)

    p = sub.add_parser("sweep", help="train once per hyperparameter value")
    _add_train_flags(p)
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", required=True, help="sweep output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect", help="print archive metadata")
    p.add_argument("archive")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.config_values = (_read_config_file(args.config)
                              if getattr(args, "config", None) else {})
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArchiveError, CannotSplitError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericOverflowError, TrainingAbortedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PatchguardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
