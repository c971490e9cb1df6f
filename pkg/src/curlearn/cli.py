"""Command-line entry point.

Subcommands: gen (synthesize a dataset to disk), run (one experiment),
grid (protocol x augmentation x seed sweep), score (quality scores for a
manifest), eval (metrics for a predictions file).

Exit codes: 0 success, 1 config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import metrics, nn, quality
from .runner import ConfigError, generate_to_disk, load_config, run_experiment, run_grid
from .synthgen import read_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curlearn",
        description="Quality-aware curriculum training for ordinal image classification.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    p_gen = sub.add_parser("gen", help="synthesize the configured dataset to disk")
    p_gen.add_argument("config")
    p_gen.add_argument("--seed", type=int, help="override the config seed")
    common(p_gen)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    common(p_run)

    p_grid = sub.add_parser("grid", help="run the configured protocol/augmentation/seed grid")
    p_grid.add_argument("config")
    common(p_grid)

    p_score = sub.add_parser("score", help="write quality scores for a manifest")
    p_score.add_argument("model", help="checkpoint file of a 2-class quality scorer")
    p_score.add_argument("manifest")
    p_score.add_argument("--split", default=None, help="manifest split to score")
    p_score.add_argument("--tau", type=float, default=0.5)
    common(p_score)

    p_eval = sub.add_parser("eval", help="compute metrics for a predictions file")
    p_eval.add_argument("predictions", help="CSV with header id,p_0..p_{K-1}")
    p_eval.add_argument("manifest")
    p_eval.add_argument("--split", default=None, help="manifest split to evaluate against")
    common(p_eval)

    return parser


def _cmd_gen(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    generate_to_disk(cfg, args.out, quiet=args.quiet)
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    try:
        report = run_experiment(cfg, args.out, quiet=args.quiet)
    except ConfigError:
        raise
    except Exception as exc:
        _write_error_report(args.out, exc)
        raise
    if not args.quiet:
        print(f"report written to {report.out_dir}")
    return 0


def _write_error_report(out_dir, exc: Exception) -> None:
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "error.json"), "w", encoding="utf-8") as fh:
            json.dump({"error": type(exc).__name__, "message": str(exc)}, fh, indent=2)
            fh.write("\n")
    except OSError:
        pass  # the original failure still propagates


def _cmd_grid(args) -> int:
    cfg = load_config(args.config)
    run_grid(cfg, args.out, quiet=args.quiet)
    if not args.quiet:
        print(f"grid written to {os.path.join(args.out, 'grid.csv')}")
    return 0


def _cmd_score(args) -> int:
    model = nn.load_checkpoint(args.model)
    ds = read_manifest(args.manifest, split=args.split)
    scores = quality.score_dataset(model, ds)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "quality_scores.csv")
    quality.write_scores_csv(scores, args.tau, out_path)
    if not args.quiet:
        print(f"scored {len(scores)} samples -> {out_path}")
    return 0


def read_predictions_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id" or len(header) < 3:
            raise ConfigError(
                f"predictions file {path} needs a header id,p_0..p_{{K-1}}")
        ids, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigError(f"{path} line {line_no}: wrong field count")
            ids.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise ConfigError(f"{path} line {line_no}: non-numeric probability") from None
    return ids, np.array(rows)


def _cmd_eval(args) -> int:
    ids, probs = read_predictions_csv(args.predictions)
    ds = read_manifest(args.manifest, split=args.split)
    labels_by_id = {s.id: s.label for s in ds.samples}
    missing = [i for i in ids if i not in labels_by_id]
    if missing:
        raise ConfigError(f"predictions reference unknown sample ids: {missing[:5]}")
    if len(ids) != len(ds.samples):
        raise ConfigError(
            f"predictions cover {len(ids)} samples but manifest has {len(ds.samples)}")
    labels = np.array([labels_by_id[i] for i in ids])
    if probs.shape[1] < ds.num_classes:
        raise ConfigError(
            f"predictions have {probs.shape[1]} class columns but the manifest "
            f"needs {ds.num_classes}")
    num_classes = probs.shape[1]
    rep = metrics.report(probs, labels, num_classes)
    cm = metrics.confusion(labels, metrics.argmax_predictions(probs), num_classes)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write(metrics.MetricsReport.CSV_HEADER + "\n")
        fh.write(rep.to_csv_row() + "\n")
    metrics.write_confusion_csv(cm, os.path.join(args.out, "confusion.csv"))
    if not args.quiet:
        print(metrics.MetricsReport.CSV_HEADER)
        print(rep.to_csv_row())
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "run": _cmd_run,
    "grid": _cmd_grid,
    "score": _cmd_score,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
