"""Command-line entry points.

Subcommands: ingest, detect, calibrate, run, oracle, count, correlate, report.
Run ``vltaboo <subcommand> --help`` for the options of each.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .backends import EmbeddingBackend, MockBackend, MockStructure, ServiceBackend, StoreBackend
from .corpus import build_matcher_for_labels, count_corpus, read_occurrence_csv
from .datasets import AttributeDataset, load_awa2, load_cub, load_dataset, save_dataset, validate
from .detection import (
    DetectionConfig,
    apply_detection,
    calibrate_cutoff,
    detect,
    save_detection,
)
from .reporting import (
    accuracy_table,
    correlate,
    extreme_cases,
    read_eval_csv,
    read_recall_csv,
    skip_table,
    write_correlation_csv,
    write_extremes_csv,
    write_table_csv,
)
from .runner import load_run_config, run
from .setups import oracle_accuracy


def _add_backend_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("backend")
    group.add_argument("--backend", choices=["mock", "store", "service"], default="mock")
    group.add_argument("--model", default="mock")
    group.add_argument("--dim", type=int, default=256)
    group.add_argument("--backend-seed", type=int, default=0)
    group.add_argument("--class-weight", type=float, default=1.0)
    group.add_argument("--attribute-weight", type=float, default=1.0)
    group.add_argument("--noise-weight", type=float, default=0.0)
    group.add_argument("--location", default="", help="store file or service URL")


def _backend_from_args(args: argparse.Namespace, dataset: AttributeDataset) -> EmbeddingBackend:
    if args.backend == "mock":
        return MockBackend(
            dataset,
            MockStructure(
                class_weight=args.class_weight,
                attribute_weight=args.attribute_weight,
                noise_weight=args.noise_weight,
                seed=args.backend_seed,
            ),
            dim=args.dim,
            model_name=args.model,
        )
    if args.backend == "store":
        return StoreBackend.open(args.location)
    return ServiceBackend(args.location, model_name=args.model or None)


def _load_any_dataset(args: argparse.Namespace) -> AttributeDataset:
    if args.kind == "cub":
        return load_cub(args.root)
    if args.kind == "awa2":
        return load_awa2(args.root)
    return load_dataset(args.root)


def _cmd_ingest(args: argparse.Namespace) -> int:
    if args.kind == "cub":
        dataset = load_cub(args.root, min_certainty=args.min_certainty)
    else:
        dataset = load_awa2(args.root)
    problems = validate(dataset)
    for problem in problems:
        print(f"violation: {problem}", file=sys.stderr)
    save_dataset(dataset, args.out)
    print(
        f"{dataset.name}: {dataset.n_classes} classes, {dataset.n_attributes} attributes, "
        f"{len(dataset.images)} images, mean profile size {dataset.mean_profile_size():.2f} "
        f"-> {args.out}"
    )
    return 1 if problems else 0


def _cmd_detect(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    backend = _backend_from_args(args, dataset)
    cfg = DetectionConfig(cutoff=args.cutoff, target_mean_attrs=args.target)
    result = detect(dataset, backend, cfg)
    save_detection(result, args.out)
    if args.apply_out:
        save_dataset(result.dataset, args.apply_out)
    print(
        f"cutoff {result.cutoff_used:.4f} keeps {result.mean_attrs_per_image:.2f} "
        f"attributes per image -> {args.out}"
    )
    return 0


def _cmd_calibrate(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    backend = _backend_from_args(args, dataset)
    cutoff = calibrate_cutoff(dataset, backend, args.target)
    print(f"{cutoff:.4f}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    overrides = dict(item.split("=", 1) for item in args.set or [])
    if args.output_dir:
        overrides["output.dir"] = args.output_dir
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    cfg = load_run_config(args.config, overrides)
    out_dir = run(cfg)
    print(f"run complete -> {out_dir}")
    return 0


def _cmd_oracle(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    from .runner import parse_x_values

    rows = []
    for x in parse_x_values(args.x):
        value = oracle_accuracy(
            dataset, x, trials_seed=args.seed, trials=args.trials,
            fractional_ties=args.fractional,
        )
        rows.append((x, value))
        print(f"x={x}: {value:.4f}")
    if args.out:
        with Path(args.out).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "oracle_accuracy"])
            writer.writerows(rows)
    return 0


def _cmd_count(args: argparse.Namespace) -> int:
    labels = [
        line.strip()
        for line in Path(args.labels).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    matcher = build_matcher_for_labels(labels, case_sensitive=args.case_sensitive)
    table = count_corpus(
        matcher,
        args.corpus,
        shards=args.shards,
        tsv_column=args.text_column if args.tsv else None,
    )
    table.write_csv(args.out)
    print(
        f"scanned {table.corpus_size} samples ({table.undecodable} undecodable) "
        f"for {len(labels)} labels [{matcher.kernel} kernel] -> {args.out}"
    )
    return 0


def _cmd_correlate(args: argparse.Namespace) -> int:
    counts = read_occurrence_csv(args.counts)
    recalls = read_recall_csv(args.recalls)
    result = correlate(counts.as_mapping(), recalls)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_correlation_csv(result, out_dir / "correlation.csv")
    low_high, high_low = extreme_cases(result.rows)
    write_extremes_csv(low_high, out_dir / "extremes_low_occurrence_high_recall.csv")
    write_extremes_csv(high_low, out_dir / "extremes_high_occurrence_low_recall.csv")
    summary = {
        "spearman": result.spearman,
        "pearson_log10": result.pearson_log,
        "n_joined": len(result.rows),
        "unjoined_labels": list(result.unjoined_labels),
    }
    import json

    (out_dir / "correlation_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        f"joined {len(result.rows)} labels (spearman {result.spearman:.3f}) -> {out_dir}"
    )
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    reports = read_eval_csv(args.eval)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header, rows = accuracy_table(reports)
    write_table_csv(header, rows, out_dir / "accuracy_table.csv")
    header, rows = skip_table(reports)
    write_table_csv(header, rows, out_dir / "skip_table.csv")
    print(f"wrote accuracy_table.csv and skip_table.csv -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vltaboo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a CUB/AWA2 directory into canonical ndjson")
    p.add_argument("--kind", choices=["cub", "awa2"], required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--min-certainty", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("detect", help="detect per-image attributes above a cutoff")
    p.add_argument("--dataset", required=True, help="canonical ndjson dataset")
    p.add_argument("--cutoff", type=float, default=None)
    p.add_argument("--target", type=float, default=None, help="target mean attrs/image")
    p.add_argument("--out", required=True, help="detection ndjson output")
    p.add_argument("--apply-out", default="", help="write the updated dataset here")
    _add_backend_args(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("calibrate", help="find the cutoff for a target mean attrs/image")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target", type=float, required=True)
    _add_backend_args(p)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("run", help="execute a full config-driven evaluation run")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", default="")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument(
        "--set", action="append", metavar="SECTION.KEY=VALUE",
        help="override any config option; repeatable",
    )
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("oracle", help="attributes-only oracle upper bound")
    p.add_argument("--dataset", required=True)
    p.add_argument("--x", required=True, help='attribute counts, e.g. "1..7"')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--fractional", action="store_true",
                   help="award 1/(1+ties) on ambiguous galleries instead of 0")
    p.add_argument("--out", default="")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("count", help="count label occurrences over a caption corpus")
    p.add_argument("--labels", required=True, help="one class label per line")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tsv", action="store_true")
    p.add_argument("--text-column", type=int, default=0)
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--case-sensitive", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_count)

    p = sub.add_parser("correlate", help="join occurrence counts with per-class recall")
    p.add_argument("--counts", required=True, help="CSV from 'vltaboo count'")
    p.add_argument("--recalls", required=True, help="class,label,recall,n CSV")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_correlate)

    p = sub.add_parser("report", help="pivot eval_report.csv into summary tables")
    p.add_argument("--eval", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except Exception as exc:  # surface clean one-line errors to the shell
        if args.verbose:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
