"""Subcommand front-end.

Subcommands: ``refine``, ``train-objectness``, ``pseudolabel`` and ``eval``
(with ``consistency``, ``correlation`` and ``quality`` studies). Every run
writes its resolved configuration to ``<out>.run.json`` next to its
outputs, outputs are written atomically, and errors come out as one JSON
object on stderr (exit 2 for missing inputs, 1 for domain errors).
``HCCAL_LOG`` sets the log level, ``HCCAL_BACKEND`` forces the scoring
backend.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__, evaluation, objectness, pipeline, refine
from .errors import HccalError
from .model import (
    CalibrationConfig,
    atomic_write_text,
    load_feature_matrix,
    load_hierarchy,
    load_vocabulary,
    pseudo_label_lines,
    read_annotated_regions,
    read_pseudo_labels,
    read_regions,
    save_hierarchy,
)

log = logging.getLogger("hccal")

PROFILES = {
    "coco": {"gamma": 0.8, "tau": 0.3},
    "lvis": {"gamma": 0.6, "tau": 0.2},
}


class MissingInputError(HccalError):
    def __init__(self, path):
        super().__init__(f"missing input file: {path}")
        self.path = os.fspath(path)


def _require(path):
    if path is None or not os.path.exists(path):
        raise MissingInputError(path)
    return path


def _write_run_config(out_path, args: argparse.Namespace, command: str) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    doc = {"command": command, "version": __version__, "config": resolved}
    atomic_write_text(os.fspath(out_path) + ".run.json", json.dumps(doc, indent=2) + "\n")


def _calibration_config(args) -> CalibrationConfig:
    profile = PROFILES[args.profile]
    gamma = profile["gamma"] if args.gamma is None else args.gamma
    tau = profile["tau"] if args.tau is None else args.tau
    return CalibrationConfig(
        gamma=gamma,
        tau=tau,
        prefilter=args.prefilter,
        temperature=args.temperature,
        seed=args.seed,
    )


def cmd_refine(args) -> int:
    raw = refine.load_raw_hierarchy(_require(args.raw_hierarchy))
    verdicts = refine.load_verdicts(_require(args.verdicts))
    vocab = load_vocabulary(_require(args.vocab))
    entry_features = load_feature_matrix(_require(args.text_features))
    config = refine.RefineConfig(
        discriminability_fraction=args.fraction,
        duplicate_threshold=args.dup_threshold,
    )
    refined = refine.refine(raw, verdicts, vocab, entry_features, config)
    save_hierarchy(refined, args.out)
    _write_run_config(args.out, args, "refine")
    counts = {
        cls: {"supers": len(refined.supers[n]), "subs": len(refined.subs[n])}
        for n, cls in enumerate(refined.classes)
    }
    print(json.dumps({"classes": len(refined.classes), "per_class": counts}, indent=2))
    return 0


def cmd_train_objectness(args) -> int:
    features = load_feature_matrix(_require(args.features))
    proposals = read_regions(_require(args.regions))
    ground_truth = read_regions(_require(args.gt))
    rows = []
    for region in proposals:
        if region.feature_row is None:
            raise HccalError(f"region {region.region_id} has no feature row")
        rows.append(region.feature_row)
    labels = objectness.label_regions(proposals, ground_truth, args.pos_iou)
    data = objectness.ObjectnessDataset(features.data[rows], labels)
    config = objectness.TrainConfig(
        max_lr=args.max_lr,
        iterations=args.iterations,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    head, history = objectness.train_head_with_log(data, config)
    tau = objectness.select_tau(head, data)
    head = objectness.ObjectnessHead(head.weights, head.bias, tau)
    objectness.save_head(head, args.out)
    if args.log_csv:
        objectness.write_train_log(args.log_csv, history)
    _write_run_config(args.out, args, "train-objectness")
    scores = objectness.head_scores(head, data.features)
    accuracy = float(((scores >= tau) == (data.labels == 1.0)).mean())
    print(
        json.dumps(
            {
                "n_pos": data.n_pos,
                "n_neg": data.n_neg,
                "tau": tau,
                "train_accuracy": accuracy,
                "final_loss": history[-1][2],
            },
            indent=2,
        )
    )
    return 0


def cmd_pseudolabel(args) -> int:
    features = load_feature_matrix(_require(args.features))
    text_features = load_feature_matrix(_require(args.text_features))
    hierarchy = load_hierarchy(_require(args.hierarchy))
    regions = read_regions(_require(args.regions))
    head = objectness.load_head(_require(args.head))
    config = _calibration_config(args)
    generator = pipeline.generate_baseline_direct if args.baseline_direct else pipeline.generate
    labels, report = generator(
        regions, features, text_features, hierarchy, head, config, threads=args.threads
    )
    atomic_write_text(args.out, pseudo_label_lines(labels, hierarchy.classes))
    _write_run_config(args.out, args, "pseudolabel")
    if args.emit_loss_weights:
        base = (
            read_annotated_regions(_require(args.base_annotations))
            if args.base_annotations
            else []
        )
        weights_path = args.emit_loss_weights
        atomic_write_text(
            weights_path, pipeline.emit_loss_weights(labels, base, hierarchy.classes)
        )
    print(json.dumps(report.to_json()), file=sys.stderr)
    return 0


def _write_report(args, report: dict, csv_lines: list[str]) -> None:
    if args.out:
        atomic_write_text(args.out, json.dumps(report, indent=2) + "\n")
        _write_run_config(args.out, args, "eval")
    if args.csv:
        atomic_write_text(args.csv, "".join(csv_lines))


def cmd_eval_consistency(args) -> int:
    features = load_feature_matrix(_require(args.features))
    text_features = load_feature_matrix(_require(args.text_features))
    hierarchy = load_hierarchy(_require(args.hierarchy))
    proposals = read_regions(_require(args.regions))
    ground_truth = read_regions(_require(args.gt))
    config = CalibrationConfig(temperature=args.temperature, seed=args.seed)
    scores = pipeline.score_regions(
        proposals, features, text_features, hierarchy, config, threads=args.threads
    )
    report = evaluation.consistency_study(
        proposals, ground_truth, scores.p, scores.z_sub, scores.z_sup,
        fg_iou=args.fg_iou, bg_iou=args.bg_iou,
    )
    doc = report.to_json()
    rows = ["group,count,consistent_fraction\n"]
    rows.append(f"foreground,{report.fg_count},{report.fg_consistent_fraction}\n")
    rows.append(f"background,{report.bg_count},{report.bg_consistent_fraction}\n")
    _write_report(args, doc, rows)
    print(f"{'group':<12}{'count':>8}  consistent")
    for group, count, frac in (
        ("foreground", report.fg_count, report.fg_consistent_fraction),
        ("background", report.bg_count, report.bg_consistent_fraction),
    ):
        shown = "undefined" if frac is None else f"{frac:.4f}"
        print(f"{group:<12}{count:>8}  {shown}")
    return 0


def cmd_eval_correlation(args) -> int:
    features = load_feature_matrix(_require(args.features))
    proposals = read_regions(_require(args.regions))
    ground_truth = read_regions(_require(args.gt))
    head = objectness.load_head(_require(args.head))
    gt_boxes = [g.box for g in ground_truth]
    overlaps, scores = [], []
    for region in proposals:
        if region.feature_row is None:
            raise HccalError(f"region {region.region_id} has no feature row")
        overlaps.append(evaluation.max_iou(region.box, gt_boxes))
        scores.append(objectness.objectness_score(head, features.data[region.feature_row]))
    report = evaluation.correlation_report(np.asarray(overlaps), np.asarray(scores))
    doc = report.to_json()
    rows = ["metric,value\n", f"spearman_rho,{report.spearman_rho!r}\n",
            f"kendall_tau,{report.kendall_tau!r}\n", f"n,{report.n}\n"]
    _write_report(args, doc, rows)
    print(f"{'metric':<16}value")
    print(f"{'spearman_rho':<16}{report.spearman_rho:.6f}")
    print(f"{'kendall_tau':<16}{report.kendall_tau:.6f}")
    print(f"{'n':<16}{report.n}")
    return 0


def cmd_eval_quality(args) -> int:
    hierarchy = load_hierarchy(_require(args.hierarchy))
    labels = read_pseudo_labels(_require(args.labels), hierarchy.classes)
    annotated = read_annotated_regions(_require(args.gt))
    index = {cls: n for n, cls in enumerate(hierarchy.classes)}
    ground_truth = []
    for region, class_name in annotated:
        if class_name not in index:
            raise HccalError(f"ground-truth class {class_name!r} not in the hierarchy")
        ground_truth.append((region, index[class_name]))
    report = evaluation.pseudo_label_quality(labels, ground_truth, args.match_iou)
    doc = report.to_json()
    rows = ["metric,value\n"] + [f"{k},{v}\n" for k, v in doc.items()]
    _write_report(args, doc, rows)
    print(f"{'metric':<18}value")
    for key, value in doc.items():
        print(f"{key:<18}{value}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="seed recorded in the run config")
    parser.add_argument("--threads", type=int, default=1, help="data-parallel worker bound")


def _add_threshold_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--profile", choices=sorted(PROFILES), default="coco",
                        help="named gamma/tau defaults")
    parser.add_argument("--gamma", type=float, default=None, help="confidence gate (overrides profile)")
    parser.add_argument("--tau", type=float, default=None, help="objectness gate (overrides profile)")
    parser.add_argument("--prefilter", type=float, default=0.5,
                        help="minimum top class probability before calibration")
    parser.add_argument("--temperature", type=float, default=1.0,
                        help="hierarchy-level softmax temperature in (0, 1]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hccal",
        description="Calibrated pseudo labels for open-vocabulary detection "
        "from precomputed region features.",
    )
    parser.add_argument("--version", action="version", version=f"hccal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", help="filter a raw hierarchy with recorded verdicts")
    p.add_argument("--raw-hierarchy", required=True)
    p.add_argument("--verdicts", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--text-features", required=True)
    p.add_argument("--fraction", type=float, default=1.0 / 3.0,
                   help="drop supers shared by more than this fraction of classes")
    p.add_argument("--dup-threshold", type=float, default=0.95,
                   help="cosine similarity above which entries are near-duplicates")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("train-objectness", help="train the linear objectness head")
    p.add_argument("--features", required=True)
    p.add_argument("--regions", required=True, help="proposal NDJSON with feature rows")
    p.add_argument("--gt", required=True, help="ground-truth boxes NDJSON")
    p.add_argument("--pos-iou", type=float, default=0.8)
    p.add_argument("--max-lr", type=float, default=0.001)
    p.add_argument("--iterations", type=int, default=8000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--log-csv", default=None, help="write iteration,lr,loss CSV here")
    p.add_argument("--out", required=True, help="head checkpoint JSON")
    _add_common(p)
    p.set_defaults(func=cmd_train_objectness)

    p = sub.add_parser("pseudolabel", help="generate calibrated pseudo labels")
    p.add_argument("--features", required=True)
    p.add_argument("--text-features", required=True)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--regions", required=True)
    p.add_argument("--head", required=True, help="objectness head checkpoint")
    p.add_argument("--out", required=True, help="labels NDJSON")
    p.add_argument("--baseline-direct", action="store_true",
                   help="use the triple-argmax consistency baseline")
    p.add_argument("--emit-loss-weights", default=None, metavar="PATH",
                   help="also write loss-weight records NDJSON here")
    p.add_argument("--base-annotations", default=None,
                   help="base-class ground truth for the loss-weight records")
    _add_threshold_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_pseudolabel)

    p = sub.add_parser("eval", help="desk-scale analyses")
    evalsub = p.add_subparsers(dest="study", required=True)

    q = evalsub.add_parser("consistency", help="fg/bg hierarchical-consistency fractions")
    q.add_argument("--features", required=True)
    q.add_argument("--text-features", required=True)
    q.add_argument("--hierarchy", required=True)
    q.add_argument("--regions", required=True)
    q.add_argument("--gt", required=True)
    q.add_argument("--fg-iou", type=float, default=0.8)
    q.add_argument("--bg-iou", type=float, default=0.5)
    q.add_argument("--temperature", type=float, default=1.0)
    q.add_argument("--out", default=None, help="report JSON")
    q.add_argument("--csv", default=None, help="report CSV")
    _add_common(q)
    q.set_defaults(func=cmd_eval_consistency)

    q = evalsub.add_parser("correlation", help="rank correlation of objectness vs IoU")
    q.add_argument("--features", required=True)
    q.add_argument("--regions", required=True)
    q.add_argument("--gt", required=True)
    q.add_argument("--head", required=True)
    q.add_argument("--out", default=None)
    q.add_argument("--csv", default=None)
    _add_common(q)
    q.set_defaults(func=cmd_eval_correlation)

    q = evalsub.add_parser("quality", help="precision/recall of labels against ground truth")
    q.add_argument("--labels", required=True)
    q.add_argument("--gt", required=True, help="novel ground truth with class names")
    q.add_argument("--hierarchy", required=True)
    q.add_argument("--match-iou", type=float, default=0.5)
    q.add_argument("--out", default=None)
    q.add_argument("--csv", default=None)
    _add_common(q)
    q.set_defaults(func=cmd_eval_quality)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("HCCAL_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MissingInputError as exc:
        print(json.dumps({"error": "missing-input", "path": exc.path}), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(json.dumps({"error": "missing-input", "path": exc.filename}), file=sys.stderr)
        return 2
    except HccalError as exc:
        kind = type(exc).__name__
        print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
