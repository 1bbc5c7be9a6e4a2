"""End-to-end pseudo-label generation.

Per region, in order: class probabilities with a prefilter on the top
class probability, hierarchy calibration with a confidence gate, then an
objectness gate. Gate order matters for the stage counters and spares the
objectness pass for regions that were never going to survive. A region
failure aborts the whole run with the region id; there are no silent
skips. Scoring runs through a selectable backend (compiled kernel or numpy
fallback); labels come out in input order regardless of chunking.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels
from .errors import DataError, ShapeError
from .model import (
    CalibrationConfig,
    FeatureMatrix,
    Hierarchy,
    PseudoLabel,
    RegionRecord,
    l2_normalize_rows,
    round_score,
)
from .objectness import ObjectnessHead, objectness_score


@dataclasses.dataclass(frozen=True)
class PipelineReport:
    """Per-stage region counts; they always sum back to the total.

    In direct-baseline mode ``dropped_gamma`` counts regions dropped by the
    triple-argmax consistency predicate instead of the confidence gate.
    """

    total: int
    dropped_prefilter: int
    dropped_gamma: int
    dropped_tau: int
    emitted: int
    mode: str = "hcc"

    def __post_init__(self):
        parts = self.dropped_prefilter + self.dropped_gamma + self.dropped_tau + self.emitted
        if parts != self.total:
            raise DataError(
                f"report counts {parts} do not sum to total {self.total}"
            )

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class BatchScores:
    """Backend output for a batch of regions plus derived argmax flags."""

    p: np.ndarray
    z_sub: np.ndarray
    z_sup: np.ndarray
    r_sub: np.ndarray
    r_sup: np.ndarray
    r: np.ndarray
    p_hat: np.ndarray
    r_hat: np.ndarray
    label_class: np.ndarray
    direct_class: np.ndarray
    consistent_sub: np.ndarray
    consistent_sup: np.ndarray


def _gather_unit_rows(features: FeatureMatrix, rows: np.ndarray) -> np.ndarray:
    return l2_normalize_rows(FeatureMatrix(features.data[rows])).data


def score_regions(
    regions: list[RegionRecord],
    features: FeatureMatrix,
    text_features: FeatureMatrix,
    hierarchy: Hierarchy,
    config: CalibrationConfig,
    backend: str | None = None,
    threads: int = 1,
) -> BatchScores:
    """Score every region through the class and hierarchy levels.

    Fails fast on a region without a feature row or with one out of range.
    """
    if hierarchy.n_classes < 2:
        raise ShapeError("calibration needs at least 2 novel classes")
    hierarchy.validate_rows(text_features.rows)
    rows = np.empty(len(regions), dtype=np.int64)
    for i, region in enumerate(regions):
        if region.feature_row is None:
            raise DataError(f"region {region.region_id} has no feature row")
        if not 0 <= region.feature_row < features.rows:
            raise DataError(
                f"region {region.region_id} feature row {region.feature_row} "
                f"outside feature matrix ({features.rows} rows)"
            )
        rows[i] = region.feature_row

    region_unit = _gather_unit_rows(features, rows)
    class_unit = _gather_unit_rows(text_features, np.asarray(hierarchy.class_rows, dtype=np.int64))
    sub_rows, sub_offsets = hierarchy.level_rows("sub")
    sup_rows, sup_offsets = hierarchy.level_rows("sup")
    sub_unit = _gather_unit_rows(text_features, sub_rows)
    sup_unit = _gather_unit_rows(text_features, sup_rows)

    kernel = _kernels.get_backend(backend)
    args = (class_unit, sub_unit, sub_offsets, sup_unit, sup_offsets, 1.0, config.temperature)
    n = region_unit.shape[0]
    if threads <= 1 or n < 2:
        raw = kernel.batch_scores(region_unit, *args)
    else:
        # Contiguous chunks, results concatenated in input order. Per-region
        # math is chunk-invariant, so the thread count never changes values.
        bounds = np.linspace(0, n, min(threads, n) + 1, dtype=int)
        chunks = [region_unit[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda chunk: kernel.batch_scores(chunk, *args), chunks))
        raw = {key: np.concatenate([part[key] for part in parts]) for key in parts[0]}

    top = np.argmax(raw["p"], axis=1)
    consistent_sub = top == np.argmax(raw["z_sub"], axis=1)
    consistent_sup = top == np.argmax(raw["z_sup"], axis=1)
    return BatchScores(
        p=raw["p"],
        z_sub=raw["z_sub"],
        z_sup=raw["z_sup"],
        r_sub=raw["r_sub"],
        r_sup=raw["r_sup"],
        r=raw["r"],
        p_hat=raw["p"].max(axis=1),
        r_hat=raw["r"].max(axis=1),
        label_class=np.argmax(raw["r"], axis=1),
        direct_class=top,
        consistent_sub=consistent_sub,
        consistent_sup=consistent_sup,
    )


def _run_gates(
    regions: list[RegionRecord],
    scores: BatchScores,
    features: FeatureMatrix,
    head: ObjectnessHead,
    config: CalibrationConfig,
    accept_confidence,
    label_class: np.ndarray,
    confidence: np.ndarray,
    mode: str,
) -> tuple[list[PseudoLabel], PipelineReport]:
    dropped_prefilter = dropped_conf = dropped_tau = 0
    labels: list[PseudoLabel] = []
    for i, region in enumerate(regions):
        if scores.p_hat[i] < config.prefilter:
            dropped_prefilter += 1
            continue
        if not accept_confidence(i):
            dropped_conf += 1
            continue
        score = objectness_score(head, features.data[region.feature_row])
        if score < config.tau:
            dropped_tau += 1
            continue
        labels.append(
            PseudoLabel(
                region=region,
                class_index=int(label_class[i]),
                confidence=float(confidence[i]),
                objectness=score,
            )
        )
    report = PipelineReport(
        total=len(regions),
        dropped_prefilter=dropped_prefilter,
        dropped_gamma=dropped_conf,
        dropped_tau=dropped_tau,
        emitted=len(labels),
        mode=mode,
    )
    return labels, report


def generate(
    regions: list[RegionRecord],
    features: FeatureMatrix,
    text_features: FeatureMatrix,
    hierarchy: Hierarchy,
    head: ObjectnessHead,
    config: CalibrationConfig,
    backend: str | None = None,
    threads: int = 1,
) -> tuple[list[PseudoLabel], PipelineReport]:
    """Calibrated pseudo labels: prefilter, confidence gate, objectness gate."""
    scores = score_regions(regions, features, text_features, hierarchy, config, backend, threads)
    return _run_gates(
        regions,
        scores,
        features,
        head,
        config,
        accept_confidence=lambda i: scores.r_hat[i] >= config.gamma,
        label_class=scores.label_class,
        confidence=scores.r_hat,
        mode="hcc",
    )


def generate_baseline_direct(
    regions: list[RegionRecord],
    features: FeatureMatrix,
    text_features: FeatureMatrix,
    hierarchy: Hierarchy,
    head: ObjectnessHead,
    config: CalibrationConfig,
    backend: str | None = None,
    threads: int = 1,
) -> tuple[list[PseudoLabel], PipelineReport]:
    """Baseline that replaces the confidence gate with triple-argmax agreement.

    Accepted regions keep the uncalibrated class and confidence.
    """
    scores = score_regions(regions, features, text_features, hierarchy, config, backend, threads)
    return _run_gates(
        regions,
        scores,
        features,
        head,
        config,
        accept_confidence=lambda i: bool(scores.consistent_sub[i] and scores.consistent_sup[i]),
        label_class=scores.direct_class,
        confidence=scores.p_hat,
        mode="direct",
    )


BACKGROUND_CLASS = "background"


def loss_weight_records(
    labels: list[PseudoLabel],
    base_annotations: list[tuple[RegionRecord, str]],
    classes: list[str] | tuple[str, ...],
) -> list[dict]:
    """Per-instance loss weights for a downstream detector.

    Base-class instances carry unit weights; pseudo labels carry their
    calibrated confidence as the classification weight and objectness as
    the regression weight. Background instances (class name
    ``"background"``) get no regression weight at all.
    """
    records: list[dict] = []
    for region, class_name in base_annotations:
        record = {
            "source": "background" if class_name == BACKGROUND_CLASS else "base",
            "image_id": region.image_id,
            "region_id": region.region_id,
            "class_name": class_name,
            "cls_w": 1.0,
        }
        if class_name != BACKGROUND_CLASS:
            record["reg_w"] = 1.0
        records.append(record)
    for label in labels:
        records.append(
            {
                "source": "pseudo",
                "image_id": label.region.image_id,
                "region_id": label.region.region_id,
                "class_name": classes[label.class_index],
                "cls_w": round_score(label.confidence),
                "reg_w": round_score(label.objectness),
            }
        )
    return records


def emit_loss_weights(
    labels: list[PseudoLabel],
    base_annotations: list[tuple[RegionRecord, str]],
    classes: list[str] | tuple[str, ...],
) -> str:
    """NDJSON text of the loss-weight records."""
    return "".join(
        json.dumps(record, separators=(",", ":")) + "\n"
        for record in loss_weight_records(labels, base_annotations, classes)
    )
