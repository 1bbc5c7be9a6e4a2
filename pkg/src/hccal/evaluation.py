"""Desk-scale analyses: box IoU, the foreground/background consistency-ratio
study, rank correlations with tie handling, and pseudo-label precision/recall.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import (
    ConfigError,
    GeometryError,
    ShapeError,
    UndefinedCorrelationError,
)
from .model import PseudoLabel, RegionRecord


def _check_box(box) -> tuple[float, float, float, float]:
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x2 > x1 and y2 > y1):
        raise GeometryError(f"degenerate box {(x1, y1, x2, y2)}")
    return x1, y1, x2, y2


def iou(a, b) -> float:
    """Intersection over union of two corner-format boxes; 0 when disjoint."""
    ax1, ay1, ax2, ay2 = _check_box(a)
    bx1, by1, bx2, by2 = _check_box(b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def max_iou(box, others) -> float:
    """Largest IoU of ``box`` against a list of boxes; 0 for an empty list."""
    best = 0.0
    for other in others:
        value = iou(box, other)
        if value > best:
            best = value
    return best


@dataclasses.dataclass(frozen=True)
class ConsistencyReport:
    """Fraction of fg/bg proposals whose three argmax predictions agree.

    A fraction is None when its group is empty.
    """

    fg_consistent_fraction: float | None
    bg_consistent_fraction: float | None
    fg_count: int
    bg_count: int

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def consistency_study(
    proposals: list[RegionRecord],
    ground_truth: list[RegionRecord],
    p: np.ndarray,
    z_sub: np.ndarray,
    z_sup: np.ndarray,
    fg_iou: float = 0.8,
    bg_iou: float = 0.5,
) -> ConsistencyReport:
    """Group proposals by IoU against ground truth and compare consistency.

    A proposal is foreground when its best IoU exceeds ``fg_iou``,
    background when below ``bg_iou``; the band in between is excluded.
    """
    if not fg_iou > bg_iou:
        raise ConfigError(f"fg_iou {fg_iou} must exceed bg_iou {bg_iou}")
    p = np.asarray(p, dtype=np.float64)
    z_sub = np.asarray(z_sub, dtype=np.float64)
    z_sup = np.asarray(z_sup, dtype=np.float64)
    if not (p.shape == z_sub.shape == z_sup.shape) or p.ndim != 2:
        raise ShapeError("p, z_sub, z_sup must share shape (n_proposals, n_classes)")
    if p.shape[0] != len(proposals):
        raise ShapeError("score rows must match the proposal count")
    gt_boxes = [g.box for g in ground_truth]
    consistent = (np.argmax(p, axis=1) == np.argmax(z_sub, axis=1)) & (
        np.argmax(p, axis=1) == np.argmax(z_sup, axis=1)
    )
    fg_count = bg_count = fg_hit = bg_hit = 0
    for i, proposal in enumerate(proposals):
        overlap = max_iou(proposal.box, gt_boxes)
        if overlap > fg_iou:
            fg_count += 1
            fg_hit += int(consistent[i])
        elif overlap < bg_iou:
            bg_count += 1
            bg_hit += int(consistent[i])
    return ConsistencyReport(
        fg_consistent_fraction=fg_hit / fg_count if fg_count else None,
        bg_consistent_fraction=bg_hit / bg_count if bg_count else None,
        fg_count=fg_count,
        bg_count=bg_count,
    )


@dataclasses.dataclass(frozen=True)
class CorrelationReport:
    spearman_rho: float
    kendall_tau: float
    n: int

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Fractional ranks (1-based) with ties assigned their average rank."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.shape[0], dtype=np.float64)
    i = 0
    while i < x.shape[0]:
        j = i
        while j + 1 < x.shape[0] and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ShapeError("correlation needs two 1-D vectors of equal length")
    if x.shape[0] < 2:
        raise UndefinedCorrelationError("correlation needs at least 2 observations")
    return x, y


def spearman(x, y) -> float:
    """Rank correlation with average ranks for ties.

    Tie-free inputs use the exact rank-difference form; with ties this is
    the Pearson correlation of the fractional ranks.
    """
    x, y = _check_pair(x, y)
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        raise UndefinedCorrelationError("zero rank variance")
    n = x.shape[0]
    tie_free = len(np.unique(x)) == n and len(np.unique(y)) == n
    if tie_free:
        d = rx - ry
        return 1.0 - 6.0 * float(d @ d) / (n * (n * n - 1))
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    return float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))


def kendall(x, y) -> float:
    """Tie-corrected rank correlation (tau-b)."""
    x, y = _check_pair(x, y)
    n = x.shape[0]
    nc_minus_nd = 0
    for i in range(n - 1):
        sx = np.sign(x[i + 1 :] - x[i])
        sy = np.sign(y[i + 1 :] - y[i])
        nc_minus_nd += int((sx * sy).sum())
    n0 = n * (n - 1) // 2

    def tie_pairs(values: np.ndarray) -> int:
        _, counts = np.unique(values, return_counts=True)
        return int((counts * (counts - 1) // 2).sum())

    n1 = tie_pairs(x)
    n2 = tie_pairs(y)
    if n0 == n1 or n0 == n2:
        raise UndefinedCorrelationError("all observations tied")
    return nc_minus_nd / np.sqrt(float((n0 - n1) * (n0 - n2)))


def correlation_report(x, y) -> CorrelationReport:
    x, y = _check_pair(x, y)
    return CorrelationReport(spearman(x, y), kendall(x, y), int(x.shape[0]))


@dataclasses.dataclass(frozen=True)
class QualityReport:
    """Greedy-matched precision/recall of pseudo labels against ground truth."""

    precision: float | None
    recall: float | None
    true_positives: int
    n_labels: int
    n_ground_truth: int

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def pseudo_label_quality(
    labels: list[PseudoLabel],
    ground_truth_novel: list[tuple[RegionRecord, int]],
    match_iou: float = 0.5,
) -> QualityReport:
    """Match labels to ground truth greedily by descending confidence.

    A label is a true positive when it overlaps an unmatched same-class
    ground-truth box with IoU >= ``match_iou``; each ground-truth box
    matches at most once.
    """
    if not 0.0 < match_iou < 1.0:
        raise ConfigError(f"match_iou must be in (0, 1), got {match_iou}")
    order = sorted(range(len(labels)), key=lambda i: -labels[i].confidence)
    matched = [False] * len(ground_truth_novel)
    tp = 0
    for i in order:
        label = labels[i]
        best_j, best_overlap = -1, 0.0
        for j, (gt, cls) in enumerate(ground_truth_novel):
            if matched[j] or cls != label.class_index:
                continue
            overlap = iou(label.region.box, gt.box)
            if overlap >= match_iou and overlap > best_overlap:
                best_j, best_overlap = j, overlap
        if best_j >= 0:
            matched[best_j] = True
            tp += 1
    return QualityReport(
        precision=tp / len(labels) if labels else None,
        recall=tp / len(ground_truth_novel) if ground_truth_novel else None,
        true_positives=tp,
        n_labels=len(labels),
        n_ground_truth=len(ground_truth_novel),
    )
