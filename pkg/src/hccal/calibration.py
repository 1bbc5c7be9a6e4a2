"""Hierarchical confidence calibration.

Class-wise scores are max-pooled from the joint hierarchy distribution,
used to reweight the class probabilities, and the two reweighted
distributions (super and sub level) are averaged. When the class-level and
pooled argmaxes agree the reweighting can only raise the top confidence;
when they disagree, a flat enough score vector combined with a dominant
class probability forces it strictly down. Ties in any argmax break to the
lowest index so the consistency predicate is well defined.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import DataError, DegenerateScoreError, HierarchyError, ShapeError
from .model import ProbVector, SubProbMatrix


@dataclasses.dataclass(frozen=True)
class ClasswiseScores:
    """Per-class pooled hierarchy scores, entries in (0, 1]."""

    values: np.ndarray
    level: str

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ShapeError(f"classwise scores must be 1-D, got shape {arr.shape}")
        if (arr <= 0).any() or (arr > 1).any():
            raise DataError("classwise scores must lie in (0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


@dataclasses.dataclass(frozen=True)
class FlatnessBound:
    """Max/min ratio bound on a score vector; 1 means perfectly flat."""

    beta: float

    def __post_init__(self):
        if not self.beta >= 1.0:
            raise DataError(f"flatness bound must be >= 1, got {self.beta}")


@dataclasses.dataclass(frozen=True)
class CalibrationOutcome:
    """Everything the gate needs: both reweighted levels, their mean, and flags."""

    r_sub: ProbVector
    r_sup: ProbVector
    r: ProbVector
    p_hat: float
    r_hat: float
    consistent_sub: bool
    consistent_sup: bool


def _values(x) -> np.ndarray:
    if isinstance(x, (ProbVector, ClasswiseScores)):
        return x.values
    return np.asarray(x, dtype=np.float64)


def flatness(z) -> FlatnessBound:
    values = _values(z)
    if (values <= 0).any():
        raise DataError("flatness requires strictly positive scores")
    return FlatnessBound(float(values.max() / values.min()))


def pool_classwise(p_level: SubProbMatrix) -> ClasswiseScores:
    """Max over each class's entries of the joint distribution."""
    offsets = p_level.offsets
    if (np.diff(offsets) == 0).any():
        empty = int(np.flatnonzero(np.diff(offsets) == 0)[0])
        raise HierarchyError(f"class {empty} has no entries to pool")
    pooled = np.maximum.reduceat(p_level.values, offsets[:-1])
    return ClasswiseScores(pooled, p_level.level)


def calibrate_level(p, z) -> ProbVector:
    """Reweight class probabilities by class-wise scores and renormalize."""
    pv = _values(p)
    zv = _values(z)
    if pv.shape != zv.shape:
        raise ShapeError(f"probability shape {pv.shape} != score shape {zv.shape}")
    weighted = pv * zv
    denom = weighted.sum()
    if denom <= 0.0:
        raise DegenerateScoreError("calibration denominator is zero")
    return ProbVector(weighted / denom)


def combine(r_sub, r_sup) -> ProbVector:
    """Elementwise mean of the two reweighted distributions."""
    a = _values(r_sub)
    b = _values(r_sup)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return ProbVector((a + b) / 2.0)


def calibrate(p, p_sub: SubProbMatrix, p_sup: SubProbMatrix) -> CalibrationOutcome:
    """Full calibration for one region from its three distributions."""
    pv = _values(p)
    z_sub = pool_classwise(p_sub)
    z_sup = pool_classwise(p_sup)
    if z_sub.values.shape != pv.shape or z_sup.values.shape != pv.shape:
        raise ShapeError("pooled scores do not match the class count")
    r_sub = calibrate_level(pv, z_sub)
    r_sup = calibrate_level(pv, z_sup)
    r = combine(r_sub, r_sup)
    top = int(np.argmax(pv))
    return CalibrationOutcome(
        r_sub=r_sub,
        r_sup=r_sup,
        r=r,
        p_hat=float(pv.max()),
        r_hat=float(r.values.max()),
        consistent_sub=top == int(np.argmax(z_sub.values)),
        consistent_sup=top == int(np.argmax(z_sup.values)),
    )


def direct_consistency_label(p, z_sub, z_sup) -> int | None:
    """Class index when all three argmaxes agree, else None."""
    pv = _values(p)
    sub = _values(z_sub)
    sup = _values(z_sup)
    if pv.shape != sub.shape or pv.shape != sup.shape:
        raise ShapeError("direct consistency check needs matching shapes")
    top = int(np.argmax(pv))
    if top == int(np.argmax(sub)) and top == int(np.argmax(sup)):
        return top
    return None
