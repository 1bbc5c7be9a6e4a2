"""Cosine-similarity classification and softmax probability distributions.

Class-level scoring turns one region feature and the class text features
into a distribution over novel classes; hierarchy-level scoring computes a
single joint distribution over every super- or sub-category entry of every
class, so the per-entry mass shrinks as the entry pool grows.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DegenerateFeatureError, HierarchyError, ShapeError
from .model import FeatureMatrix, Hierarchy, ProbVector, SubProbMatrix

# A similarity row is a plain float64 vector with entries in [-1, 1].
SimilarityRow = np.ndarray


def softmax(values: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax with max-subtraction for numerical stability."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    z = temperature * np.asarray(values, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        return features.data
    return np.asarray(features, dtype=np.float64)


def _unit(vector: np.ndarray, what: str) -> np.ndarray:
    norm = float(np.sqrt(vector @ vector))
    if norm == 0.0:
        raise DegenerateFeatureError(f"{what} has zero norm")
    return vector / norm


def cosine_similarities(region_feature, text_features) -> SimilarityRow:
    """Cosine of the region feature against every text-feature row."""
    region = np.asarray(region_feature, dtype=np.float64)
    texts = _as_matrix(text_features)
    if region.ndim != 1:
        raise ShapeError(f"region feature must be 1-D, got shape {region.shape}")
    if texts.ndim != 2 or texts.shape[1] != region.shape[0]:
        raise ShapeError(
            f"text features {texts.shape} incompatible with region dim {region.shape[0]}"
        )
    region = _unit(region, "region feature")
    norms = np.sqrt(np.einsum("ij,ij->i", texts, texts))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateFeatureError(f"text row {int(zero[0])} has zero norm")
    return (texts @ region) / norms


def class_probabilities(sims: SimilarityRow, temperature: float = 1.0) -> ProbVector:
    """Softmax over class similarities; needs at least two classes."""
    sims = np.asarray(sims, dtype=np.float64)
    if sims.ndim != 1 or sims.shape[0] < 2:
        raise ShapeError("class probabilities need at least 2 similarity entries")
    return ProbVector(softmax(sims, temperature))


def hierarchy_probabilities(
    region_feature,
    text_features,
    hierarchy: Hierarchy,
    level: str,
    temperature: float = 1.0,
) -> SubProbMatrix:
    """Joint softmax over all entries of one hierarchy level.

    Every class must contribute at least one entry; the distribution is
    normalized over the actual post-refinement entry count, which may
    differ per class.
    """
    rows, offsets = hierarchy.level_rows(level)
    texts = _as_matrix(text_features)
    if rows.max(initial=-1) >= texts.shape[0]:
        raise HierarchyError(
            f"hierarchy references row {int(rows.max())} outside the text features"
        )
    sims = cosine_similarities(region_feature, texts[rows])
    return SubProbMatrix(softmax(sims, temperature), offsets, level)
