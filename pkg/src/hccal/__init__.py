"""Calibrated pseudo labels for open-vocabulary detection.

Scores candidate regions against novel-class text features, reweights the
class probabilities by their agreement with super- and sub-category
predictions, gates on calibrated confidence and a learned objectness
score, and ships the evaluation analyses to inspect the result. All inputs
are precomputed embeddings and NDJSON region files; nothing here talks to
a model or the network.
"""

__version__ = "0.1.0"

from .calibration import (
    CalibrationOutcome,
    ClasswiseScores,
    calibrate,
    calibrate_level,
    combine,
    direct_consistency_label,
    pool_classwise,
)
from .errors import HccalError
from .model import (
    CalibrationConfig,
    ClassVocabulary,
    FeatureMatrix,
    Hierarchy,
    ProbVector,
    PseudoLabel,
    RegionRecord,
    SubProbMatrix,
    l2_normalize_rows,
    load_feature_matrix,
    save_feature_matrix,
)
from .objectness import (
    ObjectnessDataset,
    ObjectnessHead,
    TrainConfig,
    label_regions,
    objectness_score,
    select_tau,
    train_head,
    weighted_bce_loss,
)
from .pipeline import PipelineReport, generate, generate_baseline_direct
from .scoring import class_probabilities, cosine_similarities, hierarchy_probabilities

__all__ = [
    "CalibrationConfig",
    "CalibrationOutcome",
    "ClassVocabulary",
    "ClasswiseScores",
    "FeatureMatrix",
    "HccalError",
    "Hierarchy",
    "ObjectnessDataset",
    "ObjectnessHead",
    "PipelineReport",
    "ProbVector",
    "PseudoLabel",
    "RegionRecord",
    "SubProbMatrix",
    "TrainConfig",
    "calibrate",
    "calibrate_level",
    "class_probabilities",
    "combine",
    "cosine_similarities",
    "direct_consistency_label",
    "generate",
    "generate_baseline_direct",
    "hierarchy_probabilities",
    "l2_normalize_rows",
    "label_regions",
    "load_feature_matrix",
    "objectness_score",
    "pool_classwise",
    "save_feature_matrix",
    "select_tau",
    "train_head",
    "weighted_bce_loss",
]
