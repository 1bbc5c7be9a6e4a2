"""Linear objectness head over frozen region features.

Candidate regions are labeled positive when they overlap any ground-truth
box with IoU above a threshold, and the head (weights + bias, sigmoid
output) is trained with SGD under a weighted binary cross-entropy whose
term weights counter the foreground/background imbalance. The decision
threshold tau comes from a grid search on the training set itself; that is
deliberate, not an oversight, and cheap enough to revisit with a held-out
split if needed.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math

import numpy as np

from .errors import ConfigError, DataError, DivergenceError, ShapeError
from .evaluation import max_iou
from .model import FeatureMatrix, RegionRecord, atomic_write_text

log = logging.getLogger(__name__)

PRED_EPS = 1e-7
TAU_GRID = tuple(k / 10.0 for k in range(1, 10))


@dataclasses.dataclass(frozen=True)
class ObjectnessDataset:
    """Frozen region features with binary labels (1 = well-localized)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.ascontiguousarray(
            self.features.data if isinstance(self.features, FeatureMatrix) else self.features,
            dtype=np.float64,
        )
        labels = np.asarray(self.labels)
        if features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise ShapeError("labels must be one per feature row")
        if not np.isin(labels, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels.astype(np.float64))

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(self.labels.shape[0] - self.labels.sum())


@dataclasses.dataclass(frozen=True)
class ObjectnessHead:
    weights: np.ndarray
    bias: float
    tau: float | None = None

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 1:
            raise ShapeError("head weights must be 1-D")
        if not (np.isfinite(weights).all() and math.isfinite(self.bias)):
            raise DataError("head parameters must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", float(self.bias))


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    max_lr: float = 0.001
    iterations: int = 8000
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not self.max_lr > 0:
            raise ConfigError(f"max_lr must be > 0, got {self.max_lr}")
        if not self.iterations >= 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if not self.batch_size >= 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")


def label_regions(
    proposals: list[RegionRecord],
    ground_truth: list[RegionRecord],
    pos_iou: float = 0.8,
) -> np.ndarray:
    """Binary labels: 1 iff a proposal's best IoU against ground truth exceeds pos_iou."""
    if not 0.0 < pos_iou < 1.0:
        raise ConfigError(f"pos_iou must be in (0, 1), got {pos_iou}")
    if not ground_truth:
        log.warning("empty ground truth: all %d proposals labeled negative", len(proposals))
        return np.zeros(len(proposals), dtype=np.uint8)
    gt_boxes = [g.box for g in ground_truth]
    return np.asarray(
        [1 if max_iou(p.box, gt_boxes) > pos_iou else 0 for p in proposals],
        dtype=np.uint8,
    )


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def class_balance_weights(labels: np.ndarray) -> tuple[float, float]:
    """Inverse-frequency term weights: w_pos = n_neg/n, w_neg = n_pos/n."""
    labels = np.asarray(labels, dtype=np.float64)
    n = labels.shape[0]
    n_pos = float(labels.sum())
    return (n - n_pos) / n, n_pos / n


def weighted_bce_loss(pred, label, w_pos: float, w_neg: float):
    """Per-example weighted binary cross-entropy; predictions are clipped."""
    pred = np.clip(np.asarray(pred, dtype=np.float64), PRED_EPS, 1.0 - PRED_EPS)
    label = np.asarray(label, dtype=np.float64)
    return -w_pos * label * np.log(pred) - w_neg * (1.0 - label) * np.log1p(-pred)


def weighted_bce_grad_logit(logit, label, w_pos: float, w_neg: float):
    """Gradient of the weighted BCE with respect to the pre-sigmoid logit."""
    pred = sigmoid(logit)
    label = np.asarray(label, dtype=np.float64)
    return -w_pos * label * (1.0 - pred) + w_neg * (1.0 - label) * pred


def train_head_with_log(
    data: ObjectnessDataset, config: TrainConfig
) -> tuple[ObjectnessHead, list[tuple[int, float, float]]]:
    """SGD with a cosine learning-rate schedule; deterministic given the seed.

    Each epoch visits a fresh permutation of the dataset exactly once; the
    loss is the weighted BCE of the batch before the update. Returns the
    head and the (iteration, lr, loss) trajectory.
    """
    if data.n_pos < 1 or data.n_neg < 1:
        raise DataError("training needs at least one positive and one negative example")
    features, labels = data.features, data.labels
    n, dim = features.shape
    w_pos, w_neg = class_balance_weights(labels)
    rng = np.random.default_rng(config.seed)

    # Zero init puts the sigmoid at the neutral 0.5 prior.
    weights = np.zeros(dim)
    bias = 0.0
    history: list[tuple[int, float, float]] = []
    order = rng.permutation(n)
    cursor = 0
    total = config.iterations
    for t in range(total):
        if cursor >= n:
            order = rng.permutation(n)
            cursor = 0
        batch = order[cursor : cursor + config.batch_size]
        cursor += config.batch_size
        x = features[batch]
        y = labels[batch]
        logit = x @ weights + bias
        loss = float(weighted_bce_loss(sigmoid(logit), y, w_pos, w_neg).mean())
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at iteration {t}")
        lr = config.max_lr * 0.5 * (1.0 + math.cos(math.pi * t / total))
        grad = weighted_bce_grad_logit(logit, y, w_pos, w_neg)
        weights = weights - lr * (x.T @ grad) / batch.shape[0]
        bias = bias - lr * float(grad.mean())
        history.append((t, lr, loss))
    return ObjectnessHead(weights, bias), history


def train_head(data: ObjectnessDataset, config: TrainConfig) -> ObjectnessHead:
    head, _ = train_head_with_log(data, config)
    return head


def head_scores(head: ObjectnessHead, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != head.weights.shape[0]:
        raise ShapeError(
            f"feature dim {features.shape[-1]} != head dim {head.weights.shape[0]}"
        )
    return sigmoid(features @ head.weights + head.bias)


def objectness_score(head: ObjectnessHead, feature) -> float:
    """Sigmoid score of a single region feature."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.ndim != 1 or feature.shape[0] != head.weights.shape[0]:
        raise ShapeError(
            f"feature shape {feature.shape} incompatible with head dim "
            f"{head.weights.shape[0]}"
        )
    return float(sigmoid(float(feature @ head.weights) + head.bias))


def select_tau(head: ObjectnessHead, data: ObjectnessDataset) -> float:
    """Grid search tau over {0.1, ..., 0.9} for best accuracy; ties take the lowest."""
    scores = head_scores(head, data.features)
    best_tau, best_acc = TAU_GRID[0], -1.0
    for tau in TAU_GRID:
        acc = float(((scores >= tau) == (data.labels == 1.0)).mean())
        if acc > best_acc:
            best_tau, best_acc = tau, acc
    return best_tau


def save_head(head: ObjectnessHead, path) -> None:
    doc = {
        "dim": int(head.weights.shape[0]),
        "weights": [float(v) for v in head.weights],
        "bias": head.bias,
        "tau": head.tau,
    }
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_head(path) -> ObjectnessHead:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    weights = np.asarray(doc["weights"], dtype=np.float64)
    if weights.shape[0] != int(doc["dim"]):
        raise DataError(f"{path}: weight count does not match declared dim")
    tau = doc.get("tau")
    return ObjectnessHead(weights, float(doc["bias"]), None if tau is None else float(tau))


def write_train_log(path, history: list[tuple[int, float, float]]) -> None:
    rows = ["iteration,lr,loss\n"]
    rows += [f"{t},{lr!r},{loss!r}\n" for t, lr, loss in history]
    atomic_write_text(path, "".join(rows))
