"""Domain types and on-disk formats shared by every other module.

Feature matrices live on disk as a JSON header (``<name>.json`` with
``{"dtype": "f32le", "rows": R, "dim": D}``) next to a raw row-major
little-endian float32 payload (``<name>.f32``). In memory all values are
promoted to float64 so the calibration inequalities hold at full double
precision. Regions, pseudo labels and loss-weight records are NDJSON (one
UTF-8 JSON object per line); hierarchies are a single JSON document
``{"<class>": {"supers": [{"name": ..., "row": ...}], "subs": [...]}}``.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    CorruptFileError,
    DataError,
    DegenerateFeatureError,
    HierarchyError,
    ShapeError,
)

PROB_SUM_TOL = 1e-9

# Decimal places kept when serializing scores; backends agree far below
# this, so output files are byte-stable across backends and thread counts.
SCORE_DECIMALS = 10


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclasses.dataclass(frozen=True)
class FeatureMatrix:
    """Dense row-major matrix of embeddings, one row per region or text entry."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"feature matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"feature matrix must be at least 1x1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise DataError("feature matrix contains non-finite values")
        object.__setattr__(self, "data", _frozen_array(arr))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.data[i]


def load_feature_matrix(header_path, data_path=None) -> FeatureMatrix:
    """Load a feature matrix from its JSON header and raw f32 payload.

    ``data_path`` defaults to the header path with a ``.f32`` suffix.
    """
    header_path = os.fspath(header_path)
    if data_path is None:
        data_path = os.path.splitext(header_path)[0] + ".f32"
    try:
        with open(header_path, "r", encoding="utf-8") as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"invalid feature header {header_path}: {exc}") from exc
    if not isinstance(header, dict) or header.get("dtype") != "f32le":
        raise CorruptFileError(
            f"feature header {header_path} must declare dtype 'f32le'"
        )
    rows, dim = header.get("rows"), header.get("dim")
    if not (isinstance(rows, int) and isinstance(dim, int) and rows >= 1 and dim >= 1):
        raise CorruptFileError(
            f"feature header {header_path} needs integer rows >= 1 and dim >= 1"
        )
    raw = np.fromfile(data_path, dtype="<f4")
    if raw.size != rows * dim:
        raise CorruptFileError(
            f"{data_path}: expected {rows * dim} float32 values "
            f"({rows}x{dim}), found {raw.size}"
        )
    values = raw.astype(np.float64).reshape(rows, dim)
    if not np.isfinite(values).all():
        raise DataError(f"{data_path} contains non-finite values")
    return FeatureMatrix(values)


def save_feature_matrix(matrix: FeatureMatrix, header_path, data_path=None) -> None:
    """Write header + payload. Values loaded from f32 round-trip bit-exactly."""
    header_path = os.fspath(header_path)
    if data_path is None:
        data_path = os.path.splitext(header_path)[0] + ".f32"
    header = {"dtype": "f32le", "rows": matrix.rows, "dim": matrix.dim}
    atomic_write_text(header_path, json.dumps(header) + "\n")
    atomic_write_bytes(data_path, matrix.data.astype("<f4").tobytes())


def l2_normalize_rows(matrix: FeatureMatrix) -> FeatureMatrix:
    """Scale every row to unit Euclidean norm."""
    data = matrix.data
    norms = np.sqrt(np.einsum("ij,ij->i", data, data))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateFeatureError(f"row {int(zero[0])} has zero norm")
    return FeatureMatrix(data / norms[:, None])


@dataclasses.dataclass(frozen=True)
class ClassVocabulary:
    """Ordered novel and base class names; disjoint, no duplicates."""

    novel_classes: tuple[str, ...]
    base_classes: tuple[str, ...] = ()

    def __post_init__(self):
        novel = tuple(self.novel_classes)
        base = tuple(self.base_classes)
        if len(set(novel)) != len(novel):
            raise DataError("novel class names must be unique")
        if len(set(base)) != len(base):
            raise DataError("base class names must be unique")
        if set(novel) & set(base):
            raise DataError("novel and base class lists must be disjoint")
        object.__setattr__(self, "novel_classes", novel)
        object.__setattr__(self, "base_classes", base)

    @property
    def n_novel(self) -> int:
        return len(self.novel_classes)


def load_vocabulary(path) -> ClassVocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return ClassVocabulary(
        tuple(doc.get("novel_classes", ())), tuple(doc.get("base_classes", ()))
    )


def save_vocabulary(vocab: ClassVocabulary, path) -> None:
    doc = {
        "novel_classes": list(vocab.novel_classes),
        "base_classes": list(vocab.base_classes),
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


@dataclasses.dataclass(frozen=True)
class HierarchyEntry:
    name: str
    row: int


@dataclasses.dataclass(frozen=True)
class Hierarchy:
    """Per-class super- and sub-category entries with text-feature rows.

    Lists may be ragged: refinement leaves a varying number of entries per
    class. ``class_rows[n]`` is the text row of class ``n`` itself.
    """

    classes: tuple[str, ...]
    supers: tuple[tuple[HierarchyEntry, ...], ...]
    subs: tuple[tuple[HierarchyEntry, ...], ...]
    class_rows: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.classes) == len(self.supers) == len(self.subs) == len(self.class_rows)):
            raise HierarchyError("per-class lists must align with the class list")
        if len(set(self.classes)) != len(self.classes):
            raise HierarchyError("class names must be unique")
        for level, per_class in (("super", self.supers), ("sub", self.subs)):
            for cls, entries in zip(self.classes, per_class):
                names = [e.name for e in entries]
                if len(set(names)) != len(names):
                    raise HierarchyError(
                        f"duplicate {level}-category name for class '{cls}'"
                    )

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def level(self, which: str) -> tuple[tuple[HierarchyEntry, ...], ...]:
        if which == "sub":
            return self.subs
        if which == "sup":
            return self.supers
        raise ConfigError(f"level must be 'sub' or 'sup', got {which!r}")

    def level_rows(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        """Flatten one level into (rows, offsets) with offsets of length n+1.

        Raises if any class has no entry at the level; downstream joint
        softmax needs at least one entry per class.
        """
        per_class = self.level(which)
        rows: list[int] = []
        offsets = np.zeros(self.n_classes + 1, dtype=np.int64)
        for n, entries in enumerate(per_class):
            if not entries:
                raise HierarchyError(
                    f"class '{self.classes[n]}' has no "
                    f"{'sub' if which == 'sub' else 'super'}-category entries"
                )
            rows.extend(e.row for e in entries)
            offsets[n + 1] = len(rows)
        return np.asarray(rows, dtype=np.int64), offsets

    def validate_rows(self, n_rows: int) -> None:
        for row in self.class_rows:
            if not 0 <= row < n_rows:
                raise HierarchyError(f"class row {row} outside feature matrix ({n_rows} rows)")
        for per_class in (self.supers, self.subs):
            for cls, entries in zip(self.classes, per_class):
                for e in entries:
                    if not 0 <= e.row < n_rows:
                        raise HierarchyError(
                            f"entry '{e.name}' of class '{cls}' points at row "
                            f"{e.row} outside feature matrix ({n_rows} rows)"
                        )


def _entries_from_json(cls: str, items) -> tuple[HierarchyEntry, ...]:
    entries = []
    for item in items:
        if not isinstance(item, dict) or "name" not in item or "row" not in item:
            raise CorruptFileError(
                f"hierarchy entry for class '{cls}' must be an object with name and row"
            )
        entries.append(HierarchyEntry(str(item["name"]), int(item["row"])))
    return tuple(entries)


def load_hierarchy(path) -> Hierarchy:
    """Load a hierarchy document; key order defines the class order.

    A per-class ``"row"`` key overrides the default convention that class
    ``n`` uses text row ``n``.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or not doc:
        raise CorruptFileError(f"{path}: hierarchy document must be a non-empty object")
    classes, supers, subs, class_rows = [], [], [], []
    for idx, (cls, spec) in enumerate(doc.items()):
        classes.append(cls)
        supers.append(_entries_from_json(cls, spec.get("supers", [])))
        subs.append(_entries_from_json(cls, spec.get("subs", [])))
        class_rows.append(int(spec.get("row", idx)))
    return Hierarchy(tuple(classes), tuple(supers), tuple(subs), tuple(class_rows))


def save_hierarchy(hierarchy: Hierarchy, path) -> None:
    doc = {}
    for n, cls in enumerate(hierarchy.classes):
        doc[cls] = {
            "row": hierarchy.class_rows[n],
            "supers": [{"name": e.name, "row": e.row} for e in hierarchy.supers[n]],
            "subs": [{"name": e.name, "row": e.row} for e in hierarchy.subs[n]],
        }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


@dataclasses.dataclass(frozen=True)
class ProbVector:
    """Probability distribution over the novel classes."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ShapeError(f"probability vector must be 1-D, got shape {arr.shape}")
        if (arr < 0).any():
            raise DataError("probability vector has negative entries")
        total = float(arr.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise DataError(f"probability vector sums to {total!r}, expected 1")
        object.__setattr__(self, "values", _frozen_array(arr))

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclasses.dataclass(frozen=True)
class SubProbMatrix:
    """One joint distribution over all hierarchy entries of one level.

    Stored flat with prefix offsets because the per-class entry count is
    ragged; ``row(n)`` views class n's slice. The grand total over all
    entries is 1.
    """

    values: np.ndarray
    offsets: np.ndarray
    level: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        offsets = np.asarray(self.offsets, dtype=np.int64)
        if values.ndim != 1 or offsets.ndim != 1 or offsets.shape[0] < 2:
            raise ShapeError("flat values and offsets of length n_classes+1 required")
        if offsets[0] != 0 or offsets[-1] != values.shape[0] or (np.diff(offsets) < 0).any():
            raise ShapeError("offsets must be a non-decreasing prefix sum over values")
        if self.level not in ("sub", "sup"):
            raise ConfigError(f"level must be 'sub' or 'sup', got {self.level!r}")
        if (values < 0).any():
            raise DataError("entry probabilities must be non-negative")
        total = float(values.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise DataError(f"joint distribution sums to {total!r}, expected 1")
        object.__setattr__(self, "values", _frozen_array(values))
        object.__setattr__(self, "offsets", _frozen_array(offsets, dtype=np.int64))

    @property
    def n_classes(self) -> int:
        return self.offsets.shape[0] - 1

    def row(self, n: int) -> np.ndarray:
        return self.values[self.offsets[n] : self.offsets[n + 1]]


@dataclasses.dataclass(frozen=True)
class RegionRecord:
    """A candidate region: box in pixel corner coordinates plus feature row."""

    image_id: str
    region_id: str
    box: tuple[float, float, float, float]
    feature_row: int | None = None

    def __post_init__(self):
        box = tuple(float(v) for v in self.box)
        if len(box) != 4:
            raise DataError(f"box must have 4 coordinates, got {len(box)}")
        x1, y1, x2, y2 = box
        if not all(math.isfinite(v) and v >= 0 for v in box):
            raise DataError(f"region {self.region_id}: coordinates must be finite and >= 0")
        if not (x2 > x1 and y2 > y1):
            raise DataError(f"region {self.region_id}: box must satisfy x2 > x1 and y2 > y1")
        object.__setattr__(self, "box", box)


@dataclasses.dataclass(frozen=True)
class PseudoLabel:
    """Generated label: region, novel-class index, calibrated confidence, objectness."""

    region: RegionRecord
    class_index: int
    confidence: float
    objectness: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence {self.confidence} outside [0, 1]")
        if not 0.0 <= self.objectness <= 1.0:
            raise DataError(f"objectness {self.objectness} outside [0, 1]")


@dataclasses.dataclass(frozen=True)
class CalibrationConfig:
    """Thresholds and knobs for pseudo-label generation.

    ``temperature`` applies to the hierarchy-level joint softmax only; it
    flattens the pooled scores when set below 1. The class-level softmax
    runs at temperature 1.
    """

    gamma: float = 0.8
    tau: float = 0.3
    prefilter: float = 0.5
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if not 0.0 <= self.prefilter <= 1.0:
            raise ConfigError(f"prefilter must be in [0, 1], got {self.prefilter}")
        if not 0.0 < self.temperature <= 1.0:
            raise ConfigError(f"temperature must be in (0, 1], got {self.temperature}")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")


# ---------------------------------------------------------------------------
# NDJSON streams


def round_score(x: float) -> float:
    return round(float(x), SCORE_DECIMALS)


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":")) + "\n"


def _region_from_obj(obj: dict, path, lineno: int) -> RegionRecord:
    try:
        return RegionRecord(
            image_id=str(obj["image_id"]),
            region_id=str(obj["region_id"]),
            box=tuple(obj["box"]),
            feature_row=(int(obj["feature_row"]) if obj.get("feature_row") is not None else None),
        )
    except KeyError as exc:
        raise CorruptFileError(f"{path}:{lineno}: missing region key {exc}") from exc


def _iter_ndjson(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptFileError(f"{path}:{lineno}: invalid JSON: {exc}") from exc


def read_regions(path) -> list[RegionRecord]:
    return [_region_from_obj(obj, path, lineno) for lineno, obj in _iter_ndjson(path)]


def read_annotated_regions(path) -> list[tuple[RegionRecord, str]]:
    """Read regions that carry a ``class_name`` (ground truth / base annotations)."""
    out = []
    for lineno, obj in _iter_ndjson(path):
        if "class_name" not in obj:
            raise CorruptFileError(f"{path}:{lineno}: missing class_name")
        out.append((_region_from_obj(obj, path, lineno), str(obj["class_name"])))
    return out


def write_regions(path, regions: Iterable[RegionRecord]) -> None:
    lines = []
    for r in regions:
        obj = {
            "image_id": r.image_id,
            "region_id": r.region_id,
            "box": list(r.box),
            "feature_row": r.feature_row,
        }
        lines.append(_dump_line(obj))
    atomic_write_text(path, "".join(lines))


def pseudo_label_lines(labels: Iterable[PseudoLabel], classes: Sequence[str]) -> str:
    """Serialize labels to NDJSON text with canonical score formatting."""
    lines = []
    for lab in labels:
        obj = {
            "image_id": lab.region.image_id,
            "region_id": lab.region.region_id,
            "box": list(lab.region.box),
            "class_index": lab.class_index,
            "class_name": classes[lab.class_index],
            "confidence": round_score(lab.confidence),
            "objectness": round_score(lab.objectness),
        }
        lines.append(_dump_line(obj))
    return "".join(lines)


def write_pseudo_labels(path, labels: Iterable[PseudoLabel], classes: Sequence[str]) -> None:
    atomic_write_text(path, pseudo_label_lines(labels, classes))


def read_pseudo_labels(path, classes: Sequence[str]) -> list[PseudoLabel]:
    """Read labels, checking class_name/class_index agree with ``classes``."""
    labels = []
    for lineno, obj in _iter_ndjson(path):
        region = _region_from_obj(obj, path, lineno)
        idx = int(obj["class_index"])
        if not 0 <= idx < len(classes):
            raise CorruptFileError(f"{path}:{lineno}: class_index {idx} out of range")
        name = obj.get("class_name")
        if name is not None and name != classes[idx]:
            raise CorruptFileError(
                f"{path}:{lineno}: class_name {name!r} does not match index {idx}"
            )
        labels.append(
            PseudoLabel(region, idx, float(obj["confidence"]), float(obj["objectness"]))
        )
    return labels


# ---------------------------------------------------------------------------
# Atomic writes


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename over."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
