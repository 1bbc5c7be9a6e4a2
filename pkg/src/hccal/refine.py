"""Refine a raw LLM-generated hierarchy using recorded verification verdicts.

Three filters run in a fixed order: correctness (drop entries whose Is-A
verdict is false), discriminability (drop super-categories shared by too
many classes to carry signal), and near-duplicate removal (drop entries
whose embedding is too close to an earlier survivor). Filters only remove
entries; a class left empty at either level is an error, not a silent
fallback.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .errors import (
    ConfigError,
    CorruptFileError,
    HierarchyError,
    IncompleteVerdictError,
    RefinementError,
)
from .model import (
    ClassVocabulary,
    FeatureMatrix,
    Hierarchy,
    HierarchyEntry,
    atomic_write_text,
)

LEVELS = ("super", "sub")


@dataclasses.dataclass(frozen=True)
class RawHierarchy:
    """Unrefined hierarchy; same shape as Hierarchy but duplicates allowed."""

    classes: tuple[str, ...]
    supers: tuple[tuple[HierarchyEntry, ...], ...]
    subs: tuple[tuple[HierarchyEntry, ...], ...]
    class_rows: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.classes) == len(self.supers) == len(self.subs) == len(self.class_rows)):
            raise HierarchyError("per-class lists must align with the class list")

    @property
    def nominal_k_sup(self) -> int:
        return max((len(e) for e in self.supers), default=0)

    @property
    def nominal_k_sub(self) -> int:
        return max((len(e) for e in self.subs), default=0)

    def level(self, which: str):
        return self.supers if which == "super" else self.subs

    def replace_level(self, which: str, per_class) -> "RawHierarchy":
        per_class = tuple(tuple(entries) for entries in per_class)
        if which == "super":
            return dataclasses.replace(self, supers=per_class)
        return dataclasses.replace(self, subs=per_class)


def raw_from_hierarchy(hierarchy: Hierarchy) -> RawHierarchy:
    return RawHierarchy(
        hierarchy.classes, hierarchy.supers, hierarchy.subs, hierarchy.class_rows
    )


def load_raw_hierarchy(path) -> RawHierarchy:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or not doc:
        raise CorruptFileError(f"{path}: hierarchy document must be a non-empty object")
    classes, supers, subs, class_rows = [], [], [], []
    for idx, (cls, spec) in enumerate(doc.items()):
        classes.append(cls)
        supers.append(
            tuple(HierarchyEntry(str(e["name"]), int(e["row"])) for e in spec.get("supers", []))
        )
        subs.append(
            tuple(HierarchyEntry(str(e["name"]), int(e["row"])) for e in spec.get("subs", []))
        )
        class_rows.append(int(spec.get("row", idx)))
    return RawHierarchy(tuple(classes), tuple(supers), tuple(subs), tuple(class_rows))


@dataclasses.dataclass(frozen=True)
class VerdictSet:
    """Recorded Is-A verdicts keyed by (class, entry name, relation)."""

    verdicts: dict[tuple[str, str, str], bool]

    def lookup(self, cls: str, name: str, relation: str) -> bool:
        key = (cls, name, relation)
        if key not in self.verdicts:
            raise IncompleteVerdictError(
                f"no verdict for {relation}-category '{name}' of class '{cls}'"
            )
        return self.verdicts[key]


def load_verdicts(path) -> VerdictSet:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    verdicts: dict[tuple[str, str, str], bool] = {}
    for cls, levels in doc.items():
        for relation, key in (("super", "supers"), ("sub", "subs")):
            for name, verdict in levels.get(key, {}).items():
                verdicts[(cls, str(name), relation)] = bool(verdict)
    return VerdictSet(verdicts)


def save_verdicts(verdicts: VerdictSet, path) -> None:
    doc: dict[str, dict[str, dict[str, bool]]] = {}
    for (cls, name, relation), value in verdicts.verdicts.items():
        key = "supers" if relation == "super" else "subs"
        doc.setdefault(cls, {"supers": {}, "subs": {}})[key][name] = value
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


@dataclasses.dataclass(frozen=True)
class RefineConfig:
    discriminability_fraction: float = 1.0 / 3.0
    duplicate_threshold: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.discriminability_fraction <= 1.0:
            raise ConfigError("discriminability fraction must be in (0, 1]")
        if not 0.0 < self.duplicate_threshold < 1.0:
            raise ConfigError("duplicate threshold must be in (0, 1)")


def filter_correctness(raw: RawHierarchy, verdicts: VerdictSet) -> RawHierarchy:
    """Keep only entries whose recorded Is-A verdict is true; order preserved."""
    out = raw
    for which in LEVELS:
        filtered = []
        for cls, entries in zip(raw.classes, out.level(which)):
            filtered.append(
                tuple(e for e in entries if verdicts.lookup(cls, e.name, which))
            )
        out = out.replace_level(which, filtered)
    return out


def filter_discriminability(
    raw: RawHierarchy, vocab: ClassVocabulary, fraction: float = 1.0 / 3.0
) -> RawHierarchy:
    """Drop super-categories shared by strictly more than fraction * |novel| classes.

    Sub-categories are never touched; only overly broad supers lose their
    discriminative value.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("fraction must be in (0, 1]")
    counts: dict[str, int] = {}
    for entries in raw.supers:
        for name in {e.name for e in entries}:
            counts[name] = counts.get(name, 0) + 1
    limit = fraction * vocab.n_novel
    shared = {name for name, count in counts.items() if count > limit}
    filtered = [
        tuple(e for e in entries if e.name not in shared) for entries in raw.supers
    ]
    return raw.replace_level("super", filtered)


def remove_near_duplicates(
    raw: RawHierarchy, entry_features: FeatureMatrix, threshold: float = 0.95
) -> RawHierarchy:
    """Greedy within-class scan: drop entries too close to an earlier survivor.

    Keeping the earlier entry favors the more canonical name, which LLMs
    tend to emit first. Survivors are pairwise at most ``threshold`` apart
    in cosine similarity.
    """
    if not 0.0 < threshold < 1.0:
        raise ConfigError("duplicate threshold must be in (0, 1)")
    data = entry_features.data
    norms = np.sqrt(np.einsum("ij,ij->i", data, data))
    out = raw
    for which in LEVELS:
        filtered = []
        for cls, entries in zip(raw.classes, out.level(which)):
            kept: list[HierarchyEntry] = []
            kept_rows: list[int] = []
            for e in entries:
                if not 0 <= e.row < data.shape[0]:
                    raise HierarchyError(
                        f"entry '{e.name}' of class '{cls}' has no feature row"
                    )
                if norms[e.row] == 0.0:
                    raise HierarchyError(
                        f"entry '{e.name}' of class '{cls}' has a zero-norm feature"
                    )
                if kept_rows:
                    sims = (data[kept_rows] @ data[e.row]) / (norms[kept_rows] * norms[e.row])
                    if (sims > threshold).any():
                        continue
                kept.append(e)
                kept_rows.append(e.row)
            filtered.append(tuple(kept))
        out = out.replace_level(which, filtered)
    return out


def refine(
    raw: RawHierarchy,
    verdicts: VerdictSet,
    vocab: ClassVocabulary,
    entry_features: FeatureMatrix,
    config: RefineConfig = RefineConfig(),
) -> Hierarchy:
    """Run correctness, discriminability and near-duplicate removal in order."""
    out = filter_correctness(raw, verdicts)
    out = filter_discriminability(out, vocab, config.discriminability_fraction)
    out = remove_near_duplicates(out, entry_features, config.duplicate_threshold)
    for which, per_class in (("super", out.supers), ("sub", out.subs)):
        for cls, entries in zip(out.classes, per_class):
            if not entries:
                raise RefinementError(
                    f"class '{cls}' has no {which}-categories left after refinement"
                )
    return Hierarchy(out.classes, out.supers, out.subs, out.class_rows)
