import numpy as np
import pytest

from hccal.model import FeatureMatrix, Hierarchy, HierarchyEntry


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_unit(rng, shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def build_text_setup(rng, n_classes, k_sup, k_sub, dim, class_names=None):
    """Random unit text features plus a hierarchy over them.

    ``k_sup``/``k_sub`` may be ints or per-class lists (ragged). Text rows
    are laid out classes first, then all super entries, then all subs.
    """
    if isinstance(k_sup, int):
        k_sup = [k_sup] * n_classes
    if isinstance(k_sub, int):
        k_sub = [k_sub] * n_classes
    if class_names is None:
        class_names = tuple(f"class{i}" for i in range(n_classes))
    total = n_classes + sum(k_sup) + sum(k_sub)
    texts = random_unit(rng, (total, dim))
    supers, subs = [], []
    row = n_classes
    for n in range(n_classes):
        entries = []
        for k in range(k_sup[n]):
            entries.append(HierarchyEntry(f"sup{n}_{k}", row))
            row += 1
        supers.append(tuple(entries))
    for n in range(n_classes):
        entries = []
        for k in range(k_sub[n]):
            entries.append(HierarchyEntry(f"sub{n}_{k}", row))
            row += 1
        subs.append(tuple(entries))
    hierarchy = Hierarchy(
        tuple(class_names), tuple(supers), tuple(subs), tuple(range(n_classes))
    )
    return hierarchy, FeatureMatrix(texts)


def hierarchy_feats_per_class(hierarchy, text_features, level):
    """Per-class list of raw entry feature vectors, for the scalar oracle."""
    per_class = hierarchy.supers if level == "sup" else hierarchy.subs
    data = text_features.data
    return [[list(data[e.row]) for e in entries] for entries in per_class]
