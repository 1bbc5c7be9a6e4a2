import numpy as np
import pytest

from hccal.errors import HierarchyError, IncompleteVerdictError, RefinementError
from hccal.model import ClassVocabulary, FeatureMatrix, HierarchyEntry
from hccal.refine import (
    RawHierarchy,
    RefineConfig,
    VerdictSet,
    filter_correctness,
    filter_discriminability,
    load_raw_hierarchy,
    load_verdicts,
    raw_from_hierarchy,
    refine,
    remove_near_duplicates,
    save_verdicts,
)


def entries(*pairs):
    return tuple(HierarchyEntry(name, row) for name, row in pairs)


def make_raw(per_class_supers, per_class_subs, classes=None):
    n = len(per_class_supers)
    if classes is None:
        classes = tuple(f"class{i}" for i in range(n))
    return RawHierarchy(
        tuple(classes),
        tuple(per_class_supers),
        tuple(per_class_subs),
        tuple(range(n)),
    )


def all_true_verdicts(raw):
    verdicts = {}
    for which, per_class in (("super", raw.supers), ("sub", raw.subs)):
        for cls, items in zip(raw.classes, per_class):
            for e in items:
                verdicts[(cls, e.name, which)] = True
    return VerdictSet(verdicts)


class TestCorrectness:
    def test_all_true_is_identity(self):
        raw = make_raw(
            [entries(("animal", 2)), entries(("plant", 3))],
            [entries(("terrier", 4)), entries(("oak", 5))],
        )
        assert filter_correctness(raw, all_true_verdicts(raw)) == raw

    def test_all_false_empties_the_list(self):
        raw = make_raw(
            [entries(("animal", 2)), entries(("plant", 3))],
            [entries(("terrier", 4)), entries(("oak", 5))],
        )
        verdicts = all_true_verdicts(raw).verdicts.copy()
        verdicts[("class0", "animal", "super")] = False
        out = filter_correctness(raw, VerdictSet(verdicts))
        assert out.supers[0] == ()
        assert out.supers[1] == raw.supers[1]

    def test_mixed_verdicts_remove_exactly_false(self):
        raw = make_raw(
            [entries(("animal", 2), ("beast", 3), ("entity", 4))],
            [entries(("terrier", 5),)],
            classes=("dog",),
        )
        verdicts = all_true_verdicts(raw).verdicts.copy()
        verdicts[("dog", "beast", "super")] = False
        out = filter_correctness(raw, VerdictSet(verdicts))
        assert [e.name for e in out.supers[0]] == ["animal", "entity"]

    def test_missing_verdict_names_entry(self):
        raw = make_raw([entries(("animal", 2))], [entries(("terrier", 3))])
        verdicts = all_true_verdicts(raw).verdicts.copy()
        del verdicts[("class0", "terrier", "sub")]
        with pytest.raises(IncompleteVerdictError, match="terrier"):
            filter_correctness(raw, VerdictSet(verdicts))


class TestDiscriminability:
    def test_shared_super_removed_everywhere(self):
        # 6 classes, fraction 1/3: the cutoff is 2, so 3 sharers lose it.
        shared = ("vehicle", 10)
        supers = [entries(shared, (f"own{i}", 20 + i)) for i in range(3)]
        supers += [entries((f"own{i}", 20 + i)) for i in range(3, 6)]
        subs = [entries((f"sub{i}", 30 + i)) for i in range(6)]
        raw = make_raw(supers, subs)
        vocab = ClassVocabulary(raw.classes)
        out = filter_discriminability(raw, vocab, 1.0 / 3.0)
        for per_class in out.supers:
            assert all(e.name != "vehicle" for e in per_class)
        assert all(len(per_class) == 1 for per_class in out.supers)

    def test_super_at_the_cutoff_is_retained(self):
        shared = ("vehicle", 10)
        supers = [entries(shared), entries(shared)] + [
            entries((f"own{i}", 20 + i)) for i in range(4)
        ]
        subs = [entries((f"sub{i}", 30 + i)) for i in range(6)]
        raw = make_raw(supers, subs)
        out = filter_discriminability(raw, ClassVocabulary(raw.classes), 1.0 / 3.0)
        assert out.supers[0] == entries(shared)

    def test_super_shared_by_all_removed(self):
        supers = [entries(("entity", 10), (f"own{i}", 20 + i)) for i in range(4)]
        subs = [entries((f"sub{i}", 30 + i)) for i in range(4)]
        raw = make_raw(supers, subs)
        out = filter_discriminability(raw, ClassVocabulary(raw.classes), 1.0 / 3.0)
        for per_class in out.supers:
            assert all(e.name != "entity" for e in per_class)

    def test_subs_never_touched(self):
        shared_sub = ("thing", 10)
        supers = [entries((f"own{i}", 20 + i)) for i in range(4)]
        subs = [entries(shared_sub) for _ in range(4)]
        raw = make_raw(supers, subs)
        out = filter_discriminability(raw, ClassVocabulary(raw.classes), 1.0 / 3.0)
        assert out.subs == raw.subs


class TestNearDuplicates:
    def test_identical_embeddings_drop_second(self):
        feats = FeatureMatrix(
            np.array([[1, 0], [1, 0], [0, 1], [1, 0], [0.6, 0.8]], dtype=float)
        )
        raw = make_raw(
            [entries(("home appliance", 0), ("home appliances", 1), ("tool", 2))],
            [entries(("mixer", 3), ("blender", 4))],
            classes=("appliance",),
        )
        out = remove_near_duplicates(raw, feats, 0.95)
        assert [e.name for e in out.supers[0]] == ["home appliance", "tool"]
        assert [e.name for e in out.subs[0]] == ["mixer", "blender"]

    def test_all_below_threshold_unchanged(self, rng):
        feats = FeatureMatrix(np.eye(4))
        raw = make_raw(
            [entries(("a", 0), ("b", 1))], [entries(("c", 2), ("d", 3))]
        )
        assert remove_near_duplicates(raw, feats, 0.95) == raw

    def test_three_identical_keep_first(self):
        feats = FeatureMatrix(np.array([[1, 0], [1, 0], [1, 0], [0, 1]], dtype=float))
        raw = make_raw(
            [entries(("x", 0), ("y", 1), ("z", 2))], [entries(("s", 3),)],
            classes=("c",),
        )
        out = remove_near_duplicates(raw, feats, 0.95)
        assert [e.name for e in out.supers[0]] == ["x"]

    def test_survivors_pairwise_below_threshold(self, rng):
        feats = FeatureMatrix(rng.normal(size=(30, 8)))
        raw = make_raw(
            [entries(*((f"s{i}", i) for i in range(15)))],
            [entries(*((f"u{i}", 15 + i) for i in range(15)))],
            classes=("c",),
        )
        threshold = 0.5
        out = remove_near_duplicates(raw, feats, threshold)
        data = feats.data / np.linalg.norm(feats.data, axis=1, keepdims=True)
        for per_class in (out.supers[0], out.subs[0]):
            rows = [e.row for e in per_class]
            sims = data[rows] @ data[rows].T
            off_diag = sims[~np.eye(len(rows), dtype=bool)]
            assert (off_diag <= threshold).all()

    def test_missing_feature_row_rejected(self):
        feats = FeatureMatrix(np.eye(2))
        raw = make_raw([entries(("a", 5))], [entries(("b", 0))])
        with pytest.raises(HierarchyError, match="'a'"):
            remove_near_duplicates(raw, feats, 0.9)


class TestRefinePipeline:
    def build_benign(self, rng):
        feats = FeatureMatrix(np.eye(8))
        raw = make_raw(
            [entries(("canine", 2), ("mammal", 3)), entries(("feline", 4))],
            [entries(("terrier", 5)), entries(("tabby", 6), ("siamese", 7))],
            classes=("dog", "cat"),
        )
        return raw, feats

    def test_benign_hierarchy_unchanged(self, rng):
        raw, feats = self.build_benign(rng)
        vocab = ClassVocabulary(raw.classes)
        config = RefineConfig(discriminability_fraction=0.6)
        refined = refine(raw, all_true_verdicts(raw), vocab, feats, config)
        assert refined.classes == raw.classes
        assert refined.supers == raw.supers
        assert refined.subs == raw.subs

    def test_idempotent_on_random_hierarchies(self, rng):
        refined_at_least_once = 0
        for trial in range(30):
            n = int(rng.integers(2, 6))
            n_entries = int(rng.integers(12, 30))
            feats = FeatureMatrix(rng.normal(size=(n + n_entries, 6)))
            pool = [(f"name{i}", n + i) for i in range(n_entries)]
            half = len(pool) // 2
            supers, subs = [], []
            for c in range(n):
                k1 = int(rng.integers(1, min(4, half + 1)))
                k2 = int(rng.integers(1, min(4, n_entries - half + 1)))
                supers.append(entries(*(pool[int(i)] for i in rng.choice(half, size=k1, replace=False))))
                subs.append(entries(*(pool[half + int(i)] for i in rng.choice(n_entries - half, size=k2, replace=False))))
            raw = make_raw(supers, subs)
            vocab = ClassVocabulary(raw.classes)
            verdicts = all_true_verdicts(raw)
            config = RefineConfig(discriminability_fraction=0.75, duplicate_threshold=0.8)
            try:
                once = refine(raw, verdicts, vocab, feats, config)
            except RefinementError:
                continue
            again = refine(raw_from_hierarchy(once), verdicts, vocab, feats, config)
            assert again.supers == once.supers
            assert again.subs == once.subs
            refined_at_least_once += 1
        assert refined_at_least_once > 5

    def test_filters_compose_in_order(self):
        # "entity" passes correctness but dies at discriminability (shared
        # by 4 of 4 classes); rows 6 and 7 are identical embeddings so the
        # later duplicate dies at the last stage.
        feats = FeatureMatrix(np.vstack([np.eye(7), np.eye(7)[6]]))
        raw = make_raw(
            [
                entries(("entity", 4), ("canine", 6), ("canid", 7)),
                entries(("entity", 4), ("feline", 5)),
                entries(("entity", 4), ("bird", 2)),
                entries(("entity", 4), ("fish", 3)),
            ],
            [
                entries(("terrier", 0)),
                entries(("tabby", 1)),
                entries(("sparrow", 2)),
                entries(("trout", 3)),
            ],
            classes=("dog", "cat", "crow", "cod"),
        )
        vocab = ClassVocabulary(raw.classes)
        refined = refine(raw, all_true_verdicts(raw), vocab, feats, RefineConfig(1.0 / 3.0, 0.95))
        assert [e.name for e in refined.supers[0]] == ["canine"]
        assert [e.name for e in refined.supers[1]] == ["feline"]

    def test_empty_after_refinement_names_class_and_level(self):
        feats = FeatureMatrix(np.eye(4))
        raw = make_raw(
            [entries(("animal", 2)), entries(("plant", 3))],
            [entries(("terrier", 0)), entries(("oak", 1))],
        )
        verdicts = all_true_verdicts(raw).verdicts.copy()
        verdicts[("class1", "plant", "super")] = False
        config = RefineConfig(discriminability_fraction=1.0)
        with pytest.raises(RefinementError, match="class1.*super"):
            refine(raw, VerdictSet(verdicts), ClassVocabulary(raw.classes), feats, config)

    def test_per_class_counts_may_differ(self):
        feats = FeatureMatrix(np.eye(6))
        raw = make_raw(
            [entries(("a", 2), ("b", 3)), entries(("c", 4))],
            [entries(("d", 5), ("e", 0)), entries(("f", 1))],
        )
        verdicts = all_true_verdicts(raw).verdicts.copy()
        verdicts[("class0", "b", "super")] = False
        config = RefineConfig(discriminability_fraction=1.0)
        refined = refine(raw, VerdictSet(verdicts), ClassVocabulary(raw.classes), feats, config)
        assert len(refined.supers[0]) == 1 and len(refined.subs[0]) == 2


class TestFileFormats:
    def test_raw_hierarchy_and_verdicts_round_trip(self, tmp_path):
        raw = make_raw(
            [entries(("animal", 2))], [entries(("terrier", 3))], classes=("dog",)
        )
        verdicts = all_true_verdicts(raw)
        vpath = tmp_path / "verdicts.json"
        save_verdicts(verdicts, vpath)
        assert load_verdicts(vpath) == verdicts

        hpath = tmp_path / "raw.json"
        hpath.write_text(
            '{"dog": {"supers": [{"name": "animal", "row": 2}],'
            ' "subs": [{"name": "terrier", "row": 3}]}}'
        )
        assert load_raw_hierarchy(hpath) == raw
