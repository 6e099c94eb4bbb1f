import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.cluster.hierarchy import fcluster, linkage

from attrlink.embeddings import EmbeddingTable
from attrlink.errors import DataError
from attrlink.relations import (
    UNKNOWN,
    AssociationMatrix,
    AttributeDataset,
    AttributeVocabulary,
    ClassVocabulary,
    RelationSchema,
    average_linkage,
    build_triplets,
    discover_relations,
    format_associations,
    format_schema,
    load_associations,
    load_semantic_schema,
    merge_vocabularies,
    single_relation_schema,
)


def _dataset(classes, attrs, rels, values, unseen=()):
    attrs = AttributeVocabulary(tuple(attrs))
    names = sorted(set(rels), key=list(rels).index)
    schema = RelationSchema(tuple(names), [names.index(r) for r in rels])
    return AttributeDataset(
        ClassVocabulary.from_split(classes, unseen), attrs, schema, AssociationMatrix(values)
    )


class TestSchemaFiles:
    def test_two_relations(self, write):
        attrs = AttributeVocabulary(("blue", "spots"))
        schema = load_semantic_schema(write("s.tsv", "blue\thas_color\nspots\thas_pattern\n"), attrs)
        assert schema.n_relations == 2
        assert schema.as_mapping(attrs) == {"blue": "has_color", "spots": "has_pattern"}

    def test_missing_attribute(self, write):
        with pytest.raises(DataError, match="spots"):
            load_semantic_schema(write("s.tsv", "blue\thas_color\n"), AttributeVocabulary(("blue", "spots")))

    def test_attribute_in_two_relations(self, write):
        with pytest.raises(DataError, match="two relations"):
            load_semantic_schema(
                write("s.tsv", "blue\thas_color\nblue\thas_pattern\n"), AttributeVocabulary(("blue",))
            )

    def test_single_relation(self, write):
        attrs = AttributeVocabulary(("blue", "spots", "big"))
        text = "".join(f"{a}\thas_attribute\n" for a in attrs.names)
        schema = load_semantic_schema(write("s.tsv", text), attrs)
        assert schema == single_relation_schema(attrs)
        assert schema.n_relations == 1

    def test_format_round_trip(self, write):
        attrs = AttributeVocabulary(("x", "y", "z"))
        schema = RelationSchema(("r1", "r0"), [0, 1, 0])
        assert load_semantic_schema(write("s.tsv", format_schema(schema, attrs)), attrs) == schema


class TestAssociationFiles:
    def test_round_trip_with_unknowns(self, write):
        text = "class\tblue\tspots\nzebra\t0\t?\ncow\t1\t1\n"
        names, attrs, assoc = load_associations(write("a.tsv", text))
        assert names == ["zebra", "cow"]
        assert attrs.names == ("blue", "spots")
        np.testing.assert_array_equal(assoc.values, [[0, UNKNOWN], [1, 1]])
        assert format_associations(names, attrs, assoc) == text

    def test_bad_cell(self, write):
        with pytest.raises(DataError, match=":2:"):
            load_associations(write("a.tsv", "class\tx\nc\t2\n"))


class TestClustering:
    def test_planted_pairs(self):
        pts = np.array([[0, 0], [0.1, 0], [10, 10], [10, 10.1]])
        np.testing.assert_array_equal(average_linkage(pts, 2), [0, 0, 1, 1])

    def test_extremes(self):
        pts = np.random.default_rng(0).standard_normal((6, 3))
        np.testing.assert_array_equal(average_linkage(pts, 6), np.arange(6))
        np.testing.assert_array_equal(average_linkage(pts, 1), np.zeros(6))

    def test_bad_count(self):
        with pytest.raises(DataError):
            average_linkage(np.zeros((3, 2)), 4)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(1, 12))
    def test_matches_scipy(self, seed, n, k):
        k = min(k, n)
        pts = np.random.default_rng(seed).standard_normal((n, 3))
        ours = average_linkage(pts, k)
        ref = fcluster(linkage(pts, method="average"), k, criterion="maxclust")
        # same partition, up to label names
        same_ours = ours[:, None] == ours[None, :]
        same_ref = ref[:, None] == ref[None, :]
        np.testing.assert_array_equal(same_ours, same_ref)

    def test_discover_names_and_order(self):
        vecs = np.array([[10, 10], [0, 0], [10, 10.1], [0.1, 0]])
        table = EmbeddingTable(("w", "x", "y", "z"), vecs)
        schema = discover_relations(table, AttributeVocabulary(("w", "x", "y", "z")), 2)
        assert schema.relation_names == ("dr_0", "dr_1")
        np.testing.assert_array_equal(schema.assignment, [0, 1, 0, 1])


class TestTriplets:
    def test_one_positive_one_negative(self):
        ds = _dataset(["c"], ["a0", "a1"], ["r", "r"], [[1, 0]])
        data = build_triplets(ds.assoc, ds.schema, ds.classes)
        np.testing.assert_array_equal(data.positives, [[0, 0, 0]])
        np.testing.assert_array_equal(data.negatives, [[0, 0, 1]])

    def test_unknown_excluded(self):
        ds = _dataset(["c"], ["a0", "a1"], ["r", "r"], [[1, UNKNOWN]])
        data = build_triplets(ds.assoc, ds.schema, ds.classes)
        assert len(data.positives) == 1 and len(data.negatives) == 0

    def test_all_positive(self):
        ds = _dataset(["c0", "c1"], ["a0", "a1", "a2"], ["r", "s", "r"], np.ones((2, 3)))
        data = build_triplets(ds.assoc, ds.schema, ds.classes)
        assert len(data.positives) == 6 and len(data.negatives) == 0
        np.testing.assert_array_equal(sorted(data.positives[:, 0]), [0, 0, 0, 0, 1, 1])

    def test_unseen_classes_skipped(self):
        ds = _dataset(["c0", "c1"], ["a0"], ["r"], [[1], [0]], unseen=["c1"])
        data = build_triplets(ds.assoc, ds.schema, ds.classes)
        assert len(data) == 1

    def test_arrays_and_subset(self):
        ds = _dataset(["c0", "c1"], ["a0", "a1"], ["r", "s"], [[1, 0], [0, 1]])
        data = build_triplets(ds.assoc, ds.schema, ds.classes)
        j, k, m, t = data.arrays()
        np.testing.assert_array_equal(t, [1, 1, 0, 0])
        sub = data.subset([0, 3])
        assert len(sub.positives) == 1 and len(sub.negatives) == 1


class TestMerge:
    def test_disjoint(self):
        a = _dataset(["c0"], ["a0", "a1", "a2"], ["r", "r", "r"], [[1, 0, 1]])
        b = _dataset(["d0"], ["b0", "b1"], ["s", "s"], [[0, 1]])
        m = merge_vocabularies(a, b)
        assert len(m.attrs) == 5
        np.testing.assert_array_equal(
            m.assoc.values, [[1, 0, 1, UNKNOWN, UNKNOWN], [UNKNOWN, UNKNOWN, UNKNOWN, 0, 1]]
        )
        assert m.schema.relation_names == ("r", "s")

    def test_shared_attribute_single_column(self):
        a = _dataset(["c0"], ["blue", "x"], ["has_color", "r"], [[1, 0]])
        b = _dataset(["d0"], ["blue", "y"], ["colour", "s"], [[0, 1]])
        m = merge_vocabularies(a, b)
        assert m.attrs.names == ("blue", "x", "y")
        assert m.schema.as_mapping(m.attrs)["blue"] == "has_color"
        # "colour" lost its only attribute and disappears
        assert "colour" not in m.schema.relation_names

    def test_colliding_relation_names_prefixed(self):
        a = _dataset(["c0"], ["x"], ["has"], [[1]])
        b = _dataset(["d0"], ["y"], ["has"], [[1]])
        m = merge_vocabularies(a, b, sources=("zoo", "farm"))
        assert m.schema.relation_names == ("zoo:has", "farm:has")

    def test_conflict_resolves_positive(self, caplog):
        a = _dataset(["cow"], ["spots"], ["r"], [[0]])
        b = _dataset(["cow"], ["spots"], ["r"], [[1]])
        with caplog.at_level(logging.WARNING):
            m = merge_vocabularies(a, b)
        np.testing.assert_array_equal(m.assoc.values, [[1]])
        assert "conflicting" in caplog.text

    def test_seen_if_seen_anywhere(self):
        a = _dataset(["c0", "c1"], ["x"], ["r"], [[1], [0]], unseen=["c1"])
        b = _dataset(["c1"], ["y"], ["s"], [[1]])
        m = merge_vocabularies(a, b)
        assert m.classes.seen_names() == ["c0", "c1"]


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 7))
    def test_discovery_ignores_attribute_order(self, seed, k):
        rng = np.random.default_rng(seed)
        names = tuple(f"t{i}" for i in range(8))
        table = EmbeddingTable(names, rng.standard_normal((8, 3)))
        perm = rng.permutation(8)
        a = discover_relations(table, AttributeVocabulary(names), k).assignment
        b = discover_relations(table, AttributeVocabulary(tuple(names[i] for i in perm)), k).assignment
        # compare partitions, attribute by attribute
        inv = np.argsort(perm)
        b = b[inv]
        np.testing.assert_array_equal(a[:, None] == a[None, :], b[:, None] == b[None, :])

    def test_merge_with_itself(self):
        x = _dataset(["c0", "c1"], ["a0", "a1", "a2"], ["r", "s", "r"], [[1, 0, UNKNOWN], [0, 1, 1]],
                     unseen=["c1"])
        m = merge_vocabularies(x, x, sources=("p", "q"))
        assert m.classes == x.classes and m.attrs == x.attrs and m.assoc == x.assoc
        np.testing.assert_array_equal(m.schema.assignment, x.schema.assignment)
        assert m.schema.relation_names == ("p:r", "p:s")

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_triplet_count_matches_known_seen_cells(self, seed):
        rng = np.random.default_rng(seed)
        values = rng.choice([0, 1, UNKNOWN], size=(5, 4))
        unseen = [f"c{i}" for i in range(5) if rng.random() < 0.4]
        ds = _dataset([f"c{i}" for i in range(5)], ["a", "b", "c", "d"], ["r", "s", "r", "s"], values, unseen)
        data = build_triplets(ds.assoc, ds.schema, ds.classes)
        seen = np.asarray(ds.classes.seen_mask)
        assert len(data) == int((values[seen] != UNKNOWN).sum())
