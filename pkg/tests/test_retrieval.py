import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panofuse.dataset_io import CategoryTable, Detection, UnifiedCategory
from panofuse.errors import DimensionMismatch
from panofuse.geometry import Mask
from panofuse.retrieval import (
    make_elementary_descriptor,
    normalize_label,
    retrieve_category,
)
from panofuse.synth import SynthEmbeddingSpace

from conftest import identity_table


class TestNormalizeLabel:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("Apples", "apple"),
            ("chair", "chair"),
            ("  Dining  Tables ", "dining table"),
            ("glasses", "glass"),
            ("buses", "bus"),
            ("grass", "grass"),
            ("lens", "lens"),
            ("berries", "berry"),
            ("ties", "tie"),
            ("", ""),
        ],
    )
    def test_examples(self, raw, expected):
        assert normalize_label(raw) == expected

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=30))
    def test_idempotent(self, s):
        once = normalize_label(s)
        assert normalize_label(once) == once


def _basis_table():
    return identity_table(8, names=[f"name{i}" for i in range(8)])


class TestRetrieveCategory:
    def test_exact_match(self):
        table = identity_table(8)
        query = np.zeros(8)
        query[7] = 1.0
        cid, sim = retrieve_category(query, table)
        assert cid == 7 and sim == 1.0

    def test_tie_breaks_to_lowest_id(self):
        table = identity_table(8)
        query = np.zeros(8)
        query[2] = query[5] = 1.0
        cid, _ = retrieve_category(query, table)
        assert cid == 2

    def test_scale_invariance(self):
        table = identity_table(6)
        rng = np.random.default_rng(3)
        for _ in range(20):
            v = rng.normal(size=6)
            c1, s1 = retrieve_category(v, table)
            c2, s2 = retrieve_category(37.5 * v, table)
            assert c1 == c2
            assert abs(s1 - s2) < 1e-9

    def test_dimension_mismatch(self):
        table = identity_table(4)
        with pytest.raises(DimensionMismatch):
            retrieve_category(np.ones(5), table)

    def test_matches_exhaustive_scan_toy(self):
        space = SynthEmbeddingSpace(dimension=8, n_categories=3, seed=1)
        table = CategoryTable(
            [
                UnifiedCategory(i, f"c{i}", "thing", "Medium", space.anchor(i))
                for i in range(3)
            ]
        )
        rng = np.random.default_rng(11)
        for _ in range(100):
            q = rng.normal(size=8)
            q /= np.linalg.norm(q)
            got_id, got_sim = retrieve_category(q, table)
            # Oracle: plain python loop over every category.
            best_id, best_sim = None, -2.0
            for cat in table.categories:
                sim = float(np.dot(q, cat.embedding))
                if sim > best_sim:
                    best_id, best_sim = cat.id, sim
            assert got_id == best_id

    def test_oracle_equivalence_171_categories(self):
        space = SynthEmbeddingSpace(dimension=192, n_categories=171, seed=5)
        table = CategoryTable(
            [
                UnifiedCategory(i, f"c{i}", "thing", "Medium", space.anchor(i))
                for i in range(171)
            ]
        )
        rng = np.random.default_rng(99)
        queries = rng.normal(size=(1000, 192))
        queries /= np.linalg.norm(queries, axis=1, keepdims=True)
        matrix = table.embedding_matrix
        for q in queries:
            got_id, _ = retrieve_category(q, table)
            sims = [float(np.dot(q, matrix[i])) for i in range(171)]
            assert got_id == int(np.argmax(sims))


def _detection(label, embedding):
    mask = Mask.from_array(np.ones((2, 2), dtype=bool))
    return Detection(
        bbox=(0.0, 0.0, 1.0, 1.0),
        confidence=0.9,
        label=label,
        embedding=np.asarray(embedding, dtype=np.float64),
        mask=mask,
    )


class TestMakeElementaryDescriptor:
    def test_synonym_maps_to_engineered_category(self):
        space = SynthEmbeddingSpace(dimension=16, n_categories=4, seed=2)
        cats = [
            UnifiedCategory(0, "couch", "thing", "Large", space.anchor(0)),
            UnifiedCategory(1, "chair", "thing", "Medium", space.anchor(1)),
            UnifiedCategory(2, "book", "thing", "Small", space.anchor(2)),
            UnifiedCategory(3, "wall", "stuff", "Large", space.anchor(3)),
        ]
        table = CategoryTable(cats)
        sofa = space.label_vector("sofa", 0)
        # Oracle: exhaustive scan confirms the engineered assignment.
        sims = [float(np.dot(sofa, c.embedding)) for c in cats]
        assert int(np.argmax(sims)) == 0
        e = make_elementary_descriptor(_detection("sofa", sofa), table)
        assert e.category_id == 0
        assert e.size_class == "Large"

    def test_identical_embedding_scores_one(self):
        table = identity_table(4)
        q = np.zeros(4)
        q[2] = 1.0
        e = make_elementary_descriptor(_detection("book", q), table)
        assert e.category_id == 2
        assert e.similarity == pytest.approx(1.0, abs=1e-12)
        assert e.size_class == table.get(2).size_class

    def test_table_and_dining_table_stay_distinct(self):
        space = SynthEmbeddingSpace(dimension=16, n_categories=2, seed=4)
        table = CategoryTable(
            [
                UnifiedCategory(0, "table", "thing", "Medium", space.anchor(0)),
                UnifiedCategory(1, "dining table", "thing", "Large", space.anchor(1)),
            ]
        )
        e0 = make_elementary_descriptor(
            _detection("table", space.label_vector("table", 0)), table
        )
        e1 = make_elementary_descriptor(
            _detection("dining table", space.label_vector("dining table", 1)), table
        )
        assert e0.category_id != e1.category_id

    def test_label_is_normalized(self):
        table = identity_table(3)
        q = np.zeros(3)
        q[0] = 1.0
        e = make_elementary_descriptor(_detection("Wooden  Chairs", q), table)
        assert e.label == "wooden chair"

    def test_size_class_always_tracks_category(self):
        space = SynthEmbeddingSpace(dimension=32, n_categories=6, seed=8)
        sizes = ["Small", "Medium", "Large", "Small", "Medium", "Large"]
        table = CategoryTable(
            [
                UnifiedCategory(i, f"c{i}", "thing", sizes[i], space.anchor(i))
                for i in range(6)
            ]
        )
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = rng.normal(size=32)
            q /= np.linalg.norm(q)
            e = make_elementary_descriptor(_detection("x", q), table)
            assert e.size_class == table.get(e.category_id).size_class
