import numpy as np

from vlm_adapter.config import AdapterConfig
from vlm_adapter.embed import TextEmbedder, category_table_rows, embed_texts


def _embedder(dim=64):
    return TextEmbedder(AdapterConfig(embedding_dim=dim))


class TestEmbedder:
    def test_same_text_same_vector(self):
        e = _embedder()
        assert np.array_equal(e.embed("apple"), e.embed("apple"))
        # Cache keys are normalized strings.
        assert np.array_equal(e.embed("  Apple "), e.embed("apple"))

    def test_vectors_are_unit(self):
        e = _embedder()
        for text in ("chair", "dining table", "wall-wood"):
            assert abs(np.linalg.norm(e.embed(text)) - 1.0) < 1e-12

    def test_distinct_texts_differ(self):
        e = _embedder()
        assert not np.array_equal(e.embed("chair"), e.embed("table"))

    def test_deterministic_across_instances(self):
        assert np.array_equal(_embedder().embed("sofa"), _embedder().embed("sofa"))


class TestEmbedTexts:
    def test_blob_layout_and_dedup(self):
        e = _embedder(dim=8)
        blob, offsets = embed_texts(["chair", "table", "Chair"], e)
        assert set(offsets) == {"chair", "table"}
        assert len(blob) == 2 * 8 * 4
        chair = np.frombuffer(blob[offsets["chair"] : offsets["chair"] + 32], dtype="<f4")
        assert np.allclose(chair, e.embed("chair").astype("<f4"))

    def test_empty_labels_empty_blob(self):
        blob, offsets = embed_texts([], _embedder())
        assert blob == b"" and offsets == {}


class TestCategoryTable:
    def test_full_coco_stuff_table(self):
        rows = category_table_rows(_embedder(dim=32))
        assert len(rows) == 171
        assert len({r["name"] for r in rows}) == 171
        kinds = {r["kind"] for r in rows}
        assert kinds == {"thing", "stuff"}
        assert sum(r["kind"] == "thing" for r in rows) == 80
        sizes = {r["size_class"] for r in rows}
        assert sizes == {"Small", "Medium", "Large"}
        for r in rows[:5]:
            assert abs(np.linalg.norm(r["embedding"]) - 1) < 1e-6
