"""Text embeddings for labels and the unified category table.

Mock mode derives a unit vector from a SHA-256 seeded Gaussian draw, cached
by normalized string, so identical texts always embed identically and a
label spelled exactly like a category name lands on that category with
cosine 1. Real mode wants a sentence-embedding model; when none can be
loaded (this sandbox has no weights), it raises ModelUnavailable.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .categories import coco_stuff_rows
from .config import AdapterConfig, ModelUnavailable


def _normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


class TextEmbedder:
    def __init__(self, cfg: AdapterConfig):
        cfg.validate()
        self.cfg = cfg
        self._cache: dict[str, np.ndarray] = {}
        self._model = None
        if cfg.model == "real":
            try:
                from sentence_transformers import SentenceTransformer

                self._model = SentenceTransformer(cfg.embedding_model)
            except Exception as exc:  # pragma: no cover - environment dependent
                raise ModelUnavailable(
                    f"cannot load embedding model {cfg.embedding_model!r}: {exc}"
                ) from exc

    def _mock_vector(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.cfg.embedding_dim)
        return vec / np.linalg.norm(vec)

    def embed(self, text: str) -> np.ndarray:
        key = _normalize_text(text)
        if key not in self._cache:
            if self._model is not None:  # pragma: no cover
                vec = np.asarray(self._model.encode([key])[0], dtype=np.float64)
                vec = vec / np.linalg.norm(vec)
            else:
                vec = self._mock_vector(key)
            self._cache[key] = vec
        return self._cache[key]


def embed_texts(labels, embedder: TextEmbedder):
    """Labels -> packed float32 LE blob + per-label byte offsets.

    Identical (normalized) labels share one stored vector. An empty label
    list yields an empty blob.
    """
    blob = bytearray()
    offsets = {}
    for label in labels:
        key = _normalize_text(label)
        if key in offsets:
            continue
        offsets[key] = len(blob)
        blob.extend(np.asarray(embedder.embed(key), dtype="<f4").tobytes())
    return bytes(blob), offsets


def category_table_rows(embedder: TextEmbedder):
    """The full COCO-Stuff table with embeddings, engine category format."""
    rows = []
    for cid, name, kind, size_class in coco_stuff_rows():
        rows.append(
            {
                "id": cid,
                "name": name,
                "kind": kind,
                "size_class": size_class,
                "embedding": [float(x) for x in embedder.embed(name)],
            }
        )
    return rows
