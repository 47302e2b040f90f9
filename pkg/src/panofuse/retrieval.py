"""Label normalization and unified-category retrieval.

An open-vocabulary label is normalized, embedded (upstream), and attached to
the unified category whose embedding has the highest cosine similarity. The
category's size class rides along, so every detection ends up with a voxel
resolution prior. Retrieval is an exact exhaustive scan: the taxonomy is
small (~171 entries) and determinism matters more than lookup speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset_io import CategoryTable, Detection
from .errors import DimensionMismatch

# Words never singularized by the trailing-s rule.
_SINGULAR_EXCEPTIONS = frozenset({"glass", "grass", "bus", "gas", "lens"})


def _singularize_word(word: str) -> str:
    if word in _SINGULAR_EXCEPTIONS:
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("ses") and len(word) > 4:
        return word[:-2]
    if word.endswith("s") and not word.endswith("ss") and len(word) > 3:
        return word[:-1]
    return word


def normalize_label(raw: str) -> str:
    """Canonical form: lowercase, collapsed whitespace, rule-based singulars.

    Suffix rules are applied per word to a fixed point, which makes the
    function idempotent for arbitrary input. Empty input maps to empty.
    """
    words = raw.lower().split()
    out = []
    for word in words:
        prev = None
        while word != prev:
            prev = word
            word = _singularize_word(word)
        out.append(word)
    return " ".join(out)


def retrieve_category(embedding: np.ndarray, table: CategoryTable):
    """Return (category_id, cosine similarity) of the closest unified category.

    Ties on similarity break toward the lowest category id. The query is
    normalized internally, so any positive scaling of it gives the same answer.
    """
    vec = np.asarray(embedding, dtype=np.float64)
    if vec.shape != (table.embedding_dim,):
        raise DimensionMismatch(
            f"query dim {vec.shape} != table dim {table.embedding_dim}"
        )
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise DimensionMismatch("query embedding has zero norm")
    sims = table.embedding_matrix @ (vec / norm)
    best = sims.max()
    # Rows are in ascending-id order, so the first hit is the lowest id.
    row = int(np.nonzero(sims == best)[0][0])
    return int(table.ids[row]), float(sims[row])


@dataclass(frozen=True)
class ElementaryDescriptor:
    """Per-detection semantic tuple: raw label, its embedding, the retrieved
    unified category, the cosine score, and the inherited size class."""

    label: str
    embedding: np.ndarray
    category_id: int
    similarity: float
    size_class: str


def make_elementary_descriptor(detection: Detection, table: CategoryTable) -> ElementaryDescriptor:
    label = normalize_label(detection.label)
    category_id, similarity = retrieve_category(detection.embedding, table)
    category = table.get(category_id)
    return ElementaryDescriptor(
        label=label,
        embedding=np.asarray(detection.embedding, dtype=np.float64),
        category_id=category_id,
        similarity=similarity,
        size_class=category.size_class,
    )
