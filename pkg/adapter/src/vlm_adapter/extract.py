"""Caption/tag label extraction and the image-quality (blur) flag.

Mock mode reads captions and tags from a ``captions.json`` lookup table next
to the source images and derives the blur flag from image gradient energy,
so the whole front-end is deterministic and network-free. Real mode would
run a captioning/tagging model; this environment has none, so it raises
ModelUnavailable.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .config import AdapterConfig, ModelUnavailable

# Words that never start or continue a label phrase.
_STOPWORDS = {
    "a", "an", "the", "and", "or", "with", "of", "on", "in", "at", "by",
    "to", "for", "from", "is", "are", "was", "were", "its", "his", "her",
    "their", "there", "this", "that", "some", "several", "two", "three",
    "four", "next", "near", "under", "over", "above", "below", "behind",
    "front", "it",
}


def parse_caption(caption: str) -> list:
    """Noun-phrase candidates: consecutive non-stopwords grouped together.

    "a wooden desk with a laptop" -> ["wooden desk", "laptop"].
    """
    words = re.sub(r"[^a-z0-9\s-]", " ", caption.lower()).split()
    phrases, current = [], []
    for word in words:
        if word in _STOPWORDS:
            if current:
                phrases.append(" ".join(current))
                current = []
        else:
            current.append(word)
    if current:
        phrases.append(" ".join(current))
    return phrases


def sharpness_score(image: Image.Image) -> float:
    """Mean gradient energy of the grayscale image; low means blurry."""
    gray = np.asarray(image.convert("L"), dtype=np.float64)
    gy, gx = np.gradient(gray)
    return float((gx**2 + gy**2).mean())


def load_caption_table(source: Path) -> dict:
    path = Path(source) / "captions.json"
    if not path.exists():
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def extract_labels(image_path, cfg: AdapterConfig, caption_table=None):
    """One frame -> (caption labels, tag labels, blurry flag).

    Caption labels carry provenance (from_caption=True downstream). Tags are
    used only when the config asks for them.
    """
    if cfg.model == "real":
        raise ModelUnavailable(
            "no captioning/tagging model is installed; use mock mode"
        )
    image_path = Path(image_path)
    table = caption_table if caption_table is not None else load_caption_table(image_path.parent.parent)
    entry = table.get(image_path.stem, {})
    caption_labels = parse_caption(entry.get("caption", ""))
    tag_labels = [t.lower().strip() for t in entry.get("tags", []) if t.strip()]

    with Image.open(image_path) as img:
        blurry = sharpness_score(img) < cfg.mock_blur_threshold
    return caption_labels, tag_labels, blurry
