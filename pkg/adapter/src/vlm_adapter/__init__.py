"""vlm_adapter: turns RGB-D sequences into panofuse datasets."""

from .config import AdapterConfig, AdapterError, ModelUnavailable, ValidationFailed
from .embed import TextEmbedder, category_table_rows, embed_texts
from .extract import extract_labels, parse_caption
from .pipeline import convert

__version__ = "0.1.0"
