"""Adapter configuration."""

from __future__ import annotations

from dataclasses import dataclass


class AdapterError(Exception):
    pass


class ModelUnavailable(AdapterError):
    """Real-mode model could not be loaded in this environment."""


class ValidationFailed(AdapterError):
    """Export would produce a dataset the engine would reject."""


@dataclass
class AdapterConfig:
    model: str = "mock"  # mock | real
    box_threshold: float = 0.35  # minimum detection confidence
    text_threshold: float = 0.25  # minimum label-grounding score
    use_tags: bool = False  # include tag labels alongside caption labels
    embedding_model: str = "hash-768"
    embedding_dim: int = 768
    mock_blur_threshold: float = 5.0  # gradient-energy cutoff for the blur flag
    min_blob_area: int = 20  # pixels; smaller mock segments are dropped
    depth_scale: float = 0.001

    def validate(self) -> None:
        if self.model not in ("mock", "real"):
            raise AdapterError(f"unknown model mode {self.model!r}")
        if not (0.0 < self.box_threshold < 1.0):
            raise AdapterError("box_threshold must be in (0,1)")
        if not (0.0 < self.text_threshold < 1.0):
            raise AdapterError("text_threshold must be in (0,1)")
        if self.embedding_dim <= 0:
            raise AdapterError("embedding_dim must be positive")
