"""Exception types shared across the engine.

Every loader raises a specific subclass so callers can distinguish schema
problems from corrupt data from contract violations.
"""


class EngineError(Exception):
    """Base class for all engine errors."""


class MissingField(EngineError):
    def __init__(self, field: str):
        super().__init__(f"missing required field: {field}")
        self.field = field


class SchemaVersionUnsupported(EngineError):
    pass


class EmbeddingDimMismatch(EngineError):
    pass


class IndexOutOfRange(EngineError):
    pass


class CorruptBlob(EngineError):
    pass


class InvariantViolation(EngineError):
    """A loaded detection breaks one of its declared invariants."""

    def __init__(self, detection_index: int, reason: str):
        super().__init__(f"detection {detection_index}: {reason}")
        self.detection_index = detection_index
        self.reason = reason


class DuplicateCategoryName(EngineError):
    pass


class BadEmbedding(EngineError):
    pass


class DimensionMismatch(EngineError):
    pass


class EmptyCloud(EngineError):
    pass


class AllPointsBackground(EngineError):
    pass


class EmbeddingRequired(EngineError):
    pass


class SpecInvalid(EngineError):
    pass


class ConfigInvalid(EngineError):
    pass
