"""Exception hierarchy shared across the simulator."""

from __future__ import annotations


class SimError(Exception):
    """Base class for all simulator errors."""


class SchemaError(SimError):
    """A JSON document failed validation against its schema.

    ``field`` carries the JSON path of the offending element.
    """

    def __init__(self, message: str, field: str = "$"):
        super().__init__(f"{field}: {message}")
        self.field = field


class IntegrityError(SimError):
    """A document parsed but violates a cross-reference invariant."""


class ArgumentError(SimError):
    """An operation was called with inconsistent arguments."""


class CompositionError(SimError):
    """Tasks could not be composed into a dual-arm task."""


class GenerationError(SimError):
    """Task suite generation could not satisfy the requested config."""


class TrainingError(SimError):
    """Quantizer training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class ProtocolError(SimError):
    """A protocol request could not be served. Carries a machine code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
