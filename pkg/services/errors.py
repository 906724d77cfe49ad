"""
Exception hierarchy shared by the simulator services.
"""


class OrchestraError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(OrchestraError, ValueError):
    """Invalid configuration or precondition (bad counts, ranges, sizes)."""


class ShapeError(OrchestraError, ValueError):
    """Array shapes are not compatible with the requested operation."""


class NumericalError(OrchestraError, ArithmeticError):
    """A computation produced a non-finite value or underflowed."""

    def __init__(self, message: str, term: str | None = None):
        super().__init__(message)
        self.term = term


class PartitionError(OrchestraError):
    """A client partition could not be built or is malformed."""


class FormatError(OrchestraError, ValueError):
    """An input file does not follow the expected binary or text format."""


class AggregationError(OrchestraError):
    """Server-side aggregation received nothing to aggregate."""


class RoundError(OrchestraError):
    """A federation round could not complete."""


class AnonymityError(OrchestraError, ValueError):
    """Requested anonymity accounting is impossible for the shard size."""
