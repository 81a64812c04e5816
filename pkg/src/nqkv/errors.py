"""Exception hierarchy.

The CLI maps :class:`ConfigurationError` (and its relatives) to exit code 2
and :class:`DataError` to exit code 3.
"""


class NqkvError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(NqkvError, ValueError):
    """Invalid parameters, mismatched codebooks, unknown names."""


class DomainError(ConfigurationError):
    """Argument outside the mathematical domain of an operation."""


class ShapeError(ConfigurationError):
    """Array shapes do not conform."""


class StateError(NqkvError, RuntimeError):
    """Operation not valid in the current cache state."""


class RangeError(NqkvError, OverflowError):
    """Integer result exceeds the supported range."""


class DataError(NqkvError, ValueError):
    """Input data is unusable (non-finite, degenerate, malformed)."""


class DegenerateDataError(DataError):
    """Sample has zero variance."""


class SampleSizeError(DataError):
    """Sample is too small for the requested statistic."""


class CorruptionError(DataError):
    """Stored indices or payload are inconsistent."""


class FormatError(DataError):
    """File does not follow the expected byte layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
