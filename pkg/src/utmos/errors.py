"""Exception hierarchy shared across the package."""

from __future__ import annotations


class UtmosError(Exception):
    """Base class for all package errors."""


class DatasetError(UtmosError, ValueError):
    """Malformed or invalid listening-test data.

    ``line`` is the 1-based line number in the source file when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ScoreRangeError(UtmosError, ValueError):
    pass


class MissingTargetError(UtmosError, KeyError):
    pass


class AudioError(UtmosError):
    """Audio could not be read or prepared."""


class MetricError(UtmosError, ValueError):
    """Bad arguments to a metric (length mismatch, empty input)."""


class UndefinedCorrelationError(MetricError):
    """Correlation requested for a constant vector."""


class CoverageError(UtmosError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        shown = ", ".join(self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" (+{len(self.missing) - 10} more)"
        super().__init__(f"no prediction for {len(self.missing)} utterance(s): {shown}{more}")


class ConfigurationError(UtmosError, ValueError):
    pass


class VocabularyError(UtmosError, KeyError):
    pass


class TranscriptLookupError(UtmosError, KeyError):
    pass
