"""Exception hierarchy for dltrack.

Everything raised on purpose by this package derives from TrackingError so
callers can catch one base class at API boundaries (the CLI maps subclasses
to distinct exit codes).
"""


class TrackingError(Exception):
    """Base class for all dltrack errors."""


class ConfigError(TrackingError):
    """Bad run configuration: unknown keys, wrong types, inconsistent values."""


class InvalidBoundsError(ConfigError):
    """Measurement-space bounds are degenerate (max <= min on some dimension)."""


class BatchValidationError(TrackingError):
    """A measurement batch failed validation (empty, out of bounds,
    non-finite values, or scan/time ordering violations)."""


class UnsupportedHypothesisError(TrackingError):
    """An operation that needs motion parameters was handed the clutter
    hypothesis."""


class InvalidCovarianceError(TrackingError):
    """A track carries a non-positive standard deviation."""


class DegenerateLikelihoodError(TrackingError):
    """Every mixture term underflowed for some measurement row."""


class DegenerateGeometryError(TrackingError):
    """A motion normal-equation system is singular (e.g. all association
    mass sits on a single scan time)."""


class EmptySupportError(TrackingError):
    """A weighted update was requested for a track with zero association
    mass."""


class OracleSizeError(TrackingError):
    """Exhaustive enumeration was requested beyond the configured size cap."""


class OracleFailureError(TrackingError):
    """The numeric reference maximizer failed to converge."""
