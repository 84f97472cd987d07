"""Exception types shared across the package."""


class MatchingError(Exception):
    """Base class for all package errors."""


class InvalidInput(MatchingError, ValueError):
    """Malformed arguments: wrong shapes, NaNs, impossible values."""


class InvalidBounds(InvalidInput):
    """Truncation interval is empty."""


class ConfigError(InvalidInput):
    """A configuration violates its invariants."""


class SchemaError(MatchingError, ValueError):
    """Tabular data or a model spec does not match its declared schema.

    ``row`` and ``column`` locate the offending cell when known.
    """

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class DataError(MatchingError, ValueError):
    """Data parse fine but are inconsistent (e.g. over-capacity matching)."""


class EstimationError(MatchingError, RuntimeError):
    """An estimator could not produce a result."""


class RankDeficiencyError(EstimationError):
    """A linear system is singular or too ill-conditioned to solve.

    The offending :class:`~ntumatch.semiparam.RankReport` (or the design
    matrix singular values) is attached as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class StateCorruption(MatchingError, RuntimeError):
    """The Gibbs sampler state no longer rationalises the observed matching."""
