"""Exception hierarchy shared by all gridifier modules."""


class GridifierError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GridifierError):
    """Invalid configuration value (bad resolution, k out of range, ...)."""


class DataError(GridifierError):
    """Input data violates a precondition (non-finite coordinates, ...)."""


class ParseError(GridifierError):
    """Malformed file content; message names the offending line or byte offset."""


class ShapeError(GridifierError):
    """Tensor shape mismatch; message names both shapes."""


class TrainingError(GridifierError):
    """Optimization failure (non-finite gradient or loss)."""


class InvariantError(GridifierError):
    """Internal invariant violated; indicates a bug in the caller or library."""
