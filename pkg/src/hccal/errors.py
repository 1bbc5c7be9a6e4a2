"""Exception types raised by the package.

Everything derives from :class:`HccalError` so callers can catch one base;
the CLI maps these to machine-readable JSON errors on stderr.
"""


class HccalError(Exception):
    """Base class for all errors raised by this package."""


class CorruptFileError(HccalError):
    """A file on disk does not match its declared layout."""


class DataError(HccalError):
    """Input values violate a data invariant (non-finite, bad labels, ...)."""


class DegenerateFeatureError(HccalError):
    """A feature row has zero norm and cannot be normalized."""


class ShapeError(HccalError):
    """Array dimensions do not match."""


class ConfigError(HccalError):
    """A configuration value is outside its permitted range."""


class HierarchyError(HccalError):
    """A hierarchy is structurally unusable (empty level, bad row index)."""


class DegenerateScoreError(HccalError):
    """The calibration denominator vanished."""


class IncompleteVerdictError(HccalError):
    """A hierarchy entry has no recorded verification verdict."""


class RefinementError(HccalError):
    """Refinement left a class without entries at some level."""


class DivergenceError(HccalError):
    """Training produced a non-finite loss."""


class GeometryError(HccalError):
    """A bounding box is degenerate."""


class UndefinedCorrelationError(HccalError):
    """Rank correlation is undefined for the given input (no variance)."""
