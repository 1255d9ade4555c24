"""Exception hierarchy for the package."""


class RosuError(Exception):
    """Base class for all errors raised by :mod:`rosu`."""


class DimensionError(RosuError, ValueError):
    pass


class InvalidVectorError(RosuError, ValueError):
    """Raised for empty or non-finite vectors."""


class DegenerateGradientError(RosuError, ValueError):
    """A gradient that must be nonzero is zero."""


class DegenerateCouplingError(RosuError, ValueError):
    pass


class DegenerateGeometryError(RosuError, ValueError):
    """Retain gradient or projected forget component vanishes where the exact path needs it."""


class EmptyBasisError(RosuError, ValueError):
    pass


class EmptyBatchError(RosuError, ValueError):
    pass


class InvalidBranchError(RosuError, ValueError):
    """Operation requested on an inner solution whose branch does not support it."""


class UnsupportedDimensionError(RosuError, ValueError):
    pass


class ConfigError(RosuError, ValueError):
    pass


class ReportIOError(RosuError, OSError):
    """An output file could not be written."""
