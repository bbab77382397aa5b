"""Exception hierarchy shared across the package."""


class GcnLabError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GcnLabError):
    """Matrix dimensions do not chain for the requested operation."""


class ConfigError(GcnLabError):
    """A configuration value is outside its documented range."""


class ParseError(GcnLabError):
    """A dataset file is missing, malformed, or internally inconsistent."""


class DegreeZeroError(GcnLabError):
    """An isolated node makes degree normalization undefined."""


class SamplerDegenerateError(GcnLabError):
    """A sampler cannot produce a usable draw (e.g. all probabilities zero)."""


class OracleTooLargeError(GcnLabError):
    """Exhaustive enumeration was requested on an outcome space that is too big."""


class StateError(GcnLabError):
    """An operation requires historical state that has not been initialized."""


class LabelError(GcnLabError):
    """A label index is outside the valid class range."""
