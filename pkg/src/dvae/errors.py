"""Exception types shared across the package."""


class DvaeError(Exception):
    """Base class for all package errors."""


class DegenerateVector(DvaeError):
    """Vector too close to the origin to project onto the sphere."""


class ShapeMismatch(DvaeError):
    """Operands have incompatible shapes."""


class NonFiniteValue(DvaeError):
    """A NaN or Inf appeared where a finite value was required."""


class DegenerateDirection(DvaeError):
    """Traversal direction is (anti)parallel to the center point."""


class ConfigError(DvaeError):
    """Invalid or inconsistent training configuration."""


class ParseError(DvaeError):
    """Malformed dataset file; carries a line number when known."""


class MissingColumn(ParseError):
    """Dataset file header lacks a required column."""
