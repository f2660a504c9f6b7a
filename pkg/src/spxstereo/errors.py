"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ArithmeticError):
    """An input lies outside the mathematical domain of an operation."""


class GraphError(RuntimeError):
    """Misuse of the recorded computation graph (non-scalar loss, reuse after backward)."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required.

    ``component`` names the offending quantity (loss term, parameter) when known.
    """

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class ConfigError(ValueError):
    """Invalid configuration key or value."""


class PFMParseError(ValueError):
    """Malformed PFM file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointError(ValueError):
    """Unreadable checkpoint or one that does not match the active configuration."""
