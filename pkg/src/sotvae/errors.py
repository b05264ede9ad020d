"""Exception types shared across the package."""


class SoTVAEError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SoTVAEError, ValueError):
    """Operands have incompatible dimensions."""


class ConfigError(SoTVAEError, ValueError):
    """A configuration value is outside its valid domain."""


class ContractError(SoTVAEError, RuntimeError):
    """A precondition of an operation was violated."""


class ModeError(SoTVAEError, RuntimeError):
    """An operation was invoked in the wrong train/eval mode."""


class NonFiniteError(SoTVAEError, FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


class ParseError(SoTVAEError, ValueError):
    """A serialized record could not be parsed."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class CorpusTooSmallError(SoTVAEError, ValueError):
    """The corpus cannot supply enough distinct comments."""
