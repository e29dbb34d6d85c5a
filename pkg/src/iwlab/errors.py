"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(ValueError):
    """An experiment or generator configuration is invalid."""


class FormatError(ValueError):
    """A file does not conform to its documented binary/text schema."""


class NumericsError(FloatingPointError):
    """A NaN or Inf appeared during a forward or backward computation."""
