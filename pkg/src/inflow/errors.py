"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes do not conform to the operation's rule."""


class NumericError(ArithmeticError):
    """An operation produced or received non-finite values."""


class ContractError(RuntimeError):
    """An API was called outside its required state or order."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""
