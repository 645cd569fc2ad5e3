"""Exception types shared across the package."""


class SepsiqError(Exception):
    """Base class for every error this package raises deliberately."""


class DimensionError(SepsiqError, ValueError):
    """Array shapes do not line up (names the offending layer/column)."""


class ConsistencyError(SepsiqError, ValueError):
    """A cached intermediate does not match the object it was built from."""


class NumericError(SepsiqError, ArithmeticError):
    """A computation produced (or was handed) non-finite values."""


class DomainError(SepsiqError, ValueError):
    """An argument is outside the range an operation is defined on."""


class ConfigError(SepsiqError, ValueError):
    """A configuration value or file is invalid."""


class SchemaError(SepsiqError, ValueError):
    """A serialized file does not match its expected schema."""


class FittingError(SepsiqError, ValueError):
    """Not enough usable data to fit an estimator (e.g. dose quartiles)."""


class SplitError(SepsiqError, ValueError):
    """A dataset cannot be partitioned as requested."""


class EncodingError(SepsiqError, ValueError):
    """A state cannot be embedded into the network's input layout."""
