"""Exception vocabulary shared across the package."""


class HrrpGnnError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(HrrpGnnError, ValueError):
    """Operands have incompatible dimensions."""


class NumericError(HrrpGnnError, ArithmeticError):
    """A computation received or produced non-finite values."""


class ConfigError(HrrpGnnError, ValueError):
    """A configuration value is out of its legal range or inconsistent."""


class UsageError(HrrpGnnError, RuntimeError):
    """An API was called out of order or with mismatched state."""


class DataFormatError(HrrpGnnError, ValueError):
    """A data file is malformed; message carries the offending location."""
