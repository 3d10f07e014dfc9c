"""Exception types shared across the package."""


class IrgcnError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IrgcnError):
    """Array shapes do not line up for the requested operation."""


class NumericError(IrgcnError):
    """A numeric invariant was violated (NaN/Inf, divergence)."""


class ConfigError(IrgcnError):
    """Invalid configuration value or unknown configuration key."""


class DataError(IrgcnError):
    """Input data cannot be used (empty input, bad split, inconsistent views)."""


class FormatError(IrgcnError):
    """A binary container or config file has an unknown or corrupt layout."""
