"""Exception types shared across the package."""


class SmpcTradeError(Exception):
    """Base class for all package errors."""


class DataError(SmpcTradeError, ValueError):
    """Malformed or invalid price data."""


class InsufficientDataError(DataError):
    """Not enough observations for the requested computation."""


class DomainError(SmpcTradeError, ValueError):
    """Argument outside the domain of an operation."""


class CausalityError(SmpcTradeError, IndexError):
    """A causal view was asked for a price beyond its current index."""


class ConfigError(SmpcTradeError, ValueError):
    """Invalid configuration (parameters, grids, warm-up, file references)."""


class WarmupError(ConfigError):
    """A controller cannot be evaluated with the available history."""
