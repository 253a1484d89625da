"""Exception hierarchy shared by every cachepool module."""


class CachePoolError(Exception):
    """Base class for all library errors."""


class ConfigError(CachePoolError, ValueError):
    """Invalid flow, catalog or scenario configuration."""


class DomainError(CachePoolError, ValueError):
    """Parameters outside the range where a formula or model is defined."""


class UnsupportedConfigurationError(CachePoolError, ValueError):
    """A valid configuration that this library deliberately does not handle."""


class SaturationError(CachePoolError, ValueError):
    """Requested capacity is at least the total size mass of the catalog."""


class ExtrapolationError(CachePoolError, ValueError):
    """Evaluation point lies outside the range covered by catalog data."""


class BoundsError(CachePoolError, IndexError):
    """Index outside the valid range of a catalog array."""


class BudgetExceeded(CachePoolError, RuntimeError):
    """A simulation ran past its wall-clock budget.

    ``partial`` holds whatever statistics were collected before the stop.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class SizeError(CachePoolError, ValueError):
    """Instance too large for an exact computation."""
