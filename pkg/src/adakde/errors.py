"""Exception types shared across the package."""


class AdakdeError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(AdakdeError, ValueError):
    pass


class NonFiniteError(AdakdeError, ValueError):
    pass


class DegenerateSampleError(AdakdeError, ValueError):
    pass


class ConfigError(AdakdeError, ValueError):
    pass
