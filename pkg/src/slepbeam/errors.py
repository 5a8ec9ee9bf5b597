"""Exception types shared across the package."""


class SlepBeamError(Exception):
    """Base class for all package-specific errors."""


class DomainError(SlepBeamError, ValueError):
    """An evaluation point or sample offset falls outside the basis interval."""


class NumericalError(SlepBeamError, RuntimeError):
    """A numerical procedure (eigensolve, factorization) failed to converge."""


class GeometryError(SlepBeamError, ValueError):
    """Array geometry or packet/batch layout violates a structural constraint."""


class ConfigError(SlepBeamError, ValueError):
    """An experiment configuration file is malformed or out of range."""
