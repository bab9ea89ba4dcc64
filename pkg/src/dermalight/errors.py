"""Exception hierarchy shared across the package."""


class DermalightError(Exception):
    """Base class for all package errors."""


class GridError(DermalightError):
    """A wavelength does not lie on the simulation grid."""


class DataError(DermalightError):
    """Static chromophore / colorimetry data is missing or malformed."""


class DomainError(DermalightError):
    """An input falls outside its documented domain."""


class SimulationError(DermalightError):
    """Monte Carlo transport was fed non-finite optical properties."""


class FormatError(DermalightError):
    """A persisted artifact failed magic / version / hash validation."""


class ConfigError(DermalightError):
    """Invalid run configuration (CLI flags or config file)."""
