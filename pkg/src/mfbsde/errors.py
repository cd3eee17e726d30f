"""Exception taxonomy shared by all solver modules."""


class MfbsdeError(Exception):
    """Base class for all library errors."""


class ConfigError(MfbsdeError):
    """Invalid scenario configuration (bad grid, coefficients, ranges)."""


class DomainError(MfbsdeError):
    """Input leaves the mathematical domain of a formula (e.g. log of a
    non-positive quantity)."""


class CapabilityError(MfbsdeError):
    """Requested combination is outside the supported catalog."""


class NumericalError(MfbsdeError):
    """Linear algebra or quadrature failure that should not occur for
    admissible inputs."""
