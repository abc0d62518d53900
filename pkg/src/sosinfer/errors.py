"""Exception hierarchy shared by the library and the CLI."""


class DomainError(ValueError):
    """Input is well formed but the requested quantity does not exist."""


class ProfileInfeasible(DomainError):
    """The hypothesised parameter lies outside the convex hull of the support."""


class CalibrationError(DomainError):
    """A limit law cannot be calibrated (degenerate variance, missing inputs)."""


class ConfigError(ValueError):
    """Incomplete or inconsistent configuration."""
