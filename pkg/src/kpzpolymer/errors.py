"""Exception hierarchy; ``category`` is the machine-readable tag the CLI reports."""


class ArtifactError(Exception):
    category = "error"


class ConfigError(ArtifactError, ValueError):
    category = "config"


class EstimationError(ArtifactError, RuntimeError):
    """A numerical estimate (quadrature, root search) failed to converge."""

    category = "estimation"


class ConeViolation(ArtifactError, RuntimeError):
    """A requested value lies outside the region where the recursion is exact."""

    category = "cone-exactness"


class CoverageError(ArtifactError, ValueError):
    """A smoothing ball or integration window leaves the computed region."""

    category = "coverage"


class EnumerationLimit(ArtifactError, ValueError):
    category = "enumeration-limit"


class MemoryBudgetExceeded(ArtifactError, RuntimeError):
    category = "memory-budget"

    def __init__(self, message, required_bytes=None, feasible_eps=None):
        super().__init__(message)
        self.required_bytes = required_bytes
        self.feasible_eps = feasible_eps
