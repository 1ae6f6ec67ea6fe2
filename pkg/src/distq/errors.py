"""Exception hierarchy shared by all modules.

Each class carries a short ``category`` string; the CLI reports it so that
scripted sweeps can tell configuration mistakes from numerical failures.
"""


class DistqError(Exception):
    category = "error"


class ConfigurationError(DistqError, ValueError):
    category = "configuration"


class ContractViolation(DistqError, ValueError):
    category = "contract"


class NumericDomainError(DistqError, ArithmeticError):
    category = "numeric-domain"


class DegenerateSupportError(NumericDomainError):
    category = "degenerate-support"


class SingularityError(NumericDomainError):
    """Fisher information requested where gamma sits at 0 or 1."""

    category = "singularity"

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class NumericalIntegrityError(NumericDomainError):
    category = "numerical-integrity"


class EnumerationTooLarge(DistqError, ValueError):
    category = "enumeration-size"

    def __init__(self, message, size=None):
        super().__init__(message)
        self.size = size


class TrainingDiverged(NumericDomainError):
    """Raised when a loss turns non-finite; ``snapshot`` holds the offending state."""

    category = "training-diverged"

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class ArtifactIOError(DistqError, OSError):
    category = "io"


class QuadratureWarning(UserWarning):
    pass


class DeadControllerWarning(UserWarning):
    pass
