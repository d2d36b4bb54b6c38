"""Exception types shared across the lab."""


class LabError(Exception):
    """Base class for all lab errors."""


class NotHyperbolic(LabError):
    """Raised when a group element has |trace| <= 2 and no axis exists."""


class DepthTooSmall(LabError):
    """Raised when a truncated series fails its automorphy-defect budget."""


class MemoryBudgetExceeded(LabError):
    """Raised when word enumeration would exceed the configured element cap."""


class RefinementTooDeep(LabError):
    """Raised when a mesh refinement level exceeds the memory cap."""


class DegenerateMetric(LabError):
    """Raised when a metric sample is not positive definite."""


class NotPositiveDefinite(LabError):
    """Raised when a shifted operator is not positive definite."""


class NoConvergence(LabError):
    """Raised when an iterative solve hits its iteration cap."""


class NewtonDiverged(LabError):
    """Raised when damped Newton exhausts its step-halving budget."""


class LineSearchFailed(LabError):
    """Raised when Armijo backtracking cannot decrease the energy."""


class DeformationTooLarge(LabError):
    """Raised when a deformation parameter leaves the positivity region."""


class SingularSystem(LabError):
    """Raised when a block factorization detects a near-zero pivot."""


class NonHarmonicState(LabError):
    """Raised when a variation formula is evaluated on a non-harmonic state."""


class ConfigInvalid(LabError):
    """Raised on malformed experiment configuration; names the bad field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
