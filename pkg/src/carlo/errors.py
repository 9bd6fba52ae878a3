"""Exception types raised across the package."""


class CarloError(Exception):
    """Base class for all package errors."""


class DomainError(CarloError, ValueError):
    """A parameter or state lies outside its admissible domain."""


class CapabilityError(CarloError):
    """The requested operation is not supported for this input."""


class UnderflowError(CarloError, ArithmeticError):
    """Probability mass is too small to represent."""


class DivergenceError(CarloError, RuntimeError):
    """An iterative procedure failed to make progress or blew up.

    Attributes
    ----------
    partial : object
        Whatever partial output was available when the failure was detected.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class PoisonedEstimateError(CarloError, ArithmeticError):
    """A non-finite importance weight entered an estimate."""


class DegenerateError(CarloError, ValueError):
    """Input has no variability where variability is required."""


class OverlapError(CarloError, ValueError):
    """Two samples share no support mass."""


class SetupError(CarloError, RuntimeError):
    """A preparatory step (bound search, fit) failed."""


class SeparationError(CarloError, RuntimeError):
    """Logistic regression data are perfectly separated."""


class ConfigurationError(CarloError, ValueError):
    """A sampler or experiment was configured inconsistently."""


class IngestionError(CarloError, ValueError):
    """A data file does not match the expected schema."""


class BracketingError(CarloError, ValueError):
    """An interval does not bracket a sign change."""


class MissingDataError(IngestionError):
    """A required external dataset could not be found."""
