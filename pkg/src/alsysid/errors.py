"""Exception types raised across the package."""


class AlsysidError(Exception):
    """Base class for all package errors."""


class DegenerateSignal(AlsysidError, ValueError):
    """A signal channel has zero variance and cannot be standardized."""


class DimensionMismatch(AlsysidError, ValueError):
    pass


class InsufficientHistory(AlsysidError, ValueError):
    """Not enough past samples to fill every regressor slot."""


class InsufficientData(AlsysidError, ValueError):
    pass


class NumericalBreakdown(AlsysidError, ArithmeticError):
    """Innovation covariance lost positive definiteness (filter divergence)."""


class RefinementStalled(AlsysidError):
    """Initial-state refinement made no progress."""


class StaleTrajectory(AlsysidError):
    """Reconstructed state trajectory does not cover the current time."""


class StepSizeUnderflow(AlsysidError, ArithmeticError):
    """Adaptive integrator step fell below the representable minimum."""


class ConfigError(AlsysidError, ValueError):
    pass
