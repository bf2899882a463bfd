"""Active-learning design of excitation signals for online system identification."""
from .config import ExperimentConfig, load_config
from .errors import (AlsysidError, ConfigError, DegenerateSignal, DimensionMismatch,
                     InsufficientData, InsufficientHistory, NumericalBreakdown,
                     RefinementStalled, StaleTrajectory, StepSizeUnderflow)
from .harness import RunTrace, evaluate, run, run_narx, run_ss, sweep
from .metrics import MetricsReport
from .plants import PlantSpec, make_benchmark

__version__ = "0.1.0"

__all__ = [
    "AlsysidError", "ConfigError", "DegenerateSignal", "DimensionMismatch", "ExperimentConfig",
    "InsufficientData", "InsufficientHistory", "MetricsReport", "NumericalBreakdown",
    "PlantSpec", "RefinementStalled", "RunTrace", "StaleTrajectory", "StepSizeUnderflow",
    "evaluate", "load_config", "make_benchmark", "run", "run_narx", "run_ss", "sweep",
]
