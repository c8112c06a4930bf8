"""Online SGD learning-rate schedules under distribution shift."""

from .core import DivergenceError, ProjectionSet, RunTrace, StepRecord, UsageError, project_ball
from .datagen import Problem, ProblemSpec
from .engine import ExperimentConfig, run_many, run_online
from .paths import OraclePath, ShiftTrace
from .schedulers import (
    Alg1Schedule,
    ConstantSchedule,
    ConvexSchedule,
    InverseTimeSchedule,
    NonconvexSchedule,
)

__version__ = "0.1.0"
