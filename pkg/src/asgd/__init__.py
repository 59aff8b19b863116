"""Lock-free asynchronous SGD: threaded engine, schedule simulator, bound evaluation."""

from asgd.engine import EpochConfig, FullSGDResult, RunResult, WorkerCrash, epoch_sgd, full_sgd
from asgd.problems import (
    Dataset,
    GradientSample,
    ProblemError,
    ProblemSpec,
    quadratic_problem,
    regression_problem,
    sample_gradient,
)
from asgd.shared_model import EpochViolation, IterationRecord, SharedModel

__version__ = "0.1.0"

__all__ = [
    "Dataset", "EpochConfig", "EpochViolation", "FullSGDResult", "GradientSample", "IterationRecord",
    "ProblemError", "ProblemSpec", "RunResult", "SharedModel", "WorkerCrash", "epoch_sgd", "full_sgd",
    "quadratic_problem", "regression_problem", "sample_gradient",
]
