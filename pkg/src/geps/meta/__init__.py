"""Training, adaptation, evaluation and ablations."""

from geps.meta.config import TrainConfig
from geps.meta.engine import (
    AdaptResult,
    EvalReport,
    Solver,
    TrainResult,
    adapt,
    build_solver,
    evaluate,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
    trajectory_loss,
)
from geps.meta.metrics import relative_mse

__all__ = [
    "TrainConfig", "AdaptResult", "EvalReport", "Solver", "TrainResult", "adapt",
    "build_solver", "evaluate", "init_params", "load_checkpoint", "save_checkpoint",
    "train", "trajectory_loss", "relative_mse",
]
