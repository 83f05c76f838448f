"""Losses, optimizer, training loops and evaluation."""

from .data import QUERY_COLUMNS, QueryTable, bounds_from_queries, entries_to_queries, entries_to_targets, make_row, row_poses
from .evaluation import EvaluationResult, ResynthesisReference, evaluate, speed_report
from .loop import MODES, JointScene, TrainConfig, TrainState, named_parameters, train_loop
from .losses import (
    LossWeights,
    audio_loss,
    energy_curves,
    energy_decay_loss,
    spectral_convergence_loss,
    spectral_loss,
    to_magnitude,
    total_loss,
    vision_loss,
)
from .optim import Adam, exponential_lr, gradient_check, gradients, max_relative_error
from .runner import scene_grid, stack_datasets, train

__all__ = [
    "QUERY_COLUMNS", "QueryTable", "bounds_from_queries", "entries_to_queries", "entries_to_targets",
    "make_row", "row_poses", "EvaluationResult", "ResynthesisReference", "evaluate", "speed_report",
    "MODES", "JointScene", "TrainConfig", "TrainState", "named_parameters", "train_loop",
    "LossWeights", "audio_loss", "energy_curves", "energy_decay_loss", "spectral_convergence_loss",
    "spectral_loss", "to_magnitude", "total_loss", "vision_loss",
    "Adam", "exponential_lr", "gradient_check", "gradients", "max_relative_error",
    "scene_grid", "stack_datasets", "train",
]
