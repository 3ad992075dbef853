"""Experiment harness: configuration, checkpoints, runs, sweeps and the CLI."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, dumps, load, loads
from .runner import (
    EvalGrid,
    cmd_ablate,
    cmd_sweep,
    cmd_train,
    cmd_verify,
    evaluate_grid,
    read_grid,
)

__all__ = [
    "ExperimentConfig", "load", "loads", "dumps", "save_checkpoint", "load_checkpoint",
    "EvalGrid", "cmd_train", "cmd_sweep", "cmd_ablate", "cmd_verify", "evaluate_grid", "read_grid",
]
