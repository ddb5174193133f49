"""Storage module."""

from dynlearn.storage.checkpoints import (
    CheckpointFormatError,
    CheckpointVersionError,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from dynlearn.storage.datasets import (
    DatasetFormatError,
    load_dataset,
    save_control_log,
    save_dataset,
    save_history,
    save_prediction,
    save_trajectories,
)

__all__ = [
    "CheckpointFormatError",
    "CheckpointVersionError",
    "DatasetFormatError",
    "load_checkpoint",
    "load_dataset",
    "read_checkpoint",
    "save_checkpoint",
    "save_control_log",
    "save_dataset",
    "save_history",
    "save_prediction",
    "save_trajectories",
]
