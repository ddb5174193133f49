"""Utils module."""

from dynlearn.utils.errors import ConfigError, DynLearnError
from dynlearn.utils.logging import get_logger, setup_logging
from dynlearn.utils.metrics import (
    export_textfile,
    init_app_info,
    record_command,
    record_epoch,
    record_rollout,
    record_saturation,
    record_trajectory,
)

__all__ = [
    "ConfigError",
    "DynLearnError",
    "export_textfile",
    "get_logger",
    "init_app_info",
    "record_command",
    "record_epoch",
    "record_rollout",
    "record_saturation",
    "record_trajectory",
    "setup_logging",
]
