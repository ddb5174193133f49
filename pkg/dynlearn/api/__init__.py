"""API module."""

from dynlearn.api.commands import COMMANDS, CommandError, build_run_config, config_hash

__all__ = ["COMMANDS", "CommandError", "build_run_config", "config_hash"]
