"""Base error type shared by every dynlearn module."""

from typing import Any


class DynLearnError(Exception):
    """Base class for errors raised by dynlearn.

    Subclasses live next to the code that raises them. ``details`` carries the
    structured context that the command line prints on failure.
    """

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        """Structured payload for error reporting."""
        return {
            "error": type(self).__name__,
            "message": self.message,
            "details": {key: _plain(value) for key, value in self.details.items()},
        }


class ConfigError(DynLearnError):
    """Raised when a run configuration cannot be assembled."""


def _plain(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    return repr(value)
