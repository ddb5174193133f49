"""dynlearn: structured dynamics learning and model-based control."""

__version__ = "1.0.0"
