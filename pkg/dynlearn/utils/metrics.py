"""Prometheus metrics for dynlearn runs.

Collectors live in a private registry; ``export_textfile`` dumps it in the
node-exporter textfile format next to a run's outputs.
"""

from pathlib import Path

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, Info, write_to_textfile

REGISTRY = CollectorRegistry()

APP_INFO = Info(
    "dynlearn_app",
    "dynlearn build information",
    registry=REGISTRY,
)

COMMANDS = Counter(
    "dynlearn_commands_total",
    "Total number of CLI commands run",
    ["command", "status"],
    registry=REGISTRY,
)

TRAJECTORIES = Counter(
    "dynlearn_trajectories_total",
    "Trajectories produced by dataset generation",
    ["plant", "status"],
    registry=REGISTRY,
)

TRAIN_EPOCHS = Counter(
    "dynlearn_train_epochs_total",
    "Training epochs completed",
    ["kind"],
    registry=REGISTRY,
)

TRAIN_LOSS = Gauge(
    "dynlearn_train_loss",
    "Mean training loss of the last finished epoch",
    ["kind"],
    registry=REGISTRY,
)

GRADIENT_CLIPS = Counter(
    "dynlearn_gradient_clips_total",
    "Optimizer steps whose gradient norm exceeded the clip threshold",
    ["kind"],
    registry=REGISTRY,
)

ROLLOUT_LATENCY = Histogram(
    "dynlearn_rollout_seconds",
    "Wall-clock duration of trajectory rollouts",
    ["mode"],
    buckets=[0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 30.0],
    registry=REGISTRY,
)

SATURATION_EVENTS = Counter(
    "dynlearn_saturation_events_total",
    "Closed-loop steps where the control input was clipped",
    registry=REGISTRY,
)


def init_app_info(version: str) -> None:
    """Initialize application info metric."""
    APP_INFO.info({"version": version, "service": "dynlearn"})


def record_command(command: str, success: bool = True) -> None:
    """Record a CLI command outcome."""
    COMMANDS.labels(command=command, status="success" if success else "error").inc()


def record_trajectory(plant: str, success: bool = True) -> None:
    """Record a generated (or failed) trajectory."""
    TRAJECTORIES.labels(plant=plant, status="success" if success else "error").inc()


def record_epoch(kind: str, loss: float, clipped_steps: int = 0) -> None:
    """Record a finished training epoch."""
    TRAIN_EPOCHS.labels(kind=kind).inc()
    TRAIN_LOSS.labels(kind=kind).set(loss)
    if clipped_steps:
        GRADIENT_CLIPS.labels(kind=kind).inc(clipped_steps)


def record_rollout(mode: str, duration: float) -> None:
    """Record a rollout duration."""
    ROLLOUT_LATENCY.labels(mode=mode).observe(duration)


def record_saturation(events: int) -> None:
    """Record clipped control steps."""
    if events:
        SATURATION_EVENTS.inc(events)


def export_textfile(path: Path) -> None:
    """Write the registry to ``path``."""
    write_to_textfile(str(path), REGISTRY)
