"""Models module."""

from dynlearn.models.schemas import (
    GAIN_PRESETS,
    SCALAR_GAIN_PRESETS,
    CheckpointFile,
    CommandSummary,
    ConsistencyReport,
    ConsistencySample,
    ControlConfig,
    DatasetMeta,
    EvaluationConfig,
    GainSchedule,
    GenSpec,
    HeadRecord,
    HeadsConfig,
    InputSignal,
    MeanStd,
    Metrics,
    MetricsFile,
    MlpSpec,
    ReferenceSpec,
    RolloutConfig,
    RunConfig,
    TrainConfig,
    TrainingRecord,
)

__all__ = [
    "GAIN_PRESETS",
    "SCALAR_GAIN_PRESETS",
    "CheckpointFile",
    "CommandSummary",
    "ConsistencyReport",
    "ConsistencySample",
    "ControlConfig",
    "DatasetMeta",
    "EvaluationConfig",
    "GainSchedule",
    "GenSpec",
    "HeadRecord",
    "HeadsConfig",
    "InputSignal",
    "MeanStd",
    "Metrics",
    "MetricsFile",
    "MlpSpec",
    "ReferenceSpec",
    "RolloutConfig",
    "RunConfig",
    "TrainConfig",
    "TrainingRecord",
]
