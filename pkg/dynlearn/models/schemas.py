"""Pydantic models for run configuration, persisted artifacts and reports."""

import math
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

ModelKind = Literal["lnn", "hnn", "blackbox"]
DatasetKind = Literal["lnn", "hnn"]
Activation = Literal["softplus", "tanh"]
FinalActivation = Literal["identity", "softplus", "sigmoid"]


class MlpSpec(BaseModel):
    """Shape and activation layout of a fully connected network."""

    model_config = ConfigDict(frozen=True)

    input_dim: int = Field(..., ge=1, description="Input width")
    output_dim: int = Field(..., ge=1, description="Output width")
    hidden: tuple[int, ...] = Field(default=(32, 32, 32), description="Hidden layer widths")
    activation: Activation = Field(default="softplus", description="Hidden activation")
    final_activation: FinalActivation = Field(default="identity", description="Output activation")
    final_scale: float = Field(default=1.0, gt=0, description="Scale of a sigmoid output")
    seed: int = Field(default=0, description="Initialization seed")

    @field_validator("hidden")
    @classmethod
    def _positive_widths(cls, widths: tuple[int, ...]) -> tuple[int, ...]:
        if any(w < 1 for w in widths):
            raise ValueError("hidden widths must be >= 1")
        return widths


class HeadsConfig(BaseModel):
    """Widths and positivity options of the four structured heads."""

    mass_hidden: tuple[int, ...] = Field(default=(32, 32, 32))
    potential_hidden: tuple[int, ...] = Field(default=(5, 5, 5))
    damping_hidden: tuple[int, ...] = Field(default=(16, 16))
    input_hidden: tuple[int, ...] = Field(default=(16, 16))
    blackbox_hidden: tuple[int, ...] = Field(default=(128, 128, 128, 128, 128))
    activation: Activation = Field(default="softplus")
    mass_eps: float = Field(default=1e-2, gt=0)
    damping_eps: float = Field(default=0.0, ge=0)
    mass_scale: Optional[float] = Field(default=None, gt=0, description="Sigmoid-bounded mass diagonal")
    input_scale: Optional[float] = Field(default=None, gt=0, description="Sigmoid-bounded input matrix")
    damping_diagonal: bool = Field(default=False)


class TrainConfig(BaseModel):
    """Optimizer and batching options for one training run."""

    epochs: int = Field(default=1000, ge=0)
    batch_size: int = Field(default=128, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    weight_decay: float = Field(default=1e-4, ge=0)
    seed: int = Field(default=0)
    clip_norm: float = Field(default=10.0, gt=0)
    loss: ModelKind = Field(default="lnn")
    cosine_decay: bool = Field(default=False)
    validation_fraction: float = Field(default=0.1, ge=0, lt=1)


class RolloutConfig(BaseModel):
    """Fixed-step rollout options."""

    dt: float = Field(..., gt=0, description="Step size [s]")
    horizon: int = Field(..., ge=1, description="Number of steps")
    window: Optional[int] = Field(default=None, ge=1, description="State reset period in steps")


class InputSignal(BaseModel):
    """Open-loop excitation applied during data generation."""

    kind: Literal["sinusoid", "chirp", "step", "zero"] = Field(default="sinusoid")
    amplitude: list[float] = Field(default_factory=list)
    frequency: float = Field(default=0.5, ge=0, description="[Hz]; start frequency for chirps")
    frequency_end: Optional[float] = Field(default=None, ge=0, description="Chirp end frequency [Hz]")
    phase: float = Field(default=0.0, description="[rad]; onset time [s] for steps")
    duration: float = Field(default=10.0, gt=0, description="[s]")

    @field_validator("amplitude")
    @classmethod
    def _finite(cls, values: list[float]) -> list[float]:
        if not all(math.isfinite(v) for v in values):
            raise ValueError("amplitudes must be finite")
        return values


class GenSpec(BaseModel):
    """Dataset generation plan: initial states x input signals on one plant."""

    plant: str = Field(default="damped_pendulum")
    kind: DatasetKind = Field(default="lnn")
    initial_states: list[list[float]] = Field(default_factory=list, description="[q, qd] rows")
    signals: list[InputSignal] = Field(default_factory=list)
    n_initial_states: int = Field(default=10, ge=1, description="Used when initial_states is empty")
    n_signals: int = Field(default=10, ge=1, description="Used when signals is empty")
    state_scale: float = Field(default=0.5, gt=0)
    input_amplitude: float = Field(default=1.0, ge=0)
    duration: float = Field(default=10.0, gt=0)
    fine_dt: float = Field(default=1e-3, gt=0)
    resample_hz: list[float] = Field(default_factory=lambda: [100.0])
    input_hold_hz: Optional[float] = Field(
        default=None, gt=0, description="Input update rate [Hz]; defaults to the lowest resample rate"
    )
    noise_std: Union[float, list[float]] = Field(default=0.0)
    smoothing_window: Optional[int] = Field(default=None, ge=1)
    seed: int = Field(default=0)

    @field_validator("noise_std")
    @classmethod
    def _non_negative_noise(cls, value: Union[float, list[float]]) -> Union[float, list[float]]:
        values = value if isinstance(value, list) else [value]
        if any(v < 0 for v in values):
            raise ValueError("noise standard deviations must be >= 0")
        return value

    @model_validator(mode="after")
    def _rates_divide_fine_rate(self) -> "GenSpec":
        fine_rate = 1.0 / self.fine_dt
        for rate in [*self.resample_hz, *([self.input_hold_hz] if self.input_hold_hz else [])]:
            if rate <= 0:
                raise ValueError("sampling rates must be positive")
            ratio = fine_rate / rate
            if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
                raise ValueError(f"rate {rate} Hz does not divide the fine rate {fine_rate:g} Hz")
        return self

    def decimation(self, rate: float) -> int:
        """Fine steps per sample at ``rate``."""
        return int(round(1.0 / (self.fine_dt * rate)))


class GainSchedule(BaseModel):
    """Diagonal PD gains K_P, K_D."""

    kp: list[float] = Field(..., min_length=1)
    kd: list[float] = Field(..., min_length=1)

    @field_validator("kp", "kd")
    @classmethod
    def _strictly_positive(cls, values: list[float]) -> list[float]:
        if any(not (v > 0 and math.isfinite(v)) for v in values):
            raise ValueError("gains must be finite and > 0")
        return values

    @model_validator(mode="after")
    def _same_length(self) -> "GainSchedule":
        if len(self.kp) != len(self.kd):
            raise ValueError("kp and kd must have the same length")
        return self

    @classmethod
    def broadcast(cls, kp: float, kd: float, n: int) -> "GainSchedule":
        """Scalar gains on an n-dimensional diagonal."""
        return cls(kp=[kp] * n, kd=[kd] * n)

    @property
    def dim(self) -> int:
        return len(self.kp)

    def scaled(self, factor: float) -> "GainSchedule":
        return GainSchedule(kp=[k * factor for k in self.kp], kd=[k * factor for k in self.kd])


GAIN_PRESETS: dict[str, GainSchedule] = {
    "panda": GainSchedule(
        kp=[600.0, 600.0, 600.0, 600.0, 250.0, 150.0, 50.0],
        kd=[30.0, 30.0, 30.0, 30.0, 10.0, 10.0, 5.0],
    ),
}
SCALAR_GAIN_PRESETS: dict[str, tuple[float, float]] = {
    "soft_manipulator": (10.0, 50.0),
}


class ReferenceSpec(BaseModel):
    """Joint-space reference for the closed loop."""

    kind: Literal["constant", "sinusoid", "multisine"] = Field(default="constant")
    center: list[float] = Field(default_factory=list)
    amplitude: list[float] = Field(default_factory=list)
    frequency: float = Field(default=0.5, ge=0)


class ControlConfig(BaseModel):
    """Closed-loop experiment options."""

    law: Literal["regulation", "tracking"] = Field(default="regulation")
    gains: str = Field(default="soft_manipulator", description="Preset name or 'kp,kd' scalars")
    reference: ReferenceSpec = Field(default_factory=ReferenceSpec)
    initial_state: list[float] = Field(default_factory=list)
    duration: float = Field(default=5.0, gt=0)
    dt: float = Field(default=1e-3, gt=0)
    control_hz: Optional[float] = Field(default=None, gt=0)
    saturation: Optional[float] = Field(default=None, gt=0)
    use_plant_model: bool = Field(default=False, description="Control with the plant closures")


class EvaluationConfig(BaseModel):
    """Rollout evaluation options."""

    horizon_s: float = Field(default=5.0, gt=0)
    windows: list[int] = Field(default_factory=lambda: [5])

    @field_validator("windows")
    @classmethod
    def _positive_windows(cls, values: list[int]) -> list[int]:
        if any(w < 1 for w in values):
            raise ValueError("windows must be >= 1")
        return values


class RunConfig(BaseModel):
    """Effective configuration of one CLI invocation.

    Top-level ``plant``, ``model`` and ``seed`` are authoritative and are copied
    into the nested sections after validation.
    """

    plant: str = Field(default="damped_pendulum")
    model: ModelKind = Field(default="lnn")
    seed: int = Field(default=0)
    dt: Optional[float] = Field(default=None, gt=0)
    out: str = Field(default="runs")
    dataset: Optional[str] = Field(default=None, description="Dataset path for train/eval")
    checkpoints: list[str] = Field(
        default_factory=list, description="Checkpoint paths; predict, control and inspect use the first"
    )
    configurations: list[list[float]] = Field(default_factory=list, description="Configurations to inspect")
    generation: GenSpec = Field(default_factory=GenSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    heads: HeadsConfig = Field(default_factory=HeadsConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    control: ControlConfig = Field(default_factory=ControlConfig)

    @model_validator(mode="after")
    def _propagate(self) -> "RunConfig":
        generation_update: dict = {"plant": self.plant, "seed": self.seed}
        if self.model != "blackbox":
            generation_update["kind"] = self.model
        if self.dt is not None:
            generation_update["resample_hz"] = [round(1.0 / self.dt, 9)]
        self.generation = GenSpec.model_validate({**self.generation.model_dump(), **generation_update})
        self.train = self.train.model_copy(update={"seed": self.seed, "loss": self.model})
        if self.dt is not None:
            self.control = self.control.model_copy(update={"dt": self.dt})
        return self


class MeanStd(BaseModel):
    """Mean and standard deviation of a non-negative error sample."""

    mean: float = Field(..., ge=0)
    std: float = Field(..., ge=0)


class Metrics(BaseModel):
    """Prediction and control quality figures of one model."""

    one_step_loss: Optional[MeanStd] = None
    rollout_error: Optional[MeanStd] = None
    rollout_horizon_steps: Optional[int] = None
    windowed_error: dict[str, MeanStd] = Field(default_factory=dict)
    tracking_rmse: Optional[list[float]] = None
    tracking_rmse_percent: Optional[list[float]] = None
    timings: Optional[dict[str, float]] = None


class MetricsFile(BaseModel):
    """On-disk metrics document; every figure traces to a seed and config hash."""

    schema_version: int = Field(default=1)
    command: str
    seed: int
    config_hash: str
    metrics: dict[str, Metrics] = Field(default_factory=dict)


class ConsistencySample(BaseModel):
    """Multiplicative-factor diagnostics at one configuration."""

    q: list[float]
    P: list[list[float]]
    residual_g: float = Field(..., ge=0)
    residual_a: float = Field(..., ge=0)
    residual_d: float = Field(..., ge=0)
    transpose_condition_min_eig: float
    transpose_condition_ok: bool
    smallness_norm: float = Field(..., ge=0)
    smallness_ok: bool


class ConsistencyReport(BaseModel):
    """Per-sample and aggregate learned-vs-true structure comparison."""

    samples: list[ConsistencySample]
    median_residual_g: float = Field(..., ge=0)
    median_residual_a: float = Field(..., ge=0)
    median_residual_d: float = Field(..., ge=0)
    median_smallness_norm: float = Field(..., ge=0)
    all_transpose_conditions_ok: bool
    all_smallness_conditions_ok: bool


class HeadRecord(BaseModel):
    """One serialized network head."""

    spec: MlpSpec
    options: dict[str, Union[bool, float, str, None]] = Field(default_factory=dict)
    params: list[float]


class TrainingRecord(BaseModel):
    """Summary of the run that produced a checkpoint."""

    epochs: int
    seed: int
    final_loss_mean: Optional[float] = None
    final_loss_std: Optional[float] = None


class CheckpointFile(BaseModel):
    """Checkpoint document layout."""

    format_version: int
    kind: ModelKind
    n: int = Field(..., ge=1)
    m_u: int = Field(..., ge=1)
    plant: Optional[str] = None
    heads: dict[str, HeadRecord]
    training: Optional[TrainingRecord] = None


class DatasetMeta(BaseModel):
    """Sidecar metadata of a transition dataset file."""

    format_version: int = Field(default=1)
    kind: DatasetKind
    plant: str
    sample_hz: float = Field(..., gt=0)
    n: int = Field(..., ge=1)
    m_u: int = Field(..., ge=1)
    n_trajectories: int = Field(..., ge=0)


class CommandSummary(BaseModel):
    """What a command wrote; printed on stdout when it finishes."""

    command: str
    out: str
    config_hash: str
    artifacts: dict[str, str] = Field(default_factory=dict)
