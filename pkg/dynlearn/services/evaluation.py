"""Black-box baseline and prediction-quality evaluation."""

import time
from typing import Optional, Union

import torch
from torch import Tensor, nn

from dynlearn.config import get_settings
from dynlearn.models.schemas import HeadsConfig, MeanStd, Metrics, MlpSpec, RolloutConfig, TrainConfig
from dynlearn.services.dynamics import hamiltonian_field, lagrangian_field
from dynlearn.services.integrators import IntegrationError, Stepper, iterate, iterate_windowed, rk4_stepper
from dynlearn.services.learning import TrainResult, TransitionDataset, register_loss, train
from dynlearn.services.numcore import DimensionMismatchError, Mlp, check_last_dim
from dynlearn.services.physnets import MechanicalStructure, StructuredModel
from dynlearn.utils import DynLearnError, get_logger, record_rollout

logger = get_logger(__name__)


class EvaluationError(DynLearnError):
    """Raised when a model cannot be evaluated on the given data."""


class BlackBoxModel(nn.Module):
    """Unstructured network mapping (q, v, u, dt) to the next (q, v)."""

    kind = "blackbox"

    def __init__(
        self,
        n: int,
        m_u: int,
        state_kind: str = "lnn",
        hidden: tuple[int, ...] = (128, 128, 128, 128, 128),
        activation: str = "softplus",
        seed: int = 0,
    ):
        super().__init__()
        self.n = n
        self.m_u = m_u
        self.state_kind = state_kind
        self.net = Mlp(
            MlpSpec(
                input_dim=2 * n + m_u + 1,
                output_dim=2 * n,
                hidden=hidden,
                activation=activation,
                seed=seed,
            )
        )

    def options(self) -> dict:
        return {"state_kind": self.state_kind}

    def step(self, x: Tensor, u: Tensor, dt: Union[float, Tensor]) -> Tensor:
        check_last_dim(x, 2 * self.n, "x")
        check_last_dim(u, self.m_u, "u")
        if isinstance(dt, Tensor) and dt.dim() > 0:
            dt_column = dt.unsqueeze(-1).to(x.dtype)
        else:
            dt_column = torch.full((*x.shape[:-1], 1), float(dt), dtype=x.dtype)
        return self.net(torch.cat([x, u, dt_column], dim=-1))

    def forward(self, q: Tensor, v: Tensor, u: Tensor, dt: Union[float, Tensor]) -> tuple[Tensor, Tensor]:
        x_next = self.step(torch.cat([q, v], dim=-1), u, dt)
        return x_next[..., : self.n], x_next[..., self.n :]


def blackbox_loss(model: BlackBoxModel, batch: TransitionDataset) -> Tensor:
    """Mean squared error of the directly predicted next state."""
    if len(batch) == 0:
        raise EvaluationError("Loss of an empty batch")
    q_hat, v_hat = model(batch.q, batch.v, batch.u, batch.dt)
    return (((batch.next_q - q_hat) ** 2).sum(-1) + ((batch.next_v - v_hat) ** 2).sum(-1)).mean()


register_loss("blackbox", blackbox_loss)


def train_blackbox(
    dataset: TransitionDataset,
    config: TrainConfig,
    heads: Optional[HeadsConfig] = None,
    validation: Optional[TransitionDataset] = None,
) -> TrainResult:
    """Train a fresh :class:`BlackBoxModel` with the shared AdamW loop."""
    heads = heads or HeadsConfig()
    model = BlackBoxModel(
        dataset.n,
        dataset.m_u,
        state_kind=dataset.kind,
        hidden=heads.blackbox_hidden,
        activation=heads.activation,
        seed=config.seed,
    )
    return train(model, dataset, config.model_copy(update={"loss": "blackbox"}), validation=validation)


Predictable = Union[StructuredModel, BlackBoxModel, MechanicalStructure]


def model_stepper(model: Predictable, kind: str) -> Stepper:
    """One-step map of ``model`` in the coordinates of a ``kind`` dataset."""
    if isinstance(model, BlackBoxModel):
        if model.state_kind != kind:
            raise EvaluationError(
                "Black-box model was trained on other coordinates",
                model_kind=model.state_kind,
                dataset_kind=kind,
            )
        return model.step
    field = lagrangian_field(model) if kind == "lnn" else hamiltonian_field(model)
    return rk4_stepper(field)


def one_step_errors(model: Predictable, dataset: TransitionDataset) -> Tensor:
    """Per-sample squared one-step error, measured as the training loss measures it."""
    step = model_stepper(model, dataset.kind)
    x = torch.cat([dataset.q, dataset.v], dim=-1)
    with torch.no_grad():
        x_next = step(x, dataset.u, dataset.dt)
    n = dataset.n
    velocity_error = ((dataset.next_v - x_next[..., n:]) ** 2).sum(-1)
    if dataset.kind == "lnn" and not isinstance(model, BlackBoxModel):
        return velocity_error
    return velocity_error + ((dataset.next_q - x_next[..., :n]) ** 2).sum(-1)


def mean_std(values: Tensor) -> MeanStd:
    return MeanStd(mean=float(values.mean()), std=float(values.std(unbiased=False)))


def stack_trajectories(
    dataset: TransitionDataset, horizon: int
) -> tuple[list[int], Tensor, Tensor, float]:
    """Aligned prefixes of every trajectory: ids, states ``(H+1, B, 2n)``, inputs ``(H, B, m_u)``, dt."""
    trajectories = dataset.trajectories()
    if not trajectories:
        raise EvaluationError("No test trajectories")
    shortest = min(t.inputs.shape[0] for t in trajectories)
    if horizon > shortest:
        raise EvaluationError(
            "Horizon exceeds trajectory length", horizon_steps=horizon, shortest_trajectory=shortest
        )
    states = torch.stack([t.states[: horizon + 1] for t in trajectories], dim=1)
    inputs = torch.stack([t.inputs[:horizon] for t in trajectories], dim=1)
    return [t.trajectory_id for t in trajectories], states, inputs, trajectories[0].dt


def _configuration_error(predicted: Tensor, truth: Tensor, n: int) -> Tensor:
    """Euclidean configuration error of every predicted step."""
    return torch.linalg.vector_norm(predicted[1:, ..., :n] - truth[1:, ..., :n], dim=-1).flatten()


def horizon_steps(test: TransitionDataset, horizon_s: float) -> int:
    if len(test) == 0:
        raise EvaluationError("Test set is empty")
    dt = float(test.dt[0])
    horizon = int(round(horizon_s / dt))
    if horizon < 1:
        raise EvaluationError("Horizon is shorter than one sample", horizon_s=horizon_s, dt=dt)
    return horizon


def evaluate_model(
    model: Predictable,
    test: TransitionDataset,
    horizon_s: float,
    windows: Optional[list[int]] = None,
) -> Metrics:
    """One-step, free-rollout and windowed-rollout errors on held-out trajectories.

    Raises:
        EvaluationError: The test set is empty, a rollout fails, or the horizon
            is longer than a test trajectory.
    """
    horizon = horizon_steps(test, horizon_s)
    _, truth, inputs, dt = stack_trajectories(test, horizon)
    step = model_stepper(model, test.kind)
    n = test.n
    timings: dict[str, float] = {}

    with torch.no_grad():
        one_step = one_step_errors(model, test)
        started = time.perf_counter()
        try:
            free = iterate(step, truth[0], inputs, RolloutConfig(dt=dt, horizon=horizon))
        except (IntegrationError, DimensionMismatchError) as exc:
            raise EvaluationError(f"Rollout failed: {exc.message}", **exc.details) from exc
        timings["rollout"] = time.perf_counter() - started
        record_rollout("free", timings["rollout"])

        windowed: dict[str, MeanStd] = {}
        for window in windows or []:
            started = time.perf_counter()
            try:
                predicted = iterate_windowed(
                    step, truth, inputs, RolloutConfig(dt=dt, horizon=horizon, window=window)
                )
            except IntegrationError as exc:
                raise EvaluationError(f"Windowed rollout failed: {exc.message}", window=window) from exc
            timings[f"window_{window}"] = time.perf_counter() - started
            record_rollout("windowed", timings[f"window_{window}"])
            windowed[str(window)] = mean_std(_configuration_error(predicted, truth, n))

    metrics = Metrics(
        one_step_loss=mean_std(one_step),
        rollout_error=mean_std(_configuration_error(free, truth, n)),
        rollout_horizon_steps=horizon,
        windowed_error=windowed,
        timings=timings if get_settings().record_timings else None,
    )
    logger.info(
        "Model evaluated",
        model=getattr(model, "kind", type(model).__name__),
        trajectories=truth.shape[1],
        horizon_steps=horizon,
        one_step_loss=metrics.one_step_loss.mean,
        rollout_error=metrics.rollout_error.mean,
    )
    return metrics


def predict_rollouts(
    model: Predictable, test: TransitionDataset, horizon_s: float
) -> tuple[list[int], Tensor, Tensor, float]:
    """Free rollouts from the first state of every test trajectory.

    Returns:
        Trajectory ids, measured states and predicted states (both
        ``(H+1, B, 2n)``), and the sampling period.
    """
    horizon = horizon_steps(test, horizon_s)
    ids, truth, inputs, dt = stack_trajectories(test, horizon)
    step = model_stepper(model, test.kind)
    with torch.no_grad():
        try:
            predicted = iterate(step, truth[0], inputs, RolloutConfig(dt=dt, horizon=horizon))
        except (IntegrationError, DimensionMismatchError) as exc:
            raise EvaluationError(f"Rollout failed: {exc.message}", **exc.details) from exc
    return ids, truth, predicted, dt
