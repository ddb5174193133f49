"""Fixed-step RK4 integration and rollouts with zero-order-hold inputs."""

from collections.abc import Callable
from typing import Optional, Union

import torch
from torch import Tensor

from dynlearn.models.schemas import RolloutConfig
from dynlearn.services.dynamics import VectorField
from dynlearn.services.numcore import DimensionMismatchError, as_tensor
from dynlearn.utils import DynLearnError

InputSchedule = Union[Tensor, Callable[[float], Tensor]]
Stepper = Callable[[Tensor, Tensor, float], Tensor]


class IntegrationError(DynLearnError):
    """Raised when an RK4 stage (or a rollout step) fails."""

    def __init__(self, message: str, stage: int, step: Optional[int] = None, **details):
        super().__init__(message, stage=stage, step=step, **details)
        self.stage = stage
        self.step = step


def _stage(f: VectorField, x: Tensor, u: Tensor, index: int) -> Tensor:
    try:
        k = f(x, u)
    except IntegrationError:
        raise
    except DynLearnError as exc:
        raise IntegrationError(
            f"RK4 stage {index} failed: {exc.message}", stage=index, cause=type(exc).__name__
        ) from exc
    if not bool(torch.isfinite(k).all()):
        raise IntegrationError(f"RK4 stage {index} is not finite", stage=index)
    return k


def _step_size(dt: Union[float, Tensor], x: Tensor) -> Union[float, Tensor]:
    """Per-sample step sizes of shape ``(B,)`` broadcast over the state."""
    if isinstance(dt, Tensor) and dt.dim() > 0:
        return dt.unsqueeze(-1).to(x.dtype)
    return float(dt)


def rk4_step(f: VectorField, x: Tensor, u: Tensor, dt: Union[float, Tensor]) -> Tensor:
    """Classical RK4 step with ``u`` held across the four stages."""
    x = as_tensor(x)
    h = _step_size(dt, x)
    k1 = _stage(f, x, u, 1)
    k2 = _stage(f, x + 0.5 * h * k1, u, 2)
    k3 = _stage(f, x + 0.5 * h * k2, u, 3)
    k4 = _stage(f, x + h * k3, u, 4)
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _input_at(inputs: InputSchedule, k: int, dt: float) -> Tensor:
    if callable(inputs):
        return as_tensor(inputs(k * dt))
    return inputs[k]


def _check_schedule(inputs: InputSchedule, horizon: int) -> None:
    if not callable(inputs) and inputs.shape[0] < horizon:
        raise DimensionMismatchError(
            "Input schedule is shorter than the horizon",
            expected=horizon,
            shape=list(inputs.shape),
        )


def rk4_stepper(f: VectorField) -> Stepper:
    return lambda x, u, dt: rk4_step(f, x, u, dt)


def _advance(step: Stepper, x: Tensor, u: Tensor, dt: float, k: int) -> Tensor:
    try:
        return step(x, u, dt)
    except IntegrationError as exc:
        raise IntegrationError(
            f"Rollout failed at step {k}: {exc.message}", stage=exc.stage, step=k
        ) from exc


def iterate(step: Stepper, x0: Tensor, inputs: InputSchedule, config: RolloutConfig) -> Tensor:
    """Apply a one-step map ``horizon`` times; returns ``horizon + 1`` states."""
    _check_schedule(inputs, config.horizon)
    x = as_tensor(x0)
    states = [x]
    for k in range(config.horizon):
        x = _advance(step, x, _input_at(inputs, k, config.dt), config.dt, k)
        states.append(x)
    return torch.stack(states)


def iterate_windowed(step: Stepper, truth: Tensor, inputs: InputSchedule, config: RolloutConfig) -> Tensor:
    """Like :func:`iterate`, reset to the measured state every ``config.window`` steps."""
    truth = as_tensor(truth)
    if truth.shape[0] < config.horizon + 1:
        raise DimensionMismatchError(
            "Truth trajectory is shorter than the horizon",
            expected=config.horizon + 1,
            length=truth.shape[0],
        )
    _check_schedule(inputs, config.horizon)
    window = config.window or config.horizon
    x = truth[0]
    states = [x]
    for k in range(config.horizon):
        if k % window == 0:
            x = truth[k]
        x = _advance(step, x, _input_at(inputs, k, config.dt), config.dt, k)
        states.append(x)
    return torch.stack(states)


def rollout(f: VectorField, x0: Tensor, inputs: InputSchedule, config: RolloutConfig) -> Tensor:
    """Iterate :func:`rk4_step`; returns ``horizon + 1`` states starting at ``x0``.

    ``inputs`` is either a tensor indexed by step or a function of time.
    """
    return iterate(rk4_stepper(f), x0, inputs, config)


def rollout_windowed(
    f: VectorField, truth: Tensor, inputs: InputSchedule, config: RolloutConfig
) -> Tensor:
    """Prediction reset to the measured state every ``config.window`` steps.

    Without a window this is a free rollout from ``truth[0]``.
    """
    return iterate_windowed(rk4_stepper(f), truth, inputs, config)
