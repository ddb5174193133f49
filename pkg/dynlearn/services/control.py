"""Model-based regulation and tracking controllers and their closed-loop harness."""

import math
import time
from collections.abc import Callable
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch
from torch import Tensor

from dynlearn.config import get_settings
from dynlearn.models.schemas import (
    GAIN_PRESETS,
    SCALAR_GAIN_PRESETS,
    ConsistencyReport,
    ConsistencySample,
    GainSchedule,
    ReferenceSpec,
)
from dynlearn.services.dynamics import coriolis_force
from dynlearn.services.integrators import IntegrationError, rk4_step
from dynlearn.services.numcore import (
    DTYPE,
    as_tensor,
    check_last_dim,
    mass_solve,
    spd_eigenvalues,
    symmetrize,
)
from dynlearn.services.physnets import MechanicalStructure
from dynlearn.services.plants import Plant, plant_field
from dynlearn.utils import ConfigError, DynLearnError, get_logger, record_rollout, record_saturation

logger = get_logger(__name__)


class ControllerError(DynLearnError):
    """Raised when a control law cannot be evaluated."""


def resolve_gains(gains: Union[str, GainSchedule], n: int) -> GainSchedule:
    """Gain schedule from a preset name, a ``"kp,kd"`` pair or a schedule."""
    if isinstance(gains, GainSchedule):
        schedule = gains
    elif gains in SCALAR_GAIN_PRESETS:
        schedule = GainSchedule.broadcast(*SCALAR_GAIN_PRESETS[gains], n)
    elif gains in GAIN_PRESETS:
        schedule = GAIN_PRESETS[gains]
    else:
        try:
            kp, kd = (float(part) for part in gains.split(","))
        except ValueError as exc:
            raise ConfigError(
                f"Unknown gain preset: {gains}",
                field="control.gains",
                available=sorted([*SCALAR_GAIN_PRESETS, *GAIN_PRESETS]),
            ) from exc
        try:
            schedule = GainSchedule.broadcast(kp, kd, n)
        except ValueError as exc:
            raise ConfigError("Gains must be finite and > 0", field="control.gains") from exc
    if schedule.dim != n:
        raise ConfigError(
            "Gain schedule does not match the plant dimension",
            field="control.gains",
            expected=n,
            length=schedule.dim,
        )
    return schedule


def gain_matrices(gains: GainSchedule) -> tuple[Tensor, Tensor]:
    return torch.diag(as_tensor(gains.kp)), torch.diag(as_tensor(gains.kd))


def _matvec(matrix: Tensor, x: Tensor) -> Tensor:
    return (matrix @ x.unsqueeze(-1)).squeeze(-1)


def _check_rank(matrix: Tensor) -> None:
    tolerance = get_settings().rank_tolerance
    singular = torch.linalg.svdvals(matrix.detach())
    if bool((singular[..., -1] <= tolerance * singular[..., 0]).any()):
        raise ControllerError(
            "Input matrix is rank deficient",
            smallest=float(singular[..., -1].min()),
            largest=float(singular[..., 0].max()),
        )


def pseudo_solve(matrix: Tensor, rhs: Tensor) -> Tensor:
    """A⁺ b by column-pivoted least squares; A must have full column rank."""
    _check_rank(matrix)
    return torch.linalg.lstsq(matrix, rhs.unsqueeze(-1), driver="gelsy").solution.squeeze(-1)


def regulation_control(
    model: MechanicalStructure, q: Tensor, qd: Tensor, q_ref: Tensor, gains: GainSchedule
) -> Tensor:
    """u = A⁺ G + Aᵀ (K_P (q_ref − q) − K_D q̇)."""
    q, qd, q_ref = as_tensor(q), as_tensor(qd), as_tensor(q_ref)
    for name, value in (("q", q), ("qd", qd), ("q_ref", q_ref)):
        check_last_dim(value, model.n, name)
    kp, kd = gain_matrices(gains)
    a = model.input_matrix(q)
    feedforward = pseudo_solve(a, model.potential_grad(q))
    feedback = _matvec(kp, q_ref - q) - _matvec(kd, qd)
    return feedforward + _matvec(a.transpose(-1, -2), feedback)


def tracking_control(
    model: MechanicalStructure,
    q: Tensor,
    qd: Tensor,
    q_ref: Tensor,
    qd_ref: Tensor,
    qdd_ref: Tensor,
    gains: GainSchedule,
) -> Tensor:
    """Feedforward of the model along the reference plus PD feedback through Aᵀ."""
    q, qd = as_tensor(q), as_tensor(qd)
    q_ref, qd_ref, qdd_ref = as_tensor(q_ref), as_tensor(qd_ref), as_tensor(qdd_ref)
    for name, value in (("q", q), ("qd", qd), ("q_ref", q_ref), ("qd_ref", qd_ref), ("qdd_ref", qdd_ref)):
        check_last_dim(value, model.n, name)
    a = model.input_matrix(q)
    if a.shape[-1] != a.shape[-2]:
        raise ControllerError("Tracking needs a square input matrix", shape=list(a.shape))
    _check_rank(a)
    kp, kd = gain_matrices(gains)
    feedforward = (
        _matvec(model.mass_matrix(q_ref), qdd_ref)
        + coriolis_force(model, q_ref, qd_ref)
        + _matvec(model.damping_matrix(q_ref), qd_ref)
        + model.potential_grad(q_ref)
    )
    feedback = _matvec(kp, q_ref - q) + _matvec(kd, qd_ref - qd)
    return torch.linalg.solve(a, feedforward) + _matvec(a.transpose(-1, -2), feedback)


@dataclass(frozen=True)
class ReferenceSignal:
    """Joint-space reference with its first two derivatives."""

    position: Callable[[float], Tensor]
    velocity: Callable[[float], Tensor]
    acceleration: Callable[[float], Tensor]

    def __call__(self, t: float) -> tuple[Tensor, Tensor, Tensor]:
        return self.position(t), self.velocity(t), self.acceleration(t)

    @classmethod
    def constant(cls, center: Tensor) -> "ReferenceSignal":
        center = as_tensor(center)
        zero = torch.zeros_like(center)
        return cls(lambda t: center, lambda t: zero, lambda t: zero)

    @classmethod
    def harmonics(cls, center: Tensor, amplitude: Tensor, frequency: float, terms: int = 1) -> "ReferenceSignal":
        """Sum of ``terms`` harmonics; coordinate ``j`` is phase shifted by jπ/2."""
        center, amplitude = as_tensor(center), as_tensor(amplitude)
        omega = 2.0 * math.pi * frequency
        phase = torch.arange(center.shape[0], dtype=DTYPE) * (math.pi / 2.0)
        weights = [1.0 / h for h in range(1, terms + 1)]

        def position(t: float) -> Tensor:
            return center + amplitude * sum(w * torch.sin(h * omega * t + phase) for h, w in enumerate(weights, 1))

        def velocity(t: float) -> Tensor:
            return amplitude * sum(w * h * omega * torch.cos(h * omega * t + phase) for h, w in enumerate(weights, 1))

        def acceleration(t: float) -> Tensor:
            return -amplitude * sum(
                w * (h * omega) ** 2 * torch.sin(h * omega * t + phase) for h, w in enumerate(weights, 1)
            )

        return cls(position, velocity, acceleration)

    @classmethod
    def from_spec(cls, spec: ReferenceSpec, n: int) -> "ReferenceSignal":
        center = as_tensor(spec.center) if spec.center else torch.zeros(n, dtype=DTYPE)
        amplitude = as_tensor(spec.amplitude) if spec.amplitude else torch.full((n,), 0.5, dtype=DTYPE)
        for name, value in (("center", center), ("amplitude", amplitude)):
            if value.shape != (n,):
                raise ConfigError(
                    "Reference does not match the plant dimension",
                    field=f"control.reference.{name}",
                    expected=n,
                    length=value.numel(),
                )
        if spec.kind == "constant":
            return cls.constant(center)
        return cls.harmonics(center, amplitude, spec.frequency, terms=1 if spec.kind == "sinusoid" else 3)


class RegulationController:
    """Set-point regulation with gravity compensation through the learned structure."""

    def __init__(self, model: MechanicalStructure, gains: GainSchedule, q_ref: Tensor):
        self.model = model
        self.gains = gains
        self.reference = ReferenceSignal.constant(q_ref)

    def __call__(self, t: float, q: Tensor, qd: Tensor) -> Tensor:
        return regulation_control(self.model, q, qd, self.reference.position(t), self.gains)


class TrackingController:
    """Trajectory tracking with model feedforward along the reference."""

    def __init__(self, model: MechanicalStructure, gains: GainSchedule, reference: ReferenceSignal):
        self.model = model
        self.gains = gains
        self.reference = reference

    def __call__(self, t: float, q: Tensor, qd: Tensor) -> Tensor:
        q_ref, qd_ref, qdd_ref = self.reference(t)
        return tracking_control(self.model, q, qd, q_ref, qd_ref, qdd_ref, self.gains)


Controller = Union[RegulationController, TrackingController]


@dataclass
class ClosedLoopResult:
    """Closed-loop trajectory and control log."""

    t: Tensor
    states: Tensor
    q_ref: Tensor
    u: Tensor
    clipped: Tensor

    @property
    def saturation_events(self) -> int:
        return int(self.clipped.sum())

    @property
    def q(self) -> Tensor:
        return self.states[:, : self.q_ref.shape[-1]]


def closed_loop(
    plant: Plant,
    controller: Controller,
    x0: Tensor,
    duration: float,
    dt: float,
    saturation: Optional[float] = None,
    control_hz: Optional[float] = None,
) -> ClosedLoopResult:
    """Simulate the plant under ``controller`` with RK4 at step ``dt``.

    The controller is sampled every step, or at ``control_hz`` with the input
    held in between; ``saturation`` clips every input channel to ±saturation.
    """
    x = as_tensor(x0)
    check_last_dim(x, 2 * plant.n, "x0")
    steps = int(round(duration / dt))
    hold = 1
    if control_hz is not None:
        ratio = 1.0 / (control_hz * dt)
        hold = int(round(ratio))
        if hold < 1 or abs(ratio - hold) > 1e-6:
            raise ConfigError("Control rate must divide the simulation rate", field="control.control_hz")
    field = plant_field(plant)
    n = plant.n
    started = time.perf_counter()

    times, states, refs, inputs, clipped = [], [x], [], [], []
    u = torch.zeros(plant.m_u, dtype=DTYPE)
    clip = False
    with torch.no_grad():
        for k in range(steps):
            t = k * dt
            if k % hold == 0:
                u = controller(t, x[:n], x[n:])
                clip = False
                if saturation is not None:
                    clip = bool((u.abs() > saturation).any())
                    u = u.clamp(-saturation, saturation)
            times.append(t)
            refs.append(controller.reference.position(t))
            inputs.append(u)
            clipped.append(clip)
            try:
                x = rk4_step(field, x, u, dt)
            except IntegrationError as exc:
                raise IntegrationError(
                    f"Closed loop failed at step {k}: {exc.message}", stage=exc.stage, step=k
                ) from exc
            states.append(x)
        times.append(steps * dt)
        refs.append(controller.reference.position(steps * dt))

    result = ClosedLoopResult(
        t=as_tensor(times),
        states=torch.stack(states),
        q_ref=torch.stack(refs),
        u=torch.stack(inputs) if inputs else torch.zeros(0, plant.m_u, dtype=DTYPE),
        clipped=torch.as_tensor(clipped, dtype=torch.bool),
    )
    record_rollout("closed_loop", time.perf_counter() - started)
    record_saturation(result.saturation_events)
    logger.info(
        "Closed loop finished",
        plant=plant.name,
        steps=steps,
        final_error=float((result.q[-1] - result.q_ref[-1]).abs().max()),
        saturation_events=result.saturation_events,
    )
    return result


def tracking_rmse(result: ClosedLoopResult) -> tuple[list[float], list[float]]:
    """Per-coordinate RMSE and RMSE in percent of the reference range.

    A coordinate whose reference does not move is normalized by 1.
    """
    error = result.q - result.q_ref
    rmse = torch.sqrt((error**2).mean(0))
    span = result.q_ref.max(0).values - result.q_ref.min(0).values
    span = torch.where(span > 1e-12, span, torch.ones_like(span))
    return rmse.tolist(), (100.0 * rmse / span).tolist()


def estimate_P(model: MechanicalStructure, plant: Plant, q_grid: Tensor) -> ConsistencyReport:
    """Compare a learned structure with the plant up to a left factor P(q).

    P is estimated from the mass pair as M_L M⁻¹ and then checked against the
    gravity, input and damping terms.
    """
    q_grid = as_tensor(q_grid)
    check_last_dim(q_grid, plant.n, "q_grid")
    if model.n != plant.n:
        raise ControllerError("Model and plant dimensions differ", model=model.n, plant=plant.n)
    samples = []
    with torch.no_grad():
        for q in q_grid:
            m_learned, m_true = model.mass_matrix(q), plant.mass_matrix(q)
            p = mass_solve(m_true, m_learned).transpose(-1, -2)
            g_learned, g_true = model.potential_grad(q), plant.potential_grad(q)
            a_learned, a_true = model.input_matrix(q), plant.input_matrix(q)
            d_learned, d_true = model.damping_matrix(q), plant.damping_matrix(q)

            input_gap = a_learned - p @ a_true
            transposed = a_true @ input_gap.transpose(-1, -2) + a_true @ a_true.transpose(-1, -2) @ p.transpose(-1, -2)
            min_eig = float(spd_eigenvalues(symmetrize(transposed))[0])
            scaled_gap = torch.linalg.lstsq(p @ a_true, input_gap, driver="gelsy").solution
            smallness = float(torch.linalg.matrix_norm(scaled_gap, ord=2))

            samples.append(
                ConsistencySample(
                    q=q.tolist(),
                    P=p.tolist(),
                    residual_g=float(torch.linalg.vector_norm(g_learned - _matvec(p, g_true))),
                    residual_a=float(torch.linalg.matrix_norm(input_gap, ord=2)),
                    residual_d=float(torch.linalg.matrix_norm(d_learned - p @ d_true, ord=2)),
                    transpose_condition_min_eig=min_eig,
                    transpose_condition_ok=min_eig > 0,
                    smallness_norm=smallness,
                    smallness_ok=smallness < 1.0,
                )
            )
    if not samples:
        raise ControllerError("No configurations to compare")

    def median(key: str) -> float:
        return float(np.median([getattr(s, key) for s in samples]))

    report = ConsistencyReport(
        samples=samples,
        median_residual_g=median("residual_g"),
        median_residual_a=median("residual_a"),
        median_residual_d=median("residual_d"),
        median_smallness_norm=median("smallness_norm"),
        all_transpose_conditions_ok=all(s.transpose_condition_ok for s in samples),
        all_smallness_conditions_ok=all(s.smallness_ok for s in samples),
    )
    logger.info(
        "Consistency estimated",
        plant=plant.name,
        samples=len(samples),
        median_residual_g=report.median_residual_g,
        median_smallness_norm=report.median_smallness_norm,
    )
    return report
