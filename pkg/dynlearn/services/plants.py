"""Ground-truth mechanical plants and the dataset generation pipeline."""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict
from scipy.ndimage import uniform_filter1d
from torch import Tensor

from dynlearn.models.schemas import GenSpec, InputSignal, RolloutConfig
from dynlearn.services.learning import TransitionDataset
from dynlearn.services.numcore import (
    DTYPE,
    DimensionMismatchError,
    as_tensor,
    batch_jacobian,
    check_last_dim,
    mass_solve,
)
from dynlearn.services.integrators import IntegrationError, rollout
from dynlearn.services.physnets import MechanicalStructure
from dynlearn.utils import DynLearnError, get_logger, record_trajectory

logger = get_logger(__name__)

GRAVITY = 9.81


class UnknownPlantError(DynLearnError):
    """Raised when a plant name is not registered."""


class PlantDomainError(DynLearnError):
    """Raised when a configuration leaves a plant's operating domain."""


def _matvec(matrix: Tensor, x: Tensor) -> Tensor:
    return (matrix @ x.unsqueeze(-1)).squeeze(-1)


def _constant(q: Tensor, value: Tensor) -> Tensor:
    """``value`` broadcast over the batch dimensions of ``q``."""
    return value.expand(*q.shape[:-1], *value.shape)


class Plant(MechanicalStructure):
    """Analytic mechanical system used as data source and oracle."""

    name: str = "plant"
    experimental: bool = False

    def parameters(self) -> dict[str, float]:
        """Physical parameter record."""
        return {}

    def configuration_scale(self) -> Tensor:
        """Typical magnitude of each coordinate, used to sample initial states."""
        return torch.ones(self.n, dtype=DTYPE)

    def check_domain(self, q: Tensor) -> None:
        """Raise :class:`PlantDomainError` outside the operating domain."""

    def coriolis_matrix(self, q: Tensor, qd: Tensor) -> Tensor:
        """Christoffel-symbol matrix C(q, q̇) built from the mass jacobian."""
        dm = self.mass_jacobian(q)
        return 0.5 * (
            torch.einsum("...ijk,...k->...ij", dm, qd)
            + torch.einsum("...ikj,...k->...ij", dm, qd)
            - torch.einsum("...jki,...k->...ij", dm, qd)
        )

    def energy(self, q: Tensor, qd: Tensor) -> Tensor:
        kinetic = 0.5 * torch.einsum("...i,...ij,...j->...", qd, self.mass_matrix(q), qd)
        return kinetic + self.potential(q)


class DampedPendulum(Plant):
    """Single pendulum, angle measured from the hanging position."""

    name = "damped_pendulum"

    def __init__(
        self,
        mass: float = 1.0,
        length: float = 1.0,
        damping: float = 0.1,
        actuation: float = 2.0,
        gravity: float = GRAVITY,
    ):
        self.mass = mass
        self.length = length
        self.damping = damping
        self.actuation = actuation
        self.gravity = gravity

    @property
    def n(self) -> int:
        return 1

    @property
    def m_u(self) -> int:
        return 1

    def parameters(self) -> dict[str, float]:
        return {
            "mass": self.mass,
            "length": self.length,
            "damping": self.damping,
            "actuation": self.actuation,
            "gravity": self.gravity,
        }

    def mass_matrix(self, q: Tensor) -> Tensor:
        return _constant(q, as_tensor([[self.mass * self.length**2]]))

    def mass_jacobian(self, q: Tensor) -> Tensor:
        return q.new_zeros(*q.shape[:-1], 1, 1, 1)

    def potential(self, q: Tensor) -> Tensor:
        return self.mass * self.gravity * self.length * (1.0 - torch.cos(q[..., 0]))

    def potential_grad(self, q: Tensor) -> Tensor:
        return self.mass * self.gravity * self.length * torch.sin(q)

    def damping_matrix(self, q: Tensor) -> Tensor:
        return _constant(q, as_tensor([[self.damping]]))

    def input_matrix(self, q: Tensor) -> Tensor:
        return _constant(q, as_tensor([[self.actuation]]))

    def coriolis_matrix(self, q: Tensor, qd: Tensor) -> Tensor:
        return q.new_zeros(*q.shape[:-1], 1, 1)


class TwoLinkArm(Plant):
    """Planar 2R arm with uniform links; angles measured from the downward vertical."""

    name = "two_link_arm"

    def __init__(
        self,
        masses: tuple[float, float] = (1.0, 1.0),
        lengths: tuple[float, float] = (1.0, 1.0),
        damping: tuple[float, float] = (0.1, 0.1),
        input_matrix: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.5, 1.0)),
        gravity: float = GRAVITY,
    ):
        self.m1, self.m2 = masses
        self.l1, self.l2 = lengths
        self.lc1, self.lc2 = self.l1 / 2.0, self.l2 / 2.0
        self.i1 = self.m1 * self.l1**2 / 12.0
        self.i2 = self.m2 * self.l2**2 / 12.0
        self.damping = as_tensor(damping)
        self.actuation = as_tensor(input_matrix)
        self.gravity = gravity

    @property
    def n(self) -> int:
        return 2

    @property
    def m_u(self) -> int:
        return 2

    def parameters(self) -> dict[str, float]:
        return {
            "m1": self.m1,
            "m2": self.m2,
            "l1": self.l1,
            "l2": self.l2,
            "gravity": self.gravity,
        }

    def _h(self, q: Tensor) -> Tensor:
        return -self.m2 * self.l1 * self.lc2 * torch.sin(q[..., 1])

    def mass_matrix(self, q: Tensor) -> Tensor:
        c2 = torch.cos(q[..., 1])
        m22 = torch.full_like(c2, self.m2 * self.lc2**2 + self.i2)
        m12 = self.m2 * (self.lc2**2 + self.l1 * self.lc2 * c2) + self.i2
        m11 = (
            self.m1 * self.lc1**2
            + self.m2 * (self.l1**2 + self.lc2**2 + 2.0 * self.l1 * self.lc2 * c2)
            + self.i1
            + self.i2
        )
        return torch.stack([torch.stack([m11, m12], -1), torch.stack([m12, m22], -1)], -2)

    def mass_jacobian(self, q: Tensor) -> Tensor:
        h = self._h(q)
        dm = q.new_zeros(*q.shape[:-1], 2, 2, 2)
        dm[..., 0, 0, 1] = 2.0 * h
        dm[..., 0, 1, 1] = h
        dm[..., 1, 0, 1] = h
        return dm

    def potential(self, q: Tensor) -> Tensor:
        q1, q12 = q[..., 0], q[..., 0] + q[..., 1]
        g = self.gravity
        return (
            (self.m1 * self.lc1 + self.m2 * self.l1) * g * (1.0 - torch.cos(q1))
            + self.m2 * self.lc2 * g * (1.0 - torch.cos(q12))
        )

    def potential_grad(self, q: Tensor) -> Tensor:
        q1, q12 = q[..., 0], q[..., 0] + q[..., 1]
        g = self.gravity
        g2 = self.m2 * self.lc2 * g * torch.sin(q12)
        g1 = (self.m1 * self.lc1 + self.m2 * self.l1) * g * torch.sin(q1) + g2
        return torch.stack([g1, g2], -1)

    def damping_matrix(self, q: Tensor) -> Tensor:
        return _constant(q, torch.diag(self.damping))

    def input_matrix(self, q: Tensor) -> Tensor:
        return _constant(q, self.actuation)

    def coriolis_matrix(self, q: Tensor, qd: Tensor) -> Tensor:
        h = self._h(q)
        qd1, qd2 = qd[..., 0], qd[..., 1]
        row1 = torch.stack([h * qd2, h * (qd1 + qd2)], -1)
        row2 = torch.stack([-h * qd1, torch.zeros_like(h)], -1)
        return torch.stack([row1, row2], -2)


class PccParameters(BaseModel):
    """Physical parameters of one tendon-driven constant-curvature segment."""

    model_config = ConfigDict(frozen=True)

    rest_length: float = 0.2
    radius: float = 0.02
    tip_mass: float = 0.1
    bending_stiffness: float = 200.0
    axial_stiffness: float = 500.0
    damping: float = 0.1
    disks: int = 5
    max_bend: float = 0.9 * math.pi
    min_length_ratio: float = 0.5
    mass_regularization: float = 1e-4
    gravity: float = GRAVITY


def _even_series(s: Tensor, exact: Callable[[Tensor], Tensor], taylor: Callable[[Tensor], Tensor]) -> Tensor:
    """Smooth function of θ² with a series branch near θ = 0."""
    threshold = 1e-4
    small = s < threshold
    s_safe = torch.where(small, torch.full_like(s, threshold), s)
    return torch.where(small, taylor(s), exact(s_safe))


def sinc_of_square(s: Tensor) -> Tensor:
    """sin(θ)/θ as a function of s = θ²."""
    return _even_series(
        s,
        lambda x: torch.sin(torch.sqrt(x)) / torch.sqrt(x),
        lambda x: 1.0 - x / 6.0 + x**2 / 120.0 - x**3 / 5040.0,
    )


def versine_of_square(s: Tensor) -> Tensor:
    """(1 − cos θ)/θ² as a function of s = θ²."""
    return _even_series(
        s,
        lambda x: (1.0 - torch.cos(torch.sqrt(x))) / x,
        lambda x: 0.5 - x / 24.0 + x**2 / 720.0 - x**3 / 40320.0,
    )


def _skew(w: Tensor) -> Tensor:
    zero = torch.zeros_like(w[..., 0])
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    return torch.stack(
        [
            torch.stack([zero, -wz, wy], -1),
            torch.stack([wz, zero, -wx], -1),
            torch.stack([-wy, wx, zero], -1),
        ],
        -2,
    )


class PccChain(Plant):
    """Tendon-driven soft arm of constant-curvature segments.

    Each segment has coordinates (Δx, Δy, δℓ): Δx and Δy are the arc-length
    differences of the bending planes at the routing radius d, so the bend angle
    is θ = √(Δx² + Δy²)/d, and δℓ is the elongation. Planar chains drop Δy.
    The arm hangs along +z with gravity pointing along +z; a point mass sits at
    every segment tip.

    Tendons run through ``disks`` spacer disks as straight chords. A tendon at
    angle σ has length g(θ)·(ℓ − (Δx cos σ + Δy sin σ)) with the chord factor
    g(θ) = sin(θ/2k)/(θ/2k); the input matrix is the negative transposed
    jacobian of the tendon lengths. Tendons of a distal segment also run
    through every proximal segment.
    """

    def __init__(
        self,
        name: str,
        segments: int = 1,
        planar: bool = False,
        params: Optional[PccParameters] = None,
        experimental: bool = False,
    ):
        self.name = name
        self.segments = segments
        self.planar = planar
        self.params = params or PccParameters()
        self.experimental = experimental
        self.dof = 2 if planar else 3
        if planar:
            self.tendon_angles = [0.0, math.pi]
        else:
            self.tendon_angles = [0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0]
        # distal tendons are rotated so that they do not share holes with proximal ones
        self.segment_offsets = [
            j * (math.pi / len(self.tendon_angles) if not planar else 0.0) for j in range(segments)
        ]
        p = self.params
        per_segment = [p.bending_stiffness, p.axial_stiffness] if planar else [
            p.bending_stiffness,
            p.bending_stiffness,
            p.axial_stiffness,
        ]
        self.stiffness = as_tensor(per_segment * segments)

    @property
    def n(self) -> int:
        return self.dof * self.segments

    @property
    def m_u(self) -> int:
        return len(self.tendon_angles) * self.segments

    def parameters(self) -> dict[str, float]:
        return self.params.model_dump()

    def configuration_scale(self) -> Tensor:
        p = self.params
        per_segment = [p.radius, 0.1 * p.rest_length] if self.planar else [
            p.radius,
            p.radius,
            0.1 * p.rest_length,
        ]
        return as_tensor(per_segment * self.segments)

    def _segment_coords(self, q: Tensor, j: int) -> tuple[Tensor, Tensor, Tensor]:
        block = q[..., j * self.dof : (j + 1) * self.dof]
        if self.planar:
            return block[..., 0], torch.zeros_like(block[..., 0]), block[..., 1]
        return block[..., 0], block[..., 1], block[..., 2]

    def _bend_square(self, dx: Tensor, dy: Tensor) -> Tensor:
        return (dx**2 + dy**2) / self.params.radius**2

    def bend_angles(self, q: Tensor) -> Tensor:
        """θ of every segment, shape ``(..., segments)``."""
        return torch.stack(
            [torch.sqrt(self._bend_square(*self._segment_coords(q, j)[:2])) for j in range(self.segments)],
            -1,
        )

    def check_domain(self, q: Tensor) -> None:
        q = q.detach()
        theta = self.bend_angles(q)
        if bool((theta > self.params.max_bend).any()):
            raise PlantDomainError(
                "Segment bend exceeds the operating domain",
                plant=self.name,
                max_bend=float(theta.max()),
                limit=self.params.max_bend,
            )
        lengths = torch.stack(
            [self.params.rest_length + self._segment_coords(q, j)[2] for j in range(self.segments)], -1
        )
        if bool((lengths < self.params.min_length_ratio * self.params.rest_length).any()):
            raise PlantDomainError(
                "Segment length below the operating domain", plant=self.name, min_length=float(lengths.min())
            )

    def _segment_frame(self, dx: Tensor, dy: Tensor, dl: Tensor) -> tuple[Tensor, Tensor]:
        """Tip position and orientation of one segment in its base frame."""
        d = self.params.radius
        s = self._bend_square(dx, dy)
        length = self.params.rest_length + dl
        f1, f2 = versine_of_square(s), sinc_of_square(s)
        tip = torch.stack([length * f1 * dx / d, length * f1 * dy / d, length * f2], -1)
        w = _skew(torch.stack([-dy / d, dx / d, torch.zeros_like(dx)], -1))
        eye = torch.eye(3, dtype=DTYPE).expand(w.shape)
        rotation = eye + f2[..., None, None] * w + f1[..., None, None] * (w @ w)
        return tip, rotation

    def tip_positions(self, q: Tensor) -> Tensor:
        """Base-frame positions of the segment tips, shape ``(..., segments, 3)``."""
        position = q.new_zeros(*q.shape[:-1], 3)
        rotation = torch.eye(3, dtype=DTYPE).expand(*q.shape[:-1], 3, 3)
        tips = []
        for j in range(self.segments):
            tip, local_rotation = self._segment_frame(*self._segment_coords(q, j))
            position = position + _matvec(rotation, tip)
            rotation = rotation @ local_rotation
            tips.append(position)
        return torch.stack(tips, -2)

    def tendon_lengths(self, q: Tensor) -> Tensor:
        k = self.params.disks
        per_segment = []
        for j in range(self.segments):
            dx, dy, dl = self._segment_coords(q, j)
            chord = sinc_of_square(self._bend_square(dx, dy) / (4.0 * k**2))
            length = self.params.rest_length + dl
            per_segment.append((chord, length, dx, dy))
        lengths = []
        for owner in range(self.segments):
            offset = self.segment_offsets[owner]
            for sigma in self.tendon_angles:
                total = 0.0
                for chord, length, dx, dy in per_segment[: owner + 1]:
                    shift = dx * math.cos(sigma + offset) + dy * math.sin(sigma + offset)
                    total = total + chord * (length - shift)
                lengths.append(total)
        return torch.stack(lengths, -1)

    def mass_matrix(self, q: Tensor) -> Tensor:
        check_last_dim(q, self.n, "q")
        self.check_domain(q)
        _, jacobian = batch_jacobian(lambda z: self.tip_positions(z).flatten(-2), q)
        eye = torch.eye(self.n, dtype=DTYPE)
        return self.params.tip_mass * (jacobian.transpose(-1, -2) @ jacobian) + self.params.mass_regularization * eye

    def potential(self, q: Tensor) -> Tensor:
        heights = self.tip_positions(q)[..., 2]
        gravity = -self.params.tip_mass * self.params.gravity * heights.sum(-1)
        return gravity + 0.5 * (self.stiffness * q**2).sum(-1)

    def damping_matrix(self, q: Tensor) -> Tensor:
        return _constant(q, self.params.damping * torch.eye(self.n, dtype=DTYPE))

    def input_matrix(self, q: Tensor) -> Tensor:
        _, jacobian = batch_jacobian(self.tendon_lengths, q)
        return -jacobian.transpose(-1, -2)


class PlantRegistry:
    """Registry of plant factories by name."""

    def __init__(self):
        self._factories: dict[str, Callable[[], Plant]] = {}

    def register(self, name: str, factory: Callable[[], Plant]) -> None:
        self._factories[name] = factory
        logger.debug("Registered plant", plant=name)

    def get(self, name: str) -> Plant:
        if name not in self._factories:
            raise UnknownPlantError(f"Unknown plant: {name}", plant=name, available=self.list_all())
        return self._factories[name]()

    def list_all(self) -> list[str]:
        return list(self._factories)


plant_registry = PlantRegistry()
plant_registry.register("damped_pendulum", DampedPendulum)
plant_registry.register("two_link_arm", TwoLinkArm)
plant_registry.register("pcc_segment_planar", lambda: PccChain("pcc_segment_planar", planar=True))
plant_registry.register("pcc_segment_spatial", lambda: PccChain("pcc_segment_spatial"))
plant_registry.register(
    "pcc_two_segment_spatial",
    lambda: PccChain("pcc_two_segment_spatial", segments=2, experimental=True),
)


def builtin_plants(include_experimental: bool = True) -> dict[str, Plant]:
    """Fresh instances of every registered plant."""
    plants = {name: plant_registry.get(name) for name in plant_registry.list_all()}
    if include_experimental:
        return plants
    return {name: plant for name, plant in plants.items() if not plant.experimental}


def get_plant(name: str) -> Plant:
    return plant_registry.get(name)


def plant_forward_dynamics(plant: Plant, q: Tensor, qd: Tensor, u: Tensor) -> Tensor:
    """q̈ = M⁻¹ (A u − C q̇ − G − D q̇) from the plant's closed forms."""
    q, qd, u = as_tensor(q), as_tensor(qd), as_tensor(u)
    check_last_dim(q, plant.n, "q")
    check_last_dim(qd, plant.n, "qd")
    check_last_dim(u, plant.m_u, "u")
    plant.check_domain(q)
    forces = (
        _matvec(plant.input_matrix(q), u)
        - _matvec(plant.coriolis_matrix(q, qd), qd)
        - plant.potential_grad(q)
        - _matvec(plant.damping_matrix(q), qd)
    )
    return mass_solve(plant.mass_matrix(q), forces)


def plant_field(plant: Plant):
    """State derivative of x = (q, q̇) under the plant dynamics."""
    n = plant.n

    def field(x: Tensor, u: Tensor) -> Tensor:
        q, qd = x[..., :n], x[..., n:]
        return torch.cat([qd, plant_forward_dynamics(plant, q, qd, u)], dim=-1)

    return field


def signal_value(signal: InputSignal, t: float, m_u: int) -> Tensor:
    """Value of an excitation signal at time ``t``."""
    amplitude = as_tensor(signal.amplitude or [0.0])
    if amplitude.numel() not in (1, m_u):
        raise DimensionMismatchError(
            "Signal amplitude must have one entry or one per input",
            expected=m_u,
            length=amplitude.numel(),
        )
    amplitude = amplitude.expand(m_u)
    if signal.kind == "zero":
        return torch.zeros(m_u, dtype=DTYPE)
    if signal.kind == "step":
        return amplitude * (1.0 if t >= signal.phase else 0.0)
    if signal.kind == "chirp":
        f0 = signal.frequency
        f1 = signal.frequency_end if signal.frequency_end is not None else f0
        angle = 2.0 * math.pi * (f0 * t + 0.5 * (f1 - f0) * t**2 / signal.duration) + signal.phase
        return amplitude * math.sin(angle)
    return amplitude * math.sin(2.0 * math.pi * signal.frequency * t + signal.phase)


@dataclass
class Trajectory:
    """Sampled ground-truth trajectory."""

    trajectory_id: int
    t: Tensor
    q: Tensor
    qd: Tensor
    u: Tensor
    p: Optional[Tensor] = None


@dataclass
class GenerationResult:
    """Datasets and raw trajectories per sampling rate, plus failed trajectories."""

    datasets: dict[float, TransitionDataset] = field(default_factory=dict)
    trajectories: dict[float, list[Trajectory]] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)


def _initial_states(spec: GenSpec, plant: Plant, generator: torch.Generator) -> Tensor:
    if spec.initial_states:
        states = as_tensor(spec.initial_states)
        check_last_dim(states, 2 * plant.n, "initial_states")
        return states
    scale = plant.configuration_scale().repeat(2) * spec.state_scale
    draws = torch.rand(spec.n_initial_states, 2 * plant.n, generator=generator, dtype=DTYPE)
    return (2.0 * draws - 1.0) * scale


def _signals(spec: GenSpec, plant: Plant, generator: torch.Generator) -> list[InputSignal]:
    if spec.signals:
        return list(spec.signals)
    signals = []
    for _ in range(spec.n_signals):
        draws = torch.rand(plant.m_u + 2, generator=generator, dtype=DTYPE).tolist()
        signals.append(
            InputSignal(
                kind="sinusoid",
                amplitude=[spec.input_amplitude * (2.0 * a - 1.0) for a in draws[: plant.m_u]],
                frequency=0.1 + 1.9 * draws[-2],
                phase=2.0 * math.pi * draws[-1],
                duration=spec.duration,
            )
        )
    return signals


def _input_schedule(spec: GenSpec, signals: list[InputSignal], states: int, m_u: int, steps: int) -> Tensor:
    """Inputs per fine step for every (state, signal) pair, shape ``(steps, B, m_u)``."""
    hold = spec.decimation(spec.input_hold_hz or min(spec.resample_hz))
    rows = []
    for k in range(steps):
        t = (k - k % hold) * spec.fine_dt
        per_signal = torch.stack([signal_value(s, t, m_u) for s in signals])
        rows.append(per_signal.repeat(states, 1))
    return torch.stack(rows)


def _noise_std(spec: GenSpec, n: int) -> Tensor:
    if isinstance(spec.noise_std, list):
        std = as_tensor(spec.noise_std)
        if std.numel() != 2 * n:
            raise DimensionMismatchError("noise_std needs one entry per state channel", expected=2 * n)
        return std
    return torch.full((2 * n,), float(spec.noise_std), dtype=DTYPE)


def _simulate(plant: Plant, x0: Tensor, inputs: Tensor, config: RolloutConfig) -> Tensor:
    with torch.no_grad():
        return rollout(plant_field(plant), x0, inputs, config)


def generate_dataset(spec: GenSpec) -> GenerationResult:
    """Simulate every initial state against every input signal and resample.

    Trajectories are integrated together at ``spec.fine_dt``; if the batch fails
    they are repeated one by one so that only the failing ones are dropped.
    """
    plant = get_plant(spec.plant)
    generator = torch.Generator().manual_seed(spec.seed)
    x0 = _initial_states(spec, plant, generator)
    signals = _signals(spec, plant, generator)
    n_states, n_signals = x0.shape[0], len(signals)
    steps = int(round(spec.duration / spec.fine_dt))
    n = plant.n

    logger.info(
        "Dataset generation started",
        plant=plant.name,
        kind=spec.kind,
        initial_states=n_states,
        signals=n_signals,
        steps=steps,
        rates=spec.resample_hz,
    )

    batch_x0 = x0.repeat_interleave(n_signals, dim=0)
    inputs = _input_schedule(spec, signals, n_states, plant.m_u, steps)
    config = RolloutConfig(dt=spec.fine_dt, horizon=steps)

    result = GenerationResult()
    ok = list(range(batch_x0.shape[0]))
    try:
        states = _simulate(plant, batch_x0, inputs, config)
    except DynLearnError:
        states_list = []
        ok = []
        for i in range(batch_x0.shape[0]):
            try:
                states_list.append(_simulate(plant, batch_x0[i], inputs[:, i], config))
                ok.append(i)
            except (IntegrationError, PlantDomainError) as exc:
                result.failures.append({"trajectory_id": i, **exc.to_dict()})
                record_trajectory(plant.name, success=False)
                logger.warning("Trajectory failed", plant=plant.name, trajectory_id=i, error=exc.message)
        if not ok:
            return result
        states = torch.stack(states_list, dim=1)
        inputs = inputs[:, ok]
    for _ in ok:
        record_trajectory(plant.name)

    noise_generator = torch.Generator().manual_seed(spec.seed + 1)
    std = _noise_std(spec, n)
    for rate in spec.resample_hz:
        decimation = spec.decimation(rate)
        index = torch.arange(0, steps + 1, decimation)
        sampled = states[index]
        sampled_u = inputs[index[index < steps]]
        dt = decimation * spec.fine_dt
        q, qd = sampled[..., :n], sampled[..., n:]
        p = None
        if spec.kind == "hnn":
            with torch.no_grad():
                p = _matvec(plant.mass_matrix(q), qd)
        v = p if p is not None else qd
        clean = torch.cat([q, v], dim=-1)
        if bool((std > 0).any()):
            clean = clean + std * torch.randn(clean.shape, generator=noise_generator, dtype=DTYPE)
        if spec.smoothing_window and spec.smoothing_window > 1:
            clean = as_tensor(
                uniform_filter1d(clean.numpy(), size=spec.smoothing_window, axis=0, mode="nearest")
            )
        measured_q, measured_v = clean[..., :n], clean[..., n:]
        t = index.to(DTYPE) * spec.fine_dt

        rows = []
        trajectories = []
        for column, trajectory_id in enumerate(ok):
            rows.append((trajectory_id, measured_q[:, column], measured_v[:, column], sampled_u[:, column]))
            trajectories.append(
                Trajectory(
                    trajectory_id=trajectory_id,
                    t=t,
                    q=q[:, column],
                    qd=qd[:, column],
                    u=sampled_u[:, column],
                    p=None if p is None else p[:, column],
                )
            )
        result.datasets[rate] = TransitionDataset.from_trajectories(
            spec.kind, rows, dt=dt, plant=plant.name, sample_hz=rate
        )
        result.trajectories[rate] = trajectories

    logger.info(
        "Dataset generation finished",
        plant=plant.name,
        trajectories=len(ok),
        failures=len(result.failures),
        samples={str(rate): len(ds) for rate, ds in result.datasets.items()},
    )
    return result


def sample_configurations(plant: Plant, count: int, seed: int, scale: float = 1.0) -> Tensor:
    """Uniform random configurations within ``scale`` times the plant's typical range."""
    generator = torch.Generator().manual_seed(seed)
    draws = torch.rand(count, plant.n, generator=generator, dtype=DTYPE)
    return (2.0 * draws - 1.0) * plant.configuration_scale() * scale


def trajectory_array(trajectory: Trajectory) -> np.ndarray:
    """Rows ``t, q*, qd*, u*`` (+ ``p*``) with the last input repeated."""
    u = trajectory.u
    if u.shape[0] < trajectory.t.shape[0]:
        u = torch.cat([u, u[-1:]]) if u.shape[0] else torch.zeros(trajectory.t.shape[0], 0, dtype=DTYPE)
    columns = [trajectory.t[:, None], trajectory.q, trajectory.qd, u]
    if trajectory.p is not None:
        columns.append(trajectory.p)
    return torch.cat(columns, dim=-1).numpy()
