"""Pytest configuration and fixtures."""

from collections.abc import Callable
from typing import Optional

import pytest
import torch

from dynlearn.config import get_settings
from dynlearn.models import GenSpec, HeadsConfig, InputSignal
from dynlearn.services.numcore import DTYPE
from dynlearn.services.physnets import MechanicalStructure, build_structured_model
from dynlearn.services.plants import DampedPendulum, TwoLinkArm, generate_dataset

MatrixFn = Callable[[torch.Tensor], torch.Tensor]


class FixedStructure(MechanicalStructure):
    """Structure given by plain callables of q; derivatives come from autograd."""

    def __init__(
        self,
        n: int,
        m_u: int,
        mass: MatrixFn,
        potential: MatrixFn,
        damping: Optional[MatrixFn] = None,
        input_matrix: Optional[MatrixFn] = None,
    ):
        self._n = n
        self._m_u = m_u
        self._mass = mass
        self._potential = potential
        self._damping = damping or (lambda q: q.new_zeros(*q.shape[:-1], n, n))
        self._input = input_matrix or (
            lambda q: torch.eye(n, m_u, dtype=DTYPE).expand(*q.shape[:-1], n, m_u)
        )

    @property
    def n(self) -> int:
        return self._n

    @property
    def m_u(self) -> int:
        return self._m_u

    def mass_matrix(self, q):
        return self._mass(q)

    def potential(self, q):
        return self._potential(q)

    def damping_matrix(self, q):
        return self._damping(q)

    def input_matrix(self, q):
        return self._input(q)


def constant_matrix(value) -> MatrixFn:
    matrix = torch.as_tensor(value, dtype=DTYPE)
    return lambda q: matrix.expand(*q.shape[:-1], *matrix.shape)


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Every test sees settings built from its own environment."""
    for name in ("PLANT", "MODEL", "DT", "EPOCHS", "HIDDEN", "WINDOW", "GAINS", "SEED", "OUT"):
        monkeypatch.delenv(f"DYNLEARN_{name}", raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def structure_factory():
    """Build a :class:`FixedStructure` from callables."""
    return FixedStructure


@pytest.fixture
def constant():
    """Turn a fixed matrix into a batch-broadcasting callable of q."""
    return constant_matrix


@pytest.fixture
def pendulum():
    return DampedPendulum()


@pytest.fixture
def arm():
    return TwoLinkArm()


@pytest.fixture
def small_heads():
    """Narrow heads that keep autograd-heavy tests fast."""
    return HeadsConfig(
        mass_hidden=(8,),
        potential_hidden=(5,),
        damping_hidden=(4,),
        input_hidden=(4,),
        blackbox_hidden=(16, 16),
    )


@pytest.fixture
def small_model(small_heads):
    """Freshly initialized 1-DOF structured model."""
    return build_structured_model(1, 1, "lnn", small_heads, seed=3)


@pytest.fixture
def pendulum_spec():
    """Short pendulum generation plan: 4 initial states x 2 signals, 1 s at 100 Hz."""
    return GenSpec(
        plant="damped_pendulum",
        n_initial_states=4,
        n_signals=2,
        duration=1.0,
        fine_dt=1e-3,
        resample_hz=[100.0],
        seed=5,
    )


@pytest.fixture
def pendulum_data(pendulum_spec):
    return generate_dataset(pendulum_spec).datasets[100.0]


@pytest.fixture
def exact_pendulum_data():
    """Pendulum transitions sampled at the integration step, so one RK4 step reproduces them."""
    spec = GenSpec(
        plant="damped_pendulum",
        initial_states=[[0.3, 0.0], [-0.5, 0.4]],
        signals=[InputSignal(kind="sinusoid", amplitude=[0.5], frequency=1.0)],
        duration=0.2,
        fine_dt=0.01,
        resample_hz=[100.0],
    )
    return generate_dataset(spec).datasets[100.0]
