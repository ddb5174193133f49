"""Unit tests for ground-truth plants and dataset generation."""

import math

import pytest
import torch

from dynlearn.models import GenSpec, InputSignal, RolloutConfig
from dynlearn.services.integrators import rollout
from dynlearn.services.numcore import DTYPE
from dynlearn.services.physnets import MechanicalStructure
from dynlearn.services.plants import (
    PccChain,
    Plant,
    PlantDomainError,
    TwoLinkArm,
    UnknownPlantError,
    builtin_plants,
    generate_dataset,
    get_plant,
    plant_field,
    plant_forward_dynamics,
    sample_configurations,
    signal_value,
    sinc_of_square,
    versine_of_square,
)


def t(values) -> torch.Tensor:
    return torch.tensor(values, dtype=DTYPE)


class TestRegistry:
    """Tests for the plant registry."""

    def test_builtin_names(self):
        """Test that every built-in plant is registered."""
        assert set(builtin_plants()) == {
            "damped_pendulum",
            "two_link_arm",
            "pcc_segment_planar",
            "pcc_segment_spatial",
            "pcc_two_segment_spatial",
        }

    def test_experimental_plants_can_be_excluded(self):
        """Test that the two-segment arm is flagged experimental."""
        assert "pcc_two_segment_spatial" not in builtin_plants(include_experimental=False)

    def test_unknown_plant(self):
        """Test that an unknown name raises UnknownPlantError listing the choices."""
        with pytest.raises(UnknownPlantError) as excinfo:
            get_plant("triple_pendulum")
        assert "damped_pendulum" in excinfo.value.details["available"]

    @pytest.mark.parametrize(
        ("name", "n", "m_u"),
        [
            ("damped_pendulum", 1, 1),
            ("two_link_arm", 2, 2),
            ("pcc_segment_planar", 2, 2),
            ("pcc_segment_spatial", 3, 3),
            ("pcc_two_segment_spatial", 6, 6),
        ],
    )
    def test_dimensions(self, name, n, m_u):
        """Test the configuration and input dimension of each plant."""
        plant = get_plant(name)
        assert (plant.n, plant.m_u) == (n, m_u)


class TestPendulum:
    """Tests for the damped pendulum."""

    def test_hanging_equilibrium(self, pendulum):
        """Test that the hanging pendulum at rest stays at rest."""
        qdd = plant_forward_dynamics(pendulum, t([0.0]), t([0.0]), t([0.0]))
        assert qdd.item() == 0.0

    def test_horizontal_acceleration(self, pendulum):
        """Test that q = π/2 gives q̈ = −g for unit mass and length."""
        qdd = plant_forward_dynamics(pendulum, t([math.pi / 2]), t([0.0]), t([0.0]))
        assert qdd.item() == pytest.approx(-9.81)


class TestTwoLinkArm:
    """Tests for the planar two-link arm."""

    def test_analytic_mass_jacobian(self, arm):
        """Test that the closed-form dM/dq matches autograd."""
        q = t([[0.3, 1.2], [-0.8, -0.4]])
        assert torch.allclose(arm.mass_jacobian(q), MechanicalStructure.mass_jacobian(arm, q), atol=1e-12)

    def test_analytic_potential_gradient(self, arm):
        """Test that the closed-form G matches autograd."""
        q = t([[0.3, 1.2], [-0.8, -0.4]])
        assert torch.allclose(arm.potential_grad(q), MechanicalStructure.potential_grad(arm, q), atol=1e-12)

    def test_analytic_coriolis_matrix(self, arm):
        """Test that the closed-form C equals the Christoffel construction."""
        q, qd = t([0.5, -0.9]), t([1.1, 0.6])
        assert torch.allclose(arm.coriolis_matrix(q, qd), Plant.coriolis_matrix(arm, q, qd), atol=1e-12)

    def test_skew_symmetry(self, arm):
        """Test that Ṁ − 2C is skew-symmetric."""
        q, qd = t([0.2, 0.7]), t([-0.4, 1.3])
        m_dot = torch.einsum("ijk,k->ij", arm.mass_jacobian(q), qd)
        n_matrix = m_dot - 2 * arm.coriolis_matrix(q, qd)
        assert torch.allclose(n_matrix, -n_matrix.T, atol=1e-12)

    def test_energy_is_conserved_without_damping(self):
        """Test that when damping and input vanish, the total energy stays constant."""
        arm = TwoLinkArm(damping=(0.0, 0.0))
        x0 = t([0.8, -0.5, 0.0, 0.3])
        with torch.no_grad():
            states = rollout(plant_field(arm), x0, torch.zeros(1000, 2, dtype=DTYPE), RolloutConfig(dt=1e-3, horizon=1000))
        energy = arm.energy(states[:, :2], states[:, 2:])
        assert float((energy - energy[0]).abs().max()) < 1e-8


class TestPccChain:
    """Tests for the constant-curvature soft arms."""

    def test_series_near_zero(self):
        """Test that the chord series are accurate at and near zero bend."""
        assert sinc_of_square(t([0.0])).item() == 1.0
        assert versine_of_square(t([0.0])).item() == 0.5
        s = t([1e-3])
        theta = math.sqrt(1e-3)
        assert sinc_of_square(s).item() == pytest.approx(math.sin(theta) / theta, rel=1e-14)
        assert versine_of_square(s).item() == pytest.approx((1 - math.cos(theta)) / theta**2, rel=1e-9)

    def test_straight_arm_hangs_at_rest_length(self):
        """Test that q = 0 places the tip at the rest length below the base."""
        plant = get_plant("pcc_segment_spatial")
        tip = plant.tip_positions(torch.zeros(3, dtype=DTYPE))
        assert torch.allclose(tip, t([[0.0, 0.0, plant.params.rest_length]]), atol=1e-15)

    def test_constant_damping(self):
        """Test that D = 0.1 I."""
        plant = get_plant("pcc_segment_planar")
        assert torch.equal(plant.damping_matrix(t([0.01, 0.0])), 0.1 * torch.eye(2, dtype=DTYPE))

    def test_spatial_input_matrix_is_invertible(self):
        """Test that the spatial segment has a full-rank square input matrix."""
        plant = get_plant("pcc_segment_spatial")
        for q in sample_configurations(plant, 5, seed=1, scale=0.5):
            singular = torch.linalg.svdvals(plant.input_matrix(q))
            assert float(singular[-1]) > 1e-6 * float(singular[0])

    def test_tension_does_work_when_tendons_shorten(self):
        """Test that the input power (A u)·q̇ equals u times the tendon shortening rate."""
        plant = get_plant("pcc_segment_planar")
        q, qd = t([0.01, 0.005]), t([1.0, -0.5])
        u = torch.arange(1.0, plant.m_u + 1.0, dtype=DTYPE)
        h = 1e-4
        lengthening = (plant.tendon_lengths(q + h * qd) - plant.tendon_lengths(q - h * qd)) / (2 * h)
        power = plant.input_matrix(q) @ u @ qd
        assert power.item() == pytest.approx(-(u @ lengthening).item(), rel=1e-6, abs=1e-12)

    def test_mass_is_positive_definite(self):
        """Test that M(q) of the planar segment is symmetric positive definite."""
        plant = get_plant("pcc_segment_planar")
        for q in sample_configurations(plant, 5, seed=2):
            mass = plant.mass_matrix(q)
            assert torch.allclose(mass, mass.T)
            assert float(torch.linalg.eigvalsh(mass)[0]) > 0

    def test_planar_skew_symmetry(self):
        """Test that Ṁ − 2C is skew-symmetric for the soft segment."""
        plant = get_plant("pcc_segment_planar")
        q, qd = t([0.01, 0.005]), t([0.02, -0.01])
        m_dot = torch.einsum("ijk,k->ij", plant.mass_jacobian(q), qd)
        n_matrix = m_dot - 2 * plant.coriolis_matrix(q, qd)
        assert torch.allclose(n_matrix, -n_matrix.T, atol=1e-10)

    def test_domain_is_enforced(self):
        """Test that when the bend exceeds the limit, the plant refuses to evaluate M."""
        plant = PccChain("planar", planar=True)
        with pytest.raises(PlantDomainError):
            plant.mass_matrix(t([0.07, 0.0]))


class TestSignals:
    """Tests for excitation signals."""

    def test_step_onset(self):
        """Test that a step switches on at its onset time."""
        signal = InputSignal(kind="step", amplitude=[2.0], phase=0.5)
        assert signal_value(signal, 0.4, 1).item() == 0.0
        assert signal_value(signal, 0.5, 1).item() == 2.0

    def test_scalar_amplitude_broadcasts(self):
        """Test that one amplitude drives every input channel."""
        signal = InputSignal(kind="sinusoid", amplitude=[1.0], frequency=0.25)
        assert torch.allclose(signal_value(signal, 1.0, 3), torch.ones(3, dtype=DTYPE))

    def test_zero_signal(self):
        """Test that the zero signal is zero."""
        assert torch.equal(signal_value(InputSignal(kind="zero"), 3.0, 2), torch.zeros(2, dtype=DTYPE))


class TestGenerateDataset:
    """Tests for simulated dataset generation."""

    def test_grid_of_states_and_signals(self, pendulum_spec):
        """Test that every initial state is paired with every signal."""
        result = generate_dataset(pendulum_spec)
        dataset = result.datasets[100.0]
        assert dataset.trajectory_ids() == list(range(8))
        assert len(dataset) == 8 * 100
        assert torch.allclose(dataset.dt, torch.full((800,), 0.01, dtype=DTYPE))
        assert not result.failures

    def test_labels_are_the_next_sample(self, pendulum_data):
        """Test that without noise each label equals the next sample of its trajectory."""
        part = pendulum_data.select_trajectories([3])
        assert torch.equal(part.next_q[:-1], part.q[1:])
        assert torch.equal(part.next_v[:-1], part.v[1:])

    def test_generation_is_deterministic(self, pendulum_spec):
        """Test that the same seed generates identical data."""
        first = generate_dataset(pendulum_spec).datasets[100.0]
        second = generate_dataset(pendulum_spec).datasets[100.0]
        assert torch.equal(first.q, second.q)
        assert torch.equal(first.u, second.u)

    def test_several_rates(self, pendulum_spec):
        """Test that each resample rate produces its own dataset."""
        spec = pendulum_spec.model_copy(update={"resample_hz": [100.0, 50.0]})
        result = generate_dataset(spec)
        assert set(result.datasets) == {100.0, 50.0}
        assert len(result.datasets[50.0]) == 8 * 50
        assert float(result.datasets[50.0].dt[0]) == pytest.approx(0.02)

    def test_hamiltonian_coordinates(self, pendulum_spec):
        """Test that an hnn dataset stores p = M q̇ (M = 1 for the unit pendulum)."""
        spec = pendulum_spec.model_copy(update={"kind": "hnn"})
        lagrangian = generate_dataset(pendulum_spec).datasets[100.0]
        hamiltonian = generate_dataset(spec).datasets[100.0]
        assert hamiltonian.kind == "hnn"
        assert torch.allclose(hamiltonian.v, lagrangian.v)

    def test_noise_changes_measurements_only(self, pendulum_spec):
        """Test that measurement noise perturbs the dataset but not the raw trajectories."""
        noisy = generate_dataset(pendulum_spec.model_copy(update={"noise_std": 0.01}))
        clean = generate_dataset(pendulum_spec)
        assert not torch.equal(noisy.datasets[100.0].q, clean.datasets[100.0].q)
        assert torch.equal(noisy.trajectories[100.0][0].q, clean.trajectories[100.0][0].q)

    def test_inputs_are_held_between_updates(self, pendulum_spec):
        """Test that inputs change only at the hold rate."""
        spec = pendulum_spec.model_copy(update={"input_hold_hz": 20.0})
        dataset = generate_dataset(spec).datasets[100.0].select_trajectories([0])
        blocks = dataset.u[:100].reshape(20, 5)
        assert torch.equal(blocks, blocks[:, :1].expand(20, 5))

    def test_failing_trajectories_are_dropped(self):
        """Test that when one initial state leaves the plant domain, only that trajectory is lost."""
        spec = GenSpec(
            plant="pcc_segment_planar",
            initial_states=[[0.005, 0.0, 0.0, 0.0], [0.07, 0.0, 0.0, 0.0]],
            signals=[InputSignal(kind="zero")],
            duration=0.05,
            fine_dt=1e-3,
            resample_hz=[100.0],
        )
        result = generate_dataset(spec)
        assert [f["trajectory_id"] for f in result.failures] == [1]
        assert result.datasets[100.0].trajectory_ids() == [0]
