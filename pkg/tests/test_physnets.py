"""Unit tests for the structured heads."""

import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dynlearn.models import HeadsConfig, MlpSpec
from dynlearn.services.numcore import DTYPE, DimensionMismatchError, flatten_params, spd_eigenvalues
from dynlearn.services.physnets import (
    CholeskyHead,
    InputMatrixHead,
    MechanicalStructure,
    PotentialHead,
    build_structured_model,
    cholesky_assemble,
    lower_factor,
    tril_size,
)


def zeroed(module: torch.nn.Module) -> torch.nn.Module:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


class TestCholeskyAssembly:
    """Tests for building symmetric positive matrices from raw vectors."""

    def test_single_dof_example(self):
        """Test that raw 0 with eps 0.01 gives L ≈ 0.7031 and M = L² + eps² ≈ 0.49452."""
        raw = torch.zeros(1, dtype=DTYPE)
        factor = lower_factor(raw, 1, 0.01)
        assert factor.item() == pytest.approx(0.7031, abs=1e-4)
        assert cholesky_assemble(raw, 1, 0.01).item() == pytest.approx((math.log(2.0) + 0.01) ** 2 + 1e-4, rel=1e-12)
        assert cholesky_assemble(raw, 1, 0.01).item() == pytest.approx(0.49452, abs=1e-5)

    def test_large_diagonal_raw(self):
        """Test that when the diagonal raw entries are large and the rest zero, M is diagonal."""
        raw = torch.tensor([50.0, 60.0, 0.0], dtype=DTYPE)
        mass = cholesky_assemble(raw, 2, 0.01)
        assert mass[0, 1].item() == 0.0
        assert mass[0, 0].item() == pytest.approx((50.0 + 0.01) ** 2 + 1e-4)
        assert mass[1, 1].item() == pytest.approx((60.0 + 0.01) ** 2 + 1e-4)

    def test_off_diagonal_layout(self):
        """Test that the strict lower entries fill the factor below the diagonal."""
        n = 3
        raw = torch.zeros(tril_size(n), dtype=DTYPE)
        raw[n:] = torch.tensor([1.0, 2.0, 3.0], dtype=DTYPE)
        factor = lower_factor(raw, n, 0.0)
        assert torch.count_nonzero(torch.triu(factor, diagonal=1)) == 0
        assert sorted(factor[torch.tril_indices(n, n, -1).unbind()].tolist()) == [1.0, 2.0, 3.0]

    def test_bounded_diagonal(self):
        """Test that a sigmoid-bounded diagonal never exceeds scale + eps."""
        raw = torch.tensor([100.0, -100.0, 0.0], dtype=DTYPE)
        factor = lower_factor(raw, 2, 0.01, scale=3.5)
        assert float(factor.diagonal().max()) <= 3.5 + 0.01

    def test_zero_eps_allows_singular(self):
        """Test that when eps is zero the assembled matrix may be singular but stays PSD."""
        raw = torch.full((3,), -50.0, dtype=DTYPE)
        damping = cholesky_assemble(raw, 2, 0.0)
        assert float(spd_eigenvalues(damping)[0]) >= -1e-15

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-30.0, 30.0), min_size=6, max_size=6))
    def test_eigenvalue_floor(self, values):
        """Test that every eigenvalue of the mass is at least eps² for any raw vector."""
        mass = cholesky_assemble(torch.tensor(values, dtype=DTYPE), 3, 0.01)
        assert torch.equal(mass, mass.T)
        assert float(spd_eigenvalues(mass)[0]) >= 1e-4 * (1 - 1e-6)


class TestHeads:
    """Tests for the mass, potential and input heads."""

    def test_cholesky_head_shape_check(self):
        """Test that a network with the wrong output width is rejected."""
        with pytest.raises(DimensionMismatchError):
            CholeskyHead(MlpSpec(input_dim=2, output_dim=2), 2, 0.01)

    def test_diagonal_cholesky_head(self):
        """Test that a diagonal head yields a diagonal matrix."""
        head = CholeskyHead(MlpSpec(input_dim=2, output_dim=2, hidden=(4,)), 2, 0.0, diagonal=True)
        matrix = head(torch.tensor([[0.1, 0.2]], dtype=DTYPE))
        assert matrix[0, 0, 1].item() == 0.0
        assert matrix[0, 1, 0].item() == 0.0

    def test_linear_potential_gradient(self):
        """Test that V = wᵀq has gradient w."""
        model = build_structured_model(2, 1, config=HeadsConfig(potential_hidden=(), mass_hidden=(4,)))
        assert isinstance(model.potential_head, PotentialHead)
        with torch.no_grad():
            model.potential_head.net.layers[0].weight.copy_(torch.tensor([[1.5, -2.0]], dtype=DTYPE))
            model.potential_head.net.layers[0].bias.zero_()
        grad = model.potential_grad(torch.tensor([[0.3, 0.4]], dtype=DTYPE))
        assert torch.allclose(grad, torch.tensor([[1.5, -2.0]], dtype=DTYPE))

    def test_zero_input_head_with_sigmoid(self):
        """Test that when all parameters are zero, a unit sigmoid-bounded input matrix is 0.5 everywhere."""
        head = zeroed(InputMatrixHead(MlpSpec(input_dim=3, output_dim=6, hidden=(4,)), 3, 2, scale=1.0))
        assert torch.allclose(head(torch.ones(3, dtype=DTYPE)), torch.full((3, 2), 0.5, dtype=DTYPE))

    def test_zero_input_head_without_scale(self):
        """Test that when all parameters are zero, an unbounded input matrix is zero."""
        head = zeroed(InputMatrixHead(MlpSpec(input_dim=3, output_dim=6, hidden=(4,)), 3, 2))
        assert torch.equal(head(torch.ones(3, dtype=DTYPE)), torch.zeros(3, 2, dtype=DTYPE))

    def test_input_head_reshape_is_row_major(self):
        """Test that outputs 1..6 reshape to [[1,2],[3,4],[5,6]]."""
        head = zeroed(InputMatrixHead(MlpSpec(input_dim=3, output_dim=6, hidden=()), 3, 2))
        with torch.no_grad():
            head.net.layers[0].bias.copy_(torch.arange(1.0, 7.0, dtype=DTYPE))
        expected = torch.tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], dtype=DTYPE)
        assert torch.equal(head(torch.zeros(3, dtype=DTYPE)), expected)


class TestStructuredModel:
    """Tests for the assembled structured model."""

    def test_dimensions(self, small_heads):
        """Test the shapes of M, V, D and A."""
        model = build_structured_model(3, 2, config=small_heads)
        q = torch.randn(4, 3, dtype=DTYPE)
        assert model.mass_matrix(q).shape == (4, 3, 3)
        assert model.potential(q).shape == (4,)
        assert model.damping_matrix(q).shape == (4, 3, 3)
        assert model.input_matrix(q).shape == (4, 3, 2)

    def test_seeded_construction(self, small_heads):
        """Test that the same seed builds identical models."""
        first = build_structured_model(2, 2, config=small_heads, seed=9)
        second = build_structured_model(2, 2, config=small_heads, seed=9)
        assert torch.equal(flatten_params(first), flatten_params(second))

    def test_wrong_configuration_width(self, small_model):
        """Test that q of the wrong width is rejected."""
        with pytest.raises(DimensionMismatchError):
            small_model.mass_matrix(torch.ones(2, dtype=DTYPE))

    def test_constant_mass_has_zero_jacobian(self, small_heads):
        """Test that when only the output bias of the mass head is set, dM/dq vanishes."""
        model = build_structured_model(2, 2, config=small_heads)
        zeroed(model.mass)
        with torch.no_grad():
            model.mass.net.layers[-1].bias.copy_(torch.tensor([1.0, 2.0, 0.5], dtype=DTYPE))
        dm = model.mass_jacobian(torch.tensor([[0.2, -0.3]], dtype=DTYPE))
        assert torch.equal(dm, torch.zeros(1, 2, 2, 2, dtype=DTYPE))

    def test_mass_jacobian_matches_finite_differences(self, small_heads):
        """Test dM/dq of a random head against central differences."""
        model = build_structured_model(2, 2, config=small_heads, seed=1)
        q = torch.tensor([0.3, -0.2], dtype=DTYPE)
        dm = model.mass_jacobian(q)
        h = 1e-6
        for k in range(2):
            step = torch.zeros(2, dtype=DTYPE)
            step[k] = h
            with torch.no_grad():
                column = (model.mass_matrix(q + step) - model.mass_matrix(q - step)) / (2 * h)
            assert torch.allclose(dm[..., k], column, atol=1e-7)
        assert torch.equal(dm, dm.transpose(0, 1))

    def test_is_a_mechanical_structure(self, small_model):
        """Test that learned models share the plant interface."""
        assert isinstance(small_model, MechanicalStructure)
        assert set(small_model.heads()) == {"mass", "potential", "damping", "input"}
