"""Energies and equations of motion of a mechanical structure.

The Lagrangian form is evaluated through the kinetic/potential split: with
``L = ½ q̇ᵀ M(q) q̇ − V(q)`` the velocity Hessian of L is exactly M(q), so only
first derivatives of the heads (``mass_jacobian`` and ``potential_grad``) are
needed.
"""

from collections.abc import Callable
from dataclasses import dataclass
from typing import Optional

import torch
from torch import Tensor

from dynlearn.services.numcore import (
    DimensionMismatchError,
    as_tensor,
    check_last_dim,
    ensure_finite,
    mass_solve,
)
from dynlearn.services.physnets import MechanicalStructure

VectorField = Callable[[Tensor, Tensor], Tensor]


@dataclass(frozen=True)
class ConfState:
    """Configuration with exactly one of velocity ``qd`` or momentum ``p``."""

    q: Tensor
    qd: Optional[Tensor] = None
    p: Optional[Tensor] = None

    def __post_init__(self):
        if (self.qd is None) == (self.p is None):
            raise DimensionMismatchError("State needs exactly one of qd or p")
        other = self.qd if self.qd is not None else self.p
        if other.shape != self.q.shape:
            raise DimensionMismatchError(
                "State components must have matching shapes",
                q=list(self.q.shape),
                other=list(other.shape),
            )
        ensure_finite(self.q, "state")
        ensure_finite(other, "state")

    def momentum(self, model: MechanicalStructure) -> Tensor:
        if self.p is not None:
            return self.p
        return (model.mass_matrix(self.q) @ self.qd.unsqueeze(-1)).squeeze(-1)

    def velocity(self, model: MechanicalStructure) -> Tensor:
        if self.qd is not None:
            return self.qd
        return mass_solve(model.mass_matrix(self.q), self.p)


def _check_state(model: MechanicalStructure, q: Tensor, other: Tensor, name: str) -> None:
    check_last_dim(q, model.n, "q")
    check_last_dim(other, model.n, name)


def _check_input(model: MechanicalStructure, u: Tensor) -> None:
    check_last_dim(u, model.m_u, "u")
    ensure_finite(u, "control_input")


def _quadratic(x: Tensor, matrix: Tensor, y: Tensor) -> Tensor:
    return torch.einsum("...i,...ij,...j->...", x, matrix, y)


def _matvec(matrix: Tensor, x: Tensor) -> Tensor:
    return (matrix @ x.unsqueeze(-1)).squeeze(-1)


def lagrangian(model: MechanicalStructure, q: Tensor, qd: Tensor) -> Tensor:
    """L = ½ q̇ᵀ M(q) q̇ − V(q)."""
    q, qd = as_tensor(q), as_tensor(qd)
    _check_state(model, q, qd, "qd")
    return 0.5 * _quadratic(qd, model.mass_matrix(q), qd) - model.potential(q)


def hamiltonian(model: MechanicalStructure, q: Tensor, p: Tensor) -> Tensor:
    """H = ½ pᵀ M⁻¹(q) p + V(q)."""
    q, p = as_tensor(q), as_tensor(p)
    _check_state(model, q, p, "p")
    v = mass_solve(model.mass_matrix(q), p)
    return 0.5 * (p * v).sum(-1) + model.potential(q)


def coriolis_force(model: MechanicalStructure, q: Tensor, qd: Tensor) -> Tensor:
    """C(q, q̇) q̇ = Ṁ q̇ − ½ ∂(q̇ᵀ M q̇)/∂q, contracted from the mass jacobian."""
    q, qd = as_tensor(q), as_tensor(qd)
    _check_state(model, q, qd, "qd")
    dm = model.mass_jacobian(q)
    mdot_qd = torch.einsum("...ijk,...j,...k->...i", dm, qd, qd)
    kinetic_grad = torch.einsum("...ijk,...i,...j->...k", dm, qd, qd)
    return mdot_qd - 0.5 * kinetic_grad


def lagrangian_forward_dynamics(model: MechanicalStructure, q: Tensor, qd: Tensor, u: Tensor) -> Tensor:
    """q̈ = M⁻¹ (A u − C q̇ − G − D q̇)."""
    q, qd, u = as_tensor(q), as_tensor(qd), as_tensor(u)
    _check_state(model, q, qd, "qd")
    _check_input(model, u)
    forces = (
        _matvec(model.input_matrix(q), u)
        - coriolis_force(model, q, qd)
        - model.potential_grad(q)
        - _matvec(model.damping_matrix(q), qd)
    )
    return mass_solve(model.mass_matrix(q), forces)


def _hamiltonian_terms(model: MechanicalStructure, q: Tensor, p: Tensor) -> tuple[Tensor, Tensor]:
    """Velocity M⁻¹p and ∂H/∂q = −½ vᵀ (∂M/∂q_k) v + G."""
    v = mass_solve(model.mass_matrix(q), p)
    dm = model.mass_jacobian(q)
    dh_dq = -0.5 * torch.einsum("...i,...ijk,...j->...k", v, dm, v) + model.potential_grad(q)
    return v, dh_dq


def hamiltonian_vector_field(
    model: MechanicalStructure, q: Tensor, p: Tensor, u: Tensor
) -> tuple[Tensor, Tensor]:
    """(q̇, ṗ) with q̇ = M⁻¹p and ṗ = −∂H/∂q − D q̇ + A u."""
    q, p, u = as_tensor(q), as_tensor(p), as_tensor(u)
    _check_state(model, q, p, "p")
    _check_input(model, u)
    v, dh_dq = _hamiltonian_terms(model, q, p)
    p_dot = -dh_dq - _matvec(model.damping_matrix(q), v) + _matvec(model.input_matrix(q), u)
    return v, p_dot


def energy_rate(model: MechanicalStructure, state: ConfState, u: Tensor) -> Tensor:
    """dH/dt = ⟨∂H/∂q, q̇⟩ + ⟨∂H/∂p, ṗ⟩ along the Hamiltonian flow."""
    p = state.momentum(model)
    qd, p_dot = hamiltonian_vector_field(model, state.q, p, u)
    _, dh_dq = _hamiltonian_terms(model, as_tensor(state.q), as_tensor(p))
    return (dh_dq * qd).sum(-1) + (qd * p_dot).sum(-1)


def lagrangian_field(model: MechanicalStructure) -> VectorField:
    """State derivative of x = (q, q̇)."""
    n = model.n

    def field(x: Tensor, u: Tensor) -> Tensor:
        q, qd = x[..., :n], x[..., n:]
        return torch.cat([qd, lagrangian_forward_dynamics(model, q, qd, u)], dim=-1)

    return field


def hamiltonian_field(model: MechanicalStructure) -> VectorField:
    """State derivative of x = (q, p)."""
    n = model.n

    def field(x: Tensor, u: Tensor) -> Tensor:
        qd, p_dot = hamiltonian_vector_field(model, x[..., :n], x[..., n:], u)
        return torch.cat([qd, p_dot], dim=-1)

    return field


class ScaledStructure(MechanicalStructure):
    """The quadruple (cM, cV, cD, cA) of another structure.

    Leaves the forward dynamics unchanged for any constant ``factor > 0``.
    """

    def __init__(self, base: MechanicalStructure, factor: float):
        if not factor > 0:
            raise ValueError("factor must be > 0")
        self.base = base
        self.factor = factor

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def m_u(self) -> int:
        return self.base.m_u

    def mass_matrix(self, q: Tensor) -> Tensor:
        return self.factor * self.base.mass_matrix(q)

    def potential(self, q: Tensor) -> Tensor:
        return self.factor * self.base.potential(q)

    def damping_matrix(self, q: Tensor) -> Tensor:
        return self.factor * self.base.damping_matrix(q)

    def input_matrix(self, q: Tensor) -> Tensor:
        return self.factor * self.base.input_matrix(q)

    def potential_grad(self, q: Tensor) -> Tensor:
        return self.factor * self.base.potential_grad(q)

    def mass_jacobian(self, q: Tensor) -> Tensor:
        return self.factor * self.base.mass_jacobian(q)
