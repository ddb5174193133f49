"""Structured network heads: mass, potential, damping and input matrix.

Every head wraps an :class:`~dynlearn.services.numcore.Mlp` and post-processes
its output into the shape and sign structure the mechanics require.
"""

from abc import ABC, abstractmethod
from typing import Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from dynlearn.models.schemas import HeadsConfig, MlpSpec
from dynlearn.services.numcore import (
    DimensionMismatchError,
    Mlp,
    as_tensor,
    batch_jacobian,
    check_last_dim,
    ensure_finite,
    symmetrize,
)

HEAD_NAMES = ("mass", "potential", "damping", "input")


def tril_size(n: int) -> int:
    return n * (n + 1) // 2


def _strict_lower_indices(n: int) -> tuple[list[int], list[int]]:
    """Strictly lower entries in column-major order."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j + 1, n):
            rows.append(i)
            cols.append(j)
    return rows, cols


def _tril_indices(n: int) -> tuple[list[int], list[int]]:
    rows, cols = [], []
    for i in range(n):
        for j in range(i + 1):
            rows.append(i)
            cols.append(j)
    return rows, cols


def lower_factor(raw: Tensor, n: int, eps: float, scale: Optional[float] = None) -> Tensor:
    """Lower-triangular factor L from ``raw`` (diagonal first, then column-major)."""
    check_last_dim(raw, tril_size(n), "raw")
    diag_raw = raw[..., :n]
    if scale is None:
        diag = F.softplus(diag_raw) + eps
    else:
        diag = scale * torch.sigmoid(diag_raw) + eps
    factor = torch.diag_embed(diag)
    if n > 1:
        rows, cols = _strict_lower_indices(n)
        off = raw.new_zeros(*raw.shape[:-1], n, n)
        off[..., rows, cols] = raw[..., n:]
        factor = factor + off
    return factor


def cholesky_assemble(raw: Tensor, n: int, eps: float, scale: Optional[float] = None) -> Tensor:
    """Symmetric positive (semi-)definite matrix ``L Lᵀ + eps² I`` from a raw vector.

    The shift keeps every eigenvalue at or above ``eps**2`` whatever the
    off-diagonal entries of L are.
    """
    factor = lower_factor(as_tensor(raw), n, eps, scale)
    return _gram(factor, eps)


def _gram(factor: Tensor, eps: float) -> Tensor:
    matrix = symmetrize(factor @ factor.transpose(-1, -2))
    if eps > 0:
        matrix = matrix + eps**2 * torch.eye(factor.shape[-1], dtype=factor.dtype)
    return matrix


class MechanicalStructure(ABC):
    """The quadruple (M, V, D, A) of a dissipative, actuated mechanical system.

    Implemented by learned models and by ground-truth plants. The derivative
    methods fall back to autograd; subclasses with closed forms override them.
    """

    @property
    @abstractmethod
    def n(self) -> int:
        """Configuration dimension."""

    @property
    @abstractmethod
    def m_u(self) -> int:
        """Input dimension."""

    @abstractmethod
    def mass_matrix(self, q: Tensor) -> Tensor: ...

    @abstractmethod
    def potential(self, q: Tensor) -> Tensor: ...

    @abstractmethod
    def damping_matrix(self, q: Tensor) -> Tensor: ...

    @abstractmethod
    def input_matrix(self, q: Tensor) -> Tensor: ...

    def potential_grad(self, q: Tensor) -> Tensor:
        """G(q) = dV/dq."""
        check_last_dim(q, self.n, "q")
        _, jacobian = batch_jacobian(lambda z: self.potential(z).unsqueeze(-1), q)
        return ensure_finite(jacobian.squeeze(-2), "potential_grad")

    def mass_jacobian(self, q: Tensor) -> Tensor:
        """Array ``dM[..., i, j, k] = dM_ij / dq_k``, symmetric in (i, j)."""
        n = self.n
        check_last_dim(q, n, "q")
        rows, cols = _tril_indices(n)
        _, jacobian = batch_jacobian(lambda z: self.mass_matrix(z)[..., rows, cols], q)
        full = jacobian.new_zeros(*jacobian.shape[:-2], n, n, n)
        full[..., rows, cols, :] = jacobian
        full[..., cols, rows, :] = jacobian
        return ensure_finite(full, "mass_jacobian")


class CholeskyHead(nn.Module):
    """Configuration-dependent symmetric matrix built from a Cholesky factor.

    The mass head uses ``eps > 0`` (positive definite); the damping head uses
    ``eps = 0`` (positive semi-definite). ``diagonal`` restricts the factor to
    its diagonal, in which case the network has ``n`` outputs.
    """

    def __init__(
        self,
        spec: MlpSpec,
        n: int,
        eps: float,
        scale: Optional[float] = None,
        diagonal: bool = False,
    ):
        super().__init__()
        expected = n if diagonal else tril_size(n)
        if spec.input_dim != n or spec.output_dim != expected:
            raise DimensionMismatchError(
                "Cholesky head network has the wrong shape",
                input_dim=spec.input_dim,
                output_dim=spec.output_dim,
                expected_output=expected,
            )
        self.n = n
        self.eps = eps
        self.scale = scale
        self.diagonal = diagonal
        self.net = Mlp(spec)

    def options(self) -> dict:
        return {"eps": self.eps, "scale": self.scale, "diagonal": self.diagonal}

    def lower(self, q: Tensor) -> Tensor:
        raw = self.net(q)
        if self.diagonal:
            padded = raw.new_zeros(*raw.shape[:-1], tril_size(self.n))
            padded[..., : self.n] = raw
            raw = padded
        return lower_factor(raw, self.n, self.eps, self.scale)

    def forward(self, q: Tensor) -> Tensor:
        return ensure_finite(_gram(self.lower(q), self.eps), "cholesky_assemble")


class PotentialHead(nn.Module):
    """Scalar potential energy V(q)."""

    def __init__(self, spec: MlpSpec):
        super().__init__()
        if spec.output_dim != 1:
            raise DimensionMismatchError("Potential head must have one output", output_dim=spec.output_dim)
        self.net = Mlp(spec)

    def options(self) -> dict:
        return {}

    def forward(self, q: Tensor) -> Tensor:
        return ensure_finite(self.net(q).squeeze(-1), "potential")


class InputMatrixHead(nn.Module):
    """Input matrix A(q), the network output reshaped row-major to ``n x m_u``."""

    def __init__(self, spec: MlpSpec, n: int, m_u: int, scale: Optional[float] = None):
        super().__init__()
        if spec.input_dim != n or spec.output_dim != n * m_u:
            raise DimensionMismatchError(
                "Input head network has the wrong shape",
                input_dim=spec.input_dim,
                output_dim=spec.output_dim,
                expected_output=n * m_u,
            )
        self.n = n
        self.m_u = m_u
        self.scale = scale
        self.net = Mlp(spec)

    def options(self) -> dict:
        return {"scale": self.scale}

    def forward(self, q: Tensor) -> Tensor:
        raw = self.net(q)
        if self.scale is not None:
            raw = self.scale * torch.sigmoid(raw)
        return ensure_finite(raw.reshape(*raw.shape[:-1], self.n, self.m_u), "input_matrix")


class StructuredModel(nn.Module, MechanicalStructure):
    """Learned mechanical model made of four heads.

    ``kind`` selects the formalism (``lnn`` or ``hnn``) the model is trained in;
    both share the same heads.
    """

    def __init__(
        self,
        n: int,
        m_u: int,
        kind: str,
        mass: CholeskyHead,
        potential: PotentialHead,
        damping: CholeskyHead,
        input_matrix: InputMatrixHead,
    ):
        super().__init__()
        if mass.n != n or damping.n != n or input_matrix.n != n or input_matrix.m_u != m_u:
            raise DimensionMismatchError("Head dimensions are inconsistent", n=n, m_u=m_u)
        if kind not in ("lnn", "hnn"):
            raise ValueError(f"Unknown structured model kind: {kind}")
        self._n = n
        self._m_u = m_u
        self.kind = kind
        self.mass = mass
        self.potential_head = potential
        self.damping = damping
        self.input_head = input_matrix

    @property
    def n(self) -> int:
        return self._n

    @property
    def m_u(self) -> int:
        return self._m_u

    def heads(self) -> dict[str, nn.Module]:
        return {
            "mass": self.mass,
            "potential": self.potential_head,
            "damping": self.damping,
            "input": self.input_head,
        }

    def mass_matrix(self, q: Tensor) -> Tensor:
        check_last_dim(q, self.n, "q")
        return self.mass(q)

    def potential(self, q: Tensor) -> Tensor:
        check_last_dim(q, self.n, "q")
        return self.potential_head(q)

    def damping_matrix(self, q: Tensor) -> Tensor:
        check_last_dim(q, self.n, "q")
        return self.damping(q)

    def input_matrix(self, q: Tensor) -> Tensor:
        check_last_dim(q, self.n, "q")
        return self.input_head(q)


def head_specs(n: int, m_u: int, config: HeadsConfig, seed: int) -> dict[str, MlpSpec]:
    """Network layouts of the four heads; head ``i`` is seeded with ``seed + i``."""
    common = {"input_dim": n, "activation": config.activation}
    return {
        "mass": MlpSpec(output_dim=tril_size(n), hidden=config.mass_hidden, seed=seed, **common),
        "potential": MlpSpec(output_dim=1, hidden=config.potential_hidden, seed=seed + 1, **common),
        "damping": MlpSpec(
            output_dim=n if config.damping_diagonal else tril_size(n),
            hidden=config.damping_hidden,
            seed=seed + 2,
            **common,
        ),
        "input": MlpSpec(output_dim=n * m_u, hidden=config.input_hidden, seed=seed + 3, **common),
    }


def build_structured_model(
    n: int,
    m_u: int,
    kind: str = "lnn",
    config: Optional[HeadsConfig] = None,
    seed: int = 0,
) -> StructuredModel:
    """Freshly initialized structured model."""
    config = config or HeadsConfig()
    specs = head_specs(n, m_u, config, seed)
    return StructuredModel(
        n=n,
        m_u=m_u,
        kind=kind,
        mass=CholeskyHead(specs["mass"], n, config.mass_eps, config.mass_scale),
        potential=PotentialHead(specs["potential"]),
        damping=CholeskyHead(
            specs["damping"], n, config.damping_eps, diagonal=config.damping_diagonal
        ),
        input_matrix=InputMatrixHead(specs["input"], n, m_u, config.input_scale),
    )
