"""Dense float64 tensor helpers and the multilayer perceptron used by every head.

Derivatives come from torch autograd. Input-derivatives are taken with
``create_graph`` whenever grad mode is on at the call site, so losses built from
them can be differentiated again with respect to the network parameters.
"""

import math
from collections.abc import Callable, Iterable
from typing import Optional, Union

import torch
import torch.nn.functional as F
from torch import Tensor, nn
from torch.func import functional_call

from dynlearn.config import get_settings
from dynlearn.models.schemas import MlpSpec
from dynlearn.utils import DynLearnError

DTYPE = torch.float64

MlpParams = dict[str, Tensor]


class DimensionMismatchError(DynLearnError):
    """Raised when an argument has the wrong trailing shape."""


class NumericalFailureError(DynLearnError):
    """Raised when a primitive produces NaN or Inf."""

    def __init__(self, primitive: str, **details):
        super().__init__(f"Non-finite value produced by {primitive}", primitive=primitive, **details)
        self.primitive = primitive


class IllConditionedMassError(DynLearnError):
    """Raised when a mass solve is singular or exceeds the condition limit."""


def as_tensor(value: Union[Tensor, Iterable, float]) -> Tensor:
    """Convert ``value`` to a float64 tensor without copying float64 inputs."""
    return torch.as_tensor(value, dtype=DTYPE)


def check_last_dim(x: Tensor, expected: int, name: str) -> None:
    if x.dim() == 0 or x.shape[-1] != expected:
        raise DimensionMismatchError(
            f"{name} must have trailing dimension {expected}",
            argument=name,
            expected=expected,
            shape=list(x.shape),
        )


def check_square(matrix: Tensor, name: str) -> None:
    if matrix.dim() < 2 or matrix.shape[-1] != matrix.shape[-2]:
        raise DimensionMismatchError(f"{name} must be square", argument=name, shape=list(matrix.shape))


def ensure_finite(value: Tensor, primitive: str) -> Tensor:
    if not bool(torch.isfinite(value).all()):
        raise NumericalFailureError(primitive)
    return value


def symmetrize(matrix: Tensor) -> Tensor:
    """Exactly symmetric part of the trailing two dimensions."""
    return 0.5 * (matrix + matrix.transpose(-1, -2))


class Mlp(nn.Module):
    """Fully connected network described by an :class:`MlpSpec`.

    Parameters are ordered layer by layer, weight (row-major) before bias; this
    is the order used by :func:`flatten_params` and by checkpoints.
    """

    def __init__(self, spec: MlpSpec):
        super().__init__()
        self.spec = spec
        widths = [spec.input_dim, *spec.hidden, spec.output_dim]
        self.layers = nn.ModuleList(
            nn.Linear(fan_in, fan_out, dtype=DTYPE) for fan_in, fan_out in zip(widths[:-1], widths[1:])
        )
        self.reset_parameters()

    def reset_parameters(self) -> None:
        """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
        generator = torch.Generator().manual_seed(self.spec.seed)
        with torch.no_grad():
            for layer in self.layers:
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.uniform_(-bound, bound, generator=generator)
                layer.bias.uniform_(-bound, bound, generator=generator)

    def _hidden_activation(self, x: Tensor) -> Tensor:
        if self.spec.activation == "tanh":
            return torch.tanh(x)
        return F.softplus(x)

    def _final_activation(self, x: Tensor) -> Tensor:
        if self.spec.final_activation == "softplus":
            return F.softplus(x)
        if self.spec.final_activation == "sigmoid":
            return self.spec.final_scale * torch.sigmoid(x)
        return x

    def forward(self, x: Tensor) -> Tensor:
        check_last_dim(x, self.spec.input_dim, "x")
        h = x
        for layer in self.layers[:-1]:
            h = self._hidden_activation(layer(h))
        return self._final_activation(self.layers[-1](h))


def mlp_eval(mlp: Mlp, x: Tensor, params: Optional[MlpParams] = None) -> Tensor:
    """Evaluate ``mlp`` at ``x`` (optionally with substituted parameters)."""
    x = as_tensor(x)
    y = mlp(x) if params is None else functional_call(mlp, params, (x,))
    return ensure_finite(y, "mlp_eval")


def batch_jacobian(
    fn: Callable[[Tensor], Tensor],
    x: Tensor,
    create_graph: Optional[bool] = None,
) -> tuple[Tensor, Tensor]:
    """Jacobian of a per-sample function over the trailing dimension of ``x``.

    ``fn`` maps ``(..., n)`` to ``(..., *out)`` with samples independent along the
    leading dimensions. Returns ``(value, jacobian)`` where the jacobian has shape
    ``(..., *out, n)``. When ``create_graph`` is left unset it follows the grad
    mode of the caller.
    """
    if create_graph is None:
        create_graph = torch.is_grad_enabled()
    n = x.shape[-1]
    batch_shape = x.shape[:-1]
    with torch.enable_grad():
        x_in = x if x.requires_grad else x.detach().requires_grad_(True)
        value = fn(x_in)
        out_shape = value.shape[len(batch_shape):]
        flat = value.reshape(*batch_shape, -1)
        rows = []
        for k in range(flat.shape[-1]):
            grad = None
            if flat.requires_grad:
                (grad,) = torch.autograd.grad(
                    flat[..., k].sum(),
                    x_in,
                    create_graph=create_graph,
                    retain_graph=True,
                    allow_unused=True,
                )
            rows.append(torch.zeros_like(x_in) if grad is None else grad)
        jacobian = torch.stack(rows, dim=-2) if rows else x_in.new_zeros(*batch_shape, 0, n)
    jacobian = jacobian.reshape(*batch_shape, *out_shape, n)
    if not create_graph:
        value, jacobian = value.detach(), jacobian.detach()
    return value, jacobian


def mlp_input_jacobian(mlp: Mlp, x: Tensor, params: Optional[MlpParams] = None) -> Tensor:
    """dy/dx with shape ``(..., output_dim, input_dim)``."""
    x = as_tensor(x)
    check_last_dim(x, mlp.spec.input_dim, "x")
    _, jacobian = batch_jacobian(lambda z: mlp_eval(mlp, z, params), x)
    return ensure_finite(jacobian, "mlp_input_jacobian")


def mlp_param_grad(mlp: Mlp, x: Tensor, cotangent: Tensor) -> MlpParams:
    """Gradient of ``<cotangent, mlp(x)>`` with respect to every parameter."""
    x = as_tensor(x)
    cotangent = as_tensor(cotangent)
    check_last_dim(cotangent, mlp.spec.output_dim, "cotangent")
    names, params = zip(*mlp.named_parameters())
    with torch.enable_grad():
        y = mlp_eval(mlp, x)
        if cotangent.shape != y.shape:
            raise DimensionMismatchError(
                "cotangent must match the output shape",
                expected=list(y.shape),
                shape=list(cotangent.shape),
            )
        grads = torch.autograd.grad((y * cotangent).sum(), params, allow_unused=True)
    return {
        name: torch.zeros_like(p) if g is None else g
        for name, p, g in zip(names, params, grads)
    }


def flatten_params(module: nn.Module) -> Tensor:
    """All parameters of ``module`` as one detached vector."""
    return nn.utils.parameters_to_vector(module.parameters()).detach().clone()


def unflatten_params(module: nn.Module, vector: Tensor) -> MlpParams:
    """Split ``vector`` into tensors shaped like ``module``'s parameters."""
    vector = as_tensor(vector)
    expected = sum(p.numel() for p in module.parameters())
    if vector.dim() != 1 or vector.numel() != expected:
        raise DimensionMismatchError(
            "flat parameter vector has the wrong length",
            expected=expected,
            shape=list(vector.shape),
        )
    params: MlpParams = {}
    offset = 0
    for name, p in module.named_parameters():
        params[name] = vector[offset : offset + p.numel()].view_as(p)
        offset += p.numel()
    return params


def load_flat_params(module: nn.Module, vector: Tensor) -> None:
    """Write a flat parameter vector into ``module`` in place."""
    params = unflatten_params(module, vector)
    with torch.no_grad():
        for name, p in module.named_parameters():
            p.copy_(params[name])


def zero_parameters(module: nn.Module) -> None:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


def value_and_grad(scalar_fn: Callable[[], Tensor], module: nn.Module) -> tuple[Tensor, Tensor]:
    """Evaluate ``scalar_fn`` and its gradient over ``module``'s flattened parameters.

    ``scalar_fn`` may contain input-jacobians of network outputs (mass and
    potential derivatives, RK4 stages); those are built with ``create_graph`` so
    the parameter gradient includes the mixed second-order terms.
    """
    params = list(module.parameters())
    with torch.enable_grad():
        value = scalar_fn()
        if value.dim() != 0:
            raise DimensionMismatchError("scalar_fn must return a scalar", shape=list(value.shape))
        ensure_finite(value, "scalar_fn")
        grads = torch.autograd.grad(value, params, allow_unused=True)
    flat = torch.cat(
        [(torch.zeros_like(p) if g is None else g).reshape(-1) for p, g in zip(params, grads)]
    )
    return value.detach(), ensure_finite(flat, "backward")


def mixed_grad(scalar_fn: Callable[[], Tensor], module: nn.Module) -> Tensor:
    """Parameter gradient of a scalar built from outputs and input-derivatives."""
    _, grad = value_and_grad(scalar_fn, module)
    return grad


def spd_eigenvalues(matrix: Tensor) -> Tensor:
    return torch.linalg.eigvalsh(symmetrize(matrix.detach()))


def mass_solve(mass: Tensor, rhs: Tensor, condition_limit: Optional[float] = None) -> Tensor:
    """Solve ``M x = rhs`` by Cholesky factorization.

    ``rhs`` is either a vector batch ``(..., n)`` or a matrix batch ``(..., n, k)``.
    Raises :class:`IllConditionedMassError` when ``M`` is not positive definite or
    its condition number exceeds the limit (1e12 by default).
    """
    check_square(mass, "mass")
    limit = condition_limit if condition_limit is not None else get_settings().mass_condition_limit
    factor, info = torch.linalg.cholesky_ex(mass)
    if bool((info != 0).any()):
        raise IllConditionedMassError("Mass matrix is not positive definite")
    eigenvalues = spd_eigenvalues(mass)
    condition = eigenvalues[..., -1] / eigenvalues[..., 0]
    worst = float(condition.max())
    if not math.isfinite(worst) or worst > limit:
        raise IllConditionedMassError(
            "Mass matrix condition number exceeds limit", condition=worst, limit=limit
        )
    is_vector = rhs.dim() == mass.dim() - 1
    solution = torch.cholesky_solve(rhs.unsqueeze(-1) if is_vector else rhs, factor)
    if is_vector:
        solution = solution.squeeze(-1)
    return ensure_finite(solution, "mass_solve")


def mass_inverse(mass: Tensor, condition_limit: Optional[float] = None) -> Tensor:
    eye = torch.eye(mass.shape[-1], dtype=mass.dtype).expand(mass.shape)
    return symmetrize(mass_solve(mass, eye, condition_limit))
