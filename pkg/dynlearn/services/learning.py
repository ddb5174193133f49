"""Transition datasets, one-step prediction losses and the training loop."""

import copy
import math
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field
from typing import Optional

import torch
from torch import Tensor, nn

from dynlearn.models.schemas import DatasetMeta, TrainConfig
from dynlearn.services.dynamics import (
    hamiltonian_field,
    hamiltonian_vector_field,
    lagrangian_field,
    lagrangian_forward_dynamics,
)
from dynlearn.services.integrators import IntegrationError, rk4_step
from dynlearn.services.numcore import (
    DimensionMismatchError,
    IllConditionedMassError,
    NumericalFailureError,
    as_tensor,
)
from dynlearn.utils import DynLearnError, get_logger, record_epoch

logger = get_logger(__name__)


class LossEvaluationError(DynLearnError):
    """Raised when the loss of a batch cannot be evaluated."""

    def __init__(self, message: str, sample_index: int, **details):
        super().__init__(message, sample_index=sample_index, **details)
        self.sample_index = sample_index


class TrainingError(DynLearnError):
    """Raised when a training run cannot start."""


class TrainingDivergedError(TrainingError):
    """Raised when the loss becomes non-finite.

    The model has already been restored to the last finished epoch;
    ``result`` holds it together with the history up to that point.
    """

    def __init__(self, message: str, epoch: int, result: "TrainResult", **details):
        super().__init__(message, epoch=epoch, last_good_epoch=len(result.history), **details)
        self.epoch = epoch
        self.result = result


@dataclass(frozen=True)
class TransitionSample:
    """One record ``(q, v, u, dt) -> (next_q, next_v)``; ``v`` is q̇ or p."""

    q: Tensor
    v: Tensor
    u: Tensor
    dt: float
    next_q: Tensor
    next_v: Tensor
    trajectory_id: int


@dataclass(frozen=True)
class TrajectoryData:
    """Consecutive samples of one trajectory as a state sequence."""

    trajectory_id: int
    states: Tensor
    inputs: Tensor
    dt: float


class TransitionDataset:
    """Column-wise store of transition samples.

    ``kind`` is ``lnn`` (second block is q̇) or ``hnn`` (second block is p).
    Samples of one trajectory are kept contiguous and in time order.
    """

    def __init__(
        self,
        kind: str,
        q: Tensor,
        v: Tensor,
        u: Tensor,
        dt: Tensor,
        next_q: Tensor,
        next_v: Tensor,
        trajectory_id: Tensor,
        plant: str = "unknown",
        sample_hz: Optional[float] = None,
    ):
        if kind not in ("lnn", "hnn"):
            raise DimensionMismatchError(f"Unknown dataset kind: {kind}")
        q, v, u, dt = as_tensor(q), as_tensor(v), as_tensor(u), as_tensor(dt)
        next_q, next_v = as_tensor(next_q), as_tensor(next_v)
        trajectory_id = torch.as_tensor(trajectory_id, dtype=torch.long)
        size = q.shape[0]
        for name, column in (
            ("v", v), ("u", u), ("dt", dt), ("next_q", next_q), ("next_v", next_v),
            ("trajectory_id", trajectory_id),
        ):
            if column.shape[0] != size:
                raise DimensionMismatchError("Dataset columns have different lengths", column=name)
        if q.dim() != 2 or v.shape != q.shape or next_q.shape != q.shape or next_v.shape != q.shape:
            raise DimensionMismatchError("State columns must be (samples, n)", shape=list(q.shape))
        if u.dim() != 2:
            raise DimensionMismatchError("Input column must be (samples, m_u)", shape=list(u.shape))
        if size and not bool((dt > 0).all()):
            raise DimensionMismatchError("Sample dt must be > 0")
        self.kind = kind
        self.q, self.v, self.u, self.dt = q, v, u, dt
        self.next_q, self.next_v = next_q, next_v
        self.trajectory_id = trajectory_id
        self.plant = plant
        self.sample_hz = sample_hz

    def __len__(self) -> int:
        return self.q.shape[0]

    def __getitem__(self, index: int) -> TransitionSample:
        return TransitionSample(
            q=self.q[index],
            v=self.v[index],
            u=self.u[index],
            dt=float(self.dt[index]),
            next_q=self.next_q[index],
            next_v=self.next_v[index],
            trajectory_id=int(self.trajectory_id[index]),
        )

    @property
    def n(self) -> int:
        return self.q.shape[1]

    @property
    def m_u(self) -> int:
        return self.u.shape[1]

    @classmethod
    def from_samples(
        cls,
        kind: str,
        samples: Sequence[TransitionSample],
        plant: str = "unknown",
        sample_hz: Optional[float] = None,
    ) -> "TransitionDataset":
        if not samples:
            raise DimensionMismatchError("Cannot build a dataset from no samples")
        return cls(
            kind=kind,
            q=torch.stack([s.q for s in samples]),
            v=torch.stack([s.v for s in samples]),
            u=torch.stack([s.u for s in samples]),
            dt=as_tensor([s.dt for s in samples]),
            next_q=torch.stack([s.next_q for s in samples]),
            next_v=torch.stack([s.next_v for s in samples]),
            trajectory_id=torch.as_tensor([s.trajectory_id for s in samples]),
            plant=plant,
            sample_hz=sample_hz,
        )

    @classmethod
    def from_trajectories(
        cls,
        kind: str,
        trajectories: Sequence[tuple[int, Tensor, Tensor, Tensor]],
        dt: float,
        plant: str = "unknown",
        sample_hz: Optional[float] = None,
    ) -> "TransitionDataset":
        """Pair consecutive samples of ``(trajectory_id, q, v, u)`` sequences."""
        columns: dict[str, list[Tensor]] = {k: [] for k in ("q", "v", "u", "next_q", "next_v", "tid")}
        for trajectory_id, q, v, u in trajectories:
            steps = q.shape[0] - 1
            if steps < 1:
                continue
            columns["q"].append(q[:-1])
            columns["v"].append(v[:-1])
            columns["u"].append(u[:steps])
            columns["next_q"].append(q[1:])
            columns["next_v"].append(v[1:])
            columns["tid"].append(torch.full((steps,), trajectory_id, dtype=torch.long))
        if not columns["q"]:
            raise DimensionMismatchError("Trajectories contain no transitions")
        size = sum(c.shape[0] for c in columns["q"])
        return cls(
            kind=kind,
            q=torch.cat(columns["q"]),
            v=torch.cat(columns["v"]),
            u=torch.cat(columns["u"]),
            dt=torch.full((size,), dt, dtype=torch.float64),
            next_q=torch.cat(columns["next_q"]),
            next_v=torch.cat(columns["next_v"]),
            trajectory_id=torch.cat(columns["tid"]),
            plant=plant,
            sample_hz=sample_hz,
        )

    def subset(self, indices: Tensor) -> "TransitionDataset":
        indices = torch.as_tensor(indices, dtype=torch.long)
        return TransitionDataset(
            kind=self.kind,
            q=self.q[indices],
            v=self.v[indices],
            u=self.u[indices],
            dt=self.dt[indices],
            next_q=self.next_q[indices],
            next_v=self.next_v[indices],
            trajectory_id=self.trajectory_id[indices],
            plant=self.plant,
            sample_hz=self.sample_hz,
        )

    def trajectory_ids(self) -> list[int]:
        """Trajectory ids in order of first appearance."""
        seen: dict[int, None] = {}
        for tid in self.trajectory_id.tolist():
            seen.setdefault(tid, None)
        return list(seen)

    def select_trajectories(self, ids: Sequence[int]) -> "TransitionDataset":
        mask = torch.isin(self.trajectory_id, torch.as_tensor(list(ids), dtype=torch.long))
        return self.subset(torch.nonzero(mask).flatten())

    def split(self, validation_fraction: float, seed: int) -> tuple["TransitionDataset", "TransitionDataset"]:
        """Trajectory-level train/validation split, deterministic in ``seed``."""
        ids = self.trajectory_ids()
        generator = torch.Generator().manual_seed(seed)
        order = torch.randperm(len(ids), generator=generator).tolist()
        n_val = int(math.floor(validation_fraction * len(ids)))
        if validation_fraction > 0 and n_val == 0 and len(ids) > 1:
            n_val = 1
        val_ids = {ids[i] for i in order[:n_val]}
        train_ids = [i for i in ids if i not in val_ids]
        return self.select_trajectories(train_ids), self.select_trajectories(sorted(val_ids))

    def batches(self, batch_size: int, generator: torch.Generator) -> Iterator["TransitionDataset"]:
        """Shuffled mini-batches covering every sample once."""
        permutation = torch.randperm(len(self), generator=generator)
        for start in range(0, len(self), batch_size):
            yield self.subset(permutation[start : start + batch_size])

    def trajectories(self) -> list[TrajectoryData]:
        """State sequences ``x_k = (q_k, v_k)`` of every trajectory."""
        result = []
        for tid in self.trajectory_ids():
            part = self.select_trajectories([tid])
            states = torch.cat(
                [
                    torch.cat([part.q, part.v], dim=-1),
                    torch.cat([part.next_q[-1:], part.next_v[-1:]], dim=-1),
                ]
            )
            result.append(TrajectoryData(tid, states, part.u, float(part.dt[0])))
        return result

    def meta(self) -> DatasetMeta:
        sample_hz = self.sample_hz or (1.0 / float(self.dt[0]) if len(self) else 1.0)
        return DatasetMeta(
            kind=self.kind,
            plant=self.plant,
            sample_hz=sample_hz,
            n=self.n,
            m_u=self.m_u,
            n_trajectories=len(self.trajectory_ids()),
        )


def _require_batch(batch: TransitionDataset, kind: str) -> None:
    if len(batch) == 0:
        raise LossEvaluationError("Loss of an empty batch", sample_index=-1)
    if batch.kind != kind:
        raise TrainingError(f"{kind} loss needs a {kind} dataset", dataset_kind=batch.kind)


def _first_failing_sample(model, batch: TransitionDataset, field_factory) -> int:
    with torch.no_grad():
        for i in range(len(batch)):
            item = batch.subset([i])
            x = torch.cat([item.q, item.v], dim=-1)
            try:
                x_next = rk4_step(field_factory(model), x, item.u, item.dt)
            except DynLearnError:
                return i
            if not bool(torch.isfinite(x_next).all()):
                return i
    return -1


def predict_next_state(model, batch: TransitionDataset) -> tuple[Tensor, Tensor]:
    """One RK4 step of the model's vector field from every sample of ``batch``."""
    field_factory = lagrangian_field if batch.kind == "lnn" else hamiltonian_field
    x = torch.cat([batch.q, batch.v], dim=-1)
    try:
        x_next = rk4_step(field_factory(model), x, batch.u, batch.dt)
    except IntegrationError as exc:
        index = _first_failing_sample(model, batch, field_factory)
        raise LossEvaluationError(
            f"Prediction failed: {exc.message}", sample_index=index, stage=exc.stage
        ) from exc
    n = batch.n
    return x_next[..., :n], x_next[..., n:]


def _checked_mean(squared: Tensor) -> Tensor:
    finite = torch.isfinite(squared)
    if not bool(finite.all()):
        index = int(torch.nonzero(~finite).flatten()[0])
        raise LossEvaluationError("Non-finite residual", sample_index=index)
    return squared.mean()


def lnn_loss(model, batch: TransitionDataset) -> Tensor:
    """Mean squared error of the next velocity after one RK4 step."""
    _require_batch(batch, "lnn")
    _, v_hat = predict_next_state(model, batch)
    return _checked_mean(((batch.next_v - v_hat) ** 2).sum(-1))


def hnn_loss(model, batch: TransitionDataset) -> Tensor:
    """Mean squared error of the next configuration and momentum."""
    _require_batch(batch, "hnn")
    q_hat, p_hat = predict_next_state(model, batch)
    squared = ((batch.next_q - q_hat) ** 2).sum(-1) + ((batch.next_v - p_hat) ** 2).sum(-1)
    return _checked_mean(squared)


def vanilla_lnn_loss(model, q: Tensor, qd: Tensor, u: Tensor, qdd: Tensor) -> Tensor:
    """Acceleration-label error; diagnostic only, accelerations are not measured."""
    return _checked_mean(((as_tensor(qdd) - lagrangian_forward_dynamics(model, q, qd, u)) ** 2).sum(-1))


def vanilla_hnn_loss(model, q: Tensor, p: Tensor, u: Tensor, qd: Tensor, p_dot: Tensor) -> Tensor:
    """Vector-field-label error; diagnostic only."""
    qd_hat, p_dot_hat = hamiltonian_vector_field(model, q, p, u)
    squared = ((as_tensor(qd) - qd_hat) ** 2).sum(-1) + ((as_tensor(p_dot) - p_dot_hat) ** 2).sum(-1)
    return _checked_mean(squared)


LossFn = Callable[[nn.Module, TransitionDataset], Tensor]

_losses: dict[str, LossFn] = {"lnn": lnn_loss, "hnn": hnn_loss}


def register_loss(name: str, loss_fn: LossFn) -> None:
    """Register a training loss under ``name``."""
    _losses[name] = loss_fn
    logger.debug("Registered loss", loss=name)


def get_loss(name: str) -> LossFn:
    if name not in _losses:
        raise TrainingError(f"Unknown loss: {name}", available=sorted(_losses))
    return _losses[name]


@dataclass
class EpochStats:
    """Loss summary of one epoch."""

    epoch: int
    loss_mean: float
    loss_std: float
    validation_loss: Optional[float] = None
    clipped_steps: int = 0


@dataclass
class TrainResult:
    model: nn.Module
    history: list[EpochStats] = field(default_factory=list)

    @property
    def final(self) -> Optional[EpochStats]:
        return self.history[-1] if self.history else None


def evaluate_loss(model: nn.Module, dataset: TransitionDataset, loss: str, batch_size: int = 1024) -> Tensor:
    """Per-batch losses of ``dataset`` without building a parameter graph."""
    loss_fn = get_loss(loss)
    values = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            batch = dataset.subset(torch.arange(start, min(start + batch_size, len(dataset))))
            values.append(loss_fn(model, batch) * len(batch))
    return torch.stack(values).sum() / len(dataset)


def train(
    model: nn.Module,
    dataset: TransitionDataset,
    config: TrainConfig,
    validation: Optional[TransitionDataset] = None,
) -> TrainResult:
    """Fit ``model`` with AdamW on mini-batches of ``dataset``.

    Args:
        model: Structured or black-box model; trained in place.
        dataset: Training transitions; its kind must match ``config.loss``
            unless the loss is ``blackbox``.
        config: Optimizer and batching options.
        validation: Optional held-out transitions evaluated after each epoch.

    Returns:
        The trained model and the per-epoch loss history.

    Raises:
        TrainingDivergedError: The loss or gradient became non-finite.
    """
    loss_fn = get_loss(config.loss)
    if config.loss != "blackbox" and dataset.kind != config.loss:
        raise TrainingError(
            f"{config.loss} training needs a {config.loss} dataset", dataset_kind=dataset.kind
        )
    if len(dataset) == 0:
        raise TrainingError("Training dataset is empty")

    result = TrainResult(model=model)
    if config.epochs == 0:
        return result

    generator = torch.Generator().manual_seed(config.seed)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        betas=(0.9, 0.999),
        eps=1e-8,
        weight_decay=config.weight_decay,
    )
    scheduler = (
        torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=config.epochs)
        if config.cosine_decay
        else None
    )
    last_good = copy.deepcopy(model.state_dict())
    log_every = max(1, config.epochs // 10)

    logger.info(
        "Training started",
        loss=config.loss,
        samples=len(dataset),
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=config.seed,
    )

    for epoch in range(1, config.epochs + 1):
        batch_losses: list[float] = []
        clipped = 0
        for batch in dataset.batches(config.batch_size, generator):
            optimizer.zero_grad(set_to_none=True)
            try:
                loss = loss_fn(model, batch)
                if not bool(torch.isfinite(loss)):
                    raise NumericalFailureError("loss")
                loss.backward()
                norm = nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
                if not bool(torch.isfinite(norm)):
                    raise NumericalFailureError("backward")
            except (LossEvaluationError, NumericalFailureError, IllConditionedMassError) as exc:
                model.load_state_dict(last_good)
                logger.error(
                    "Training diverged",
                    epoch=epoch,
                    error=exc.message,
                    last_good_epoch=len(result.history),
                )
                raise TrainingDivergedError(
                    f"Training diverged in epoch {epoch}: {exc.message}", epoch=epoch, result=result
                ) from exc
            if float(norm) > config.clip_norm:
                clipped += 1
            optimizer.step()
            batch_losses.append(float(loss.detach()))
        if scheduler is not None:
            scheduler.step()

        losses = torch.tensor(batch_losses, dtype=torch.float64)
        stats = EpochStats(
            epoch=epoch,
            loss_mean=float(losses.mean()),
            loss_std=float(losses.std(unbiased=False)),
            clipped_steps=clipped,
        )
        if validation is not None and len(validation):
            stats.validation_loss = float(evaluate_loss(model, validation, config.loss))
        result.history.append(stats)
        last_good = copy.deepcopy(model.state_dict())
        record_epoch(config.loss, stats.loss_mean, clipped)

        if epoch % log_every == 0 or epoch == config.epochs:
            logger.info(
                "Epoch finished",
                epoch=epoch,
                loss_mean=stats.loss_mean,
                loss_std=stats.loss_std,
                validation_loss=stats.validation_loss,
                clipped_steps=clipped,
            )

    return result
