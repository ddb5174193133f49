"""JSON checkpoints of structured and black-box models."""

import json
from pathlib import Path
from typing import Optional, Union

from pydantic import ValidationError
from torch import nn

from dynlearn.models.schemas import CheckpointFile, HeadRecord, TrainingRecord
from dynlearn.services.evaluation import BlackBoxModel
from dynlearn.services.numcore import DimensionMismatchError, flatten_params, load_flat_params
from dynlearn.services.physnets import (
    CholeskyHead,
    InputMatrixHead,
    PotentialHead,
    StructuredModel,
)
from dynlearn.utils import DynLearnError, get_logger

logger = get_logger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

Model = Union[StructuredModel, BlackBoxModel]


class CheckpointFormatError(DynLearnError):
    """Raised when a checkpoint file cannot be parsed."""


class CheckpointVersionError(CheckpointFormatError):
    """Raised when a checkpoint was written by an unsupported format version."""


def _head_record(head: nn.Module) -> HeadRecord:
    return HeadRecord(
        spec=head.net.spec,
        options=head.options(),
        params=flatten_params(head.net).tolist(),
    )


def checkpoint_document(
    model: Model,
    plant: Optional[str] = None,
    training: Optional[TrainingRecord] = None,
) -> CheckpointFile:
    if isinstance(model, BlackBoxModel):
        kind, heads = "blackbox", {"network": _head_record(model)}
    else:
        kind, heads = model.kind, {name: _head_record(head) for name, head in model.heads().items()}
    return CheckpointFile(
        format_version=CHECKPOINT_FORMAT_VERSION,
        kind=kind,
        n=model.n,
        m_u=model.m_u,
        plant=plant,
        heads=heads,
        training=training,
    )


def dumps_checkpoint(document: CheckpointFile) -> str:
    """Canonical text: sorted keys, fixed indentation, shortest round-trip floats."""
    return json.dumps(document.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def save_checkpoint(
    model: Model,
    path: Union[str, Path],
    plant: Optional[str] = None,
    training: Optional[TrainingRecord] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_checkpoint(checkpoint_document(model, plant, training)))
    logger.info("Checkpoint saved", path=str(path), kind=getattr(model, "kind", "blackbox"))
    return path


def read_checkpoint(path: Union[str, Path]) -> CheckpointFile:
    """Parse and validate a checkpoint file without building a model."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise CheckpointFormatError("Checkpoint file not found", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(
            "Checkpoint is not valid JSON", path=str(path), line=exc.lineno, column=exc.colno
        ) from exc
    if not isinstance(raw, dict) or "format_version" not in raw:
        raise CheckpointFormatError("Checkpoint has no format_version", path=str(path))
    if raw["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            "Unsupported checkpoint format version",
            path=str(path),
            version=raw["format_version"],
            supported=CHECKPOINT_FORMAT_VERSION,
        )
    try:
        return CheckpointFile.model_validate(raw)
    except ValidationError as exc:
        raise CheckpointFormatError(
            "Checkpoint does not match the expected layout",
            path=str(path),
            errors=[f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()],
        ) from exc


def _load_params(head: nn.Module, record: HeadRecord, name: str) -> None:
    try:
        load_flat_params(head.net, record.params)
    except DimensionMismatchError as exc:
        raise CheckpointFormatError(f"Parameters of head '{name}' do not match its spec", **exc.details) from exc


def model_from_checkpoint(document: CheckpointFile) -> Model:
    """Rebuild the model described by a validated checkpoint document."""
    heads = document.heads
    try:
        if document.kind == "blackbox":
            record = heads["network"]
            model = BlackBoxModel(
                document.n,
                document.m_u,
                state_kind=str(record.options.get("state_kind", "lnn")),
                hidden=record.spec.hidden,
                activation=record.spec.activation,
                seed=record.spec.seed,
            )
            _load_params(model, record, "network")
            return model

        mass, damping = heads["mass"], heads["damping"]
        model = StructuredModel(
            n=document.n,
            m_u=document.m_u,
            kind=document.kind,
            mass=CholeskyHead(
                mass.spec,
                document.n,
                eps=float(mass.options["eps"]),
                scale=mass.options.get("scale"),
                diagonal=bool(mass.options.get("diagonal", False)),
            ),
            potential=PotentialHead(heads["potential"].spec),
            damping=CholeskyHead(
                damping.spec,
                document.n,
                eps=float(damping.options["eps"]),
                scale=damping.options.get("scale"),
                diagonal=bool(damping.options.get("diagonal", False)),
            ),
            input_matrix=InputMatrixHead(
                heads["input"].spec, document.n, document.m_u, scale=heads["input"].options.get("scale")
            ),
        )
    except KeyError as exc:
        raise CheckpointFormatError("Checkpoint is missing an entry", key=str(exc)) from exc
    except DimensionMismatchError as exc:
        raise CheckpointFormatError(f"Inconsistent checkpoint: {exc.message}", **exc.details) from exc
    for name, head in model.heads().items():
        _load_params(head, heads[name], name)
    return model


def load_checkpoint(path: Union[str, Path]) -> Model:
    """Load a model; raises :class:`CheckpointFormatError` before building anything partial."""
    model = model_from_checkpoint(read_checkpoint(path))
    logger.info("Checkpoint loaded", path=str(path), kind=getattr(model, "kind", "blackbox"))
    return model
