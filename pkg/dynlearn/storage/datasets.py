"""CSV / JSON-lines files for datasets, trajectories and control logs."""

import csv
import json
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Union

import torch
from pydantic import ValidationError

from dynlearn.models.schemas import DatasetMeta
from dynlearn.services.control import ClosedLoopResult
from dynlearn.services.learning import EpochStats, TransitionDataset
from dynlearn.services.plants import Trajectory, trajectory_array
from dynlearn.utils import DynLearnError, get_logger

logger = get_logger(__name__)


class DatasetFormatError(DynLearnError):
    """Raised when a dataset file or its metadata cannot be read."""


def _names(prefix: str, count: int) -> list[str]:
    return [f"{prefix}{i}" for i in range(count)]


def dataset_columns(n: int, m_u: int) -> list[str]:
    return [
        "trajectory_id",
        *_names("q", n),
        *_names("v", n),
        *_names("u", m_u),
        "dt",
        *_names("next_q", n),
        *_names("next_v", n),
    ]


def meta_path(path: Union[str, Path]) -> Path:
    """Sidecar metadata path: ``data.csv`` -> ``data.meta.json``."""
    return Path(path).with_suffix(".meta.json")


def _format(value: float) -> str:
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[float]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(v) for v in row])


def save_dataset(dataset: TransitionDataset, path: Union[str, Path]) -> Path:
    """Write ``dataset`` as CSV (or JSON lines for ``.jsonl``) plus its metadata sidecar."""
    path = Path(path)
    columns = dataset_columns(dataset.n, dataset.m_u)
    table = torch.cat(
        [
            dataset.trajectory_id[:, None].to(torch.float64),
            dataset.q,
            dataset.v,
            dataset.u,
            dataset.dt[:, None],
            dataset.next_q,
            dataset.next_v,
        ],
        dim=-1,
    ).tolist()
    if path.suffix == ".jsonl":
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as handle:
            for row in table:
                record = dict(zip(columns, row))
                record["trajectory_id"] = int(record["trajectory_id"])
                handle.write(json.dumps(record) + "\n")
    else:
        rows = ([int(row[0]), *row[1:]] for row in table)
        _write_rows(path, columns, rows)
    meta_path(path).write_text(json.dumps(dataset.meta().model_dump(mode="json"), sort_keys=True, indent=2) + "\n")
    logger.info("Dataset saved", path=str(path), samples=len(dataset), kind=dataset.kind)
    return path


def _read_meta(path: Path) -> DatasetMeta:
    sidecar = meta_path(path)
    try:
        return DatasetMeta.model_validate_json(sidecar.read_text())
    except FileNotFoundError as exc:
        raise DatasetFormatError("Dataset metadata not found", path=str(sidecar)) from exc
    except ValidationError as exc:
        raise DatasetFormatError(
            "Dataset metadata is malformed",
            path=str(sidecar),
            errors=[f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()],
        ) from exc


def _read_table(path: Path, columns: list[str]) -> list[list[float]]:
    rows: list[list[float]] = []
    try:
        if path.suffix == ".jsonl":
            with path.open() as handle:
                for line_number, line in enumerate(handle, 1):
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    missing = [c for c in columns if c not in record]
                    if missing:
                        raise DatasetFormatError("Dataset record misses columns", line=line_number, missing=missing)
                    rows.append([float(record[c]) for c in columns])
            return rows
        with path.open(newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header != columns:
                raise DatasetFormatError("Dataset header does not match", expected=columns, found=header)
            for line_number, row in enumerate(reader, 2):
                if len(row) != len(columns):
                    raise DatasetFormatError("Dataset row has the wrong width", line=line_number)
                rows.append([float(v) for v in row])
    except FileNotFoundError as exc:
        raise DatasetFormatError("Dataset file not found", path=str(path)) from exc
    except (ValueError, json.JSONDecodeError) as exc:
        raise DatasetFormatError("Dataset contains a malformed value", path=str(path), error=str(exc)) from exc
    return rows


def load_dataset(path: Union[str, Path]) -> TransitionDataset:
    path = Path(path)
    meta = _read_meta(path)
    columns = dataset_columns(meta.n, meta.m_u)
    rows = _read_table(path, columns)
    if not rows:
        raise DatasetFormatError("Dataset has no samples", path=str(path))
    table = torch.tensor(rows, dtype=torch.float64)
    n, m_u = meta.n, meta.m_u
    blocks = torch.split(table, [1, n, n, m_u, 1, n, n], dim=-1)
    dataset = TransitionDataset(
        kind=meta.kind,
        trajectory_id=blocks[0].squeeze(-1).to(torch.long),
        q=blocks[1],
        v=blocks[2],
        u=blocks[3],
        dt=blocks[4].squeeze(-1),
        next_q=blocks[5],
        next_v=blocks[6],
        plant=meta.plant,
        sample_hz=meta.sample_hz,
    )
    logger.info("Dataset loaded", path=str(path), samples=len(dataset), kind=dataset.kind)
    return dataset


def save_trajectories(trajectories: Sequence[Trajectory], path: Union[str, Path]) -> Path:
    """Rows ``trajectory_id, t, q*, qd*, u*`` (+ ``p*``)."""
    path = Path(path)
    if not trajectories:
        raise DatasetFormatError("No trajectories to write")
    first = trajectories[0]
    n, m_u = first.q.shape[-1], first.u.shape[-1]
    header = ["trajectory_id", "t", *_names("q", n), *_names("qd", n), *_names("u", m_u)]
    if first.p is not None:
        header += _names("p", n)

    def rows():
        for trajectory in trajectories:
            for row in trajectory_array(trajectory).tolist():
                yield [trajectory.trajectory_id, *row]

    _write_rows(path, header, rows())
    return path


def save_control_log(result: ClosedLoopResult, path: Union[str, Path]) -> Path:
    """Rows ``t, q*, q_ref*, u*, clipped`` of every control step."""
    path = Path(path)
    n, m_u = result.q_ref.shape[-1], result.u.shape[-1]
    header = ["t", *_names("q", n), *_names("q_ref", n), *_names("u", m_u), "clipped"]
    steps = result.u.shape[0]
    table = torch.cat(
        [
            result.t[:steps, None],
            result.q[:steps],
            result.q_ref[:steps],
            result.u,
            result.clipped[:, None].to(torch.float64),
        ],
        dim=-1,
    ).tolist()
    _write_rows(path, header, table)
    return path


def save_history(history: Sequence[EpochStats], path: Union[str, Path]) -> Path:
    """Rows ``epoch, loss_mean, loss_std, validation_loss, clipped_steps``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "loss_mean", "loss_std", "validation_loss", "clipped_steps"])
        for stats in history:
            writer.writerow(
                [
                    stats.epoch,
                    _format(stats.loss_mean),
                    _format(stats.loss_std),
                    "" if stats.validation_loss is None else _format(stats.validation_loss),
                    stats.clipped_steps,
                ]
            )
    return path


def save_prediction(
    ids: Sequence[int],
    truth: torch.Tensor,
    predicted: torch.Tensor,
    dt: float,
    path: Union[str, Path],
) -> Path:
    """Rows ``trajectory_id, t, q*, q_pred*`` of stacked ``(H+1, B, 2n)`` rollouts."""
    path = Path(path)
    n = truth.shape[-1] // 2
    header = ["trajectory_id", "t", *_names("q", n), *_names("q_pred", n)]
    steps = truth.shape[0]

    def rows():
        for column, trajectory_id in enumerate(ids):
            for k in range(steps):
                yield [
                    trajectory_id,
                    k * dt,
                    *truth[k, column, :n].tolist(),
                    *predicted[k, column, :n].tolist(),
                ]

    _write_rows(path, header, rows())
    return path
