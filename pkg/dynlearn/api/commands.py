"""Subcommand handlers: config merging, pipeline steps and artifact writing."""

import hashlib
import json
import tomllib
from collections.abc import Callable, Mapping
from pathlib import Path
from typing import Any, Optional, Union

import torch
from pydantic import ValidationError

from dynlearn.config import get_settings
from dynlearn.models.schemas import CommandSummary, Metrics, MetricsFile, RunConfig, TrainingRecord
from dynlearn.services.control import (
    ReferenceSignal,
    RegulationController,
    TrackingController,
    closed_loop,
    estimate_P,
    resolve_gains,
    tracking_rmse,
)
from dynlearn.services.evaluation import (
    BlackBoxModel,
    evaluate_model,
    mean_std,
    one_step_errors,
    predict_rollouts,
    train_blackbox,
)
from dynlearn.services.learning import TrainingDivergedError, TrainResult, TransitionDataset, train
from dynlearn.services.numcore import DTYPE, as_tensor, mass_inverse
from dynlearn.services.physnets import MechanicalStructure, build_structured_model
from dynlearn.services.plants import Plant, generate_dataset, get_plant, sample_configurations
from dynlearn.storage import (
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_control_log,
    save_dataset,
    save_history,
    save_prediction,
    save_trajectories,
)
from dynlearn.utils import ConfigError, DynLearnError, export_textfile, get_logger

logger = get_logger(__name__)

HEAD_WIDTH_FIELDS = ("mass_hidden", "potential_hidden", "damping_hidden", "input_hidden", "blackbox_hidden")

# Flat override name -> dotted RunConfig path
OVERRIDE_PATHS = {
    "plant": "plant",
    "model": "model",
    "seed": "seed",
    "dt": "dt",
    "out": "out",
    "epochs": "train.epochs",
    "gains": "control.gains",
    "dataset": "dataset",
    "checkpoints": "checkpoints",
    "configurations": "configurations",
}
ENV_OVERRIDES = ("seed", "out", "plant", "model", "dt", "epochs", "hidden", "window", "gains")

Model = Union[MechanicalStructure, BlackBoxModel]


class CommandError(DynLearnError):
    """Raised when a command cannot produce its artifacts."""


def load_config_file(path: Union[str, Path]) -> dict[str, Any]:
    """Read a JSON or TOML run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise ConfigError("Config file not found", field="config", path=str(path)) from exc
    try:
        if path.suffix == ".toml":
            data = tomllib.loads(text)
        elif path.suffix == ".json":
            data = json.loads(text)
        else:
            raise ConfigError("Config file must be .json or .toml", field="config", path=str(path))
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError("Config file is malformed", field="config", path=str(path), error=str(exc)) from exc
    if not isinstance(data, dict):
        raise ConfigError("Config file must hold a mapping", field="config", path=str(path))
    return data


def parse_widths(value: str) -> tuple[int, ...]:
    """``"32,32,32"`` -> ``(32, 32, 32)``."""
    try:
        widths = tuple(int(part) for part in value.split(","))
    except ValueError as exc:
        raise ConfigError("Hidden widths must be comma separated integers", field="hidden", value=value) from exc
    if not widths or any(w < 1 for w in widths):
        raise ConfigError("Hidden widths must be >= 1", field="hidden", value=value)
    return widths


def _set_path(data: dict[str, Any], dotted: str, value: Any) -> None:
    *parents, leaf = dotted.split(".")
    node = data
    for key in parents:
        child = node.get(key)
        if not isinstance(child, dict):
            child = {}
            node[key] = child
        node = child
    node[leaf] = value


def apply_overrides(data: dict[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Map flat ``--flag`` style overrides onto nested config paths."""
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "hidden":
            widths = parse_widths(value) if isinstance(value, str) else tuple(value)
            for name in HEAD_WIDTH_FIELDS:
                _set_path(data, f"heads.{name}", list(widths))
        elif key == "window":
            _set_path(data, "evaluation.windows", [value])
        elif key in OVERRIDE_PATHS:
            _set_path(data, OVERRIDE_PATHS[key], value)
        else:
            raise ConfigError(f"Unknown override: {key}", field=key)
    return data


def build_run_config(
    config_path: Optional[Union[str, Path]] = None,
    flags: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Merge file < environment < flags into a validated :class:`RunConfig`.

    Raises:
        ConfigError: The file is unreadable or the merged values do not
            validate; ``details["errors"]`` lists dotted field paths.
    """
    data = load_config_file(config_path) if config_path else {}
    env = {k: v for k, v in get_settings().run_overrides().items() if k in ENV_OVERRIDES}
    apply_overrides(data, env)
    apply_overrides(data, flags or {})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        errors = [f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("Invalid run configuration", errors=errors) from exc


def config_hash(config: RunConfig) -> str:
    """sha256 of the canonical config JSON; the output directory is not part of it."""
    payload = config.model_dump(mode="json", exclude={"out"})
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_metrics(config: RunConfig, command: str, metrics: dict[str, Metrics]) -> Path:
    """Write ``<command>_metrics.json`` (and the Prometheus textfile when enabled)."""
    out = _out_dir(config)
    document = MetricsFile(command=command, seed=config.seed, config_hash=config_hash(config), metrics=metrics)
    path = out / f"{command}_metrics.json"
    path.write_text(json.dumps(document.model_dump(mode="json", exclude_none=True), sort_keys=True, indent=2) + "\n")
    if get_settings().export_prometheus:
        export_textfile(out / "metrics.prom")
    return path


def _summary(config: RunConfig, command: str, artifacts: dict[str, Path]) -> CommandSummary:
    return CommandSummary(
        command=command,
        out=str(config.out),
        config_hash=config_hash(config),
        artifacts={name: str(path) for name, path in artifacts.items()},
    )


def _training_dataset(config: RunConfig) -> TransitionDataset:
    if config.dataset:
        return load_dataset(config.dataset)
    result = generate_dataset(config.generation)
    rate = config.generation.resample_hz[0]
    if rate not in result.datasets:
        raise CommandError("Every generated trajectory failed", failures=len(result.failures))
    return result.datasets[rate]


def _held_out(config: RunConfig, dataset: TransitionDataset) -> TransitionDataset:
    """The trajectories that training held out, or everything when none were."""
    _, held_out = dataset.split(config.train.validation_fraction, config.seed)
    if len(held_out) == 0:
        logger.warning("No held-out trajectories; evaluating on the full dataset", samples=len(dataset))
        return dataset
    return held_out


def _model_or_plant(config: RunConfig, plant: Plant) -> Model:
    if not config.checkpoints:
        logger.info("No checkpoint given; using the plant as model", plant=plant.name)
        return plant
    return load_checkpoint(config.checkpoints[0])


def _structured(model: Model, command: str) -> MechanicalStructure:
    if isinstance(model, BlackBoxModel):
        raise ConfigError(f"{command} needs a structured model", field="checkpoints")
    return model


def _check_dimensions(model: Model, plant: Plant) -> None:
    if (model.n, model.m_u) != (plant.n, plant.m_u):
        raise ConfigError(
            "Model and plant dimensions conflict",
            field="plant",
            model=[model.n, model.m_u],
            plant=[plant.n, plant.m_u],
        )


def gen_data(config: RunConfig) -> CommandSummary:
    """Generate one dataset per sampling rate plus raw trajectories and a manifest."""
    out = _out_dir(config)
    result = generate_dataset(config.generation)
    if not result.datasets:
        raise CommandError("Every generated trajectory failed", failures=len(result.failures))
    artifacts: dict[str, Path] = {}
    datasets = {}
    for rate, dataset in result.datasets.items():
        path = save_dataset(dataset, out / f"dataset_{rate:g}hz.csv")
        trajectories = save_trajectories(result.trajectories[rate], out / f"trajectories_{rate:g}hz.csv")
        artifacts[f"dataset_{rate:g}hz"] = path
        artifacts[f"trajectories_{rate:g}hz"] = trajectories
        datasets[f"{rate:g}"] = {
            "path": path.name,
            "trajectories_path": trajectories.name,
            "samples": len(dataset),
            "trajectories": len(dataset.trajectory_ids()),
        }
    manifest = {
        "command": "gen-data",
        "config_hash": config_hash(config),
        "seed": config.seed,
        "plant": config.generation.plant,
        "kind": config.generation.kind,
        "datasets": datasets,
        "failures": result.failures,
    }
    artifacts["manifest"] = out / "manifest.json"
    artifacts["manifest"].write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return _summary(config, "gen-data", artifacts)


def _training_record(config: RunConfig, result: TrainResult) -> TrainingRecord:
    final = result.final
    return TrainingRecord(
        epochs=len(result.history),
        seed=config.seed,
        final_loss_mean=final.loss_mean if final else None,
        final_loss_std=final.loss_std if final else None,
    )


def train_model(config: RunConfig) -> CommandSummary:
    """Train a structured or black-box model and write its checkpoint and history."""
    out = _out_dir(config)
    dataset = _training_dataset(config)
    training_set, validation = dataset.split(config.train.validation_fraction, config.seed)
    validation = validation if len(validation) else None
    checkpoint_path = out / "checkpoint.json"
    try:
        if config.model == "blackbox":
            result = train_blackbox(training_set, config.train, config.heads, validation=validation)
        else:
            model = build_structured_model(dataset.n, dataset.m_u, config.model, config.heads, config.seed)
            result = train(model, training_set, config.train, validation=validation)
    except TrainingDivergedError as exc:
        save_checkpoint(exc.result.model, checkpoint_path, dataset.plant, _training_record(config, exc.result))
        save_history(exc.result.history, out / "history.csv")
        logger.error("Saved the last good checkpoint", path=str(checkpoint_path), epoch=exc.epoch)
        raise

    save_checkpoint(result.model, checkpoint_path, dataset.plant, _training_record(config, result))
    history = save_history(result.history, out / "history.csv")
    metrics = {"train": Metrics(one_step_loss=mean_std(one_step_errors(result.model, training_set)))}
    if validation is not None:
        metrics["validation"] = Metrics(one_step_loss=mean_std(one_step_errors(result.model, validation)))
    return _summary(
        config,
        "train",
        {"checkpoint": checkpoint_path, "history": history, "metrics": write_metrics(config, "train", metrics)},
    )


def predict(config: RunConfig) -> CommandSummary:
    """Roll a model out on held-out trajectories and write predicted configurations."""
    out = _out_dir(config)
    dataset = _training_dataset(config)
    test = _held_out(config, dataset)
    plant = get_plant(dataset.plant)
    model = _model_or_plant(config, plant)
    _check_dimensions(model, plant)
    ids, truth, predicted, dt = predict_rollouts(model, test, config.evaluation.horizon_s)
    prediction = save_prediction(ids, truth, predicted, dt, out / "prediction.csv")
    metrics = {"model": evaluate_model(model, test, config.evaluation.horizon_s, config.evaluation.windows)}
    return _summary(
        config,
        "predict",
        {"prediction": prediction, "metrics": write_metrics(config, "predict", metrics)},
    )


def evaluate(config: RunConfig) -> CommandSummary:
    """Evaluate every given checkpoint (or the plant itself) on held-out trajectories."""
    dataset = _training_dataset(config)
    test = _held_out(config, dataset)
    plant = get_plant(dataset.plant)
    models: dict[str, Model] = {}
    for path in config.checkpoints:
        models[path] = load_checkpoint(path)
    if not models:
        models["plant"] = plant
    metrics = {}
    for name, model in models.items():
        _check_dimensions(model, plant)
        metrics[name] = evaluate_model(model, test, config.evaluation.horizon_s, config.evaluation.windows)
    return _summary(config, "eval", {"metrics": write_metrics(config, "eval", metrics)})


def control(config: RunConfig) -> CommandSummary:
    """Close the loop around the plant with a learned (or the plant's own) structure."""
    out = _out_dir(config)
    plant = get_plant(config.plant)
    settings = config.control
    model: Model = plant if settings.use_plant_model else _model_or_plant(config, plant)
    model = _structured(model, "control")
    _check_dimensions(model, plant)
    gains = resolve_gains(settings.gains, plant.n)
    reference = ReferenceSignal.from_spec(settings.reference, plant.n)
    if settings.law == "regulation":
        controller = RegulationController(model, gains, reference.position(0.0))
    else:
        controller = TrackingController(model, gains, reference)

    x0 = as_tensor(settings.initial_state) if settings.initial_state else torch.zeros(2 * plant.n, dtype=DTYPE)
    if x0.shape != (2 * plant.n,):
        raise ConfigError(
            "Initial state does not match the plant dimension",
            field="control.initial_state",
            expected=2 * plant.n,
            length=x0.numel(),
        )
    result = closed_loop(
        plant,
        controller,
        x0,
        duration=settings.duration,
        dt=settings.dt,
        saturation=settings.saturation,
        control_hz=settings.control_hz,
    )
    log = save_control_log(result, out / "control_log.csv")
    rmse, rmse_percent = tracking_rmse(result)
    metrics = {"controller": Metrics(tracking_rmse=rmse, tracking_rmse_percent=rmse_percent)}
    return _summary(config, "control", {"control_log": log, "metrics": write_metrics(config, "control", metrics)})


def _matrices(structure: MechanicalStructure, q: torch.Tensor) -> dict[str, Any]:
    mass = structure.mass_matrix(q)
    return {
        "M": mass.tolist(),
        "M_inv": mass_inverse(mass).tolist(),
        "D": structure.damping_matrix(q).tolist(),
        "G": structure.potential_grad(q).tolist(),
        "A": structure.input_matrix(q).tolist(),
    }


def inspect_structure(config: RunConfig) -> CommandSummary:
    """Learned and true M, M⁻¹, D, G, A at chosen configurations plus the P(q) report."""
    out = _out_dir(config)
    plant = get_plant(config.plant)
    model = _structured(_model_or_plant(config, plant), "inspect")
    _check_dimensions(model, plant)
    if config.configurations:
        lengths = sorted({len(row) for row in config.configurations})
        if lengths != [plant.n]:
            raise ConfigError(
                "Configurations do not match the plant dimension",
                field="configurations",
                expected=plant.n,
                lengths=lengths,
            )
        q_grid = as_tensor(config.configurations)
    else:
        q_grid = sample_configurations(plant, count=5, seed=config.seed, scale=0.5)

    with torch.no_grad():
        samples = [
            {"q": q.tolist(), "learned": _matrices(model, q), "true": _matrices(plant, q)} for q in q_grid
        ]
    report = estimate_P(model, plant, q_grid)
    document = {
        "command": "inspect",
        "config_hash": config_hash(config),
        "plant": plant.name,
        "samples": samples,
        "consistency": report.model_dump(mode="json"),
    }
    path = out / "inspect.json"
    path.write_text(json.dumps(document, sort_keys=True, indent=2) + "\n")
    return _summary(config, "inspect", {"inspect": path})


COMMANDS: dict[str, Callable[[RunConfig], CommandSummary]] = {
    "gen-data": gen_data,
    "train": train_model,
    "predict": predict,
    "control": control,
    "eval": evaluate,
    "inspect": inspect_structure,
}
