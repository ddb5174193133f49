"""Unit tests for checkpoint and dataset files."""

import csv
import json

import pytest
import torch

from dynlearn.models import TrainingRecord
from dynlearn.services.control import RegulationController, closed_loop, resolve_gains
from dynlearn.services.evaluation import BlackBoxModel
from dynlearn.services.learning import EpochStats
from dynlearn.services.numcore import DTYPE, flatten_params
from dynlearn.services.physnets import build_structured_model
from dynlearn.services.plants import generate_dataset
from dynlearn.storage import (
    CheckpointFormatError,
    CheckpointVersionError,
    DatasetFormatError,
    load_checkpoint,
    load_dataset,
    read_checkpoint,
    save_checkpoint,
    save_control_log,
    save_dataset,
    save_history,
    save_trajectories,
)
from dynlearn.storage.datasets import dataset_columns, meta_path


def header(path) -> list[str]:
    with open(path, newline="") as handle:
        return next(csv.reader(handle))


class TestCheckpoints:
    """Tests for model checkpoints."""

    def test_structured_round_trip_is_exact(self, tmp_path, small_heads):
        """Test that a reloaded model evaluates bit-for-bit like the saved one."""
        model = build_structured_model(2, 2, "hnn", small_heads, seed=11)
        path = save_checkpoint(model, tmp_path / "model.json", plant="two_link_arm")
        loaded = load_checkpoint(path)
        q = torch.tensor([[0.3, -0.6], [1.1, 0.2]], dtype=DTYPE)
        assert loaded.kind == "hnn"
        assert torch.equal(flatten_params(loaded), flatten_params(model))
        assert torch.equal(loaded.mass_matrix(q), model.mass_matrix(q))
        assert torch.equal(loaded.input_matrix(q), model.input_matrix(q))

    def test_saving_twice_gives_identical_bytes(self, tmp_path, small_model):
        """Test that the checkpoint text is canonical."""
        first = save_checkpoint(small_model, tmp_path / "a.json").read_bytes()
        second = save_checkpoint(small_model, tmp_path / "b.json").read_bytes()
        assert first == second

    def test_metadata_is_kept(self, tmp_path, small_model):
        """Test that the plant name and training record are stored."""
        record = TrainingRecord(epochs=3, seed=7, final_loss_mean=0.5)
        save_checkpoint(small_model, tmp_path / "model.json", plant="damped_pendulum", training=record)
        document = read_checkpoint(tmp_path / "model.json")
        assert document.plant == "damped_pendulum"
        assert document.training.epochs == 3
        assert set(document.heads) == {"mass", "potential", "damping", "input"}

    def test_blackbox_round_trip(self, tmp_path):
        """Test that black-box networks reload with their state kind."""
        model = BlackBoxModel(2, 2, state_kind="hnn", hidden=(6, 6), seed=2)
        loaded = load_checkpoint(save_checkpoint(model, tmp_path / "bb.json"))
        assert isinstance(loaded, BlackBoxModel)
        assert loaded.state_kind == "hnn"
        x, u = torch.ones(1, 4, dtype=DTYPE), torch.zeros(1, 2, dtype=DTYPE)
        assert torch.equal(loaded.step(x, u, 0.01), model.step(x, u, 0.01))

    def test_missing_file(self, tmp_path):
        """Test that a missing checkpoint raises CheckpointFormatError."""
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(tmp_path / "absent.json")

    def test_corrupted_json(self, tmp_path, small_model):
        """Test that a truncated file raises CheckpointFormatError."""
        path = save_checkpoint(small_model, tmp_path / "model.json")
        path.write_text(path.read_text()[:40])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path, small_model):
        """Test that an unknown format version raises CheckpointVersionError."""
        path = save_checkpoint(small_model, tmp_path / "model.json")
        document = json.loads(path.read_text())
        document["format_version"] = 999
        path.write_text(json.dumps(document))
        with pytest.raises(CheckpointVersionError) as excinfo:
            load_checkpoint(path)
        assert excinfo.value.details["version"] == 999

    def test_parameters_of_wrong_length(self, tmp_path, small_model):
        """Test that when a head has too few parameters, loading fails without a partial model."""
        path = save_checkpoint(small_model, tmp_path / "model.json")
        document = json.loads(path.read_text())
        document["heads"]["mass"]["params"] = document["heads"]["mass"]["params"][:-1]
        path.write_text(json.dumps(document))
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_missing_head(self, tmp_path, small_model):
        """Test that a checkpoint without its potential head is rejected."""
        path = save_checkpoint(small_model, tmp_path / "model.json")
        document = json.loads(path.read_text())
        del document["heads"]["potential"]
        path.write_text(json.dumps(document))
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)


class TestDatasetFiles:
    """Tests for transition dataset files."""

    @pytest.mark.parametrize("suffix", [".csv", ".jsonl"])
    def test_round_trip(self, tmp_path, pendulum_data, suffix):
        """Test that saved datasets reload with identical columns."""
        path = save_dataset(pendulum_data, tmp_path / f"data{suffix}")
        loaded = load_dataset(path)
        assert loaded.kind == pendulum_data.kind
        assert loaded.trajectory_ids() == pendulum_data.trajectory_ids()
        for column in ("q", "v", "u", "dt", "next_q", "next_v"):
            assert torch.equal(getattr(loaded, column), getattr(pendulum_data, column))

    def test_csv_header(self, tmp_path, pendulum_data):
        """Test the column order of the CSV file."""
        path = save_dataset(pendulum_data, tmp_path / "data.csv")
        assert header(path) == ["trajectory_id", "q0", "v0", "u0", "dt", "next_q0", "next_v0"]
        assert dataset_columns(2, 1) == [
            "trajectory_id", "q0", "q1", "v0", "v1", "u0", "dt", "next_q0", "next_q1", "next_v0", "next_v1",
        ]

    def test_sidecar_metadata(self, tmp_path, pendulum_data):
        """Test that the metadata sidecar sits next to the data file."""
        path = save_dataset(pendulum_data, tmp_path / "data.csv")
        assert meta_path(path).name == "data.meta.json"
        assert json.loads(meta_path(path).read_text())["kind"] == "lnn"

    def test_missing_metadata(self, tmp_path, pendulum_data):
        """Test that a dataset without its sidecar raises DatasetFormatError."""
        path = save_dataset(pendulum_data, tmp_path / "data.csv")
        meta_path(path).unlink()
        with pytest.raises(DatasetFormatError):
            load_dataset(path)

    def test_header_mismatch(self, tmp_path, pendulum_data):
        """Test that a renamed column raises DatasetFormatError."""
        path = save_dataset(pendulum_data, tmp_path / "data.csv")
        lines = path.read_text().splitlines()
        lines[0] = lines[0].replace("next_v0", "w0")
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError):
            load_dataset(path)

    def test_malformed_value(self, tmp_path, pendulum_data):
        """Test that a non-numeric cell raises DatasetFormatError."""
        path = save_dataset(pendulum_data, tmp_path / "data.csv")
        lines = path.read_text().splitlines()
        cells = lines[1].split(",")
        cells[1] = "abc"
        lines[1] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError):
            load_dataset(path)


class TestLogs:
    """Tests for trajectory, history and control-log tables."""

    def test_trajectory_file(self, tmp_path, pendulum_spec):
        """Test the trajectory table header and row count."""
        trajectories = generate_dataset(pendulum_spec).trajectories[100.0]
        path = save_trajectories(trajectories, tmp_path / "trajectories.csv")
        assert header(path) == ["trajectory_id", "t", "q0", "qd0", "u0"]
        with open(path) as handle:
            assert sum(1 for _ in handle) == 1 + sum(len(tr.q) for tr in trajectories)

    def test_no_trajectories(self, tmp_path):
        """Test that an empty trajectory list is rejected."""
        with pytest.raises(DatasetFormatError):
            save_trajectories([], tmp_path / "trajectories.csv")

    def test_history_file(self, tmp_path):
        """Test that a missing validation loss is written as an empty cell."""
        history = [EpochStats(epoch=1, loss_mean=0.5, loss_std=0.1, validation_loss=None, clipped_steps=0)]
        path = save_history(history, tmp_path / "history.csv")
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["epoch", "loss_mean", "loss_std", "validation_loss", "clipped_steps"]
        assert rows[1] == ["1", "0.5", "0.1", "", "0"]

    def test_control_log(self, tmp_path, arm):
        """Test that the control log has one row per control step."""
        controller = RegulationController(arm, resolve_gains("10,50", 2), torch.zeros(2, dtype=DTYPE))
        result = closed_loop(arm, controller, torch.zeros(4, dtype=DTYPE), duration=0.05, dt=0.01)
        path = save_control_log(result, tmp_path / "control_log.csv")
        assert header(path) == ["t", "q0", "q1", "q_ref0", "q_ref1", "u0", "u1", "clipped"]
        with open(path) as handle:
            assert sum(1 for _ in handle) == 1 + 5
