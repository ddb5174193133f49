"""Tests for error payloads and run metrics."""

import torch

from dynlearn.models import GenSpec
from dynlearn.services.plants import generate_dataset
from dynlearn.utils import ConfigError, DynLearnError, export_textfile, record_command
from dynlearn.utils.metrics import REGISTRY


class TestErrors:
    """Tests for structured error payloads."""

    def test_to_dict(self):
        """Test that the payload names the error type and keeps its details."""
        payload = ConfigError("Invalid run configuration", errors=["train.epochs: bad"], field="train").to_dict()
        assert payload == {
            "error": "ConfigError",
            "message": "Invalid run configuration",
            "details": {"errors": ["train.epochs: bad"], "field": "train"},
        }

    def test_details_become_plain_values(self):
        """Test that tuples, nested mappings and objects are made JSON friendly."""
        details = DynLearnError("x", shape=(2, 3), nested={1: (4,)}, tensor=torch.zeros(1)).to_dict()["details"]
        assert details["shape"] == [2, 3]
        assert details["nested"] == {"1": [4]}
        assert isinstance(details["tensor"], str)


class TestMetrics:
    """Tests for the Prometheus registry."""

    def test_command_counter(self):
        """Test that recording a command increments its labelled counter."""
        labels = {"command": "inspect", "status": "error"}
        before = REGISTRY.get_sample_value("dynlearn_commands_total", labels) or 0.0
        record_command("inspect", success=False)
        assert REGISTRY.get_sample_value("dynlearn_commands_total", labels) == before + 1

    def test_generation_counts_trajectories(self):
        """Test that dataset generation records every trajectory."""
        labels = {"plant": "damped_pendulum", "status": "success"}
        before = REGISTRY.get_sample_value("dynlearn_trajectories_total", labels) or 0.0
        spec = GenSpec(n_initial_states=2, n_signals=1, duration=0.1, fine_dt=1e-3, resample_hz=[100.0])
        generate_dataset(spec)
        assert REGISTRY.get_sample_value("dynlearn_trajectories_total", labels) == before + 2

    def test_textfile_export(self, tmp_path):
        """Test that the registry is written in the textfile format."""
        record_command("train")
        path = tmp_path / "metrics.prom"
        export_textfile(path)
        assert "dynlearn_commands_total" in path.read_text()
