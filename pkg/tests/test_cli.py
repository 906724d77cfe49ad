"""
Tests for the orchestra-sim command-line interface.
"""

import csv
import json

import numpy as np
import pytest

from app.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from services.errors import NumericalError
from tests.test_experiment_service import SMALL_EXPERIMENT


def _write_json(path, payload) -> str:
    path.write_text(json.dumps(payload))
    return str(path)


def _read_rows(path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestRunCommand:
    """Test cases for `orchestra-sim run`."""

    def test_zero_rounds_writes_empty_metrics(self, tmp_path, capsys):
        """Test that --rounds 0 overrides the file and leaves metrics.jsonl empty."""
        config = _write_json(tmp_path / "exp.json", SMALL_EXPERIMENT)

        code = main(["run", config, "--rounds", "0", "--output-dir", str(tmp_path / "out")])

        assert code == EXIT_OK
        out = capsys.readouterr().out
        config_hash = out.splitlines()[0].removeprefix("config hash: ")
        assert (tmp_path / "out" / config_hash / "metrics.jsonl").read_text() == ""
        assert "rounds: 0" in out

    def test_missing_required_field(self, tmp_path, capsys):
        """Test exit code 2 and a message naming the field."""
        payload = {k: v for k, v in SMALL_EXPERIMENT.items() if k != "method"}
        config = _write_json(tmp_path / "exp.json", payload)

        code = main(["run", config, "--output-dir", str(tmp_path)])

        assert code == EXIT_CONFIG
        assert "method" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        """Test that a typo in the experiment file is rejected."""
        config = _write_json(tmp_path / "exp.json", {**SMALL_EXPERIMENT, "num_clinets": 3})

        assert main(["run", config]) == EXIT_CONFIG
        assert "num_clinets" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        """Test that an unreadable experiment file is a configuration error."""
        assert main(["run", str(tmp_path / "absent.json")]) == EXIT_CONFIG

    def test_numerical_failure(self, tmp_path, mocker, capsys):
        """Test that a numerical error maps to exit code 3."""
        mocker.patch(
            "app.cli.ExperimentService.run",
            side_effect=NumericalError("Sinkhorn kernel underflowed", term="sinkhorn"),
        )
        config = _write_json(tmp_path / "exp.json", SMALL_EXPERIMENT)

        assert main(["run", config, "--output-dir", str(tmp_path)]) == EXIT_RUNTIME
        assert "underflowed" in capsys.readouterr().err

    def test_output_dir_from_environment(self, tmp_path, monkeypatch, capsys):
        """Test ORCHESTRA_OUTPUT_DIR when neither file nor flag sets output_dir."""
        monkeypatch.setenv("ORCHESTRA_OUTPUT_DIR", str(tmp_path / "env-out"))
        config = _write_json(tmp_path / "exp.json", {**SMALL_EXPERIMENT, "rounds": 0})

        assert main(["run", config]) == EXIT_OK
        assert (tmp_path / "env-out").is_dir()


class TestTuneCommand:
    """Test cases for `orchestra-sim tune`."""

    def test_one_entry_grid(self, tmp_path, capsys):
        """Test a one-row tune.csv and the printed best configuration."""
        grid = _write_json(
            tmp_path / "grid.json",
            {"base": SMALL_EXPERIMENT, "grid": {"lr": [0.05]}, "tune_rounds": 1},
        )

        code = main(["tune", grid, "--output-dir", str(tmp_path)])

        assert code == EXIT_OK
        rows = _read_rows(tmp_path / "tune.csv")
        assert len(rows) == 1
        assert rows[0]["lr"] == "0.05"
        assert "best configuration" in capsys.readouterr().out

    def test_empty_grid(self, tmp_path):
        """Test that an empty grid exits with an error."""
        grid = _write_json(tmp_path / "grid.json", {"base": SMALL_EXPERIMENT, "grid": {}})

        assert main(["tune", grid, "--output-dir", str(tmp_path)]) == EXIT_CONFIG


class TestPartitionStatsCommand:
    """Test cases for `orchestra-sim partition-stats`."""

    def test_single_client_table(self, tmp_path, capsys):
        """Test that K=1 reports M for every seed and the median."""
        output = tmp_path / "stats.csv"

        code = main(
            [
                "partition-stats",
                "--clients", "1",
                "--alphas", "0.1",
                "--seeds", "0", "1",
                "--num-classes", "4",
                "--per-class", "10",
                "--input-dim", "8",
                "--output", str(output),
            ]
        )

        assert code == EXIT_OK
        rows = _read_rows(output)
        assert [row["seed"] for row in rows] == ["0", "1", "median"]
        assert all(row["at_least_one"] == "4.0000" for row in rows)
        assert capsys.readouterr().out.startswith("alpha,seed,at_least_one,at_least_1pct,error")


class TestClusterCommand:
    """Test cases for `orchestra-sim cluster`."""

    def setup_method(self):
        """Set up test fixtures."""
        rng = np.random.default_rng(0)
        self.points = rng.normal(size=(9, 3))

    def _input(self, tmp_path) -> str:
        path = tmp_path / "points.csv"
        lines = ["x0,x1,x2", *(",".join(repr(float(v)) for v in row) for row in self.points)]
        path.write_text("\n".join(lines) + "\n")
        return str(path)

    def test_writes_balanced_assignments(self, tmp_path, capsys):
        """Test assignments.csv and centroids.csv and the reported delta."""
        code = main(["cluster", self._input(tmp_path), "--clusters", "3", "--output-dir", str(tmp_path)])

        assert code == EXIT_OK
        assignments = _read_rows(tmp_path / "assignments.csv")
        labels = np.array([int(row["cluster"]) for row in assignments])
        assert np.bincount(labels, minlength=3).tolist() == [3, 3, 3]

        centroids = np.array(
            [[float(row[f"c{j}"]) for j in range(3)] for row in _read_rows(tmp_path / "centroids.csv")]
        )
        unit = self.points / np.linalg.norm(self.points, axis=1, keepdims=True)
        sims = unit @ centroids.T
        expected = max(sims[i, g] for i in range(9) for g in range(3) if labels[i] != g)
        out = capsys.readouterr().out
        reported = next(line for line in out.splitlines() if line.startswith("delta: "))
        assert float(reported.removeprefix("delta: ")) == pytest.approx(expected, abs=1e-12)

    def test_single_cluster(self, tmp_path, capsys):
        """Test that G=1 assigns every row to cluster 0."""
        code = main(["cluster", self._input(tmp_path), "--clusters", "1", "--output-dir", str(tmp_path)])

        assert code == EXIT_OK
        assert {row["cluster"] for row in _read_rows(tmp_path / "assignments.csv")} == {"0"}
        assert "not applicable" in capsys.readouterr().out

    def test_too_many_clusters(self, tmp_path):
        """Test that n < G exits with a configuration error."""
        assert main(["cluster", self._input(tmp_path), "--clusters", "10", "--output-dir", str(tmp_path)]) == EXIT_CONFIG


class TestGradCheckCommand:
    """Test cases for `orchestra-sim grad-check`."""

    def test_passes(self, capsys):
        """Test that every loss is listed once and the check passes."""
        code = main(["grad-check", "--draws", "3"])

        out = capsys.readouterr().out
        assert code == EXIT_OK
        for name in ("cluster_loss", "degeneracy_loss", "specloss_local"):
            assert out.count(name) == 1

    def test_injected_failure(self, mocker, capsys):
        """Test that a wrong gradient gives a nonzero exit."""
        mocker.patch(
            "app.cli.gradient_check_suite",
            return_value={"cluster_loss": 2.0, "degeneracy_loss": 1e-9, "specloss_local": 1e-9},
        )

        assert main(["grad-check"]) == EXIT_RUNTIME
        assert "FAIL" in capsys.readouterr().out


class TestParser:
    """Test cases for argument parsing."""

    def test_subcommand_required(self):
        """Test that argparse rejects a missing subcommand."""
        with pytest.raises(SystemExit) as exc_info:
            main([])

        assert exc_info.value.code == 2
