"""
Tests for experiment files, output directories and result tables.
"""

import json
import math

import pytest

from models import ExperimentConfig, Method, TuneGrid, TuneRow
from services.dataset_service import gen_mixture
from services.errors import ConfigError
from services.experiment_service import (
    SUMMARY_COLUMNS,
    ExperimentService,
    load_json,
    partition_stats,
    run_tuning,
    tune_table_rows,
)

SMALL_EXPERIMENT = {
    "num_clients": 4,
    "rounds": 1,
    "seed": 0,
    "method": "orchestra",
    "num_classes": 4,
    "input_dim": 8,
    "per_class": 20,
    "alpha": 1e5,
    "participation": 1.0,
    "local_epochs": 1,
    "batch_size": 8,
    "global_clusters": 4,
    "local_clusters": 2,
    "mem_size": 16,
    "hidden_dims": [8],
    "rep_dim": 4,
    "eval_every": 0,
    "linear_epochs": 20,
}


class TestLoadJson:
    """Test cases for load_json."""

    def test_reads_object(self, tmp_path):
        """Test a well-formed experiment file."""
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({"rounds": 1}))

        assert load_json(path) == {"rounds": 1}

    def test_missing_file(self, tmp_path):
        """Test that an unreadable file is a configuration error."""
        with pytest.raises(ConfigError):
            load_json(tmp_path / "absent.json")

    def test_bad_syntax(self, tmp_path):
        """Test that broken JSON is a configuration error."""
        path = tmp_path / "broken.json"
        path.write_text("{rounds: 1")

        with pytest.raises(ConfigError):
            load_json(path)

    def test_not_an_object(self, tmp_path):
        """Test that the file must hold an object."""
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")

        with pytest.raises(ConfigError):
            load_json(path)


class TestExperimentService:
    """Test cases for ExperimentService."""

    def _config(self, tmp_path, **overrides) -> ExperimentConfig:
        return ExperimentConfig(**{**SMALL_EXPERIMENT, "output_dir": str(tmp_path), **overrides})

    def test_output_layout(self, tmp_path):
        """Test metrics.jsonl, summary.csv and config.json under the config hash."""
        cfg = self._config(tmp_path)

        service = ExperimentService(cfg)
        service.run()

        out = tmp_path / cfg.config_hash()
        assert service.output_dir == out
        lines = (out / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 1
        record = json.loads(lines[0])
        assert record["round"] == 1
        assert record["config_hash"] == cfg.config_hash()
        summary = (out / "summary.csv").read_text().splitlines()
        assert summary[0] == ",".join(SUMMARY_COLUMNS)
        assert len(summary) == 2
        assert json.loads((out / "config.json").read_text())["seed"] == 0

    def test_zero_rounds(self, tmp_path):
        """Test that rounds=0 leaves metrics.jsonl empty but writes the summary."""
        cfg = self._config(tmp_path, rounds=0)

        result = ExperimentService(cfg).run()

        out = tmp_path / cfg.config_hash()
        assert (out / "metrics.jsonl").read_text() == ""
        row = (out / "summary.csv").read_text().splitlines()[1].split(",")
        assert row[SUMMARY_COLUMNS.index("rounds")] == "0"
        assert row[SUMMARY_COLUMNS.index("linear_acc")] == repr(result.final.linear_acc)

    def test_byte_identical_replay(self, tmp_path):
        """Test that the same config writes identical files twice."""
        first = tmp_path / "a"
        second = tmp_path / "b"
        cfg_a = self._config(first)
        cfg_b = self._config(second)

        ExperimentService(cfg_a).run()
        ExperimentService(cfg_b).run()

        for name in ("metrics.jsonl", "summary.csv", "config.json"):
            a = (first / cfg_a.config_hash() / name).read_bytes()
            b = (second / cfg_b.config_hash() / name).read_bytes()
            assert a == b


class TestTuneTable:
    """Test cases for tune_table_rows and run_tuning."""

    def test_rows_sorted_by_score(self):
        """Test descending score order with failures last."""
        table = [
            TuneRow(index=0, overrides={"lr": 0.1}, lr=0.1, tuner_score=0.2, align=0.5, unif=-1.5),
            TuneRow(index=1, overrides={"lr": 0.0}, lr=0.0, tuner_score=-math.inf, error="boom"),
            TuneRow(index=2, overrides={"lr": 0.05}, lr=0.05, tuner_score=0.4, align=0.8, unif=-2.0),
        ]

        header, rows = tune_table_rows(table)

        assert header == ["index", "lr", "align", "unif", "score"]
        assert [row[0] for row in rows] == ["2", "0", "1"]
        assert rows[-1][-1] == "-inf"

    def test_one_entry_grid(self, tmp_path):
        """Test that a one-entry grid writes a one-row table."""
        grid = TuneGrid(base=SMALL_EXPERIMENT, grid={"lr": [0.05]}, tune_rounds=1)

        best, table = run_tuning(grid, tmp_path)

        lines = (tmp_path / "tune.csv").read_text().splitlines()
        assert len(lines) == 2
        assert len(table) == 1
        assert best.lr == 0.05
        assert best.method == Method.ORCHESTRA

    def test_empty_grid(self, tmp_path):
        """Test that an empty grid is a configuration error."""
        with pytest.raises(ConfigError):
            run_tuning(TuneGrid(base=SMALL_EXPERIMENT), tmp_path)

    def test_invalid_base(self, tmp_path):
        """Test that the base configuration is validated."""
        grid = TuneGrid(base={"rounds": 1}, grid={"lr": [0.1]})

        with pytest.raises(ConfigError) as exc_info:
            run_tuning(grid, tmp_path)

        assert "num_clients" in str(exc_info.value)


class TestPartitionStats:
    """Test cases for partition_stats."""

    def setup_method(self):
        """Set up test fixtures."""
        self.dataset = gen_mixture(10, 8, 50, 3.0, 1.0, seed=0)

    def test_single_client_sees_every_class(self):
        """Test that K=1 gives M exactly."""
        rows = partition_stats(self.dataset, 1, [0.1], [0, 1])

        assert [row["at_least_one"] for row in rows] == [10.0, 10.0, 10.0]
        assert rows[-1]["seed"] == "median"

    def test_medians_fall_with_alpha(self):
        """Test that heterogeneity grows as alpha shrinks."""
        rows = partition_stats(self.dataset, 10, [1e5, 1e-1, 1e-3], [0, 1, 2])
        medians = [row["at_least_one"] for row in rows if row["seed"] == "median"]

        assert medians[0] == pytest.approx(10.0)
        assert medians == sorted(medians, reverse=True)

    def test_failed_cell_is_recorded(self):
        """Test that an impossible cell is reported instead of raised."""
        rows = partition_stats(self.dataset, 10, [0.5], [0], min_shard_size=100)

        assert rows[0]["error"] is not None
        assert rows[0]["at_least_one"] is None
        assert rows[1]["at_least_one"] is None
