"""
Experiment files in, reproducible output directories out.
"""

import csv
import io
import json
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from models import Dataset, ExperimentConfig, FederationResult, MetricsRecord, RoundMetrics, TuneGrid, TuneRow

from .dataset_service import avg_classes_per_client, dirichlet_partition, gen_mixture, load_cifar_binary
from .errors import ConfigError, PartitionError
from .federation_service import FederationService
from .tuning_service import hyperparam_search

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = [
    "config_hash",
    "method",
    "seed",
    "rounds",
    "knn_acc",
    "linear_acc",
    "delta",
    "align",
    "unif",
    "tuner_score",
]


def load_json(path: str | Path) -> dict[str, Any]:
    """Read a JSON object from disk; file and syntax problems become ConfigError."""
    try:
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(payload, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return payload


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset == "cifar":
        if cfg.cifar_path is None:
            raise ConfigError("cifar_path is required when dataset is 'cifar'")
        return load_cifar_binary(cfg.cifar_path, cfg.num_classes)
    return gen_mixture(
        cfg.num_classes,
        cfg.input_dim,
        cfg.per_class,
        cfg.class_sep,
        cfg.within_std,
        cfg.seed,
    )


def _number(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buffer.getvalue(), encoding="utf-8")


def summary_row(cfg: ExperimentConfig, final: RoundMetrics) -> list[str]:
    return [
        cfg.config_hash(),
        cfg.method.value,
        str(cfg.seed),
        str(cfg.rounds),
        _number(final.knn_acc),
        _number(final.linear_acc),
        _number(final.delta),
        _number(final.align),
        _number(final.unif),
        _number(final.tuner_score),
    ]


class ExperimentService:
    """Runs one experiment and persists its metrics."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.config_hash = cfg.config_hash()
        self.output_dir = Path(cfg.output_dir) / self.config_hash

    def run(self) -> FederationResult:
        """
        Run the experiment and write metrics.jsonl, summary.csv and config.json.

        Returns:
            The federation result
        """
        cfg = self.cfg
        dataset = build_dataset(cfg)
        shards = dirichlet_partition(dataset, cfg.num_clients, cfg.alpha, cfg.seed, cfg.shard_floor)
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"output directory {self.output_dir} is not writable: {e}") from e

        metrics_path = self.output_dir / "metrics.jsonl"
        with open(metrics_path, "w", encoding="utf-8") as f:

            def record(metrics: RoundMetrics) -> None:
                line = MetricsRecord(
                    **metrics.model_dump(),
                    config_hash=self.config_hash,
                    seed=cfg.seed,
                    method=cfg.method,
                ).to_json_line()
                f.write(line + "\n")
                f.flush()

            result = FederationService(
                cfg.federation_config(),
                dataset,
                shards,
                cfg.probe_settings(),
                on_round=record,
            ).run()

        write_csv(self.output_dir / "summary.csv", SUMMARY_COLUMNS, [summary_row(cfg, result.final)])
        (self.output_dir / "config.json").write_text(
            json.dumps(json.loads(cfg.canonical_json()), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        logger.info("experiment %s written to %s", self.config_hash, self.output_dir)
        return result


def tune_table_rows(table: list[TuneRow]) -> tuple[list[str], list[list[str]]]:
    """tune.csv header and rows, best score first (ties by lr, then grid order)."""
    keys: list[str] = []
    for row in table:
        for key in row.overrides:
            if key not in keys:
                keys.append(key)
    ordered = sorted(
        table,
        key=lambda r: (-r.tuner_score if math.isfinite(r.tuner_score) else math.inf, r.lr, r.index),
    )
    rows = [
        [
            str(r.index),
            *(json.dumps(r.overrides[k]) if k in r.overrides else "" for k in keys),
            _number(r.align),
            _number(r.unif),
            repr(r.tuner_score),
        ]
        for r in ordered
    ]
    return ["index", *keys, "align", "unif", "score"], rows


def run_tuning(grid: TuneGrid, output_dir: Path, workers: int = 1) -> tuple[ExperimentConfig, list[TuneRow]]:
    """Expand a grid file, score every entry, and write tune.csv."""
    entries = grid.expand()
    if not entries:
        raise ConfigError("tuning grid is empty")
    try:
        base = ExperimentConfig.model_validate(grid.base)
    except ValidationError as e:
        raise ConfigError(f"invalid base configuration: {e}") from e
    dataset = build_dataset(base)
    best, table = hyperparam_search(
        base,
        entries,
        dataset,
        tune_rounds=grid.tune_rounds,
        workers=workers,
        probe_settings=base.probe_settings(),
    )
    output_dir.mkdir(parents=True, exist_ok=True)
    header, rows = tune_table_rows(table)
    write_csv(output_dir / "tune.csv", header, rows)
    return best, table


def partition_stats(
    dataset: Dataset,
    num_clients: int,
    alphas: list[float],
    seeds: list[int],
    min_shard_size: int = 1,
) -> list[dict[str, Any]]:
    """
    Average classes per client for every (alpha, seed), plus a median row per alpha.

    A failed partition is recorded with an error message and left out of the median.
    """
    rows: list[dict[str, Any]] = []
    for alpha in alphas:
        at_least_one: list[float] = []
        at_least_1pct: list[float] = []
        for seed in seeds:
            try:
                shards = dirichlet_partition(dataset, num_clients, alpha, seed, min_shard_size)
            except (PartitionError, ConfigError) as e:
                logger.warning("alpha=%g seed=%d: %s", alpha, seed, e)
                rows.append({"alpha": alpha, "seed": str(seed), "at_least_one": None, "at_least_1pct": None, "error": str(e)})
                continue
            one = avg_classes_per_client(shards, dataset.labels, "at_least_one")
            pct = avg_classes_per_client(shards, dataset.labels, "at_least_1pct")
            at_least_one.append(one)
            at_least_1pct.append(pct)
            rows.append({"alpha": alpha, "seed": str(seed), "at_least_one": one, "at_least_1pct": pct, "error": None})
        rows.append(
            {
                "alpha": alpha,
                "seed": "median",
                "at_least_one": float(np.median(at_least_one)) if at_least_one else None,
                "at_least_1pct": float(np.median(at_least_1pct)) if at_least_1pct else None,
                "error": None,
            }
        )
    return rows
