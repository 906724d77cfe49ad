"""
Unsupervised hyperparameter search driven by the Align + 0.2 * Unif score.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any, TypeVar

from pydantic import ValidationError

from models import ClientShard, Dataset, FederationConfig, ProbeSettings, TuneRow

from .dataset_service import dirichlet_partition
from .errors import ConfigError, OrchestraError, RoundError
from .federation_service import FederationService

logger = logging.getLogger(__name__)

ConfigT = TypeVar("ConfigT", bound=FederationConfig)


def _entry_config(base: ConfigT, overrides: dict[str, Any], tune_rounds: int) -> ConfigT:
    payload = base.model_dump()
    payload.update(overrides)
    # probes are not part of the score; clients run sequentially inside a grid worker
    payload.update({"rounds": tune_rounds, "eval_every": 0, "workers": 1})
    return type(base).model_validate(payload)


def _score_entry(
    index: int,
    base: ConfigT,
    overrides: dict[str, Any],
    dataset: Dataset,
    shards: list[ClientShard] | None,
    tune_rounds: int,
    probe_settings: ProbeSettings | None,
) -> TuneRow:
    lr = float(overrides.get("lr", base.lr))
    try:
        cfg = _entry_config(base, overrides, tune_rounds)
        entry_shards = shards
        if entry_shards is None or len(entry_shards) != cfg.num_clients:
            entry_shards = dirichlet_partition(dataset, cfg.num_clients, cfg.alpha, cfg.seed, cfg.shard_floor)
        final = FederationService(cfg, dataset, entry_shards, probe_settings).run().final
    except (OrchestraError, ValidationError, ArithmeticError) as e:
        logger.warning("tuning entry %d %s failed: %s", index, overrides, e)
        return TuneRow(index=index, overrides=overrides, lr=lr, tuner_score=-math.inf, error=str(e))
    logger.info("tuning entry %d %s: score %.4f", index, overrides, final.tuner_score)
    return TuneRow(
        index=index,
        overrides=overrides,
        lr=lr,
        tuner_score=final.tuner_score,
        align=final.align,
        unif=final.unif,
    )


def hyperparam_search(
    base: ConfigT,
    grid: list[dict[str, Any]],
    dataset: Dataset,
    shards: list[ClientShard] | None = None,
    tune_rounds: int = 20,
    workers: int = 1,
    probe_settings: ProbeSettings | None = None,
) -> tuple[ConfigT, list[TuneRow]]:
    """
    Score every grid entry after a short run and pick the best one.

    Args:
        base: Configuration every entry starts from
        grid: Override dicts, one per entry
        dataset: Training data
        shards: Client split; entries whose client count differs are repartitioned
        tune_rounds: Rounds per entry
        workers: Grid entries scored concurrently
        probe_settings: Evaluation-sample settings

    Returns:
        (best configuration with the base round count, table in grid order)

    Raises:
        ConfigError: empty grid
        RoundError: every entry failed
    """
    if not grid:
        raise ConfigError("hyperparameter grid is empty")

    def work(item: tuple[int, dict[str, Any]]) -> TuneRow:
        index, overrides = item
        return _score_entry(index, base, overrides, dataset, shards, tune_rounds, probe_settings)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            table = list(pool.map(work, enumerate(grid)))
    else:
        table = [work(item) for item in enumerate(grid)]

    scored = [row for row in table if math.isfinite(row.tuner_score)]
    if not scored:
        raise RoundError("every tuning run failed")
    best = min(scored, key=lambda row: (-row.tuner_score, row.lr, row.index))
    payload = base.model_dump()
    payload.update(best.overrides)
    return type(base).model_validate(payload), table
