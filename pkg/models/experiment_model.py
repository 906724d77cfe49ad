"""
Pydantic data models for experiment files, metrics records, and tuning grids.
"""

import hashlib
import json
from typing import Any, Literal, Self

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .evaluation_model import ProbeSettings
from .federation_model import FederationConfig, Method, RoundMetrics


class ExperimentConfig(FederationConfig):
    """
    Flat experiment file: every FederationConfig key plus dataset, probe,
    and output keys. Unknown keys are rejected.
    """

    model_config = ConfigDict(
        extra="forbid",
        validate_assignment=True,
    )

    num_clients: int = Field(ge=1, description="K, number of clients")
    rounds: int = Field(ge=0, description="Communication rounds")
    seed: int = Field(ge=0)
    method: Method

    dataset: Literal["synthetic", "cifar"] = Field(default="synthetic")
    num_classes: int = Field(default=4, ge=2, description="M for synthetic data / CIFAR labels")
    input_dim: int = Field(default=16, ge=4, description="d_in of synthetic data")
    per_class: int = Field(default=512, ge=2)
    class_sep: float = Field(default=3.0, ge=0.0)
    within_std: float = Field(default=1.0, ge=0.0)
    cifar_path: str | None = Field(default=None, description="Path to a CIFAR binary batch")

    knn_k: int | None = Field(default=None, ge=1)
    linear_epochs: int = Field(default=500, ge=1)
    linear_lr: float = Field(default=0.5, gt=0.0)
    probe_train_fraction: float = Field(default=0.8, gt=0.0, lt=1.0)

    output_dir: str = Field(default="runs")

    @model_validator(mode="after")
    def _check_dataset(self) -> Self:
        if self.dataset == "cifar" and not self.cifar_path:
            raise ValueError("cifar_path is required when dataset is 'cifar'")
        if self.dataset == "synthetic" and self.input_dim % 4 != 0:
            raise ValueError("input_dim must be divisible by 4")
        return self

    def federation_config(self) -> FederationConfig:
        keys = FederationConfig.model_fields.keys()
        return FederationConfig(**{k: getattr(self, k) for k in keys})

    def probe_settings(self) -> ProbeSettings:
        return ProbeSettings(
            knn_k=self.knn_k,
            linear_epochs=self.linear_epochs,
            linear_lr=self.linear_lr,
            train_fraction=self.probe_train_fraction,
        )

    def canonical_json(self) -> str:
        """Key-sorted JSON of the experiment, excluding where outputs are written."""
        payload = self.model_dump(mode="json", exclude={"output_dir", "workers"})
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()[:12]


class MetricsRecord(RoundMetrics):
    """One metrics.jsonl line: a RoundMetrics plus run identity."""

    model_config = ConfigDict(
        extra="forbid",
    )

    config_hash: str
    seed: int
    method: Method

    def to_json_line(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True)


class TuneGrid(BaseModel):
    """Base experiment keys plus a cartesian grid of overrides."""

    model_config = ConfigDict(
        extra="forbid",
    )

    base: dict[str, Any] = Field(default_factory=dict)
    grid: dict[str, list[Any]] = Field(default_factory=dict)
    tune_rounds: int = Field(default=20, ge=0)

    def expand(self) -> list[dict[str, Any]]:
        """Cartesian product of grid values, keys in file order."""
        if not self.grid or any(not values for values in self.grid.values()):
            return []
        entries: list[dict[str, Any]] = [{}]
        for key, values in self.grid.items():
            entries = [{**entry, key: value} for entry in entries for value in values]
        return entries


class TuneRow(BaseModel):
    """One grid entry of a hyperparameter search and its score."""

    model_config = ConfigDict(
        extra="forbid",
    )

    index: int = Field(ge=0, description="Position in the expanded grid")
    overrides: dict[str, Any] = Field(default_factory=dict)
    lr: float
    tuner_score: float = Field(description="Align + 0.2 * Unif; -inf when the run failed")
    align: float | None = None
    unif: float | None = None
    error: str | None = None
