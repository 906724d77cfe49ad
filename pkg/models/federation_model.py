"""
Pydantic data models for the federation engine: configuration, client results,
per-round metrics, and loss selection.
"""

import math
from enum import StrEnum
from typing import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .clustering_model import Centroids, SinkhornConfig
from .dataset_model import AugmentConfig
from .encoder_model import EncoderParams


class Method(StrEnum):
    ORCHESTRA = "orchestra"
    SPECLOSS = "specloss"
    ROTPRED = "rotpred"
    RANDOM = "random"


class FederationConfig(BaseModel):
    """
    Configuration of one simulated federation.

    Defaults follow the cross-device setting scaled to desk size.
    """

    model_config = ConfigDict(
        extra="forbid",
        validate_assignment=True,
    )

    num_clients: int = Field(default=16, ge=1, description="K, number of clients")
    participation: float = Field(default=0.5, gt=0.0, le=1.0, description="R, participation ratio")
    rounds: int = Field(default=30, ge=0, description="Communication rounds")
    local_epochs: int = Field(default=5, ge=0, description="E, local epochs per round")
    batch_size: int = Field(default=16, ge=1, description="B, minibatch size")
    lr: float = Field(default=0.05, ge=0.0, description="Local SGD learning rate")
    ema: float = Field(default=0.99, ge=0.0, le=1.0, description="m, target EMA rate")
    global_clusters: int = Field(default=16, ge=2, description="G")
    local_clusters: int = Field(default=4, ge=1, description="L per client")
    tau_assign: float = Field(default=0.1, gt=0.0, description="Softmax temperature of P_f")
    tau_target: float = Field(
        default=0.05, gt=0.0, description="Sharper temperature of the target assignments"
    )
    tau_unif: float = Field(default=0.2, gt=0.0, description="Uniformity temperature")
    alpha: float = Field(default=0.1, gt=0.0, description="Dirichlet concentration")
    seed: int = Field(default=0, ge=0)
    method: Method = Field(default=Method.ORCHESTRA)
    mem_size: int = Field(default=128, ge=1, description="Memory module capacity")
    hidden_dims: list[int] = Field(default_factory=lambda: [64, 64])
    rep_dim: int = Field(default=16, ge=2, description="D, representation dimension")
    eval_every: int = Field(
        default=5, ge=0, description="Probe cadence in rounds; 0 disables in-run probes"
    )
    min_shard_size: int | None = Field(
        default=None, ge=1, description="Minimum client shard size; None means batch_size"
    )
    workers: int = Field(default=1, ge=1, description="Threads running client rounds")
    weighted_fedavg: bool = Field(default=False, description="Weight FedAvg by shard size")
    use_target_model: bool = Field(default=True, description="EMA target supplies cluster labels")
    use_degeneracy_loss: bool = Field(default=True, description="Add the rotation loss")
    idealized_clustering: bool = Field(
        default=False, description="Server clusters raw representations instead of local centroids"
    )
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    sinkhorn: SinkhornConfig = Field(default_factory=SinkhornConfig)

    @model_validator(mode="after")
    def _check_memory(self) -> Self:
        if self.mem_size < self.local_clusters:
            raise ValueError(
                f"mem_size ({self.mem_size}) must be >= local_clusters ({self.local_clusters})"
            )
        return self

    @property
    def shard_floor(self) -> int:
        return self.min_shard_size if self.min_shard_size is not None else self.batch_size

    @property
    def participants_per_round(self) -> int:
        return max(1, math.ceil(self.participation * self.num_clients - 1e-9))


class LossKind(StrEnum):
    CLUSTER = "cluster"
    DEGENERACY = "degeneracy"
    SPECLOSS = "specloss"
    MSE = "mse"


class LossSpec(BaseModel):
    """Which loss compute_loss_and_grads evaluates."""

    model_config = ConfigDict(
        extra="forbid",
    )

    kind: LossKind
    tau_assign: float = Field(default=0.1, gt=0.0)


class LossInputs(BaseModel):
    """Batch-aligned arrays a loss may need; unused fields stay None."""

    model_config = ConfigDict(
        extra="forbid",
        arbitrary_types_allowed=True,
    )

    clean: np.ndarray | None = None
    augmented: np.ndarray | None = None
    rotated: np.ndarray | None = None
    rotation_ids: np.ndarray | None = None
    target_probs: np.ndarray | None = None
    centroids: Centroids | None = None
    targets: np.ndarray | None = None


class ClientStats(BaseModel):
    """Per-client losses averaged over local steps."""

    model_config = ConfigDict(
        extra="forbid",
    )

    steps: int = 0
    cluster_loss: float = 0.0
    deg_loss: float = 0.0
    spec_loss: float = 0.0
    first_total_loss: float | None = None
    last_total_loss: float | None = None


class ClientResult(BaseModel):
    """What a client sends back after local training."""

    model_config = ConfigDict(
        extra="forbid",
        arbitrary_types_allowed=True,
    )

    client_id: int
    success: bool = Field(description="False when the client was skipped")
    error_message: str | None = None
    target_params: EncoderParams | None = None
    online_params: EncoderParams | None = None
    local_centroids: Centroids | None = None
    memory: np.ndarray | None = Field(
        default=None, description="Memory buffer contents, shared only for idealized clustering"
    )
    shard_size: int = 0
    stats: ClientStats = Field(default_factory=ClientStats)


class RoundMetrics(BaseModel):
    """Per-round record of the federation timeline."""

    model_config = ConfigDict(
        extra="forbid",
        validate_assignment=True,
    )

    round: int = Field(ge=0)
    mean_cluster_loss: float
    mean_deg_loss: float
    mean_spec_loss: float = 0.0
    delta: float | None = Field(description="Inter-cluster mixing on the probe batch")
    knn_acc: float | None = None
    linear_acc: float | None = None
    align: float
    unif: float
    tuner_score: float
    participants: list[int] = Field(default_factory=list)

    @field_validator("mean_cluster_loss", "mean_deg_loss", "mean_spec_loss", "align", "unif")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("metric values must be finite")
        return value


class FederationResult(BaseModel):
    """Timeline plus the final server state of one run."""

    model_config = ConfigDict(
        extra="forbid",
        arbitrary_types_allowed=True,
    )

    timeline: list[RoundMetrics]
    final: RoundMetrics
    target_params: EncoderParams
    online_params: EncoderParams
    global_centroids: Centroids
    initial_centroids: Centroids
