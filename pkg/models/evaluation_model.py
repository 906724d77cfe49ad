"""
Pydantic data models for representation probes and the unsupervised tuning score.
"""

from typing import Literal, Self

from pydantic import BaseModel, ConfigDict, Field, model_validator

UNIF_WEIGHT = 0.2


class ProbeReport(BaseModel):
    """Accuracy of one representation probe."""

    model_config = ConfigDict(
        extra="forbid",
        validate_assignment=True,
    )

    kind: Literal["knn", "linear"] = Field(description="Probe type")
    accuracy: float = Field(ge=0.0, le=1.0, description="Test accuracy")
    n_train: int = Field(ge=1)
    n_test: int = Field(ge=1)
    hyperparameter: int = Field(description="k for kNN, epochs for the linear probe")


class TunerScore(BaseModel):
    """Alignment, uniformity, and their combination Align + 0.2 * Unif."""

    model_config = ConfigDict(
        extra="forbid",
    )

    align: float = Field(ge=-1.0 - 1e-9, le=1.0 + 1e-9)
    unif: float
    combined: float

    @model_validator(mode="after")
    def _check_combination(self) -> Self:
        if abs(self.combined - (self.align + UNIF_WEIGHT * self.unif)) > 1e-12:
            raise ValueError("combined must equal align + 0.2 * unif")
        return self


class ProbeSettings(BaseModel):
    """How representations are probed during and after a run."""

    model_config = ConfigDict(
        extra="forbid",
        validate_assignment=True,
    )

    knn_k: int | None = Field(
        default=None,
        ge=1,
        description="k for the kNN probe; None means min(200, n_train // 10)",
    )
    linear_epochs: int = Field(default=500, ge=1)
    linear_lr: float = Field(default=0.5, gt=0.0)
    train_fraction: float = Field(default=0.8, gt=0.0, lt=1.0)
    delta_batch: int = Field(default=256, ge=2, description="Probe batch size for delta")
    eval_per_client: int = Field(
        default=32, ge=2, description="Samples per client for Align/Unif"
    )
