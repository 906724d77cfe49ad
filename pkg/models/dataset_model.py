"""
Pydantic data models for labeled datasets, client shards, and augmentation.
"""

from typing import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Dataset(BaseModel):
    """
    Labeled feature vectors: features (N x d_in) and labels in [0, num_classes).

    Labels are only used by probes and partition statistics; training never reads them.
    """

    model_config = ConfigDict(
        extra="forbid",
        arbitrary_types_allowed=True,
    )

    features: np.ndarray = Field(description="Feature matrix of shape (N, d_in), float64")
    labels: np.ndarray = Field(description="Class index per sample, shape (N,)")
    num_classes: int = Field(ge=1, description="Class count M")
    image_shape: tuple[int, int, int] | None = Field(
        default=None,
        description="(channels, height, width) when features are flattened images",
    )

    @field_validator("features", mode="before")
    @classmethod
    def _features_as_float64(cls, value: object) -> np.ndarray:
        return np.asarray(value, dtype=np.float64)

    @field_validator("labels", mode="before")
    @classmethod
    def _labels_as_int(cls, value: object) -> np.ndarray:
        return np.asarray(value, dtype=np.int64)

    @model_validator(mode="after")
    def _check_invariants(self) -> Self:
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        if n < 2:
            raise ValueError(f"a dataset needs at least 2 samples, got {n}")
        if self.labels.shape != (n,):
            raise ValueError(f"labels shape {self.labels.shape} does not match {n} samples")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite entries")
        if self.image_shape is not None and int(np.prod(self.image_shape)) != self.features.shape[1]:
            raise ValueError(
                f"image_shape {self.image_shape} does not match feature dim {self.features.shape[1]}"
            )
        return self

    @property
    def num_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])


class ClientShard(BaseModel):
    """Indices of the dataset samples held by one client."""

    model_config = ConfigDict(
        extra="forbid",
        validate_assignment=True,
    )

    client_id: int = Field(ge=0, description="Client index in [0, K)")
    sample_ids: list[int] = Field(description="Indices into the Dataset, ascending")

    @property
    def size(self) -> int:
        return len(self.sample_ids)


class AugmentConfig(BaseModel):
    """Parameters of the stochastic augmentation x -> s * (x + eps)."""

    model_config = ConfigDict(
        extra="forbid",
        validate_assignment=True,
    )

    jitter_sigma: float = Field(default=0.1, ge=0.0, description="Std of additive Gaussian jitter")
    scale_range: tuple[float, float] = Field(
        default=(0.8, 1.2),
        description="(lo, hi) of the uniform multiplicative scale",
    )

    @model_validator(mode="after")
    def _check_scale(self) -> Self:
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        return self
