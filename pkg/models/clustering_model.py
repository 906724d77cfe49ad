"""
Pydantic data models for balanced clustering and the generalization-bound inputs.
"""

from typing import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

UNIT_NORM_TOL = 1e-10
MARGINAL_TOL = 1e-6


class SinkhornConfig(BaseModel):
    """
    Settings of the Sinkhorn-Knopp equal-size clustering.

    Cost between a point and a centroid is 1 - cosine, so it lies in [0, 2].
    """

    model_config = ConfigDict(
        extra="forbid",
        validate_assignment=True,
    )

    epsilon: float = Field(default=0.05, gt=0.0, description="Entropic regularization strength")
    outer_iters: int = Field(default=10, ge=0, description="Plan/centroid alternations")
    inner_iters: int = Field(default=100, ge=1, description="Max Sinkhorn scaling iterations")
    tol: float = Field(default=1e-6, gt=0.0, description="Marginal error stopping threshold")
    restarts: int = Field(default=4, ge=1, description="Seeded initializations; the cheapest partition wins")
    swap_iters: int = Field(
        default=100, ge=0, description="Max balance-preserving swaps after rounding"
    )


class Centroids(BaseModel):
    """Unit-norm cluster centers stored column-wise: matrix of shape (D, G)."""

    model_config = ConfigDict(
        extra="forbid",
        arbitrary_types_allowed=True,
    )

    matrix: np.ndarray = Field(description="Centroid matrix of shape (D, G)")

    @field_validator("matrix", mode="before")
    @classmethod
    def _as_float64(cls, value: object) -> np.ndarray:
        return np.asarray(value, dtype=np.float64)

    @model_validator(mode="after")
    def _check_unit_columns(self) -> Self:
        if self.matrix.ndim != 2 or self.matrix.shape[1] < 1:
            raise ValueError(f"centroid matrix must be (D, G) with G >= 1, got {self.matrix.shape}")
        norms = np.linalg.norm(self.matrix, axis=0)
        if not np.all(np.abs(norms - 1.0) <= UNIT_NORM_TOL):
            raise ValueError("every centroid column must have unit L2 norm")
        return self

    @property
    def num_clusters(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])


class BalancedAssignment(BaseModel):
    """Hard equal-size assignment plus the soft transport plan it was rounded from."""

    model_config = ConfigDict(
        extra="forbid",
        arbitrary_types_allowed=True,
    )

    assignment: np.ndarray = Field(description="Cluster index per point, shape (n,)")
    plan: np.ndarray = Field(description="Transport plan of shape (n, G)")
    objective_trace: list[float] = Field(
        default_factory=list,
        description="Entropic OT objective after each outer iteration",
    )

    @field_validator("assignment", mode="before")
    @classmethod
    def _as_int(cls, value: object) -> np.ndarray:
        return np.asarray(value, dtype=np.int64)

    @model_validator(mode="after")
    def _check_balance(self) -> Self:
        n, g = self.plan.shape
        if self.assignment.shape != (n,):
            raise ValueError("assignment length must equal plan rows")
        sizes = np.bincount(self.assignment, minlength=g)
        if sizes.max() - sizes.min() > 1:
            raise ValueError(f"cluster sizes differ by more than one: {sizes.tolist()}")
        row_error = np.max(np.abs(self.plan.sum(axis=1) - 1.0 / n))
        col_error = np.max(np.abs(self.plan.sum(axis=0) - 1.0 / g))
        if max(row_error, col_error) > MARGINAL_TOL:
            raise ValueError(
                f"plan marginals are off by {max(row_error, col_error):.3g}; "
                f"rows must sum to 1/n and columns to 1/G"
            )
        return self

    def cluster_sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=self.plan.shape[1]).tolist()


class BoundInputs(BaseModel):
    """Symbols of the linear-probe generalization bounds."""

    model_config = ConfigDict(
        extra="forbid",
        validate_assignment=True,
    )

    delta: float = Field(ge=-1.0, description="Inter-cluster mixing (max outside cosine)")
    c: float = Field(default=1.0, ge=0.0, le=1.0, description="Consistency fraction")
    G: int = Field(ge=2, description="Number of clusters")
    N: int = Field(gt=2, description="Number of samples")
    zeta: float = Field(default=0.0, description="Latent-similarity constant, supplied externally")
