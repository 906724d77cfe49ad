"""
Clustering router: balanced clustering, bound evaluation, and anonymity accounting
"""

import numpy as np
from fastapi import APIRouter, HTTPException, Query
from pydantic import BaseModel, Field, ValidationError

from models import BoundInputs, SinkhornConfig
from services import (
    AnonymityError,
    ClusteringService,
    ConfigError,
    OrchestraError,
    bound_prop1,
    bound_prop2,
    inter_cluster_mixing,
    kanonymity_level,
)

router = APIRouter()


class ClusterRequest(BaseModel):
    points: list[list[float]] = Field(min_length=1, description="Row vectors to cluster")
    num_clusters: int = Field(ge=1, description="G")
    epsilon: float = Field(default=0.05, gt=0.0)
    outer_iters: int = Field(default=10, ge=0)
    inner_iters: int = Field(default=100, ge=1)
    tol: float = Field(default=1e-6, gt=0.0)
    seed: int = Field(default=0, ge=0)


class ClusterResponse(BaseModel):
    assignment: list[int]
    cluster_sizes: list[int]
    centroids: list[list[float]] = Field(description="One unit-norm centroid per row")
    delta: float | None = Field(description="Inter-cluster mixing; null when G = 1")


class BoundResponse(BaseModel):
    prop1: float
    prop2: float
    gap: float = Field(description="prop1 - prop2")


class AnonymityResponse(BaseModel):
    shard_size: int
    local_clusters: int
    anonymity: int


@router.post("/cluster")
async def cluster_points(request: ClusterRequest) -> ClusterResponse:
    """Equal-size clustering of the posted vectors."""
    try:
        points = np.asarray(request.points, dtype=np.float64)
    except ValueError as e:
        raise HTTPException(status_code=422, detail="points must all have the same length") from e
    try:
        config = SinkhornConfig(
            epsilon=request.epsilon,
            outer_iters=request.outer_iters,
            inner_iters=request.inner_iters,
            tol=request.tol,
        )
        centroids, assignment = ClusteringService(config).cluster(points, request.num_clusters, request.seed)
        unit = points / np.linalg.norm(points, axis=1, keepdims=True)
        return ClusterResponse(
            assignment=assignment.assignment.tolist(),
            cluster_sizes=assignment.cluster_sizes(),
            centroids=centroids.matrix.T.tolist(),
            delta=inter_cluster_mixing(centroids, unit, assignment.assignment),
        )
    except (ConfigError, ValidationError) as e:
        raise HTTPException(status_code=400, detail=str(e)) from e
    except OrchestraError as e:
        raise HTTPException(status_code=500, detail=f"Clustering failed: {str(e)}") from e


@router.post("/bounds")
async def evaluate_bounds(inputs: BoundInputs) -> BoundResponse:
    """Evaluate both linear-probe error bounds for the given symbols."""
    prop1 = bound_prop1(inputs)
    prop2 = bound_prop2(inputs)
    return BoundResponse(prop1=prop1, prop2=prop2, gap=prop1 - prop2)


@router.get("/kanonymity")
async def anonymity(
    shard_size: int = Query(ge=1), local_clusters: int = Query(ge=1)
) -> AnonymityResponse:
    """Minimum local-cluster occupancy for a shard."""
    try:
        level = kanonymity_level(shard_size, local_clusters)
    except AnonymityError as e:
        raise HTTPException(status_code=400, detail=str(e)) from e
    return AnonymityResponse(shard_size=shard_size, local_clusters=local_clusters, anonymity=level)
