"""
Models package for the Orchestra simulator.
Contains pydantic data models for encoders, datasets, clustering, federation, and experiments.
"""

from .clustering_model import BalancedAssignment, BoundInputs, Centroids, SinkhornConfig
from .dataset_model import AugmentConfig, ClientShard, Dataset
from .encoder_model import EncoderParams, Gradients, LayerParams
from .evaluation_model import UNIF_WEIGHT, ProbeReport, ProbeSettings, TunerScore
from .experiment_model import ExperimentConfig, MetricsRecord, TuneGrid, TuneRow
from .federation_model import (
    ClientResult,
    ClientStats,
    FederationConfig,
    FederationResult,
    LossInputs,
    LossKind,
    LossSpec,
    Method,
    RoundMetrics,
)

__all__ = [
    "UNIF_WEIGHT",
    "AugmentConfig",
    "BalancedAssignment",
    "BoundInputs",
    "Centroids",
    "ClientResult",
    "ClientShard",
    "ClientStats",
    "Dataset",
    "EncoderParams",
    "ExperimentConfig",
    "FederationConfig",
    "FederationResult",
    "Gradients",
    "LayerParams",
    "LossInputs",
    "LossKind",
    "LossSpec",
    "MetricsRecord",
    "Method",
    "ProbeReport",
    "ProbeSettings",
    "RoundMetrics",
    "SinkhornConfig",
    "TuneGrid",
    "TuneRow",
    "TunerScore",
]
