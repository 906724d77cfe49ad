"""
Services package for the Orchestra simulator.
Contains the encoder, datasets, clustering, losses, federation, evaluation and tuning services.
"""

from .clustering_service import (
    ClusteringService,
    assign_balanced,
    bound_prop1,
    bound_prop2,
    consistency_fraction,
    inter_cluster_mixing,
    kanonymity_level,
    nearest_centroid,
    sinkhorn_balanced,
    two_level_cluster,
    within_cluster_cost,
)
from .dataset_service import (
    augment,
    avg_classes_per_client,
    dirichlet_partition,
    gen_mixture,
    load_cifar_binary,
    load_vectors_csv,
    rotate,
)
from .encoder_service import ema_update, finite_diff_grads, forward, init_encoder, sgd_step
from .errors import (
    AggregationError,
    AnonymityError,
    ConfigError,
    FormatError,
    NumericalError,
    OrchestraError,
    PartitionError,
    RoundError,
    ShapeError,
)
from .evaluation_service import (
    alignment_score,
    knn_probe,
    linear_probe,
    tuner_score,
    uniformity_score,
)
from .federation_service import (
    FederationService,
    MemoryBuffer,
    client_round,
    fedavg,
    init_global_centroids,
    run_federation,
    scale_local_epochs,
    scale_lr,
)
from .losses_service import (
    assignment_probs,
    cluster_loss,
    compute_loss_and_grads,
    degeneracy_loss,
    gradient_check_suite,
    specloss_local,
)
from .tuning_service import hyperparam_search

__all__ = [
    "AggregationError",
    "AnonymityError",
    "ClusteringService",
    "ConfigError",
    "FederationService",
    "FormatError",
    "MemoryBuffer",
    "NumericalError",
    "OrchestraError",
    "PartitionError",
    "RoundError",
    "ShapeError",
    "alignment_score",
    "assign_balanced",
    "assignment_probs",
    "augment",
    "avg_classes_per_client",
    "bound_prop1",
    "bound_prop2",
    "client_round",
    "cluster_loss",
    "compute_loss_and_grads",
    "consistency_fraction",
    "degeneracy_loss",
    "dirichlet_partition",
    "ema_update",
    "fedavg",
    "finite_diff_grads",
    "forward",
    "gen_mixture",
    "gradient_check_suite",
    "hyperparam_search",
    "init_encoder",
    "init_global_centroids",
    "inter_cluster_mixing",
    "kanonymity_level",
    "knn_probe",
    "linear_probe",
    "load_cifar_binary",
    "load_vectors_csv",
    "nearest_centroid",
    "rotate",
    "run_federation",
    "scale_local_epochs",
    "scale_lr",
    "sgd_step",
    "sinkhorn_balanced",
    "specloss_local",
    "tuner_score",
    "two_level_cluster",
    "uniformity_score",
    "within_cluster_cost",
]
