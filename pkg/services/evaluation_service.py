"""
Representation probes (kNN, linear) and the unsupervised tuning score.
"""

import logging

import numpy as np
from scipy.special import log_softmax, logsumexp

from models import UNIF_WEIGHT, AugmentConfig, Dataset, EncoderParams, ProbeReport, ProbeSettings, TunerScore

from .dataset_service import augment_batch
from .encoder_service import forward
from .errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

MAX_KNN_K = 200


def default_knn_k(n_train: int) -> int:
    """min(200, n_train // 10), at least 1."""
    return max(1, min(MAX_KNN_K, n_train // 10))


def _check_split(
    train_reps: np.ndarray,
    train_labels: np.ndarray,
    test_reps: np.ndarray,
    test_labels: np.ndarray,
) -> None:
    if train_reps.shape[0] != train_labels.shape[0] or test_reps.shape[0] != test_labels.shape[0]:
        raise ShapeError("every representation needs exactly one label")
    if train_reps.shape[0] == 0 or test_reps.shape[0] == 0:
        raise ConfigError("probe needs non-empty train and test sets")
    if train_reps.shape[1] != test_reps.shape[1]:
        raise ShapeError("train and test representations differ in dimension")


def knn_probe(
    train_reps: np.ndarray,
    train_labels: np.ndarray,
    test_reps: np.ndarray,
    test_labels: np.ndarray,
    k: int | None = None,
) -> ProbeReport:
    """
    Cosine k-nearest-neighbor majority vote.

    Neighbors with equal similarity are taken in train order. Vote ties go to
    the class with the larger summed similarity, then to the lowest class index.

    Args:
        train_reps: Unit-norm training representations (n_train x D)
        train_labels: Training labels
        test_reps: Unit-norm test representations
        test_labels: Test labels
        k: Neighbors per vote; None uses min(200, n_train // 10)

    Returns:
        ProbeReport with kind "knn"
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    _check_split(train_reps, train_labels, test_reps, test_labels)
    n_train = train_reps.shape[0]
    k = default_knn_k(n_train) if k is None else k
    if k < 1 or k > n_train:
        raise ConfigError(f"k={k} must lie in [1, {n_train}]")

    num_classes = int(max(train_labels.max(), test_labels.max())) + 1
    sims = test_reps @ train_reps.T
    neighbors = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    neighbor_sims = np.take_along_axis(sims, neighbors, axis=1)
    neighbor_labels = train_labels[neighbors]

    rows = np.repeat(np.arange(test_reps.shape[0]), k)
    votes = np.zeros((test_reps.shape[0], num_classes))
    summed = np.zeros_like(votes)
    np.add.at(votes, (rows, neighbor_labels.ravel()), 1.0)
    np.add.at(summed, (rows, neighbor_labels.ravel()), neighbor_sims.ravel())
    leading = votes == votes.max(axis=1, keepdims=True)
    predictions = np.argmax(np.where(leading, summed, -np.inf), axis=1)

    accuracy = float(np.mean(predictions == test_labels))
    return ProbeReport(
        kind="knn",
        accuracy=accuracy,
        n_train=n_train,
        n_test=test_reps.shape[0],
        hyperparameter=k,
    )


def linear_probe(
    train_reps: np.ndarray,
    train_labels: np.ndarray,
    test_reps: np.ndarray,
    test_labels: np.ndarray,
    epochs: int = 500,
    lr: float = 0.5,
) -> ProbeReport:
    """
    Multinomial logistic regression on frozen representations.

    Weights and bias start at zero and follow full-batch gradient descent on the
    mean cross-entropy; prediction ties go to the lowest class index.

    Args:
        train_reps: Training representations (n_train x D)
        train_labels: Training labels, at least two distinct classes
        test_reps: Test representations
        test_labels: Test labels
        epochs: Gradient steps
        lr: Step size

    Returns:
        ProbeReport with kind "linear"
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    _check_split(train_reps, train_labels, test_reps, test_labels)
    if np.unique(train_labels).size < 2:
        raise ConfigError("linear probe needs at least two classes in the training labels")

    n, dim = train_reps.shape
    num_classes = int(max(train_labels.max(), test_labels.max())) + 1
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), train_labels] = 1.0
    weight = np.zeros((dim, num_classes))
    bias = np.zeros(num_classes)
    for _ in range(epochs):
        probs = np.exp(log_softmax(train_reps @ weight + bias, axis=1))
        d_logits = (probs - onehot) / n
        weight -= lr * (train_reps.T @ d_logits)
        bias -= lr * d_logits.sum(axis=0)

    predictions = np.argmax(test_reps @ weight + bias, axis=1)
    accuracy = float(np.mean(predictions == test_labels))
    return ProbeReport(
        kind="linear",
        accuracy=accuracy,
        n_train=n,
        n_test=test_reps.shape[0],
        hyperparameter=epochs,
    )


def _per_client(samples: np.ndarray | list[np.ndarray]) -> list[np.ndarray]:
    if isinstance(samples, np.ndarray):
        return [samples]
    if not samples:
        raise ConfigError("need at least one client sample")
    return list(samples)


def alignment_from_reps(reps: np.ndarray, aug_reps: np.ndarray) -> float:
    return float(np.mean(np.sum(reps * aug_reps, axis=1)))


def uniformity_from_reps(reps: np.ndarray, tau_unif: float = 0.2) -> float:
    """-mean_x log mean_y exp(cos(x, y) / tau), the y = x term included."""
    if tau_unif <= 0:
        raise ConfigError(f"tau_unif must be positive, got {tau_unif}")
    n = reps.shape[0]
    if n < 2:
        raise ConfigError("uniformity needs at least 2 samples")
    sims = reps @ reps.T / tau_unif
    return float(-np.mean(logsumexp(sims, axis=1) - np.log(n)))


def alignment_score(
    params: EncoderParams,
    samples: np.ndarray | list[np.ndarray],
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> float:
    """
    Mean cosine between a sample and its augmentation.

    Args:
        params: Encoder
        samples: One matrix, or one matrix per client (client means are averaged)
        cfg: Augmentation settings
        rng: Stream for the augmentations

    Returns:
        Align in [-1, 1]
    """
    scores = []
    for batch in _per_client(samples):
        if batch.shape[0] < 1:
            raise ConfigError("alignment needs at least one sample per client")
        scores.append(alignment_from_reps(forward(params, batch), forward(params, augment_batch(batch, cfg, rng))))
    return float(np.mean(scores))


def uniformity_score(
    params: EncoderParams,
    samples: np.ndarray | list[np.ndarray],
    tau_unif: float = 0.2,
) -> float:
    """Uniformity averaged over clients; a collapsed encoder scores exactly -1/tau."""
    return float(np.mean([uniformity_from_reps(forward(params, b), tau_unif) for b in _per_client(samples)]))


def tuner_score(align: float, unif: float) -> float:
    return align + UNIF_WEIGHT * unif


def score_encoder(
    params: EncoderParams,
    samples: list[np.ndarray],
    cfg: AugmentConfig,
    rng: np.random.Generator,
    tau_unif: float = 0.2,
) -> TunerScore:
    align = alignment_score(params, samples, cfg, rng)
    unif = uniformity_score(params, samples, tau_unif)
    return TunerScore(align=align, unif=unif, combined=tuner_score(align, unif))


def run_probes(
    params: EncoderParams,
    dataset: Dataset,
    train_ids: np.ndarray,
    test_ids: np.ndarray,
    settings: ProbeSettings,
) -> tuple[ProbeReport, ProbeReport]:
    """
    kNN and linear probes of an encoder on a fixed train/test split.

    Returns:
        (knn report, linear report)
    """
    train_reps = forward(params, dataset.features[train_ids])
    test_reps = forward(params, dataset.features[test_ids])
    train_labels = dataset.labels[train_ids]
    test_labels = dataset.labels[test_ids]
    knn = knn_probe(train_reps, train_labels, test_reps, test_labels, settings.knn_k)
    linear = linear_probe(
        train_reps,
        train_labels,
        test_reps,
        test_labels,
        epochs=settings.linear_epochs,
        lr=settings.linear_lr,
    )
    logger.debug("probes: knn=%.4f linear=%.4f", knn.accuracy, linear.accuracy)
    return knn, linear
