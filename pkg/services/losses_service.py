"""
Local objectives and their analytic gradients.

- cluster loss: cross-entropy between the target model's assignment of a clean
  sample and the online model's assignment of its augmentation
- degeneracy loss: rotation prediction from the online representation
- specloss: empirical spectral contrastive loss (baseline)
- mse: 0.5 * ||f(x) - t||^2, used as a sanity loss
"""

import logging
from typing import Any

import numpy as np
from scipy.special import log_softmax, softmax

from models import Centroids, EncoderParams, Gradients, LossInputs, LossKind, LossSpec

from .dataset_service import rotate_batch
from .encoder_service import (
    ForwardCache,
    as_gradients,
    backward,
    finite_diff_grads,
    forward,
    forward_cached,
    init_encoder,
    relative_error,
)
from .errors import ConfigError, NumericalError, ShapeError
from .rng import stream

logger = logging.getLogger(__name__)

GRADCHECK_THRESHOLD = 1e-4


def assignment_probs(reps: np.ndarray, centroids: Centroids, tau_assign: float) -> np.ndarray:
    """
    Soft cluster assignment P_f: row-wise softmax of (rep . mu) / tau.

    Args:
        reps: Unit-norm representations (n x D)
        centroids: Unit-norm centroids (D x G)
        tau_assign: Softmax temperature, > 0

    Returns:
        Probability matrix (n x G), rows summing to 1
    """
    if tau_assign <= 0:
        raise ConfigError(f"tau_assign must be positive, got {tau_assign}")
    if reps.shape[1] != centroids.dim:
        raise ShapeError(f"reps dim {reps.shape[1]} does not match centroid dim {centroids.dim}")
    return softmax(reps @ centroids.matrix / tau_assign, axis=1)


def cross_entropy(p: np.ndarray, log_q: np.ndarray) -> float:
    """Mean over rows of -sum_g p log q."""
    return float(-np.mean(np.sum(p * log_q, axis=1)))


def cluster_loss(
    online_reps: np.ndarray,
    target_reps: np.ndarray,
    centroids: Centroids,
    tau_assign: float,
) -> float:
    """
    Mean H(P_T(x), P_O(x~)) over the batch.

    Args:
        online_reps: Online-model representations of the augmented batch
        target_reps: Target-model representations of the clean batch
        centroids: Global centroids
        tau_assign: Assignment temperature

    Returns:
        Scalar loss
    """
    if online_reps.shape != target_reps.shape:
        raise ShapeError("online and target representations must be batch-aligned")
    p = assignment_probs(target_reps, centroids, tau_assign)
    log_q = log_softmax(online_reps @ centroids.matrix / tau_assign, axis=1)
    return cross_entropy(p, log_q)


def _cluster_terms(
    online_reps: np.ndarray,
    target_probs: np.ndarray,
    centroids: Centroids,
    tau_assign: float,
) -> tuple[float, np.ndarray]:
    """Loss and dL/d(online_reps); the target distribution is a constant."""
    n = online_reps.shape[0]
    logits = online_reps @ centroids.matrix / tau_assign
    log_q = log_softmax(logits, axis=1)
    loss = cross_entropy(target_probs, log_q)
    d_logits = (np.exp(log_q) - target_probs) / n
    return loss, d_logits @ centroids.matrix.T / tau_assign


def _rotation_terms(
    reps: np.ndarray,
    rot_head: np.ndarray,
    rotation_ids: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss, dL/d(reps) and dL/d(W_r) of the rotation cross-entropy."""
    n = reps.shape[0]
    log_p = log_softmax(reps @ rot_head, axis=1)
    loss = float(-np.mean(log_p[np.arange(n), rotation_ids]))
    d_logits = np.exp(log_p)
    d_logits[np.arange(n), rotation_ids] -= 1.0
    d_logits /= n
    return loss, d_logits @ rot_head.T, reps.T @ d_logits


def draw_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 4, size=n)


def degeneracy_loss(
    params: EncoderParams,
    batch: np.ndarray,
    rng: np.random.Generator,
    image_shape: tuple[int, int, int] | None = None,
) -> float:
    """
    Rotation-prediction cross-entropy.

    Each sample gets a rotation index drawn uniformly from {0, 1, 2, 3}; the
    rotated sample is encoded by the online model and W_r predicts the index.

    Args:
        params: Online encoder (including W_r)
        batch: Clean samples (n x d_in)
        rng: Stream for the rotation indices
        image_shape: Set for flattened images so rotations are spatial

    Returns:
        Mean cross-entropy against the drawn indices
    """
    if batch.shape[0] == 0:
        raise ConfigError("degeneracy loss needs a non-empty batch")
    ids = draw_rotations(batch.shape[0], rng)
    reps = forward(params, rotate_batch(batch, ids, image_shape))
    loss, _, _ = _rotation_terms(reps, params.rot_head, ids)
    return loss


def specloss_local(reps: np.ndarray, aug_reps: np.ndarray) -> float:
    """
    Empirical spectral contrastive loss on a minibatch:
    -2 mean_i <f(x_i), f(x~_i)> + mean_{i != j} <f(x_i), f(x_j)>^2.
    """
    loss, _, _ = _specloss_terms(reps, aug_reps)
    return loss


def _specloss_terms(reps: np.ndarray, aug_reps: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    n = reps.shape[0]
    if n < 2:
        raise ConfigError("specloss needs a batch of at least 2 samples")
    if reps.shape != aug_reps.shape:
        raise ShapeError("clean and augmented representations must be batch-aligned")
    positive = np.sum(reps * aug_reps, axis=1)
    gram = reps @ reps.T
    off = gram.copy()
    np.fill_diagonal(off, 0.0)
    pairs = n * (n - 1)
    loss = float(-2.0 * positive.mean() + np.sum(off * off) / pairs)
    d_reps = -2.0 * aug_reps / n + 4.0 * (off @ reps) / pairs
    d_aug = -2.0 * reps / n
    return loss, d_reps, d_aug


def _check_finite(value: float, term: str) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {term} loss: {value}", term=term)
    return value


def _require(inputs: LossInputs, *names: str) -> list[Any]:
    values = [getattr(inputs, name) for name in names]
    missing = [name for name, value in zip(names, values, strict=True) if value is None]
    if missing:
        raise ShapeError(f"loss inputs missing: {', '.join(missing)}")
    return values


def compute_loss_and_grads(
    params: EncoderParams,
    loss_spec: LossSpec,
    inputs: LossInputs,
) -> tuple[float, Gradients]:
    """
    Evaluate a loss and its analytic gradient w.r.t. every encoder parameter.

    Args:
        params: Online encoder parameters being differentiated
        loss_spec: Which loss to evaluate
        inputs: Batch-aligned arrays the loss needs

    Returns:
        (loss, gradients)

    Raises:
        NumericalError: if any loss term is non-finite (the term is named)
    """
    grads = [np.zeros_like(a) for a in params.arrays()]
    total = 0.0

    def add(cache: ForwardCache, d_reps: np.ndarray) -> None:
        for k, g in enumerate(backward(params, cache, d_reps)):
            grads[k] += g

    kind = loss_spec.kind
    if kind == LossKind.CLUSTER:
        augmented, probs, centroids = _require(inputs, "augmented", "target_probs", "centroids")
        cache = forward_cached(params, augmented)
        loss, d_reps = _cluster_terms(cache.reps, probs, centroids, loss_spec.tau_assign)
        total += _check_finite(loss, "cluster")
        add(cache, d_reps)

    if kind == LossKind.DEGENERACY:
        rotated, rotation_ids = _require(inputs, "rotated", "rotation_ids")
        cache = forward_cached(params, rotated)
        loss, d_reps, d_head = _rotation_terms(cache.reps, params.rot_head, rotation_ids)
        total += _check_finite(loss, "degeneracy")
        add(cache, d_reps)
        grads[-1] += d_head

    if kind == LossKind.SPECLOSS:
        clean, augmented = _require(inputs, "clean", "augmented")
        clean_cache = forward_cached(params, clean)
        aug_cache = forward_cached(params, augmented)
        loss, d_reps, d_aug = _specloss_terms(clean_cache.reps, aug_cache.reps)
        total += _check_finite(loss, "specloss")
        add(clean_cache, d_reps)
        add(aug_cache, d_aug)

    if kind == LossKind.MSE:
        clean, targets = _require(inputs, "clean", "targets")
        cache = forward_cached(params, clean)
        diff = cache.reps - targets
        total += _check_finite(float(0.5 * np.sum(diff * diff)), "mse")
        add(cache, diff)

    return total, as_gradients(params, grads)


def loss_only(params: EncoderParams, loss_spec: LossSpec, inputs: LossInputs) -> float:
    return compute_loss_and_grads(params, loss_spec, inputs)[0]


def gradient_check_suite(
    seed: int = 0,
    draws: int = 20,
    eps: float = 1e-5,
) -> dict[str, float]:
    """
    Compare analytic and central-difference gradients for every local loss.

    Each draw builds a fresh 2-layer encoder (8 -> 6 -> 4, under 200 parameters)
    and a fresh batch; the worst relative error per loss is reported.

    Args:
        seed: Base seed of the draws
        draws: Random (params, batch) draws per loss
        eps: Finite-difference step

    Returns:
        Mapping loss name -> max relative error over the draws
    """
    d_in, hidden, rep_dim, n, g = 8, 6, 4, 6, 3
    report: dict[str, float] = {}
    for name, kind in (
        ("cluster_loss", LossKind.CLUSTER),
        ("degeneracy_loss", LossKind.DEGENERACY),
        ("specloss_local", LossKind.SPECLOSS),
    ):
        worst = 0.0
        for draw in range(draws):
            rng = stream(seed, f"gradcheck-{name}", draw)
            params = init_encoder(d_in, [hidden], rep_dim, rng)
            params = params.with_arrays(
                [a + rng.normal(0.0, 0.1, size=a.shape) for a in params.arrays()]
            )
            spec = LossSpec(kind=kind, tau_assign=0.5)
            inputs = _random_inputs(params, kind, n, g, rng)
            _, analytic = compute_loss_and_grads(params, spec, inputs)
            numeric = finite_diff_grads(params, lambda p: loss_only(p, spec, inputs), eps)
            worst = max(worst, relative_error(analytic, numeric))
        report[name] = worst
        logger.info("gradient check %s: max relative error %.3e", name, worst)
    return report


def _random_inputs(
    params: EncoderParams,
    kind: LossKind,
    n: int,
    g: int,
    rng: np.random.Generator,
) -> LossInputs:
    clean = rng.normal(size=(n, params.d_in))
    augmented = clean + rng.normal(0.0, 0.3, size=clean.shape)
    if kind == LossKind.CLUSTER:
        mu = rng.normal(size=(params.rep_dim, g))
        centroids = Centroids(matrix=mu / np.linalg.norm(mu, axis=0))
        target = rng.normal(size=(n, params.rep_dim))
        target /= np.linalg.norm(target, axis=1, keepdims=True)
        probs = assignment_probs(target, centroids, 0.5)
        return LossInputs(augmented=augmented, target_probs=probs, centroids=centroids)
    if kind == LossKind.DEGENERACY:
        ids = draw_rotations(n, rng)
        return LossInputs(rotated=rotate_batch(clean, ids), rotation_ids=ids)
    return LossInputs(clean=clean, augmented=augmented)
