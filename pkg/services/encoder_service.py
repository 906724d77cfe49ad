"""
Dense MLP encoder with hand-derived reverse-mode gradients.

Representations are L2-normalized at the encoder output; hidden layers use tanh.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from models import EncoderParams, Gradients, LayerParams

from .errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

# Rows whose pre-normalization norm is at or below this are mapped to e_1.
NORM_FLOOR = 1e-12


@dataclass
class ForwardCache:
    """Activations kept from a forward pass for the reverse pass."""

    inputs: list[np.ndarray]  # input of every layer, inputs[0] is the batch
    pre_norm: np.ndarray  # final layer output before normalization (n x D)
    norms: np.ndarray  # row norms of pre_norm (n,)
    reps: np.ndarray  # normalized representations (n x D)
    singular: np.ndarray  # rows that hit NORM_FLOOR


def init_encoder(
    d_in: int,
    hidden_dims: list[int],
    rep_dim: int,
    rng: np.random.Generator,
) -> EncoderParams:
    """
    Initialize an encoder d_in -> hidden... -> rep_dim.

    Args:
        d_in: Input dimension
        hidden_dims: Widths of the tanh hidden layers
        rep_dim: Representation dimension D
        rng: Random stream used for the weights

    Returns:
        EncoderParams with N(0, 1/fan_in) weights, zero biases, N(0, 1/D) rotation head
    """
    dims = [d_in, *hidden_dims, rep_dim]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:], strict=True):
        weight = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
        layers.append(LayerParams(weight=weight, bias=np.zeros(fan_out)))
    rot_head = rng.normal(0.0, 1.0 / np.sqrt(rep_dim), size=(rep_dim, 4))
    return EncoderParams(layers=layers, rot_head=rot_head)


def forward_cached(params: EncoderParams, batch: np.ndarray) -> ForwardCache:
    """Forward pass that keeps what the reverse pass needs."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.d_in:
        raise ShapeError(
            f"batch of shape {batch.shape} does not match encoder input dim {params.d_in}"
        )
    inputs = [batch]
    h = batch
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        z = h @ layer.weight.T + layer.bias
        if i < last:
            h = np.tanh(z)
            inputs.append(h)
        else:
            h = z
    norms = np.linalg.norm(h, axis=1)
    singular = norms <= NORM_FLOOR
    safe = np.where(singular, 1.0, norms)
    reps = h / safe[:, None]
    if np.any(singular):
        reps[singular] = 0.0
        reps[singular, 0] = 1.0
    return ForwardCache(inputs=inputs, pre_norm=h, norms=norms, reps=reps, singular=singular)


def forward(params: EncoderParams, batch: np.ndarray) -> np.ndarray:
    """
    Encode a batch into unit-norm representations.

    Args:
        params: Encoder parameters
        batch: Input matrix (n x d_in)

    Returns:
        Representations (n x D), every row with unit L2 norm
    """
    return forward_cached(params, batch).reps


def backward(
    params: EncoderParams,
    cache: ForwardCache,
    d_reps: np.ndarray,
) -> list[np.ndarray]:
    """
    Reverse pass from dL/d(reps) to parameter gradients.

    Returns:
        Gradient arrays for W0, b0, ..., W_last, b_last (rotation head excluded)
    """
    # d(z/|z|)/dz = (I - f f^T) / |z|
    f = cache.reps
    dz = (d_reps - f * np.sum(f * d_reps, axis=1, keepdims=True)) / np.where(
        cache.singular, 1.0, cache.norms
    )[:, None]
    dz[cache.singular] = 0.0

    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(params.layers))
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        h_in = cache.inputs[i]
        grads[2 * i] = dz.T @ h_in
        grads[2 * i + 1] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ layer.weight
            dz = dh * (1.0 - h_in * h_in)
    return grads


def zero_gradients(params: EncoderParams) -> Gradients:
    return as_gradients(params, [np.zeros_like(a) for a in params.arrays()])


def as_gradients(params: EncoderParams, arrays: list[np.ndarray]) -> Gradients:
    """Wrap arrays (canonical order) as Gradients congruent with params."""
    check_arrays_congruent(params.arrays(), arrays)
    layers = [
        LayerParams(weight=arrays[2 * i], bias=arrays[2 * i + 1])
        for i in range(len(params.layers))
    ]
    return Gradients(layers=layers, rot_head=arrays[-1])


def check_arrays_congruent(a: list[np.ndarray], b: list[np.ndarray]) -> None:
    if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b, strict=False)):
        raise ShapeError("parameter sets are not shape-congruent")


def sgd_step(params: EncoderParams, grads: Gradients, lr: float) -> EncoderParams:
    """
    One plain SGD step: p <- p - lr * g.

    Args:
        params: Current parameters
        grads: Gradients congruent with params
        lr: Learning rate, >= 0

    Returns:
        Updated parameters (new object)
    """
    if lr < 0:
        raise ConfigError(f"learning rate must be non-negative, got {lr}")
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    check_arrays_congruent(p_arrays, g_arrays)
    return params.with_arrays([p - lr * g for p, g in zip(p_arrays, g_arrays, strict=True)])


def ema_update(target: EncoderParams, online: EncoderParams, m: float) -> EncoderParams:
    """
    Exponential moving average T <- m * T + (1 - m) * O.

    Args:
        target: Target (EMA) parameters
        online: Online parameters
        m: Update rate in [0, 1]; m=1 keeps the target, m=0 copies the online model

    Returns:
        Updated target parameters (new object)
    """
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"EMA rate must lie in [0, 1], got {m}")
    t_arrays = target.arrays()
    o_arrays = online.arrays()
    check_arrays_congruent(t_arrays, o_arrays)
    return target.with_arrays(
        [m * t + (1.0 - m) * o for t, o in zip(t_arrays, o_arrays, strict=True)]
    )


def finite_diff_grads(
    params: EncoderParams,
    loss_fn: Callable[[EncoderParams], float],
    eps: float = 1e-5,
) -> Gradients:
    """
    Central-difference gradients, one scalar parameter at a time.

    Args:
        params: Point at which to differentiate
        loss_fn: Scalar loss of the parameters
        eps: Perturbation size, > 0

    Returns:
        Gradients with (L(p + eps) - L(p - eps)) / (2 eps) per entry
    """
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    base = [a.copy() for a in params.arrays()]
    out = [np.zeros_like(a) for a in base]
    for k, array in enumerate(base):
        flat = array.reshape(-1)
        grad_flat = out[k].reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + eps
            plus = loss_fn(params.with_arrays(base))
            flat[j] = original - eps
            minus = loss_fn(params.with_arrays(base))
            flat[j] = original
            grad_flat[j] = (plus - minus) / (2.0 * eps)
    return as_gradients(params, out)


def relative_error(analytic: Gradients, numeric: Gradients) -> float:
    """
    Largest per-tensor relative error: max|a - n| / max(max|a|, max|n|, 1e-8).
    """
    worst = 0.0
    for a, n in zip(analytic.arrays(), numeric.arrays(), strict=True):
        scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(n), initial=0.0)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n), initial=0.0)) / scale)
    return worst
