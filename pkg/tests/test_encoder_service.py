"""
Tests for the MLP encoder service.
"""

import numpy as np
import pytest

from models import EncoderParams, LayerParams
from services.encoder_service import (
    backward,
    ema_update,
    finite_diff_grads,
    forward,
    forward_cached,
    init_encoder,
    relative_error,
    sgd_step,
    zero_gradients,
)
from services.errors import ConfigError, ShapeError
from services.rng import stream


class TestForward:
    """Test cases for forward."""

    def setup_method(self):
        """Set up test fixtures."""
        self.params = init_encoder(8, [6], 4, stream(0, "test-encoder"))

    def test_rows_have_unit_norm(self):
        """Test that every representation has unit L2 norm."""
        batch = stream(1, "batch").normal(size=(10, 8))

        reps = forward(self.params, batch)

        assert reps.shape == (10, 4)
        np.testing.assert_allclose(np.linalg.norm(reps, axis=1), 1.0, atol=1e-12)

    def test_zero_output_maps_to_first_axis(self):
        """Test that a zero pre-normalization output maps to e1."""
        layer = LayerParams(weight=np.zeros((3, 2)), bias=np.zeros(3))
        params = EncoderParams(layers=[layer], rot_head=np.zeros((3, 4)))

        cache = forward_cached(params, np.ones((2, 2)))

        np.testing.assert_array_equal(cache.reps, [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        assert cache.singular.all()

    def test_singular_rows_get_zero_gradient(self):
        """Test that singular rows do not propagate gradient."""
        layer = LayerParams(weight=np.zeros((3, 2)), bias=np.zeros(3))
        params = EncoderParams(layers=[layer], rot_head=np.zeros((3, 4)))
        cache = forward_cached(params, np.ones((2, 2)))

        grads = backward(params, cache, np.ones((2, 3)))

        assert all(np.all(g == 0.0) for g in grads)

    def test_wrong_input_dim(self):
        """Test that a batch of the wrong width is rejected."""
        with pytest.raises(ShapeError):
            forward(self.params, np.zeros((2, 7)))

    def test_identity_layer_normalizes_input(self):
        """Test that an identity layer maps (3, 4) to (0.6, 0.8)."""
        layer = LayerParams(weight=np.eye(2), bias=np.zeros(2))
        params = EncoderParams(layers=[layer], rot_head=np.zeros((2, 4)))

        np.testing.assert_allclose(forward(params, np.array([[3.0, 4.0]])), [[0.6, 0.8]], atol=1e-15)

    def test_zero_batch_gives_normalized_bias(self):
        """Test that zero inputs map to b / ||b||."""
        layer = LayerParams(weight=stream(2, "weights").normal(size=(3, 2)), bias=np.array([1.0, 2.0, 2.0]))
        params = EncoderParams(layers=[layer], rot_head=np.zeros((3, 4)))

        reps = forward(params, np.zeros((2, 2)))

        np.testing.assert_allclose(reps, np.tile([1.0 / 3, 2.0 / 3, 2.0 / 3], (2, 1)), atol=1e-15)


class TestUpdates:
    """Test cases for sgd_step and ema_update."""

    def setup_method(self):
        """Set up test fixtures."""
        self.online = init_encoder(4, [3], 2, stream(0, "online"))
        self.target = init_encoder(4, [3], 2, stream(0, "target"))

    def test_sgd_zero_gradient_is_identity(self):
        """Test that a zero gradient leaves parameters unchanged."""
        updated = sgd_step(self.online, zero_gradients(self.online), 0.5)

        for a, b in zip(updated.arrays(), self.online.arrays(), strict=True):
            np.testing.assert_array_equal(a, b)

    def test_sgd_moves_against_gradient(self):
        """Test p - lr * g on every entry."""
        grads = zero_gradients(self.online).with_arrays([np.ones_like(a) for a in self.online.arrays()])

        updated = sgd_step(self.online, grads, 0.1)

        for a, b in zip(updated.arrays(), self.online.arrays(), strict=True):
            np.testing.assert_allclose(a, b - 0.1)

    def test_negative_lr_rejected(self):
        """Test that a negative learning rate is a configuration error."""
        with pytest.raises(ConfigError):
            sgd_step(self.online, zero_gradients(self.online), -0.1)

    def test_ema_fixed_points(self):
        """Test m=1 keeps the target and m=0 copies the online model."""
        kept = ema_update(self.target, self.online, 1.0)
        copied = ema_update(self.target, self.online, 0.0)

        for k, t, c, o in zip(kept.arrays(), self.target.arrays(), copied.arrays(), self.online.arrays(), strict=True):
            np.testing.assert_array_equal(k, t)
            np.testing.assert_array_equal(c, o)

    def test_ema_rate_range(self):
        """Test that m outside [0, 1] is rejected."""
        with pytest.raises(ConfigError):
            ema_update(self.target, self.online, 1.5)

    def test_ema_toward_frozen_online_decays_geometrically(self):
        """Test that 100 updates at m=0.9 shrink the gap by 0.9^100."""
        gap = max(float(np.max(np.abs(t - o))) for t, o in zip(self.target.arrays(), self.online.arrays(), strict=True))
        target = self.target
        for _ in range(100):
            target = ema_update(target, self.online, 0.9)

        after = max(float(np.max(np.abs(t - o))) for t, o in zip(target.arrays(), self.online.arrays(), strict=True))
        assert after / gap == pytest.approx(0.9**100, rel=1e-6)
        assert 0.9**100 == pytest.approx(2.65e-5, rel=1e-2)

    def test_incongruent_shapes(self):
        """Test that parameter sets of different shapes cannot be combined."""
        other = init_encoder(4, [5], 2, stream(0, "other"))
        with pytest.raises(ShapeError):
            ema_update(self.target, other, 0.5)


class TestFiniteDifferences:
    """Test cases for finite_diff_grads and relative_error."""

    def test_quadratic_gradient(self):
        """Test central differences on L = 0.5 * sum of squared parameters."""
        params = init_encoder(3, [2], 2, stream(2, "quad"))

        def loss(p: EncoderParams) -> float:
            return 0.5 * sum(float(np.sum(a * a)) for a in p.arrays())

        numeric = finite_diff_grads(params, loss, eps=1e-5)

        for n, a in zip(numeric.arrays(), params.arrays(), strict=True):
            np.testing.assert_allclose(n, a, atol=1e-8)

    def test_relative_error_of_identical_gradients(self):
        """Test that identical gradients have zero relative error."""
        params = init_encoder(3, [2], 2, stream(3, "same"))
        grads = zero_gradients(params).with_arrays(params.arrays())

        assert relative_error(grads, grads) == 0.0

    def test_non_positive_eps(self):
        """Test that eps must be positive."""
        params = init_encoder(3, [2], 2, stream(3, "eps"))
        with pytest.raises(ConfigError):
            finite_diff_grads(params, lambda p: 0.0, eps=0.0)


class TestInitEncoder:
    """Test cases for init_encoder."""

    def test_seeded_initialization_is_reproducible(self):
        """Test that equal streams give equal parameters."""
        a = init_encoder(16, [64, 64], 16, stream(7, "encoder-init"))
        b = init_encoder(16, [64, 64], 16, stream(7, "encoder-init"))

        for x, y in zip(a.arrays(), b.arrays(), strict=True):
            np.testing.assert_array_equal(x, y)
        assert a.rep_dim == 16
        assert all(np.all(layer.bias == 0.0) for layer in a.layers)
