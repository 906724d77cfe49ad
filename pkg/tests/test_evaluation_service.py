"""
Tests for the representation probes and the unsupervised tuning score.
"""

import math

import numpy as np
import pytest

from models import AugmentConfig, EncoderParams, LayerParams, ProbeSettings
from services.dataset_service import augment_batch, gen_mixture, split_probe_ids
from services.encoder_service import forward, init_encoder
from services.errors import ConfigError, ShapeError
from services.evaluation_service import (
    alignment_score,
    default_knn_k,
    knn_probe,
    linear_probe,
    run_probes,
    score_encoder,
    tuner_score,
    uniformity_from_reps,
    uniformity_score,
)
from services.rng import stream


def _constant_encoder(d_in: int = 4) -> EncoderParams:
    layer = LayerParams(weight=np.zeros((2, d_in)), bias=np.array([0.6, 0.8]))
    return EncoderParams(layers=[layer], rot_head=np.zeros((2, 4)))


def _circle(*angles: float) -> np.ndarray:
    return np.array([[np.cos(a), np.sin(a)] for a in angles])


class TestKnnProbe:
    """Test cases for knn_probe."""

    def test_self_match(self):
        """Test that k=1 on the training set itself is perfect."""
        reps = _circle(0.0, 1.0, 2.0, 3.0, 4.0)
        labels = np.array([0, 1, 2, 1, 0])

        report = knn_probe(reps, labels, reps, labels, k=1)

        assert report.accuracy == 1.0
        assert report.kind == "knn"
        assert report.hyperparameter == 1

    def test_hand_computed_votes(self):
        """Test a 3-point instance where k changes the majority."""
        train = _circle(0.0, 0.3, 0.5)
        labels = np.array([0, 1, 1])
        test = _circle(0.0)

        assert knn_probe(train, labels, test, np.array([0]), k=1).accuracy == 1.0
        assert knn_probe(train, labels, test, np.array([1]), k=3).accuracy == 1.0

    def test_vote_tie_goes_to_larger_similarity(self):
        """Test that a 1-1 tie is broken by summed similarity."""
        train = _circle(0.4, 0.1)
        labels = np.array([0, 1])
        test = _circle(0.0)

        assert knn_probe(train, labels, test, np.array([1]), k=2).accuracy == 1.0

    def test_full_tie_goes_to_lowest_class(self):
        """Test that equal votes and equal similarity pick the lowest class."""
        train = _circle(0.2, -0.2)
        labels = np.array([1, 0])
        test = _circle(0.0)

        assert knn_probe(train, labels, test, np.array([0]), k=2).accuracy == 1.0

    def test_shuffled_labels_near_chance(self):
        """Test chance-level accuracy when labels carry no signal."""
        rng = stream(0, "knn-chance")
        reps = rng.normal(size=(800, 8))
        reps /= np.linalg.norm(reps, axis=1, keepdims=True)
        labels = rng.permutation(np.repeat(np.arange(4), 200))

        report = knn_probe(reps[:600], labels[:600], reps[600:], labels[600:])

        assert report.hyperparameter == 60
        assert report.accuracy == pytest.approx(0.25, abs=0.1)

    def test_k_too_large(self):
        """Test that k > n_train is a configuration error."""
        reps = _circle(0.0, 1.0)
        with pytest.raises(ConfigError):
            knn_probe(reps, np.array([0, 1]), reps, np.array([0, 1]), k=3)

    def test_label_count_checked(self):
        """Test that every representation needs a label."""
        reps = _circle(0.0, 1.0)
        with pytest.raises(ShapeError):
            knn_probe(reps, np.array([0]), reps, np.array([0, 1]), k=1)

    @pytest.mark.parametrize("n_train,expected", [(5, 1), (100, 10), (50000, 200)])
    def test_default_k(self, n_train, expected):
        """Test min(200, n_train // 10) with a floor of one."""
        assert default_knn_k(n_train) == expected


class TestLinearProbe:
    """Test cases for linear_probe."""

    def test_separable_classes(self):
        """Test that two separable clusters are classified perfectly."""
        rng = stream(1, "linear")
        pos = np.array([1.0, 0.0]) + 0.1 * rng.normal(size=(20, 2))
        neg = np.array([-1.0, 0.0]) + 0.1 * rng.normal(size=(20, 2))
        reps = np.vstack([pos, neg])
        labels = np.array([0] * 20 + [1] * 20)

        report = linear_probe(reps, labels, reps, labels)

        assert report.accuracy == 1.0
        assert report.hyperparameter == 500

    def test_constant_reps_predict_majority(self):
        """Test that identical representations fall back to the majority class."""
        reps = np.tile([0.6, 0.8], (4, 1))
        labels = np.array([0, 0, 0, 1])
        test_labels = np.array([0, 0, 1])

        report = linear_probe(reps, labels, reps[:3], test_labels)

        assert report.accuracy == pytest.approx(2 / 3)

    def test_single_class_rejected(self):
        """Test that the training labels need two classes."""
        reps = _circle(0.0, 1.0)
        with pytest.raises(ConfigError):
            linear_probe(reps, np.array([1, 1]), reps, np.array([1, 1]))

    def test_orthogonal_invariance(self):
        """Test that a common rotation of all reps leaves both probes unchanged."""
        rng = stream(2, "rotation")
        reps = rng.normal(size=(60, 5))
        reps /= np.linalg.norm(reps, axis=1, keepdims=True)
        labels = (reps[:, 0] + 0.5 * reps[:, 1] > 0).astype(np.int64)
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        rotated = reps @ q

        plain = linear_probe(reps[:40], labels[:40], reps[40:], labels[40:], epochs=100)
        turned = linear_probe(rotated[:40], labels[:40], rotated[40:], labels[40:], epochs=100)

        assert plain.accuracy == turned.accuracy
        assert (
            knn_probe(reps[:40], labels[:40], reps[40:], labels[40:], k=5).accuracy
            == knn_probe(rotated[:40], labels[:40], rotated[40:], labels[40:], k=5).accuracy
        )


class TestAlignmentUniformity:
    """Test cases for alignment_score, uniformity_score and tuner_score."""

    def setup_method(self):
        """Set up test fixtures."""
        self.samples = stream(3, "samples").normal(size=(10, 4))
        self.params = init_encoder(4, [8], 3, stream(3, "encoder"))

    def test_identity_augmentation_aligns(self):
        """Test that an identity augmentation gives Align = 1."""
        cfg = AugmentConfig(jitter_sigma=0.0, scale_range=(1.0, 1.0))

        assert alignment_score(self.params, self.samples, cfg, stream(0, "a")) == pytest.approx(1.0)

    def test_constant_encoder_aligns(self):
        """Test that a constant encoder gives Align = 1."""
        score = alignment_score(_constant_encoder(), self.samples, AugmentConfig(), stream(0, "a"))

        assert score == pytest.approx(1.0)

    def test_alignment_matches_pairwise_loop(self):
        """Test against an explicit per-pair cosine mean."""
        cfg = AugmentConfig(jitter_sigma=0.5)
        augmented = augment_batch(self.samples, cfg, stream(4, "align"))
        expected = np.mean(
            [
                float(forward(self.params, self.samples[i : i + 1])[0] @ forward(self.params, augmented[i : i + 1])[0])
                for i in range(10)
            ]
        )

        score = alignment_score(self.params, self.samples, cfg, stream(4, "align"))

        assert score == pytest.approx(expected)

    def test_per_client_average(self):
        """Test that client means are averaged with equal weight."""
        cfg = AugmentConfig(jitter_sigma=0.0, scale_range=(1.0, 1.0))
        clients = [self.samples[:3], self.samples[3:]]

        unif = uniformity_score(self.params, clients)
        expected = np.mean([uniformity_from_reps(forward(self.params, c)) for c in clients])

        assert unif == pytest.approx(expected)
        assert alignment_score(self.params, clients, cfg, stream(0, "a")) == pytest.approx(1.0)

    def test_collapsed_uniformity(self):
        """Test that a constant encoder attains -1/tau."""
        assert uniformity_score(_constant_encoder(), self.samples, 0.2) == pytest.approx(-5.0)

    def test_antipodal_pair(self):
        """Test the closed form for two antipodal reps."""
        reps = np.array([[1.0, 0.0], [-1.0, 0.0]])
        expected = -math.log((math.exp(5.0) + math.exp(-5.0)) / 2.0)

        assert uniformity_from_reps(reps, 0.2) == pytest.approx(expected)
        assert expected == pytest.approx(-4.3069, abs=1e-4)

    def test_spreading_raises_uniformity(self):
        """Test that orthogonal reps score above collapsed ones."""
        collapsed = np.tile([1.0, 0.0, 0.0, 0.0], (4, 1))

        assert uniformity_from_reps(np.eye(4)) > uniformity_from_reps(collapsed)

    def test_uniformity_needs_two_samples(self):
        """Test the n >= 2 precondition."""
        with pytest.raises(ConfigError):
            uniformity_from_reps(np.array([[1.0, 0.0]]))

    def test_tuner_score_arithmetic(self):
        """Test Align + 0.2 * Unif."""
        assert tuner_score(1.0, -5.0) == 0.0
        assert tuner_score(0.9, -1.0) == pytest.approx(0.7)

    def test_collapsed_encoder_scores_zero(self):
        """Test that degenerate solutions are not rewarded."""
        score = score_encoder(_constant_encoder(), [self.samples[:5], self.samples[5:]], AugmentConfig(), stream(0, "s"))

        assert score.align == pytest.approx(1.0)
        assert score.unif == pytest.approx(-5.0)
        assert score.combined == pytest.approx(0.0, abs=1e-12)


class TestRunProbes:
    """Test cases for run_probes."""

    def test_reports_on_probe_split(self):
        """Test both probes on a well-separated mixture."""
        dataset = gen_mixture(4, 8, 25, 10.0, 0.1, seed=0)
        train_ids, test_ids = split_probe_ids(dataset.num_samples, 0.8, seed=0)
        params = init_encoder(8, [64], 16, stream(0, "encoder-init"))

        knn, linear = run_probes(params, dataset, train_ids, test_ids, ProbeSettings())

        assert knn.n_train == 80
        assert knn.n_test == 20
        assert knn.hyperparameter == 8
        assert linear.kind == "linear"
        assert knn.accuracy >= 0.9
