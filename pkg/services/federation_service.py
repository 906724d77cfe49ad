"""
Federation engine: local client training, server aggregation, global clustering,
and per-round metrics.
"""

import logging
import math
from collections import deque
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from models import (
    Centroids,
    ClientResult,
    ClientShard,
    ClientStats,
    Dataset,
    EncoderParams,
    FederationConfig,
    FederationResult,
    Gradients,
    LossInputs,
    LossKind,
    LossSpec,
    Method,
    ProbeSettings,
    RoundMetrics,
)

from .clustering_service import ClusteringService, inter_cluster_mixing, nearest_centroid, warn_if_few_clusters
from .dataset_service import augment_batch, rotate_batch, split_probe_ids
from .encoder_service import as_gradients, ema_update, forward, init_encoder, sgd_step
from .errors import AggregationError, ConfigError, RoundError
from .evaluation_service import run_probes, score_encoder
from .losses_service import assignment_probs, compute_loss_and_grads, draw_rotations
from .rng import derive_seed, stream

logger = logging.getLogger(__name__)


class MemoryBuffer:
    """Fixed-capacity FIFO of the most recent target representations."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError(f"memory capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._rows: deque[np.ndarray] = deque(maxlen=capacity)

    def push(self, reps: np.ndarray) -> None:
        for row in np.atleast_2d(reps):
            self._rows.append(np.array(row, dtype=np.float64))

    def contents(self) -> np.ndarray:
        """Stored rows, oldest first."""
        if not self._rows:
            return np.empty((0, 0))
        return np.vstack(self._rows)

    def __len__(self) -> int:
        return len(self._rows)


def _loss_terms(cfg: FederationConfig) -> list[LossKind]:
    if cfg.method == Method.ORCHESTRA:
        return [LossKind.CLUSTER, LossKind.DEGENERACY] if cfg.use_degeneracy_loss else [LossKind.CLUSTER]
    if cfg.method == Method.ROTPRED:
        return [LossKind.DEGENERACY]
    if cfg.method == Method.SPECLOSS:
        return [LossKind.SPECLOSS]
    return []


def _sum_gradients(params: EncoderParams, parts: list[Gradients]) -> Gradients:
    arrays = [np.zeros_like(a) for a in params.arrays()]
    for part in parts:
        for k, g in enumerate(part.arrays()):
            arrays[k] += g
    return as_gradients(params, arrays)


def client_round(
    features: np.ndarray,
    online_params: EncoderParams,
    target_params: EncoderParams,
    global_centroids: Centroids,
    cfg: FederationConfig,
    round_idx: int,
    client_id: int = 0,
    image_shape: tuple[int, int, int] | None = None,
) -> ClientResult:
    """
    Local training of one client for one round.

    The memory buffer starts with target representations of up to mem_size
    shard samples and receives the clean-batch target representations of every
    step; local centroids come from equal-size clustering of the buffer.

    Args:
        features: The client's samples (n_k x d_in)
        online_params: Online encoder received from the server
        target_params: Target encoder received from the server
        global_centroids: Current global centroids
        cfg: Federation settings
        round_idx: Round counter (keys the random stream)
        client_id: Client id (keys the random stream)
        image_shape: Set when features are flattened images

    Returns:
        ClientResult; success is False when the client was skipped
    """
    n = features.shape[0]
    if n < cfg.batch_size:
        message = f"client {client_id} has {n} samples, fewer than batch size {cfg.batch_size}"
        logger.warning("skipping %s", message)
        return ClientResult(client_id=client_id, success=False, error_message=message, shard_size=n)

    rng = stream(cfg.seed, "client", round_idx, client_id)
    online = online_params.copy_params()
    target = target_params.copy_params()

    memory = MemoryBuffer(cfg.mem_size)
    prefill = np.sort(rng.permutation(n)[: cfg.mem_size])
    memory.push(forward(target, features[prefill]))
    if len(memory) < cfg.local_clusters:
        message = f"client {client_id} cannot form {cfg.local_clusters} local clusters from {len(memory)} samples"
        logger.warning("skipping %s", message)
        return ClientResult(client_id=client_id, success=False, error_message=message, shard_size=n)

    terms = _loss_terms(cfg)
    steps_per_epoch = n // cfg.batch_size
    sums = {LossKind.CLUSTER: 0.0, LossKind.DEGENERACY: 0.0, LossKind.SPECLOSS: 0.0}
    stats = ClientStats()
    for _ in range(cfg.local_epochs if terms else 0):
        order = rng.permutation(n)
        for step in range(steps_per_epoch):
            clean = features[order[step * cfg.batch_size : (step + 1) * cfg.batch_size]]
            augmented = augment_batch(clean, cfg.augment, rng)
            rotation_ids = draw_rotations(clean.shape[0], rng)
            target_reps = forward(target, clean)
            label_reps = target_reps if cfg.use_target_model else forward(online, clean)
            inputs = LossInputs(
                clean=clean,
                augmented=augmented,
                rotated=rotate_batch(clean, rotation_ids, image_shape),
                rotation_ids=rotation_ids,
                target_probs=assignment_probs(label_reps, global_centroids, cfg.tau_target),
                centroids=global_centroids,
            )
            total = 0.0
            parts = []
            for kind in terms:
                loss, grads = compute_loss_and_grads(
                    online, LossSpec(kind=kind, tau_assign=cfg.tau_assign), inputs
                )
                sums[kind] += loss
                total += loss
                parts.append(grads)
            online = sgd_step(online, _sum_gradients(online, parts), cfg.lr)
            target = ema_update(target, online, cfg.ema)
            memory.push(target_reps)

            stats.steps += 1
            if stats.first_total_loss is None:
                stats.first_total_loss = total
            stats.last_total_loss = total
            logger.debug("client %d round %d step %d loss %.6f", client_id, round_idx, stats.steps, total)

    if stats.steps:
        stats.cluster_loss = sums[LossKind.CLUSTER] / stats.steps
        stats.deg_loss = sums[LossKind.DEGENERACY] / stats.steps
        stats.spec_loss = sums[LossKind.SPECLOSS] / stats.steps

    buffered = memory.contents()
    local_centroids, _ = ClusteringService(cfg.sinkhorn).cluster(
        buffered,
        cfg.local_clusters,
        derive_seed(cfg.seed, "local-clusters", round_idx, client_id),
    )
    return ClientResult(
        client_id=client_id,
        success=True,
        target_params=target,
        online_params=online,
        local_centroids=local_centroids,
        memory=buffered if cfg.idealized_clustering else None,
        shard_size=n,
        stats=stats,
    )


def fedavg(params_list: list[EncoderParams], weights: list[float] | None = None) -> EncoderParams:
    """
    Elementwise (weighted) mean of encoder parameters.

    Args:
        params_list: Parameters in ascending client-id order
        weights: Optional non-negative weights (e.g. shard sizes); uniform when None

    Returns:
        Averaged parameters

    Raises:
        AggregationError: empty list or zero total weight
    """
    if not params_list:
        raise AggregationError("nothing to aggregate")
    if weights is None:
        weights = [1.0] * len(params_list)
    if len(weights) != len(params_list):
        raise AggregationError("one weight is needed per parameter set")
    total = float(sum(weights))
    if total <= 0:
        raise AggregationError("aggregation weights sum to zero")

    first = params_list[0]
    acc = [np.zeros_like(a) for a in first.arrays()]
    for params, weight in zip(params_list, weights, strict=True):
        arrays = params.arrays()
        if len(arrays) != len(acc) or any(a.shape != b.shape for a, b in zip(arrays, acc, strict=True)):
            raise AggregationError("parameter sets are not shape-congruent")
        for k, a in enumerate(arrays):
            acc[k] += weight * a
    return first.with_arrays([a / total for a in acc])


def init_global_centroids(
    features_per_client: list[np.ndarray],
    params: EncoderParams,
    cfg: FederationConfig,
) -> Centroids:
    """
    Initial global centroids from a small federation step over every client.

    Each client with at least L samples encodes its shard with the initial
    target encoder and clusters it into L local centroids; the server clusters
    the pooled local centroids into G global centroids.
    """
    eligible = [f for f in features_per_client if f.shape[0] >= cfg.local_clusters]
    if not eligible:
        raise ConfigError(f"no client holds at least {cfg.local_clusters} samples")
    reps = [forward(params, f) for f in eligible]
    global_centroids, _ = ClusteringService(cfg.sinkhorn).two_level(
        reps,
        [cfg.local_clusters] * len(reps),
        cfg.global_clusters,
        derive_seed(cfg.seed, "init-centroids"),
    )
    return global_centroids


def scale_local_epochs(e_base: int, k_base: int, k_new: int) -> int:
    """Linear epoch scaling: round(E * K_new / K_base), at least 1."""
    if e_base <= 0 or k_base <= 0 or k_new <= 0:
        raise ConfigError("epoch scaling needs positive inputs")
    return max(1, math.floor(e_base * k_new / k_base + 0.5))


def scale_lr(lr_base: float, r_base: float, r_new: float) -> float:
    """Square-root learning-rate scaling: lr * sqrt(R_new / R_base)."""
    if lr_base <= 0 or r_base <= 0 or r_new <= 0:
        raise ConfigError("learning-rate scaling needs positive inputs")
    return lr_base * math.sqrt(r_new / r_base)


class FederationService:
    """Server side of a simulated federation."""

    def __init__(
        self,
        cfg: FederationConfig,
        dataset: Dataset,
        shards: list[ClientShard],
        probe_settings: ProbeSettings | None = None,
        on_round: Callable[[RoundMetrics], None] | None = None,
    ):
        """
        Initialize the federation.

        Args:
            cfg: Federation settings
            dataset: Full dataset; clients see only their shard
            shards: One shard per client, client ids 0..K-1
            probe_settings: Probe and evaluation-sample settings
            on_round: Called with each round's metrics as soon as they exist
        """
        if len(shards) != cfg.num_clients:
            raise ConfigError(f"expected {cfg.num_clients} shards, got {len(shards)}")
        self.shards = sorted(shards, key=lambda s: s.client_id)
        if [s.client_id for s in self.shards] != list(range(cfg.num_clients)):
            raise ConfigError("shard client ids must be 0..K-1")
        for shard in self.shards:
            if shard.sample_ids and max(shard.sample_ids) >= dataset.num_samples:
                raise ConfigError(f"client {shard.client_id} references samples outside the dataset")

        self.cfg = cfg
        self.dataset = dataset
        self.settings = probe_settings or ProbeSettings()
        self.on_round = on_round
        self.clustering = ClusteringService(cfg.sinkhorn)
        self.client_features = [dataset.features[s.sample_ids] for s in self.shards]

        self.train_ids, self.test_ids = split_probe_ids(
            dataset.num_samples, self.settings.train_fraction, cfg.seed
        )
        self.eval_samples = self._eval_samples()
        delta_size = min(self.settings.delta_batch, dataset.num_samples)
        delta_ids = np.sort(stream(cfg.seed, "delta-batch").choice(dataset.num_samples, delta_size, replace=False))
        self.delta_batch = dataset.features[delta_ids]

    def _eval_samples(self) -> list[np.ndarray]:
        samples = []
        for shard, features in zip(self.shards, self.client_features, strict=True):
            if features.shape[0] < 2:
                continue
            size = min(self.settings.eval_per_client, features.shape[0])
            rows = stream(self.cfg.seed, "eval-sample", shard.client_id).choice(
                features.shape[0], size, replace=False
            )
            samples.append(features[np.sort(rows)])
        if not samples:
            raise ConfigError("no client has the two samples needed for Align/Unif")
        return samples

    def _participants(self, round_idx: int) -> list[int]:
        chosen = stream(self.cfg.seed, "participants", round_idx).choice(
            self.cfg.num_clients, self.cfg.participants_per_round, replace=False
        )
        return sorted(int(k) for k in chosen)

    def _run_clients(
        self,
        participants: list[int],
        online: EncoderParams,
        target: EncoderParams,
        centroids: Centroids,
        round_idx: int,
    ) -> list[ClientResult]:
        def work(k: int) -> ClientResult:
            return client_round(
                self.client_features[k],
                online,
                target,
                centroids,
                self.cfg,
                round_idx,
                client_id=k,
                image_shape=self.dataset.image_shape,
            )

        if self.cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                results = list(pool.map(work, participants))
        else:
            results = [work(k) for k in participants]
        return sorted(results, key=lambda r: r.client_id)

    def _global_clustering(self, results: list[ClientResult], round_idx: int) -> Centroids:
        if self.cfg.idealized_clustering:
            points = np.concatenate([r.memory for r in results if r.memory is not None], axis=0)
        else:
            points = np.concatenate(
                [r.local_centroids.matrix.T for r in results if r.local_centroids is not None], axis=0
            )
        if points.shape[0] < self.cfg.global_clusters:
            raise ConfigError(
                f"{points.shape[0]} local centroids cannot form {self.cfg.global_clusters} global clusters; "
                "raise participation or local_clusters"
            )
        centroids, _ = self.clustering.cluster(
            points, self.cfg.global_clusters, derive_seed(self.cfg.seed, "global-clusters", round_idx)
        )
        return centroids

    def _metrics(
        self,
        round_idx: int,
        results: list[ClientResult],
        participants: list[int],
        target: EncoderParams,
        centroids: Centroids,
        with_probes: bool,
    ) -> RoundMetrics:
        reps = forward(target, self.delta_batch)
        delta = inter_cluster_mixing(centroids, reps, nearest_centroid(reps, centroids))
        score = score_encoder(
            target,
            self.eval_samples,
            self.cfg.augment,
            stream(self.cfg.seed, "align", round_idx),
            self.cfg.tau_unif,
        )
        knn_acc = linear_acc = None
        if with_probes:
            knn, linear = run_probes(target, self.dataset, self.train_ids, self.test_ids, self.settings)
            knn_acc, linear_acc = knn.accuracy, linear.accuracy

        def mean_stat(name: str) -> float:
            return float(np.mean([getattr(r.stats, name) for r in results])) if results else 0.0

        return RoundMetrics(
            round=round_idx,
            mean_cluster_loss=mean_stat("cluster_loss"),
            mean_deg_loss=mean_stat("deg_loss"),
            mean_spec_loss=mean_stat("spec_loss"),
            delta=delta,
            knn_acc=knn_acc,
            linear_acc=linear_acc,
            align=score.align,
            unif=score.unif,
            tuner_score=score.combined,
            participants=participants,
        )

    def run(self) -> FederationResult:
        """
        Run every round and a final evaluation.

        Returns:
            FederationResult with the timeline, final metrics, and server state

        Raises:
            RoundError: when every participant of a round was skipped
        """
        cfg = self.cfg
        warn_if_few_clusters(cfg.global_clusters, self.dataset.num_classes)
        online = init_encoder(
            self.dataset.input_dim, cfg.hidden_dims, cfg.rep_dim, stream(cfg.seed, "encoder-init")
        )
        target = online.copy_params()
        initial = init_global_centroids(self.client_features, target, cfg)
        centroids = initial

        timeline: list[RoundMetrics] = []
        last_results: list[ClientResult] = []
        for round_idx in range(1, cfg.rounds + 1):
            participants = self._participants(round_idx)
            results = self._run_clients(participants, online, target, centroids, round_idx)
            accepted = [r for r in results if r.success]
            if not accepted:
                raise RoundError(f"round {round_idx}: every participant was skipped")
            weights = [float(r.shard_size) for r in accepted] if cfg.weighted_fedavg else None
            online = fedavg([r.online_params for r in accepted if r.online_params is not None], weights)
            target = fedavg([r.target_params for r in accepted if r.target_params is not None], weights)
            centroids = self._global_clustering(accepted, round_idx)

            probes = cfg.eval_every > 0 and round_idx % cfg.eval_every == 0
            metrics = self._metrics(round_idx, accepted, participants, target, centroids, probes)
            timeline.append(metrics)
            last_results = accepted
            logger.info(
                "round %d: cluster=%.4f deg=%.4f delta=%s align=%.4f unif=%.4f clients=%d/%d",
                round_idx,
                metrics.mean_cluster_loss,
                metrics.mean_deg_loss,
                "n/a" if metrics.delta is None else f"{metrics.delta:.4f}",
                metrics.align,
                metrics.unif,
                len(accepted),
                len(participants),
            )
            if self.on_round is not None:
                self.on_round(metrics)

        final = self._metrics(
            cfg.rounds,
            last_results,
            timeline[-1].participants if timeline else [],
            target,
            centroids,
            with_probes=True,
        )
        return FederationResult(
            timeline=timeline,
            final=final,
            target_params=target,
            online_params=online,
            global_centroids=centroids,
            initial_centroids=initial,
        )


def run_federation(
    cfg: FederationConfig,
    dataset: Dataset,
    shards: list[ClientShard],
    probe_settings: ProbeSettings | None = None,
) -> list[RoundMetrics]:
    """Run a federation and return its per-round metrics timeline."""
    return FederationService(cfg, dataset, shards, probe_settings).run().timeline
