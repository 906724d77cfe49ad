"""
Dataset generation, augmentation, rotations, non-IID partitioning, and file I/O.
"""

import logging
from pathlib import Path
from typing import Literal

import numpy as np

from models import AugmentConfig, ClientShard, Dataset

from .errors import ConfigError, FormatError, PartitionError
from .rng import stream

logger = logging.getLogger(__name__)

CIFAR_RECORD_BYTES = 3073
CIFAR_IMAGE_SHAPE = (3, 32, 32)
MAX_REDRAWS = 100


def gen_mixture(
    num_classes: int,
    input_dim: int,
    per_class: int,
    class_sep: float,
    within_std: float,
    seed: int,
) -> Dataset:
    """
    Gaussian mixture with class means on the radius-class_sep sphere.

    Args:
        num_classes: M, at least 2
        input_dim: d_in, at least 4 and divisible by 4
        per_class: Samples per class, at least 2
        class_sep: Radius of the sphere the class means lie on
        within_std: Isotropic standard deviation around each mean
        seed: Generation seed

    Returns:
        Dataset ordered class by class
    """
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    if input_dim < 4 or input_dim % 4 != 0:
        raise ConfigError(f"input_dim must be >= 4 and divisible by 4, got {input_dim}")
    if per_class < 2:
        raise ConfigError(f"per_class must be >= 2, got {per_class}")
    rng = stream(seed, "mixture")
    directions = rng.normal(size=(num_classes, input_dim))
    means = class_sep * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    labels = np.repeat(np.arange(num_classes), per_class)
    noise = rng.normal(size=(labels.size, input_dim))
    features = means[labels] + within_std * noise
    return Dataset(features=features, labels=labels, num_classes=num_classes)


def augment(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Stochastic augmentation s * (x + eps), eps ~ N(0, sigma^2 I), s ~ U(lo, hi).
    """
    return augment_batch(np.asarray(x, dtype=np.float64)[None, :], cfg, rng)[0]


def augment_batch(batch: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Row-wise augment; every row gets its own jitter and scale."""
    lo, hi = cfg.scale_range
    noise = rng.normal(0.0, 1.0, size=batch.shape) * cfg.jitter_sigma
    scale = rng.uniform(lo, hi, size=(batch.shape[0], 1)) if hi > lo else np.full((batch.shape[0], 1), lo)
    return scale * (batch + noise)


def rotate(
    x: np.ndarray,
    idx: int,
    image_shape: tuple[int, int, int] | None = None,
) -> np.ndarray:
    """
    Apply rotation idx in {0, 1, 2, 3}.

    For plain vectors this is a cyclic shift by idx * d / 4 coordinates; for
    flattened images (image_shape set) it is a true idx * 90 degree rotation.

    Args:
        x: Vector of length d (divisible by 4)
        idx: Rotation index
        image_shape: (channels, height, width) for image data

    Returns:
        Rotated copy of x
    """
    if idx not in (0, 1, 2, 3):
        raise ConfigError(f"rotation index must be in 0..3, got {idx}")
    x = np.asarray(x, dtype=np.float64)
    if image_shape is not None:
        image = x.reshape(image_shape)
        return np.rot90(image, k=idx, axes=(1, 2)).reshape(-1).copy()
    if x.size % 4 != 0:
        raise ConfigError(f"vector length must be divisible by 4, got {x.size}")
    return np.roll(x, idx * (x.size // 4))


def rotate_batch(
    batch: np.ndarray,
    ids: np.ndarray,
    image_shape: tuple[int, int, int] | None = None,
) -> np.ndarray:
    """Rotate every row of batch by its own index."""
    out = np.empty_like(batch, dtype=np.float64)
    for k in range(4):
        rows = ids == k
        if not np.any(rows):
            continue
        if image_shape is not None:
            images = batch[rows].reshape(-1, *image_shape)
            out[rows] = np.rot90(images, k=k, axes=(2, 3)).reshape(int(rows.sum()), -1)
        else:
            if batch.shape[1] % 4 != 0:
                raise ConfigError(f"vector length must be divisible by 4, got {batch.shape[1]}")
            out[rows] = np.roll(batch[rows], k * (batch.shape[1] // 4), axis=1)
    return out


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer counts summing to total, proportional to weights (ties to lowest index)."""
    raw = total * weights / weights.sum()
    counts = np.floor(raw).astype(np.int64)
    remainder = raw - counts
    short = total - int(counts.sum())
    if short > 0:
        order = np.lexsort((np.arange(weights.size), -remainder))
        counts[order[:short]] += 1
    return counts


def _log_dirichlet(rng: np.random.Generator, alpha: float, size: int) -> np.ndarray:
    """
    Unnormalized log-weights of a Dir(alpha) draw.

    log Gamma(alpha) = log Gamma(alpha + 1) + log(U) / alpha keeps tiny alphas
    from underflowing to exact zeros.
    """
    gamma = np.log(rng.gamma(alpha + 1.0, 1.0, size=size))
    uniform = np.log(rng.uniform(np.finfo(float).tiny, 1.0, size=size))
    return gamma + uniform / alpha


def _partition_once(
    labels: np.ndarray,
    num_classes: int,
    num_clients: int,
    alpha: float,
    rng: np.random.Generator,
) -> list[list[int]]:
    n = labels.size
    pools = [list(rng.permutation(np.flatnonzero(labels == j))) for j in range(num_classes)]
    supply = np.array([len(p) for p in pools], dtype=np.int64)
    sizes = np.full(num_clients, n // num_clients, dtype=np.int64)
    sizes[: n % num_clients] += 1

    shards: list[list[int]] = []
    for k in range(num_clients):
        log_w = _log_dirichlet(rng, alpha, num_classes)
        need = int(sizes[k])
        taken = np.zeros(num_classes, dtype=np.int64)
        while need > 0:
            available = supply > 0
            if not np.any(available):
                break
            weights = np.zeros(num_classes)
            weights[available] = np.exp(log_w[available] - log_w[available].max())
            want = np.minimum(_largest_remainder(need, weights), supply)
            if want.sum() == 0:
                break
            supply -= want
            taken += want
            need -= int(want.sum())
        shard: list[int] = []
        for j in range(num_classes):
            for _ in range(int(taken[j])):
                shard.append(int(pools[j].pop()))
        shards.append(shard)

    # leftovers go round-robin to the smallest shards, ties by client id
    leftovers = sorted(int(i) for pool in pools for i in pool)
    for sample_id in leftovers:
        k = min(range(num_clients), key=lambda c: (len(shards[c]), c))
        shards[k].append(sample_id)
    return [sorted(s) for s in shards]


def dirichlet_partition(
    dataset: Dataset,
    num_clients: int,
    alpha: float,
    seed: int,
    min_shard_size: int,
) -> list[ClientShard]:
    """
    Split a dataset across clients with Dirichlet class priors.

    Each client draws class proportions q_k ~ Dir(alpha * 1_M) and takes samples
    without replacement to match them as closely as integer counts allow
    (largest-remainder rounding, renormalizing over classes with samples left).

    Args:
        dataset: Labeled dataset
        num_clients: K, at least 1
        alpha: Dirichlet concentration, > 0 (smaller = more heterogeneous)
        seed: Partition seed
        min_shard_size: Every shard must hold at least this many samples

    Returns:
        K shards that partition [0, N)

    Raises:
        PartitionError: when no valid split is found within the redraw budget
    """
    if num_clients < 1:
        raise ConfigError(f"need at least one client, got {num_clients}")
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    if dataset.num_samples < num_clients * min_shard_size:
        raise ConfigError(
            f"{dataset.num_samples} samples cannot give {num_clients} clients "
            f"{min_shard_size} samples each"
        )
    for attempt in range(MAX_REDRAWS):
        rng = stream(seed, "partition", attempt)
        shards = _partition_once(dataset.labels, dataset.num_classes, num_clients, alpha, rng)
        if min(len(s) for s in shards) >= min_shard_size:
            return [ClientShard(client_id=k, sample_ids=s) for k, s in enumerate(shards)]
        logger.warning("partition attempt %d starved a client, redrawing", attempt)
    raise PartitionError(
        f"no partition with shards >= {min_shard_size} after {MAX_REDRAWS} redraws; "
        "try a larger alpha or fewer clients"
    )


def avg_classes_per_client(
    shards: list[ClientShard],
    labels: np.ndarray,
    rule: Literal["at_least_one", "at_least_1pct"] = "at_least_one",
) -> float:
    """
    Average number of classes present per client.

    Args:
        shards: Client shards
        labels: Label of every dataset sample
        rule: "at_least_one" counts a class with any sample; "at_least_1pct"
            needs at least 1% of the client's samples

    Returns:
        Mean class count over clients
    """
    counts = []
    for shard in shards:
        if shard.size == 0:
            raise PartitionError(f"client {shard.client_id} has an empty shard")
        hist = np.bincount(labels[shard.sample_ids])
        if rule == "at_least_one":
            counts.append(int(np.count_nonzero(hist)))
        else:
            counts.append(int(np.count_nonzero(hist >= 0.01 * shard.size)))
    return float(np.mean(counts))


def shard_features(dataset: Dataset, shard: ClientShard) -> np.ndarray:
    return dataset.features[shard.sample_ids]


def split_probe_ids(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test split of sample ids for the probes."""
    order = stream(seed, "probe-split").permutation(n)
    cut = min(max(1, int(round(train_fraction * n))), n - 1)
    return np.sort(order[:cut]), np.sort(order[cut:])


def load_cifar_binary(path: str | Path, num_classes: int = 10) -> Dataset:
    """
    Parse a CIFAR binary batch: 3073-byte records (label byte + 3072 pixel bytes,
    R plane then G then B, each 32x32 row-major). Pixels are scaled to [0, 1].

    Args:
        path: File path
        num_classes: Labels must be below this (10 for CIFAR-10, 100 for the fine labels)

    Returns:
        Dataset with image_shape (3, 32, 32)
    """
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD_BYTES != 0:
        raise FormatError(
            f"{path}: length {raw.size} is not a multiple of {CIFAR_RECORD_BYTES}"
        )
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"{path}: label {int(labels.max())} >= {num_classes}")
    features = records[:, 1:].astype(np.float64) / 255.0
    return Dataset(
        features=features,
        labels=labels,
        num_classes=num_classes,
        image_shape=CIFAR_IMAGE_SHAPE,
    )


def write_cifar_binary(path: str | Path, labels: np.ndarray, pixels: np.ndarray) -> None:
    """Write uint8 labels (N,) and pixels (N, 3072) in the CIFAR binary layout."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if pixels.ndim != 2 or pixels.shape[1] != CIFAR_RECORD_BYTES - 1:
        raise FormatError(f"pixels must have shape (N, 3072), got {pixels.shape}")
    np.concatenate([labels[:, None], pixels], axis=1).tofile(path)


def save_dataset_csv(path: str | Path, dataset: Dataset) -> None:
    """Write `label,f0,...,f{d-1}` with a header row."""
    header = ",".join(["label", *(f"f{i}" for i in range(dataset.input_dim))])
    table = np.column_stack([dataset.labels, dataset.features])
    fmt = ["%d", *(["%.17g"] * dataset.input_dim)]
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=fmt)


def load_vectors_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    """
    Read the CSV vector format.

    Returns:
        (features, labels); labels is None when the file has no label column
    """
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    if not header or header == [""]:
        raise FormatError(f"{path}: missing header row")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
    if table.shape[0] == 0:
        raise FormatError(f"{path}: no data rows")
    if header[0] == "label":
        return table[:, 1:], table[:, 0].astype(np.int64)
    return table, None
