"""
Equal-size Sinkhorn-Knopp clustering, the local -> global centroid hierarchy,
and the evaluators built on top of it (mixing, consistency, bounds, anonymity).
"""

import logging

import numpy as np
from scipy.optimize import linear_sum_assignment

from models import BalancedAssignment, BoundInputs, Centroids, SinkhornConfig

from .errors import AnonymityError, ConfigError, NumericalError, ShapeError
from .rng import stream

logger = logging.getLogger(__name__)


def _normalize_rows(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeError(f"points must be a matrix, got shape {points.shape}")
    norms = np.linalg.norm(points, axis=1, keepdims=True)
    if np.any(norms <= 0.0):
        raise ConfigError("points must be non-zero to be clustered on the sphere")
    return points / norms


def _unit_columns(matrix: np.ndarray) -> np.ndarray:
    return matrix / np.linalg.norm(matrix, axis=0, keepdims=True)


def sinkhorn_plan(
    cost: np.ndarray,
    epsilon: float,
    inner_iters: int,
    tol: float,
) -> tuple[np.ndarray, bool]:
    """
    Entropic OT plan with uniform marginals 1/n (rows) and 1/G (columns).

    Args:
        cost: Cost matrix (n x G)
        epsilon: Entropic regularization strength
        inner_iters: Maximum number of scaling iterations
        tol: Stop once the largest row-marginal error drops below this

    Returns:
        (plan, converged)

    Raises:
        NumericalError: when exp(-cost / epsilon) underflows for a whole row
    """
    n, g = cost.shape
    a = 1.0 / n
    b = 1.0 / g
    kernel = np.exp(-cost / epsilon)
    if np.any(kernel.sum(axis=1) == 0.0) or np.any(kernel.sum(axis=0) == 0.0):
        raise NumericalError(
            f"Sinkhorn kernel underflowed at epsilon={epsilon}; use a larger epsilon",
            term="sinkhorn",
        )
    u = np.ones(n)
    v = np.ones(g)
    converged = False
    for _ in range(inner_iters):
        u = a / (kernel @ v)
        v = b / (kernel.T @ u)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise NumericalError(
                f"Sinkhorn scaling diverged at epsilon={epsilon}; use a larger epsilon",
                term="sinkhorn",
            )
        # columns are exact after the v update
        row_error = float(np.max(np.abs(u * (kernel @ v) - a)))
        if row_error < tol:
            converged = True
            break
    return u[:, None] * kernel * v[None, :], converged


def entropic_objective(plan: np.ndarray, cost: np.ndarray, epsilon: float) -> float:
    """<P, C> + epsilon * sum P log P."""
    positive = plan[plan > 0]
    return float(np.sum(plan * cost) + epsilon * np.sum(positive * np.log(positive)))


def project_plan(plan: np.ndarray) -> np.ndarray:
    """
    Repair an approximate plan so rows sum to 1/n and columns to 1/G exactly.

    Rows and then columns carrying too much mass are scaled down; the mass
    still missing is spread as the outer product of the row and column
    deficits, which leaves every entry non-negative.
    """
    n, g = plan.shape
    a = np.full(n, 1.0 / n)
    b = np.full(g, 1.0 / g)
    rows = plan.sum(axis=1)
    plan = plan * np.minimum(a / np.where(rows > 0, rows, 1.0), 1.0)[:, None]
    cols = plan.sum(axis=0)
    plan = plan * np.minimum(b / np.where(cols > 0, cols, 1.0), 1.0)[None, :]
    row_deficit = a - plan.sum(axis=1)
    col_deficit = b - plan.sum(axis=0)
    missing = row_deficit.sum()
    if missing > 0.0:
        plan = plan + np.outer(row_deficit, col_deficit) / missing
    return plan


def round_plan(plan: np.ndarray) -> np.ndarray:
    """
    Greedy capacity-respecting hard assignment.

    Cells are visited by decreasing plan mass, ties by (point, cluster). A
    cluster accepts points up to floor(n/G); only n mod G clusters may grow
    to ceil(n/G), so every point ends up assigned and sizes differ by at most one.
    """
    n, g = plan.shape
    floor, extra = divmod(n, g)
    rows, cols = np.indices((n, g))
    order = np.lexsort((cols.ravel(), rows.ravel(), -plan.ravel()))
    assignment = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(g, dtype=np.int64)
    at_ceiling = 0
    remaining = n
    for cell in order:
        i, j = divmod(int(cell), g)
        if assignment[i] >= 0:
            continue
        if sizes[j] < floor:
            pass
        elif sizes[j] == floor and at_ceiling < extra:
            at_ceiling += 1
        else:
            continue
        assignment[i] = j
        sizes[j] += 1
        remaining -= 1
        if remaining == 0:
            break
    return assignment


def _cluster_sums(points: np.ndarray, assignment: np.ndarray, num_clusters: int) -> np.ndarray:
    sums = np.zeros((num_clusters, points.shape[1]))
    np.add.at(sums, assignment, points)
    return sums


def refine_by_swaps(
    points: np.ndarray,
    assignment: np.ndarray,
    num_clusters: int,
    max_swaps: int,
) -> np.ndarray:
    """
    Exchange pairs of points between clusters while that lowers the within-cluster cost.

    Cluster sizes never change. For unit points the cost is n - sum_g |s_g|
    with s_g the member sum of cluster g, so the effect of every swap is read
    off dot products. The best swap is applied each step, ties by (i, j).

    Args:
        points: Unit-norm points (n x D)
        assignment: Balanced hard assignment to start from
        num_clusters: G
        max_swaps: Upper bound on the number of exchanges

    Returns:
        The refined assignment (a new array)
    """
    assignment = np.asarray(assignment, dtype=np.int64).copy()
    n = points.shape[0]
    if num_clusters < 2 or n <= num_clusters:
        return assignment
    sums = _cluster_sums(points, assignment, num_clusters)
    gram = points @ points.T
    idx = np.arange(n)
    for _ in range(max_swaps):
        dots = points @ sums.T
        norms = np.linalg.norm(sums, axis=1)
        # |s_a(i) - x_i + x_j|^2 for every ordered pair
        moved_sq = (
            (np.sum(sums * sums, axis=1)[assignment] + 2.0 - 2.0 * dots[idx, assignment])[:, None]
            + 2.0 * dots[:, assignment].T
            - 2.0 * gram
        )
        moved = np.sqrt(np.maximum(moved_sq, 0.0))
        gain = moved + moved.T - norms[assignment][:, None] - norms[assignment][None, :]
        gain[assignment[:, None] == assignment[None, :]] = -np.inf
        best = int(np.argmax(gain))
        i, j = divmod(best, n)
        if not gain[i, j] > 1e-12:
            break
        a, b = assignment[i], assignment[j]
        sums[a] += points[j] - points[i]
        sums[b] += points[i] - points[j]
        assignment[i], assignment[j] = b, a
    return assignment


class ClusteringService:
    """Equal-size clustering of unit vectors on the sphere."""

    def __init__(self, config: SinkhornConfig | None = None):
        """
        Initialize the clustering service.

        Args:
            config: Sinkhorn settings; defaults apply when omitted
        """
        self.config = config or SinkhornConfig()

    def cluster(
        self,
        points: np.ndarray,
        num_clusters: int,
        seed: int,
    ) -> tuple[Centroids, BalancedAssignment]:
        """
        Balanced clustering with alternating plan and centroid updates.

        Each of `restarts` seeded initializations alternates Sinkhorn plans
        and centroid updates, rounds the plan to a balanced partition and
        refines it by swaps. The partition with the lowest within-cluster
        cost is kept, with its plan repaired to exact marginals.

        Args:
            points: Points to cluster (n x D); rows are normalized first
            num_clusters: G, with 1 <= G <= n
            seed: Seed of the centroid initialization

        Returns:
            (centroids, balanced assignment)

        Raises:
            ConfigError: n < G
            NumericalError: Sinkhorn underflow
        """
        points = _normalize_rows(points)
        n = points.shape[0]
        g = num_clusters
        if g < 1 or n < g:
            raise ConfigError(f"cannot form {g} clusters from {n} points")
        cfg = self.config

        if g == n:
            plan = np.eye(n) / n
            return Centroids(matrix=points.T.copy()), BalancedAssignment(
                assignment=np.arange(n), plan=plan, objective_trace=[]
            )

        runs: list[tuple[float, int, np.ndarray, np.ndarray, np.ndarray, list[float]]] = []
        for restart in range(cfg.restarts):
            mu, plan, trace = self._alternate(points, g, seed, restart)
            assignment = refine_by_swaps(points, round_plan(plan), g, cfg.swap_iters)
            cost = within_cluster_cost(points, assignment, g)
            logger.debug("restart %d: within-cluster cost %.6f", restart, cost)
            runs.append((cost, restart, mu, plan, assignment, trace))
        # cheapest partition, earliest restart on ties
        _, _, mu, plan, assignment, trace = min(runs, key=lambda run: (run[0], run[1]))

        # centroids follow the hard partition; an empty-mass cluster keeps its soft centroid
        sums = _cluster_sums(points, assignment, g).T
        norms = np.linalg.norm(sums, axis=0)
        keep = norms <= 1e-12
        centroids = np.where(keep[None, :], mu, sums / np.where(keep, 1.0, norms)[None, :])
        return Centroids(matrix=_unit_columns(centroids)), BalancedAssignment(
            assignment=assignment, plan=project_plan(plan), objective_trace=trace
        )

    def _alternate(
        self, points: np.ndarray, g: int, seed: int, restart: int
    ) -> tuple[np.ndarray, np.ndarray, list[float]]:
        """One seeded run of plan/centroid alternations; returns (centroids, final plan, trace)."""
        cfg = self.config
        n = points.shape[0]
        init = stream(seed, "centroid-init", restart).choice(n, size=g, replace=False)
        mu = points[np.sort(init)].T.copy()
        trace: list[float] = []
        for _ in range(cfg.outer_iters):
            cost = 1.0 - points @ mu
            plan, _ = sinkhorn_plan(cost, cfg.epsilon, cfg.inner_iters, cfg.tol)
            trace.append(entropic_objective(plan, cost, cfg.epsilon))
            weighted = points.T @ plan
            norms = np.linalg.norm(weighted, axis=0)
            # a centroid with no usable mass keeps its previous position
            keep = norms <= 1e-12
            mu = np.where(keep[None, :], mu, weighted / np.where(keep, 1.0, norms)[None, :])

        cost = 1.0 - points @ mu
        plan, converged = sinkhorn_plan(cost, cfg.epsilon, cfg.inner_iters, cfg.tol)
        if not converged:
            logger.debug(
                "Sinkhorn stopped short of tol=%g after %d iterations (n=%d, G=%d); repairing marginals",
                cfg.tol,
                cfg.inner_iters,
                n,
                g,
            )
        trace.append(entropic_objective(plan, cost, cfg.epsilon))
        return mu, plan, trace

    def two_level(
        self,
        local_reps_per_client: list[np.ndarray],
        local_counts: list[int],
        num_global: int,
        seed: int,
    ) -> tuple[Centroids, list[Centroids]]:
        """
        Cluster each client locally, then cluster the pooled local centroids.

        Args:
            local_reps_per_client: Representations of each client, in client-id order
            local_counts: L per client
            num_global: G
            seed: Base seed; client k clusters with seed + k + 1

        Returns:
            (global centroids, local centroids per client)
        """
        if len(local_reps_per_client) != len(local_counts):
            raise ShapeError("one local cluster count is needed per client")
        if sum(local_counts) < num_global:
            raise ConfigError(
                f"{sum(local_counts)} local centroids cannot form {num_global} global clusters"
            )
        local: list[Centroids] = []
        for k, (reps, count) in enumerate(zip(local_reps_per_client, local_counts, strict=True)):
            if reps.shape[0] < count:
                raise ConfigError(f"client {k} has {reps.shape[0]} representations for {count} clusters")
            centroids, _ = self.cluster(reps, count, seed + k + 1)
            local.append(centroids)
        pooled = np.concatenate([c.matrix.T for c in local], axis=0)
        global_centroids, _ = self.cluster(pooled, num_global, seed)
        return global_centroids, local

    def assign_balanced(self, points: np.ndarray, centroids: Centroids) -> np.ndarray:
        """Equal-size assignment of points to fixed centroids (one Sinkhorn solve, then rounding)."""
        points = _normalize_rows(points)
        if points.shape[0] < centroids.num_clusters:
            raise ConfigError(
                f"cannot assign {points.shape[0]} points to {centroids.num_clusters} clusters"
            )
        cfg = self.config
        plan, _ = sinkhorn_plan(1.0 - points @ centroids.matrix, cfg.epsilon, cfg.inner_iters, cfg.tol)
        return round_plan(plan)


def sinkhorn_balanced(
    points: np.ndarray,
    num_clusters: int,
    epsilon: float = 0.05,
    outer_iters: int = 10,
    inner_iters: int = 100,
    tol: float = 1e-6,
    seed: int = 0,
) -> tuple[Centroids, BalancedAssignment]:
    config = SinkhornConfig(epsilon=epsilon, outer_iters=outer_iters, inner_iters=inner_iters, tol=tol)
    return ClusteringService(config).cluster(points, num_clusters, seed)


def two_level_cluster(
    local_reps_per_client: list[np.ndarray],
    local_counts: list[int],
    num_global: int,
    config: SinkhornConfig | None = None,
    seed: int = 0,
) -> tuple[Centroids, list[Centroids]]:
    return ClusteringService(config).two_level(local_reps_per_client, local_counts, num_global, seed)


def assign_balanced(
    points: np.ndarray,
    centroids: Centroids,
    config: SinkhornConfig | None = None,
) -> np.ndarray:
    return ClusteringService(config).assign_balanced(points, centroids)


def nearest_centroid(points: np.ndarray, centroids: Centroids) -> np.ndarray:
    """Index of the most similar centroid per point (lowest index on ties)."""
    return np.argmax(points @ centroids.matrix, axis=1)


def within_cluster_cost(points: np.ndarray, assignment: np.ndarray, num_clusters: int) -> float:
    """Sum over clusters of sum(1 - cos(point, normalized cluster mean))."""
    points = _normalize_rows(points)
    total = 0.0
    for g in range(num_clusters):
        members = points[assignment == g]
        if members.shape[0] == 0:
            continue
        mean = members.sum(axis=0)
        norm = np.linalg.norm(mean)
        if norm <= 1e-12:
            total += float(members.shape[0])
            continue
        total += float(np.sum(1.0 - members @ (mean / norm)))
    return total


def inter_cluster_mixing(
    centroids: Centroids,
    points: np.ndarray,
    assignment: np.ndarray,
) -> float | None:
    """
    Largest cosine between a centroid and any point assigned elsewhere.

    Args:
        centroids: Cluster centroids (D x G)
        points: Unit-norm points (n x D)
        assignment: Cluster index per point

    Returns:
        delta, or None when no point lies outside some cluster (G = 1)
    """
    assignment = np.asarray(assignment, dtype=np.int64)
    if points.shape[0] != assignment.shape[0]:
        raise ShapeError("every point needs exactly one cluster index")
    if centroids.num_clusters < 2:
        return None
    sims = points @ centroids.matrix
    outside = assignment[:, None] != np.arange(centroids.num_clusters)[None, :]
    if not np.any(outside):
        return None
    return float(np.max(sims[outside]))


def consistency_fraction(
    ideal_assignment: np.ndarray,
    federated_assignment: np.ndarray,
    num_clusters: int,
) -> float:
    """
    Fraction of samples that agree under the best relabeling of clusters.

    Args:
        ideal_assignment: Labels from direct clustering
        federated_assignment: Labels from two-level clustering
        num_clusters: G

    Returns:
        c in [0, 1]
    """
    ideal = np.asarray(ideal_assignment, dtype=np.int64)
    federated = np.asarray(federated_assignment, dtype=np.int64)
    if ideal.shape != federated.shape:
        raise ShapeError(
            f"assignments differ in length: {ideal.shape[0]} vs {federated.shape[0]}"
        )
    if ideal.size == 0:
        raise ShapeError("assignments are empty")
    if ideal.max() >= num_clusters or federated.max() >= num_clusters or min(ideal.min(), federated.min()) < 0:
        raise ConfigError(f"cluster labels must lie in [0, {num_clusters})")
    overlap = np.zeros((num_clusters, num_clusters), dtype=np.int64)
    np.add.at(overlap, (ideal, federated), 1)
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    return float(overlap[rows, cols].sum()) / ideal.size


def _mixing_term(delta: float, num_clusters: int) -> float:
    d = max(delta, 0.0)
    return 2.0 * d + (num_clusters - 1) * d * d


def bound_prop1(inputs: BoundInputs) -> float:
    """
    Linear-probe error bound of idealized equal-size clustering:
    zeta + N/(N-1) * [1/G + (1 - 1/G) * (2 delta + (G-1) delta^2)].

    Negative delta is clamped to 0.
    """
    g, n = inputs.G, inputs.N
    return inputs.zeta + (n / (n - 1)) * (
        1.0 / g + (1.0 - 1.0 / g) * _mixing_term(inputs.delta, g)
    )


def bound_prop2(inputs: BoundInputs) -> float:
    """
    Bound for two-level clustering with consistency fraction c:
    zeta + N/(N-1) * [(1/G)(1 - G^2/N^2) + (1/G)(1 - c^2)
    + ((1 - (1-c)/G)^2 - 1/G) * (2 delta + (G-1) delta^2)].
    """
    g, n, c = inputs.G, inputs.N, inputs.c
    return inputs.zeta + (n / (n - 1)) * (
        (1.0 / g) * (1.0 - g * g / (n * n))
        + (1.0 / g) * (1.0 - c * c)
        + ((1.0 - (1.0 - c) / g) ** 2 - 1.0 / g) * _mixing_term(inputs.delta, g)
    )


def kanonymity_level(shard_size: int, local_clusters: int) -> int:
    """
    Minimum local-cluster occupancy under equal-size clustering.

    Args:
        shard_size: N_k, samples clustered by the client
        local_clusters: L

    Returns:
        floor(N_k / L)
    """
    if local_clusters < 1:
        raise AnonymityError(f"need at least one local cluster, got {local_clusters}")
    if shard_size < local_clusters:
        raise AnonymityError(
            f"{shard_size} samples cannot fill {local_clusters} clusters of size >= 1"
        )
    return shard_size // local_clusters


def warn_if_few_clusters(num_clusters: int, num_classes: int) -> bool:
    """Log a warning when G <= 4M + 2; returns True when it warned."""
    if num_clusters <= 4 * num_classes + 2:
        logger.warning(
            "G=%d <= 4M+2=%d: the idealized-clustering bound assumes more clusters",
            num_clusters,
            4 * num_classes + 2,
        )
        return True
    return False
