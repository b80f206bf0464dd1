"""
Solution clustering on the Grassmannian and parameter-space sub-clustering

Reduced solutions are grouped by spectral clustering of the projection
kernel similarity; the number of clusters grows until enough clusters map
faithfully to the tangent space at their Karcher means. Within a cluster,
DBSCAN can split the parameter points into disjoint regions.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.spatial.distance import cdist
from sklearn.cluster import DBSCAN, KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.neighbors import NearestNeighbors
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..geometry.manifold import GrassmannPoint, ReducedSolution, exp_map_many, log_map_many, require_ambient
from ..geometry.riemann_stats import KarcherResult, KarcherSettings, karcher_mean
from ..utils.exceptions import EmptyCluster, IsolatedVertex, NoConvergence, SingularOverlap, BudgetExhausted

SYMMETRY_TOL = 1e-12


class ClusterConfig(BaseModel):
    """Cluster-count search and sub-clustering settings"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_start: int = Field(2, ge=2)
    n_max_clusters: Optional[int] = Field(None, ge=2)
    n_min_points: int = Field(10, ge=1)
    error_threshold: float = Field(1e-3, gt=0.0)
    pass_fraction: float = Field(0.9, gt=0.0, le=1.0)
    kmeans_restarts: int = Field(10, ge=1)
    subcluster: Literal["auto", "on", "off"] = "auto"
    dbscan_eps: Optional[float] = Field(None, gt=0.0)
    dbscan_min_pts: int = Field(5, ge=1)

    @model_validator(mode="after")
    def _check_range(self) -> "ClusterConfig":
        if self.n_max_clusters is not None and self.n_max_clusters < self.n_start:
            raise ValueError(f"n_max_clusters ({self.n_max_clusters}) is below n_start ({self.n_start})")
        return self

    def resolved_n_max(self, n_points: int) -> int:
        """Upper end of the search: the configured n_max, else N/10, never below n_start"""
        if self.n_max_clusters is not None:
            return self.n_max_clusters
        return max(self.n_start, n_points // 10)


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    """Symmetric nonnegative similarity matrix W with its degree vector"""

    weights: np.ndarray
    degrees: np.ndarray = field(init=False)

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        if weights.ndim != 2 or weights.shape[0] != weights.shape[1]:
            raise ValueError(f"Similarity matrix must be square, got shape {weights.shape}")
        if np.any(weights < 0.0):
            raise ValueError("Similarity matrix has negative entries")
        if weights.size and np.max(np.abs(weights - weights.T)) > SYMMETRY_TOL:
            raise ValueError("Similarity matrix is not symmetric")
        weights.setflags(write=False)
        degrees = weights.sum(axis=1)
        degrees.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "degrees", degrees)

    @property
    def size(self) -> int:
        return self.weights.shape[0]


@dataclass
class SweepEntry:
    """One candidate cluster count tried by the search"""

    n_c: int
    status: str
    min_error: float = float("nan")
    mean_error: float = float("nan")
    max_error: float = float("nan")
    pass_fraction: float = float("nan")


@dataclass(eq=False)
class ClusterDiagnostics:
    """Projection errors of the chosen partition and the search history"""

    per_point_errors: List[np.ndarray]
    per_cluster_mean_error: np.ndarray
    chosen_n_c: int
    pass_fraction_achieved: float
    error_threshold: float
    converged: bool = True
    history: List[SweepEntry] = field(default_factory=list)

    @property
    def cluster_sizes(self) -> List[int]:
        return [len(errors) for errors in self.per_point_errors]

    @property
    def flagged_clusters(self) -> List[int]:
        """Clusters whose mean projection error exceeds the threshold"""
        return [int(c) for c in np.flatnonzero(~(self.per_cluster_mean_error <= self.error_threshold))]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "cluster_id": np.arange(self.chosen_n_c),
                "size": self.cluster_sizes,
                "eps_h": self.per_cluster_mean_error,
                "passed": self.per_cluster_mean_error <= self.error_threshold,
            }
        )

    def history_frame(self) -> pd.DataFrame:
        columns = ["n_c", "status", "min_error", "mean_error", "max_error", "pass_fraction"]
        return pd.DataFrame([vars(entry) for entry in self.history], columns=columns)

    def to_state(self) -> Dict[str, Any]:
        return {
            "per_point_errors": [errors.tolist() for errors in self.per_point_errors],
            "per_cluster_mean_error": self.per_cluster_mean_error.tolist(),
            "chosen_n_c": self.chosen_n_c,
            "pass_fraction_achieved": self.pass_fraction_achieved,
            "error_threshold": self.error_threshold,
            "converged": self.converged,
            "history": [vars(entry) for entry in self.history],
        }

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> "ClusterDiagnostics":
        return cls(
            per_point_errors=[np.asarray(errors, dtype=float) for errors in state["per_point_errors"]],
            per_cluster_mean_error=np.asarray(state["per_cluster_mean_error"], dtype=float),
            chosen_n_c=int(state["chosen_n_c"]),
            pass_fraction_achieved=float(state["pass_fraction_achieved"]),
            error_threshold=float(state["error_threshold"]),
            converged=bool(state["converged"]),
            history=[SweepEntry(**entry) for entry in state["history"]],
        )


def build_similarity(u_points: Sequence[GrassmannPoint]) -> SimilarityGraph:
    """
    Projection-kernel similarity w_ij = ||U_i^T U_j||_F^2

    Bases of different rank are allowed; each row is assembled from one
    product of U_i^T with all bases side by side.
    """
    if not u_points:
        return SimilarityGraph(np.zeros((0, 0)))
    for point in u_points[1:]:
        require_ambient(u_points[0], point)

    ranks = np.array([point.subspace_dim for point in u_points])
    offsets = np.concatenate([[0], np.cumsum(ranks)[:-1]])
    stacked = np.hstack([point.basis for point in u_points])

    weights = np.empty((len(u_points), len(u_points)))
    for i, point in enumerate(u_points):
        squared = (point.basis.T @ stacked) ** 2
        weights[i] = np.add.reduceat(squared.sum(axis=0), offsets)

    weights = 0.5 * (weights + weights.T)
    np.fill_diagonal(weights, ranks.astype(float))
    return SimilarityGraph(weights)


def normalized_laplacian(graph: SimilarityGraph) -> np.ndarray:
    """L_sym = I - D^-1/2 W D^-1/2"""
    isolated = np.flatnonzero(graph.degrees <= 0.0)
    if isolated.size:
        raise IsolatedVertex("Similarity graph has a vertex of zero degree", vertex=int(isolated[0]))
    scale = 1.0 / np.sqrt(graph.degrees)
    laplacian = np.eye(graph.size) - scale[:, None] * graph.weights * scale[None, :]
    return 0.5 * (laplacian + laplacian.T)


def spectral_embedding(graph: SimilarityGraph) -> np.ndarray:
    """Eigenvectors of L_sym, ordered by ascending eigenvalue"""
    _, vectors = linalg.eigh(normalized_laplacian(graph))
    return vectors


def _first_occurrence_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber labels in order of first appearance; negative labels are kept"""
    relabeled = np.array(labels, dtype=int)
    mapping: Dict[int, int] = {}
    for label in labels:
        if label >= 0 and label not in mapping:
            mapping[label] = len(mapping)
    for old, new in mapping.items():
        relabeled[labels == old] = new
    return relabeled


def kmeans(rows: np.ndarray, k: int, seed: int = 0, restarts: int = 10) -> np.ndarray:
    """
    k-means++ with ``restarts`` seeded initializations, keeping the lowest inertia

    Labels are renumbered by first appearance, so label 0 always belongs
    to the first row.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows.reshape(-1, 1)
    if not 1 <= k <= rows.shape[0]:
        raise ValueError(f"k-means needs 1 <= k <= {rows.shape[0]}, got k={k}")
    if k == 1:
        return np.zeros(rows.shape[0], dtype=int)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        labels = KMeans(n_clusters=k, init="k-means++", n_init=restarts, random_state=seed).fit_predict(rows)
    return _first_occurrence_labels(labels)


def spectral_cluster(
    graph: SimilarityGraph,
    n_c: int,
    seed: int = 0,
    restarts: int = 10,
    embedding: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Partition the graph into ``n_c`` clusters by k-means on the row-normalized
    eigenvectors of the n_c smallest eigenvalues of L_sym

    Args:
        graph: Similarity graph
        n_c: Number of clusters, 2 <= n_c <= N
        seed: k-means random state
        restarts: Number of k-means++ initializations
        embedding: Precomputed ``spectral_embedding(graph)``

    Returns:
        Integer labels in {0, ..., n_c - 1}
    """
    if not 2 <= n_c <= graph.size:
        raise ValueError(f"Spectral clustering needs 2 <= n_c <= {graph.size}, got {n_c}")
    vectors = spectral_embedding(graph) if embedding is None else embedding
    rows = np.array(vectors[:, :n_c])
    norms = np.linalg.norm(rows, axis=1)
    rows[norms > 0] /= norms[norms > 0, None]

    labels = kmeans(rows, n_c, seed=seed, restarts=restarts)
    used = np.unique(labels).size
    if used < n_c:
        raise EmptyCluster("k-means left clusters without members", n_c=n_c, used=used)
    return labels


def equalize_ranks(members: Sequence[ReducedSolution]) -> List[ReducedSolution]:
    """Re-truncate every member at the largest rank in the group"""
    rank = max(member.rank for member in members)
    return [member.at_rank(rank) for member in members]


@dataclass(frozen=True, eq=False)
class TangentProjection:
    """A cluster mapped to the tangent spaces at its Karcher means"""

    members: List[ReducedSolution]
    mean_u: KarcherResult
    mean_v: KarcherResult
    gamma_u: np.ndarray
    gamma_v: np.ndarray
    u_tilde: np.ndarray
    v_tilde: np.ndarray
    alphas: np.ndarray

    @property
    def rank(self) -> int:
        return self.members[0].rank

    @property
    def cores(self) -> np.ndarray:
        """C_j = U~_j^T (U_j S_j V_j^T) V~_j for every member"""
        u = np.stack([member.U.basis for member in self.members])
        v = np.stack([member.V.basis for member in self.members])
        sigma = np.stack([member.sigma for member in self.members])
        left = self.u_tilde.transpose(0, 2, 1) @ u
        right = v.transpose(0, 2, 1) @ self.v_tilde
        return (left * sigma[:, None, :]) @ right


def project_cluster(
    members: Sequence[ReducedSolution],
    karcher: KarcherSettings = KarcherSettings(),
) -> TangentProjection:
    """
    Equalize ranks, compute the Karcher means of the U and V points, log-map
    every member and map it back with the exponential map

    alpha_j = ||U_j S_j V_j^T - U~_j S_j V~_j^T||_F measures how faithfully
    member j survives the round trip through the tangent spaces.
    """
    if not members:
        raise ValueError("A cluster needs at least one member")
    members = equalize_ranks(members)
    settings = karcher.model_dump()
    mean_u = karcher_mean([member.U for member in members], **settings)
    mean_v = karcher_mean([member.V for member in members], **settings)

    gamma_u = log_map_many(mean_u.mean, [member.U for member in members])
    gamma_v = log_map_many(mean_v.mean, [member.V for member in members])
    u_tilde = exp_map_many(mean_u.mean, gamma_u)
    v_tilde = exp_map_many(mean_v.mean, gamma_v)

    sigma = np.stack([member.sigma for member in members])[:, None, :]
    u = np.stack([member.U.basis for member in members])
    v = np.stack([member.V.basis for member in members])
    exact = (u * sigma) @ v.transpose(0, 2, 1)
    mapped = (u_tilde * sigma) @ v_tilde.transpose(0, 2, 1)
    alphas = np.linalg.norm(exact - mapped, axis=(1, 2))

    return TangentProjection(members, mean_u, mean_v, gamma_u, gamma_v, u_tilde, v_tilde, alphas)


def cluster_projection_error(
    members: Sequence[ReducedSolution],
    karcher: KarcherSettings = KarcherSettings(),
) -> Tuple[np.ndarray, float]:
    """Point-wise projection errors alpha_j of a cluster and their mean eps_h"""
    alphas = project_cluster(members, karcher).alphas
    return alphas, float(np.mean(alphas))


def _guarded_error(
    members: Sequence[ReducedSolution],
    karcher: KarcherSettings,
    cluster_id: int,
) -> Tuple[np.ndarray, float]:
    try:
        return cluster_projection_error(members, karcher)
    except (SingularOverlap, NoConvergence) as e:
        logger.debug(f"Cluster {cluster_id} cannot be mapped to a tangent space: {e}")
        return np.full(len(members), np.inf), float("inf")


def _evaluate_partition(
    solutions: Sequence[ReducedSolution],
    labels: np.ndarray,
    n_c: int,
    karcher: KarcherSettings,
    max_workers: int,
) -> Tuple[List[np.ndarray], np.ndarray]:
    groups = [[solutions[i] for i in np.flatnonzero(labels == c)] for c in range(n_c)]
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        results = list(executor.map(_guarded_error, groups, [karcher] * n_c, range(n_c)))
    return [alphas for alphas, _ in results], np.array([eps for _, eps in results])


def _diagnostics(
    alphas: List[np.ndarray],
    eps: np.ndarray,
    n_c: int,
    config: ClusterConfig,
    history: List[SweepEntry],
    converged: bool,
) -> ClusterDiagnostics:
    return ClusterDiagnostics(
        per_point_errors=alphas,
        per_cluster_mean_error=eps,
        chosen_n_c=n_c,
        pass_fraction_achieved=float(np.mean(eps <= config.error_threshold)),
        error_threshold=config.error_threshold,
        converged=converged,
        history=history,
    )


def optimize_cluster_count(
    solutions: Sequence[ReducedSolution],
    config: ClusterConfig = ClusterConfig(),
    seed: int = 0,
    karcher: KarcherSettings = KarcherSettings(),
    max_workers: int = 1,
) -> Tuple[np.ndarray, ClusterDiagnostics]:
    """
    Grow the number of solution clusters until enough of them project well

    Starting at ``n_start``, each candidate n_c is spectral-clustered on the
    U points. A candidate with a cluster smaller than ``n_min_points`` or an
    empty k-means cluster is rejected. Otherwise every cluster's mean
    projection error eps_h is computed, and the search stops once the
    fraction of clusters with eps_h <= error_threshold reaches
    ``pass_fraction``. A cluster that cannot be mapped to a tangent space
    (singular overlap or unconverged Karcher mean) counts as eps_h = inf.
    When no candidate survives the size checks, the whole set is treated
    as one cluster.

    Returns:
        Labels per solution and the diagnostics of the chosen partition

    Raises:
        BudgetExhausted: n_max reached without meeting the criterion; carries
            the best partition seen (highest pass fraction, then lowest mean eps_h)
    """
    count = len(solutions)
    if count == 0:
        raise ValueError("Cluster-count search needs at least one solution")
    n_max = min(config.resolved_n_max(count), count)
    history: List[SweepEntry] = []
    best: Optional[Tuple[Tuple[float, float], np.ndarray, List[np.ndarray], np.ndarray, int]] = None

    graph, embedding = None, None
    if count >= config.n_start:
        graph = build_similarity([solution.U for solution in solutions])
        embedding = spectral_embedding(graph)

    for n_c in range(config.n_start, n_max + 1):
        try:
            labels = spectral_cluster(graph, n_c, seed=seed, restarts=config.kmeans_restarts, embedding=embedding)
        except EmptyCluster:
            logger.debug(f"n_c={n_c}: k-means left an empty cluster")
            history.append(SweepEntry(n_c, "rejected_empty_cluster"))
            continue

        sizes = np.bincount(labels, minlength=n_c)
        if sizes.min() < config.n_min_points:
            logger.debug(f"n_c={n_c}: smallest cluster has {sizes.min()} < {config.n_min_points} points")
            history.append(SweepEntry(n_c, "rejected_small_cluster"))
            continue

        alphas, eps = _evaluate_partition(solutions, labels, n_c, karcher, max_workers)
        fraction = float(np.mean(eps <= config.error_threshold))
        accepted = fraction >= config.pass_fraction
        history.append(
            SweepEntry(
                n_c,
                "accepted" if accepted else "failed_threshold",
                float(eps.min()),
                float(eps.mean()),
                float(eps.max()),
                fraction,
            )
        )
        logger.info(f"🔍 n_c={n_c}: {fraction:.0%} of clusters within threshold (mean eps_h {eps.mean():.3e})")

        if accepted:
            logger.success(f"✅ Chose n_c={n_c}")
            return labels, _diagnostics(alphas, eps, n_c, config, history, converged=True)

        key = (fraction, -float(eps.mean()))
        if best is None or key > best[0]:
            best = (key, labels, alphas, eps, n_c)

    if best is None:
        logger.info("No cluster count passed the size checks; using a single cluster")
        labels = np.zeros(count, dtype=int)
        alphas, eps = _evaluate_partition(solutions, labels, 1, karcher, max_workers)
        fraction = float(np.mean(eps <= config.error_threshold))
        history.append(SweepEntry(1, "single_cluster", float(eps[0]), float(eps[0]), float(eps[0]), fraction))
        if fraction >= config.pass_fraction:
            return labels, _diagnostics(alphas, eps, 1, config, history, converged=True)
        best = ((fraction, -float(eps[0])), labels, alphas, eps, 1)

    _, labels, alphas, eps, n_c = best
    diagnostics = _diagnostics(alphas, eps, n_c, config, history, converged=False)
    logger.warning(
        f"⚠️ Cluster budget exhausted at n_max={n_max}; best candidate n_c={n_c} "
        f"passes {diagnostics.pass_fraction_achieved:.0%} of clusters"
    )
    raise BudgetExhausted(
        "Cluster-count search reached n_max without meeting the error criterion",
        labels=labels,
        diagnostics=diagnostics,
        n_max=n_max,
        best_n_c=n_c,
    )


def _unique_rows(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    unique, inverse = np.unique(points, axis=0, return_inverse=True)
    return unique, np.asarray(inverse).reshape(-1)


def default_dbscan_eps(points: np.ndarray) -> float:
    """Three times the median nearest-neighbour distance between distinct points"""
    unique, _ = _unique_rows(np.asarray(points, dtype=float).reshape(len(points), -1))
    if unique.shape[0] < 2:
        return 1.0
    distances, _ = NearestNeighbors(n_neighbors=2).fit(unique).kneighbors(unique)
    return 3.0 * float(np.median(distances[:, 1]))


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """
    DBSCAN labels under Euclidean distance, -1 marking noise

    Runs on the distinct locations, so repeated points do not create
    density; labels are numbered by first appearance in input order.
    """
    if eps <= 0.0:
        raise ValueError(f"DBSCAN eps must be positive, got {eps}")
    if min_pts < 1:
        raise ValueError(f"DBSCAN min_pts must be at least 1, got {min_pts}")
    points = np.asarray(points, dtype=float).reshape(len(points), -1)
    if points.shape[0] == 0:
        return np.zeros(0, dtype=int)

    unique, inverse = _unique_rows(points)
    labels = DBSCAN(eps=eps, min_samples=min_pts).fit_predict(unique)[inverse]
    return _first_occurrence_labels(labels)


def subcluster(
    points: np.ndarray,
    mode: str = "auto",
    eps: Optional[float] = None,
    min_pts: int = 5,
) -> Optional[np.ndarray]:
    """
    Parameter-space sub-labels for one solution cluster

    ``off`` returns None. ``on`` always uses the DBSCAN partition; ``auto``
    uses it only when DBSCAN finds at least two groups. Noise points join
    the group of their nearest non-noise point and groups with a single
    member are merged into the nearest other group.
    """
    if mode not in ("auto", "on", "off"):
        raise ValueError(f"Unknown sub-clustering mode: {mode}")
    if mode == "off":
        return None

    points = np.asarray(points, dtype=float).reshape(len(points), -1)
    if eps is None:
        eps = default_dbscan_eps(points)
    labels = dbscan(points, eps, min_pts)
    groups = np.unique(labels[labels >= 0])

    if mode == "auto" and groups.size < 2:
        return None
    if groups.size == 0:
        return np.zeros(len(points), dtype=int)

    noise = labels < 0
    if np.any(noise):
        _, nearest = NearestNeighbors(n_neighbors=1).fit(points[~noise]).kneighbors(points[noise])
        labels[noise] = labels[~noise][nearest[:, 0]]

    while True:
        groups, sizes = np.unique(labels, return_counts=True)
        small = groups[sizes < 2]
        if small.size == 0 or groups.size < 2:
            break
        inside = labels == small[0]
        gaps = cdist(points[inside], points[~inside])
        _, column = np.unravel_index(np.argmin(gaps), gaps.shape)
        labels[inside] = labels[~inside][column]

    result = _first_occurrence_labels(labels)
    logger.debug(f"Sub-clustering found {np.unique(result).size} groups (eps={eps:.4g})")
    return result
