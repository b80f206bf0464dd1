"""
Surrogate construction and full-field prediction

Training runs five stages: thin-SVD projection of every snapshot, solution
clustering on the Grassmannian, tangent-space mapping at each cluster's
Karcher means, optional parameter-space sub-clustering, and GP regression
of the tangent coordinates. Prediction reverses the mapping at a new
parameter point.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..geometry.manifold import GrassmannPoint, RankPolicy, ReducedSolution, exp_map_many, project_to_grassmann
from ..geometry.riemann_stats import KarcherSettings
from ..learning.clustering import ClusterConfig, ClusterDiagnostics, optimize_cluster_count, project_cluster, subcluster
from ..learning.gp import GpModel, gp_fit, gp_predict
from ..utils.exceptions import (
    BudgetExhausted,
    DatasetError,
    DimensionMismatch,
    GrassGPError,
    ShapeError,
    SingularPrediction,
)


class GpSettings(BaseModel):
    """Hyperparameters shared by every GP block"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    l_init: float = Field(1.0, gt=0.0)
    nugget: float = Field(1e-10, gt=0.0, le=1e-4)
    center_outputs: bool = True
    standardize_inputs: bool = False
    optimize: bool = True
    length_scale_bounds: Tuple[float, float] = (1e-3, 1e3)

    @field_validator("length_scale_bounds")
    @classmethod
    def _check_bounds(cls, bounds: Tuple[float, float]) -> Tuple[float, float]:
        if not 0.0 < bounds[0] < bounds[1]:
            raise ValueError(f"Length-scale bounds must satisfy 0 < low < high, got {bounds}")
        return bounds

    def fit(self, inputs: np.ndarray, outputs: np.ndarray) -> GpModel:
        return gp_fit(
            inputs,
            outputs,
            l_init=self.l_init,
            nugget=self.nugget,
            optimize_length_scale=self.optimize,
            bounds=self.length_scale_bounds,
            center=self.center_outputs,
            standardize_inputs=self.standardize_inputs,
        )


class PipelineConfig(BaseModel):
    """Everything train_surrogate needs besides the data"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    clustering: ClusterConfig = ClusterConfig()
    karcher: KarcherSettings = KarcherSettings()
    gp: GpSettings = GpSettings()
    truncation_tol: float = Field(1e-8, ge=0.0, lt=1.0)
    fixed_rank: Optional[int] = Field(None, ge=1)
    core_model: Literal["full", "diagonal"] = "full"
    seed: int = 0
    max_workers: int = Field(1, ge=1)

    def rank_policy(self) -> RankPolicy:
        if self.fixed_rank is not None:
            return RankPolicy.fixed(self.fixed_rank)
        return RankPolicy.tolerance(self.truncation_tol)


@dataclass(frozen=True, eq=False)
class ParameterPoint:
    """Random input vector xi of length n_d"""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValueError("Parameter point has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class SolutionSnapshot:
    """One solution recast as an n_f x m_f matrix"""

    matrix: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2:
            raise ShapeError("Snapshot must be a matrix", shape=matrix.shape, sample_id=self.source_id)
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape


@dataclass(frozen=True, eq=False)
class ClusterGroup:
    """GP blocks of one (sub)cluster: Gamma_u entries, Gamma_v entries and the core"""

    member_ids: np.ndarray
    gp_gamma_u: GpModel
    gp_gamma_v: GpModel
    gp_core: GpModel


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """Karcher means and tangent-space regressors of one solution cluster"""

    cluster_id: int
    member_ids: np.ndarray
    rank: int
    karcher_mean_u: GrassmannPoint
    karcher_mean_v: GrassmannPoint
    groups: List[ClusterGroup]
    sublabels: Optional[np.ndarray]
    projection_error: float

    @property
    def n_sublabels(self) -> int:
        return len(self.groups)


@dataclass(frozen=True, eq=False)
class SurrogateModel:
    """Trained surrogate: clusters, training parameters, labels and diagnostics"""

    clusters: List[ClusterModel]
    train_params: np.ndarray
    labels: np.ndarray
    sublabels: np.ndarray
    config: PipelineConfig
    shape: Tuple[int, int]
    diagnostics: ClusterDiagnostics
    sample_ids: List[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged

    @property
    def param_dim(self) -> int:
        return self.train_params.shape[1]


@dataclass(frozen=True, eq=False)
class PredictionResult:
    """Predicted snapshot with the bookkeeping behind it"""

    matrix: np.ndarray
    cluster_id: int
    sublabel: int
    sigma_order_violations: int
    clamped_sigmas: int
    gp_variance: float


def matricize(solution: Sequence[float], n_f: int, m_f: int, source_id: str = "") -> SolutionSnapshot:
    """Reshape a solution vector into an n_f x m_f matrix, filling columns first"""
    vector = np.asarray(solution, dtype=float).reshape(-1)
    if n_f < 1 or m_f < 1 or n_f * m_f != vector.size:
        raise ShapeError(
            "Matrix shape does not match the solution length",
            n_f=n_f,
            m_f=m_f,
            n_dof=vector.size,
        )
    return SolutionSnapshot(vector.reshape((n_f, m_f), order="F"), source_id)


def flatten(snapshot: Union[SolutionSnapshot, np.ndarray]) -> np.ndarray:
    """Inverse of matricize"""
    matrix = snapshot.matrix if isinstance(snapshot, SolutionSnapshot) else np.asarray(snapshot, dtype=float)
    return matrix.reshape(-1, order="F")


def square_shape(n_dof: int) -> Tuple[int, int]:
    """Factor pair (n_f, m_f) of n_dof with n_f >= m_f, closest to square"""
    if n_dof < 1:
        raise ShapeError("Solution length must be positive", n_dof=n_dof)
    m_f = int(np.floor(np.sqrt(n_dof)))
    while n_dof % m_f:
        m_f -= 1
    return n_dof // m_f, m_f


def as_param_matrix(params: Sequence[Union[ParameterPoint, Sequence[float]]]) -> np.ndarray:
    rows = [p.values if isinstance(p, ParameterPoint) else ParameterPoint(p).values for p in params]
    if not rows:
        return np.zeros((0, 0))
    dims = {row.size for row in rows}
    if len(dims) != 1:
        raise DimensionMismatch("Parameter points differ in dimension", dims=sorted(dims))
    return np.vstack(rows)


def _reduce(snapshots: Sequence[SolutionSnapshot], policy: RankPolicy) -> List[ReducedSolution]:
    reduced = []
    for index, snapshot in enumerate(snapshots):
        try:
            reduced.append(project_to_grassmann(snapshot.matrix, policy))
        except GrassGPError as e:
            raise e.with_context(sample=snapshot.source_id or index)
    return reduced


def _train_cluster(
    cluster_id: int,
    member_ids: np.ndarray,
    solutions: Sequence[ReducedSolution],
    params: np.ndarray,
    config: PipelineConfig,
) -> ClusterModel:
    try:
        projection = project_cluster([solutions[i] for i in member_ids], config.karcher)
        inputs = params[member_ids]

        settings = config.clustering
        sublabels = subcluster(inputs, settings.subcluster, settings.dbscan_eps, settings.dbscan_min_pts)
        local = np.zeros(len(member_ids), dtype=int) if sublabels is None else sublabels

        if config.core_model == "full":
            cores = projection.cores.reshape(len(member_ids), -1)
        else:
            cores = np.stack([member.sigma for member in projection.members])
        gamma_u = projection.gamma_u.reshape(len(member_ids), -1)
        gamma_v = projection.gamma_v.reshape(len(member_ids), -1)

        groups = []
        for sublabel in range(int(local.max()) + 1):
            rows = np.flatnonzero(local == sublabel)
            groups.append(
                ClusterGroup(
                    member_ids=member_ids[rows],
                    gp_gamma_u=config.gp.fit(inputs[rows], gamma_u[rows]),
                    gp_gamma_v=config.gp.fit(inputs[rows], gamma_v[rows]),
                    gp_core=config.gp.fit(inputs[rows], cores[rows]),
                )
            )
    except GrassGPError as e:
        raise e.with_context(cluster_id=cluster_id)

    logger.info(
        f"🧩 Cluster {cluster_id}: {len(member_ids)} members, rank {projection.rank}, "
        f"{len(groups)} sub-group(s), eps_h {np.mean(projection.alphas):.3e}"
    )
    return ClusterModel(
        cluster_id=cluster_id,
        member_ids=member_ids,
        rank=projection.rank,
        karcher_mean_u=projection.mean_u.mean,
        karcher_mean_v=projection.mean_v.mean,
        groups=groups,
        sublabels=sublabels,
        projection_error=float(np.mean(projection.alphas)),
    )


def train_surrogate(
    params: Sequence[Union[ParameterPoint, Sequence[float]]],
    snapshots: Sequence[SolutionSnapshot],
    config: PipelineConfig = PipelineConfig(),
) -> SurrogateModel:
    """
    Build a clustered Grassmannian GP surrogate from training simulations

    Args:
        params: Parameter point of every training simulation
        snapshots: Matricized solutions, all of one shape
        config: Pipeline settings

    Returns:
        Trained SurrogateModel

    Raises:
        BudgetExhausted: the cluster search did not meet its criterion; the
            surrogate built from the best partition is attached as ``model``
    """
    inputs = as_param_matrix(params)
    count = len(snapshots)
    if inputs.shape[0] != count:
        raise DatasetError("Parameter and snapshot counts differ", n_params=inputs.shape[0], n_snapshots=count)
    minimum = config.clustering.n_min_points * config.clustering.n_start
    if count < minimum:
        raise DatasetError("Too few training simulations for the cluster search", n=count, required=minimum)
    shapes = {snapshot.shape for snapshot in snapshots}
    if len(shapes) != 1:
        raise ShapeError("Snapshots differ in shape", shapes=sorted(shapes))
    shape = shapes.pop()

    logger.info(f"📐 Projecting {count} snapshots of shape {shape[0]}x{shape[1]} onto the Grassmannian")
    solutions = _reduce(snapshots, config.rank_policy())

    logger.info("🔗 Clustering solutions")
    exhausted: Optional[BudgetExhausted] = None
    try:
        labels, diagnostics = optimize_cluster_count(
            solutions, config.clustering, seed=config.seed, karcher=config.karcher, max_workers=config.max_workers
        )
    except BudgetExhausted as e:
        exhausted = e
        labels, diagnostics = e.labels, e.diagnostics

    n_c = int(labels.max()) + 1
    logger.info(f"📈 Training tangent-space GPs for {n_c} cluster(s)")
    members = [np.flatnonzero(labels == c) for c in range(n_c)]
    with ThreadPoolExecutor(max_workers=config.max_workers) as executor:
        clusters = list(
            executor.map(
                _train_cluster,
                range(n_c),
                members,
                [solutions] * n_c,
                [inputs] * n_c,
                [config] * n_c,
            )
        )

    sublabels = np.zeros(count, dtype=int)
    for cluster in clusters:
        if cluster.sublabels is not None:
            sublabels[cluster.member_ids] = cluster.sublabels

    model = SurrogateModel(
        clusters=clusters,
        train_params=inputs,
        labels=np.asarray(labels, dtype=int),
        sublabels=sublabels,
        config=config,
        shape=shape,
        diagnostics=diagnostics,
        sample_ids=[snapshot.source_id or f"{index:04d}" for index, snapshot in enumerate(snapshots)],
    )
    if exhausted is not None:
        exhausted.model = model
        raise exhausted

    logger.success(f"🎉 Surrogate trained with {n_c} cluster(s)")
    return model


def _query(model: SurrogateModel, x_star: Union[ParameterPoint, Sequence[float]]) -> np.ndarray:
    values = x_star.values if isinstance(x_star, ParameterPoint) else ParameterPoint(x_star).values
    if values.size != model.param_dim:
        raise DimensionMismatch(
            "Query point dimension differs from the training parameters",
            expected=model.param_dim,
            got=values.size,
        )
    return values


def assign_cluster(model: SurrogateModel, x_star: Union[ParameterPoint, Sequence[float]]) -> Tuple[int, int]:
    """Cluster and sub-label of the nearest training point (lowest index on ties)"""
    values = _query(model, x_star)
    nearest = int(np.argmin(cdist(values[None, :], model.train_params)[0]))
    return int(model.labels[nearest]), int(model.sublabels[nearest])


def _tangent(mean: GrassmannPoint, prediction: np.ndarray) -> np.ndarray:
    gamma = prediction.reshape(mean.shape)
    if not np.all(np.isfinite(gamma)):
        raise SingularPrediction("Predicted tangent vector has non-finite entries")
    return gamma - mean.basis @ (mean.basis.T @ gamma)


def predict_with_diagnostics(
    model: SurrogateModel,
    x_star: Union[ParameterPoint, Sequence[float]],
) -> PredictionResult:
    """
    Predict the full solution at ``x_star`` and report how it was assembled

    The GP means of Gamma_u and Gamma_v are projected onto the tangent
    spaces at the cluster's Karcher means and mapped back with the
    exponential map; the core GP supplies the singular values (or the full
    core matrix), whose diagonal is clamped at zero.
    """
    values = _query(model, x_star)
    cluster_id, sublabel = assign_cluster(model, values)
    cluster = model.clusters[cluster_id]
    group = cluster.groups[sublabel]
    rank = cluster.rank

    pred_u = gp_predict(group.gp_gamma_u, values)
    pred_v = gp_predict(group.gp_gamma_v, values)
    pred_core = gp_predict(group.gp_core, values)

    try:
        gamma_u = _tangent(cluster.karcher_mean_u, pred_u.mean)
        gamma_v = _tangent(cluster.karcher_mean_v, pred_v.mean)
        if not np.all(np.isfinite(pred_core.mean)):
            raise SingularPrediction("Predicted singular values have non-finite entries")
    except SingularPrediction as e:
        raise e.with_context(cluster_id=cluster_id, sublabel=sublabel)

    u_tilde = exp_map_many(cluster.karcher_mean_u, gamma_u[None])[0]
    v_tilde = exp_map_many(cluster.karcher_mean_v, gamma_v[None])[0]

    if model.config.core_model == "full":
        core = pred_core.mean.reshape(rank, rank).copy()
    else:
        core = np.diag(pred_core.mean)
    diagonal = np.diag(core).copy()
    clamped = int(np.count_nonzero(diagonal < 0.0))
    diagonal[diagonal < 0.0] = 0.0
    np.fill_diagonal(core, diagonal)

    matrix = u_tilde @ core @ v_tilde.T
    return PredictionResult(
        matrix=matrix,
        cluster_id=cluster_id,
        sublabel=sublabel,
        sigma_order_violations=int(np.count_nonzero(np.diff(diagonal) > 0.0)),
        clamped_sigmas=clamped,
        gp_variance=float(np.mean([pred_u.variance, pred_v.variance, pred_core.variance])),
    )


def predict_solution(model: SurrogateModel, x_star: Union[ParameterPoint, Sequence[float]]) -> np.ndarray:
    """Predicted n_f x m_f solution matrix at a new parameter point"""
    return predict_with_diagnostics(model, x_star).matrix


def evaluate(
    model: SurrogateModel,
    test_params: Sequence[Union[ParameterPoint, Sequence[float]]],
    test_snapshots: Sequence[SolutionSnapshot],
) -> Tuple[float, List[float]]:
    """Mean and per-point Frobenius error ||F_i - F~_i||_F over a test set"""
    if len(test_params) != len(test_snapshots):
        raise ShapeError("Test parameter and snapshot counts differ", n_params=len(test_params),
                         n_snapshots=len(test_snapshots))
    errors = []
    for index, (x_star, snapshot) in enumerate(zip(test_params, test_snapshots)):
        if snapshot.shape != model.shape:
            raise ShapeError(
                "Test snapshot shape differs from the model",
                sample=snapshot.source_id or index,
                expected=model.shape,
                got=snapshot.shape,
            )
        errors.append(float(np.linalg.norm(snapshot.matrix - predict_solution(model, x_star))))
    mean = float(np.mean(errors)) if errors else 0.0
    return mean, errors


def ensemble_moments(matrices: Sequence[Union[SolutionSnapshot, np.ndarray]]) -> Tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and standard deviation of an ensemble, on the column-major flattening"""
    if not matrices:
        raise ValueError("Ensemble moments need at least one matrix")
    stacked = np.stack([flatten(matrix) for matrix in matrices])
    return stacked.mean(axis=0), stacked.std(axis=0)
