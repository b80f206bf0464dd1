"""
Grassmann manifold geometry: thin-SVD projection, exponential and
logarithmic maps, geodesics, principal angles, distances and the
projection kernel
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from loguru import logger

from ..utils.exceptions import AmbientMismatch, ShapeMismatch, SingularOverlap, ZeroMatrix

ORTHONORMAL_TOL = 1e-10
TANGENT_TOL = 1e-8
ZERO_SINGULAR_FLOOR = 1e-14
OVERLAP_CONDITION_LIMIT = 1e12
HALF_PI = 0.5 * np.pi


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class GrassmannPoint:
    """A p-dimensional subspace of R^n stored as an orthonormal n x p basis"""

    basis: np.ndarray

    def __post_init__(self):
        basis = np.array(self.basis, dtype=float)
        if basis.ndim == 1:
            basis = basis.reshape(-1, 1)
        if basis.ndim != 2:
            raise ShapeMismatch("Grassmann basis must be a matrix", shape=basis.shape)

        n, p = basis.shape
        if p < 1 or p > n:
            raise ShapeMismatch("Grassmann basis needs 1 <= p <= n", shape=basis.shape)
        if not np.all(np.isfinite(basis)):
            raise ValueError("Grassmann basis has non-finite entries")

        deviation = np.max(np.abs(basis.T @ basis - np.eye(p)))
        if deviation > ORTHONORMAL_TOL:
            raise ValueError(f"Grassmann basis is not orthonormal (max |X^T X - I| = {deviation:.3e})")

        object.__setattr__(self, "basis", _readonly(basis))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "GrassmannPoint":
        """Orthonormal basis of the column space of a full-column-rank matrix"""
        return cls(_reorthonormalize(np.asarray(matrix, dtype=float)))

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def subspace_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.basis.shape


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Matrix Gamma in the tangent space at ``base`` (base^T Gamma = 0)"""

    matrix: np.ndarray
    base: GrassmannPoint

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix.reshape(-1, 1)
        if matrix.shape != self.base.shape:
            raise ShapeMismatch(
                "Tangent vector shape differs from its base point",
                tangent_shape=matrix.shape,
                base_shape=self.base.shape,
            )
        if not np.all(np.isfinite(matrix)):
            raise ValueError("Tangent vector has non-finite entries")

        normal_part = np.max(np.abs(self.base.basis.T @ matrix)) if matrix.size else 0.0
        if normal_part >= TANGENT_TOL:
            raise ValueError(f"Matrix is not tangent at its base (max |X^T Gamma| = {normal_part:.3e})")

        object.__setattr__(self, "matrix", _readonly(matrix))

    @classmethod
    def project(cls, matrix: np.ndarray, base: GrassmannPoint) -> "TangentVector":
        """Remove the component of ``matrix`` along the base subspace"""
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != base.shape:
            raise ShapeMismatch(
                "Tangent vector shape differs from its base point",
                tangent_shape=matrix.shape,
                base_shape=base.shape,
            )
        return cls(matrix - base.basis @ (base.basis.T @ matrix), base)

    @classmethod
    def zeros(cls, base: GrassmannPoint) -> "TangentVector":
        return cls(np.zeros(base.shape), base)

    def scaled(self, factor: float) -> "TangentVector":
        return TangentVector(factor * self.matrix, self.base)

    def norm(self) -> float:
        """Frobenius norm, the canonical metric on the tangent space"""
        return float(np.linalg.norm(self.matrix))


@dataclass(frozen=True, eq=False)
class PrincipalAngles:
    """Principal angles between two subspaces, nondecreasing in [0, pi/2]"""

    angles: np.ndarray
    dims: Tuple[int, int]

    def __post_init__(self):
        angles = np.array(self.angles, dtype=float).reshape(-1)
        if angles.size != min(self.dims):
            raise ShapeMismatch("Expected min(p, k) principal angles", count=angles.size, dims=self.dims)
        if np.any(angles < 0.0) or np.any(angles > HALF_PI) or np.any(np.diff(angles) < 0.0):
            raise ValueError("Principal angles must be nondecreasing in [0, pi/2]")
        object.__setattr__(self, "angles", _readonly(angles))

    def __len__(self) -> int:
        return self.angles.size

    @property
    def largest(self) -> float:
        return float(self.angles[-1]) if self.angles.size else 0.0


class DistanceMetric(str, Enum):
    """Subspace distances expressed through principal angles"""

    GRASSMANN = "grassmann"
    PROCRUSTES = "procrustes"
    PROJECTION = "projection"


@dataclass(frozen=True)
class RankPolicy:
    """Thin-SVD truncation rule: a fixed rank or a relative singular-value cutoff"""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("fixed", "tolerance"):
            raise ValueError(f"Unknown rank policy: {self.kind}")
        if self.kind == "fixed" and (int(self.value) != self.value or self.value < 1):
            raise ValueError("Fixed rank must be a positive integer")
        if self.kind == "tolerance" and not 0.0 <= self.value < 1.0:
            raise ValueError("Truncation tolerance must lie in [0, 1)")

    @classmethod
    def fixed(cls, rank: int) -> "RankPolicy":
        return cls("fixed", int(rank))

    @classmethod
    def tolerance(cls, tau: float) -> "RankPolicy":
        return cls("tolerance", float(tau))


@dataclass(frozen=True, eq=False)
class ReducedSolution:
    """
    Thin-SVD triplet (U, sigma, V) of one solution snapshot

    The complete thin factors are kept alongside the truncated triplet so
    that the solution can later be re-truncated at a larger common rank.
    """

    U: GrassmannPoint
    sigma: np.ndarray
    V: GrassmannPoint
    full_u: Optional[np.ndarray] = field(default=None, repr=False)
    full_sigma: Optional[np.ndarray] = field(default=None, repr=False)
    full_v: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float).reshape(-1)
        if sigma.size != self.U.subspace_dim or sigma.size != self.V.subspace_dim:
            raise ShapeMismatch(
                "Singular values do not match the basis ranks",
                sigma=sigma.size,
                u_rank=self.U.subspace_dim,
                v_rank=self.V.subspace_dim,
            )
        if np.any(sigma < 0.0) or np.any(np.diff(sigma) > 0.0):
            raise ValueError("Singular values must be nonnegative and nonincreasing")
        object.__setattr__(self, "sigma", _readonly(sigma))

    @property
    def rank(self) -> int:
        return self.sigma.size

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.U.ambient_dim, self.V.ambient_dim)

    def reconstruct(self) -> np.ndarray:
        """U diag(sigma) V^T"""
        return (self.U.basis * self.sigma) @ self.V.basis.T

    def at_rank(self, rank: int) -> "ReducedSolution":
        """
        Re-truncate the thin SVD at ``rank``

        Columns beyond the original truncation rank come from the complete
        thin factors; their singular values are padded with zeros.
        """
        if rank == self.rank:
            return self
        if rank < 1:
            raise ShapeMismatch("Rank must be positive", rank=rank)
        if rank < self.rank:
            return ReducedSolution(
                GrassmannPoint(self.U.basis[:, :rank]),
                self.sigma[:rank],
                GrassmannPoint(self.V.basis[:, :rank]),
                self.full_u,
                self.full_sigma,
                self.full_v,
            )
        if self.full_u is None or self.full_u.shape[1] < rank:
            raise ShapeMismatch(
                "Cannot extend a reduced solution beyond its stored factors",
                rank=rank,
                available=0 if self.full_u is None else self.full_u.shape[1],
            )

        sigma = np.zeros(rank)
        sigma[: self.rank] = self.sigma
        return ReducedSolution(
            GrassmannPoint(self.full_u[:, :rank]),
            sigma,
            GrassmannPoint(self.full_v[:, :rank]),
            self.full_u,
            self.full_sigma,
            self.full_v,
        )


def _thin_svd(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return linalg.svd(matrix, full_matrices=False)
    except linalg.LinAlgError:
        logger.debug("gesdd did not converge, retrying SVD with gesvd")
        return linalg.svd(matrix, full_matrices=False, lapack_driver="gesvd")


def _fix_signs(u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Flip singular-vector pairs so each column of u has a positive largest-magnitude entry"""
    if u.size == 0:
        return u, v
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(u.shape[1])])
    signs[signs == 0.0] = 1.0
    return u * signs, v * signs


def _reorthonormalize(matrix: np.ndarray) -> np.ndarray:
    # Thin QR with a positive R diagonal keeps the result close to the input basis
    q, r = linalg.qr(matrix, mode="economic")
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    return q * signs


def require_ambient(x1: GrassmannPoint, x2: GrassmannPoint):
    if x1.ambient_dim != x2.ambient_dim:
        raise AmbientMismatch(
            "Subspaces live in different ambient spaces",
            n1=x1.ambient_dim,
            n2=x2.ambient_dim,
        )


def require_same_manifold(x1: GrassmannPoint, x2: GrassmannPoint):
    require_ambient(x1, x2)
    if x1.subspace_dim != x2.subspace_dim:
        raise ShapeMismatch(
            "Points lie on Grassmann manifolds of different dimension",
            p1=x1.subspace_dim,
            p2=x2.subspace_dim,
        )


def project_to_grassmann(
    matrix: np.ndarray,
    rank_policy: RankPolicy = RankPolicy.tolerance(1e-8),
) -> ReducedSolution:
    """
    Factorize a snapshot with a thin SVD and keep the leading triplets

    Args:
        matrix: Real n_f x m_f snapshot
        rank_policy: Fixed rank or relative singular-value cutoff

    Returns:
        ReducedSolution whose U and V are points on G(p, n_f) and G(p, m_f)
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise ShapeMismatch("Snapshot must be a matrix", shape=matrix.shape)
    if not np.all(np.isfinite(matrix)):
        raise ValueError("Snapshot has non-finite entries")

    u, s, vt = _thin_svd(matrix)
    if s.size == 0 or s[0] < ZERO_SINGULAR_FLOOR:
        raise ZeroMatrix("Snapshot has no singular value above the zero floor", floor=ZERO_SINGULAR_FLOOR)
    u, v = _fix_signs(u, vt.T)

    if rank_policy.kind == "fixed":
        rank = int(rank_policy.value)
        if rank > s.size:
            raise ShapeMismatch("Requested rank exceeds min(n_f, m_f)", rank=rank, limit=s.size)
    else:
        rank = max(1, int(np.count_nonzero(s / s[0] > rank_policy.value)))

    return ReducedSolution(
        GrassmannPoint(u[:, :rank]),
        s[:rank],
        GrassmannPoint(v[:, :rank]),
        _readonly(u),
        _readonly(s),
        _readonly(v),
    )


def log_map_many(base: GrassmannPoint, targets: Sequence[GrassmannPoint]) -> np.ndarray:
    """
    Logarithmic map of several points at one base, as a stack of tangent matrices

    Args:
        base: Point of tangency X0
        targets: Points X1 on the same manifold

    Returns:
        Array of shape (len(targets), n, p) holding Gamma for each target
    """
    for target in targets:
        require_same_manifold(base, target)
    x0 = base.basis
    if not targets:
        return np.zeros((0,) + base.shape)
    x1 = np.stack([target.basis for target in targets])

    # M = (X1 - X0 X0^T X1)(X0^T X1)^-1 = U S V^T, Gamma = U atan(S) V^T
    overlap = x0.T @ x1
    # singular values are cosines of the principal angles
    smallest = np.linalg.svd(overlap, compute_uv=False)[:, -1]
    bad = ~np.isfinite(smallest) | (smallest < 1.0 / OVERLAP_CONDITION_LIMIT)
    if np.any(bad):
        index = int(np.flatnonzero(bad)[0])
        raise SingularOverlap(
            "X0^T X1 is numerically singular",
            smallest_cosine=float(smallest[index]),
            index=index,
        )

    normal = x1 - x0 @ overlap
    m = np.linalg.solve(overlap.transpose(0, 2, 1), normal.transpose(0, 2, 1)).transpose(0, 2, 1)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    gamma = (u * np.arctan(s)[:, None, :]) @ vt
    return gamma - x0 @ (x0.T @ gamma)


def log_map(base: GrassmannPoint, target: GrassmannPoint) -> TangentVector:
    """Logarithmic map of ``target`` onto the tangent space at ``base``"""
    return TangentVector(log_map_many(base, [target])[0], base)


def exp_map_many(base: GrassmannPoint, gammas: np.ndarray) -> np.ndarray:
    """
    Exponential map of a stack of tangent matrices at one base

    Gamma = U S V^T maps to X0 V cos(S) V^T + U sin(S) V^T, re-orthonormalized
    by a thin QR whose R diagonal is made positive.

    Returns:
        Array of shape (k, n, p) of orthonormal bases
    """
    gammas = np.asarray(gammas, dtype=float)
    if gammas.ndim != 3 or gammas.shape[1:] != base.shape:
        raise ShapeMismatch(
            "Tangent vector shape differs from its base point",
            tangent_shape=gammas.shape[1:],
            base_shape=base.shape,
        )
    if gammas.shape[0] == 0:
        return np.zeros((0,) + base.shape)

    u, s, vt = np.linalg.svd(gammas, full_matrices=False)
    v = vt.transpose(0, 2, 1)
    moved = ((base.basis @ v) * np.cos(s)[:, None, :]) @ vt
    moved = moved + (u * np.sin(s)[:, None, :]) @ vt

    q, r = np.linalg.qr(moved)
    signs = np.sign(np.diagonal(r, axis1=1, axis2=2))
    signs[signs == 0.0] = 1.0
    return q * signs[:, None, :]


def exp_map(base: GrassmannPoint, gamma: Union[TangentVector, np.ndarray]) -> GrassmannPoint:
    """Exponential map of a tangent vector at ``base`` back onto the manifold"""
    matrix = gamma.matrix if isinstance(gamma, TangentVector) else np.asarray(gamma, dtype=float)
    if matrix.shape != base.shape:
        raise ShapeMismatch(
            "Tangent vector shape differs from its base point",
            tangent_shape=matrix.shape,
            base_shape=base.shape,
        )
    if isinstance(gamma, TangentVector) and gamma.base is not base:
        if not np.array_equal(gamma.base.basis, base.basis):
            raise ValueError("Tangent vector is attached to a different base point")

    return GrassmannPoint(exp_map_many(base, matrix[None, :, :])[0])


def geodesic(x0: GrassmannPoint, x1: GrassmannPoint, z: float) -> GrassmannPoint:
    """Point at fraction ``z`` along the geodesic from x0 (z = 0) to x1 (z = 1)"""
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"Geodesic parameter must lie in [0, 1], got {z}")
    return exp_map(x0, log_map(x0, x1).scaled(z))


def principal_angles(x1: GrassmannPoint, x2: GrassmannPoint) -> PrincipalAngles:
    """
    Principal angles between two subspaces of the same ambient space

    Cosines come from the singular values of X1^T X2 (clamped to [0, 1]);
    angles whose cosine exceeds 1/sqrt(2) are taken from the sines instead,
    where arccos loses accuracy.
    """
    require_ambient(x1, x2)
    a, b = x1.basis, x2.basis
    p, k = a.shape[1], b.shape[1]

    cosines = np.clip(linalg.svd(a.T @ b, compute_uv=False), 0.0, 1.0)
    small, large = (a, b) if p <= k else (b, a)
    residual = small - large @ (large.T @ small)
    sines = np.clip(linalg.svd(residual, compute_uv=False), 0.0, 1.0)[::-1]

    angles = np.where(cosines ** 2 >= 0.5, np.arcsin(sines), np.arccos(cosines))
    return PrincipalAngles(np.sort(np.clip(angles, 0.0, HALF_PI)), (p, k))


def distance(
    x1: GrassmannPoint,
    x2: GrassmannPoint,
    metric: DistanceMetric = DistanceMetric.GRASSMANN,
) -> float:
    """
    Subspace distance from principal angles

    Unequal dimensions use the doubly infinite Grassmannian forms, each
    adding a |k - p| completion term; the Procrustes one drops the factor 2.
    """
    theta = principal_angles(x1, x2).angles
    gap = abs(x1.subspace_dim - x2.subspace_dim)
    metric = DistanceMetric(metric)

    if metric is DistanceMetric.GRASSMANN:
        return float(np.sqrt(gap * HALF_PI ** 2 + np.sum(theta ** 2)))
    if metric is DistanceMetric.PROCRUSTES:
        half = np.sum(np.sin(0.5 * theta) ** 2)
        if gap:
            return float(np.sqrt(gap + half))
        return float(2.0 * np.sqrt(half))
    return float(np.sqrt(gap + np.sum(np.sin(theta) ** 2)))


def projection_kernel(u_i: GrassmannPoint, u_j: GrassmannPoint) -> float:
    """k_p(U_i, U_j) = ||U_i^T U_j||_F^2"""
    require_ambient(u_i, u_j)
    return float(np.sum((u_i.basis.T @ u_j.basis) ** 2))
