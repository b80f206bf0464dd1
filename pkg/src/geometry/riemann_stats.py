"""
Karcher mean and variance of Grassmann points
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from .manifold import (
    HALF_PI,
    DistanceMetric,
    GrassmannPoint,
    distance,
    exp_map_many,
    log_map_many,
    require_same_manifold,
)
from ..utils.exceptions import NoConvergence

# Upper bound on floats held by one block of pairwise overlap products
PAIRWISE_BLOCK_FLOATS = 4_000_000


class KarcherSettings(BaseModel):
    """Stopping rule and step size of the Karcher iteration"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    tol: float = Field(1e-10, gt=0.0)
    max_iter: int = Field(1000, ge=1)
    step: float = Field(0.5, gt=0.0)


@dataclass(frozen=True, eq=False)
class KarcherResult:
    """Sample Karcher mean with its convergence diagnostics"""

    mean: GrassmannPoint
    variance: float
    iterations: int
    final_gradient_norm: float
    converged: bool = True
    radius_warning: bool = False


def pairwise_distances(points: Sequence[GrassmannPoint]) -> np.ndarray:
    """
    Matrix of Grassmann distances between points of one manifold

    The overlap products X_i^T X_j are formed in row blocks and their
    singular values taken in a single batched call per block.
    """
    count = len(points)
    if count == 0:
        return np.zeros((0, 0))
    for point in points[1:]:
        require_same_manifold(points[0], point)

    stack = np.stack([point.basis for point in points])
    p = stack.shape[2]
    block = max(1, PAIRWISE_BLOCK_FLOATS // max(1, count * p * p))

    distances = np.zeros((count, count))
    for start in range(0, count, block):
        rows = stack[start:start + block]
        overlaps = np.matmul(rows.transpose(0, 2, 1)[:, None], stack[None])
        cosines = np.clip(np.linalg.svd(overlaps, compute_uv=False), 0.0, 1.0)
        distances[start:start + block] = np.sqrt(np.sum(np.arccos(cosines) ** 2, axis=-1))

    distances = 0.5 * (distances + distances.T)
    np.fill_diagonal(distances, 0.0)
    return distances


def karcher_variance(
    points: Sequence[GrassmannPoint],
    mean: GrassmannPoint,
    metric: DistanceMetric = DistanceMetric.GRASSMANN,
) -> float:
    """Mean squared distance (1/N) sum d^2(X_i, mean)"""
    if not points:
        raise ValueError("Karcher variance needs at least one point")
    return float(np.mean([distance(point, mean, metric) ** 2 for point in points]))


def karcher_mean(
    points: Sequence[GrassmannPoint],
    tol: float = 1e-10,
    max_iter: int = 1000,
    step: float = 0.5,
) -> KarcherResult:
    """
    Sample Karcher mean by iterative tangent-space averaging

    Starts from the sample point with the smallest sum of squared distances
    to all others (lowest index on ties), then repeats: log-map every point
    at the current estimate, average, and move along step * average until
    the average tangent vector has Frobenius norm below ``tol``.

    Args:
        points: Points on one Grassmann manifold
        tol: Gradient-norm stopping tolerance
        max_iter: Maximum number of gradient evaluations
        step: Fraction of the averaged tangent vector applied per update

    Returns:
        KarcherResult; ``iterations`` counts gradient evaluations, including
        the final one that met the tolerance

    Raises:
        NoConvergence: carries the last estimate as ``result``
    """
    points = list(points)
    if not points:
        raise ValueError("Karcher mean needs at least one point")
    if tol <= 0.0:
        raise ValueError(f"Karcher tolerance must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"Karcher max_iter must be at least 1, got {max_iter}")
    if step <= 0.0:
        raise ValueError(f"Karcher step must be positive, got {step}")

    pairwise = pairwise_distances(points)
    radius_warning = bool(pairwise.size and pairwise.max() > HALF_PI)
    if radius_warning:
        logger.warning(
            f"⚠️ Ensemble radius exceeds pi/4 (max pairwise distance {pairwise.max():.3f}); "
            "the Karcher mean may not be unique"
        )

    start = int(np.argmin(np.sum(pairwise ** 2, axis=1)))
    mean = points[start]
    gradient_norm = np.inf

    for iteration in range(1, max_iter + 1):
        gradient = np.mean(log_map_many(mean, points), axis=0)
        gradient_norm = float(np.linalg.norm(gradient))
        logger.debug(f"Karcher iteration {iteration}: gradient norm {gradient_norm:.3e}")

        if gradient_norm < tol:
            return KarcherResult(
                mean=mean,
                variance=karcher_variance(points, mean),
                iterations=iteration,
                final_gradient_norm=gradient_norm,
                converged=True,
                radius_warning=radius_warning,
            )
        if iteration == max_iter:
            break
        mean = GrassmannPoint(exp_map_many(mean, step * gradient[None, :, :])[0])

    result = KarcherResult(
        mean=mean,
        variance=karcher_variance(points, mean),
        iterations=max_iter,
        final_gradient_norm=gradient_norm,
        converged=False,
        radius_warning=radius_warning,
    )
    raise NoConvergence(
        "Karcher mean did not converge",
        result=result,
        iterations=max_iter,
        gradient_norm=gradient_norm,
        tol=tol,
    )
