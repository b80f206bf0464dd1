"""
Noise-free Gaussian-process regression with an isotropic RBF kernel

One GpModel holds a block of k output columns that share the training
inputs and a single length-scale. Each column is an independent GP, so a
block is the pooled form of k component-wise models.
"""

from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist
from loguru import logger

from ..utils.exceptions import DimensionMismatch, IllConditioned, NonpositiveLengthScale

DEFAULT_NUGGET = 1e-10
MAX_NUGGET = 1e-4
DEFAULT_BOUNDS = (1e-3, 1e3)
GRID_POINTS = 25


def _check_length_scale(length_scale: float):
    if not np.isfinite(length_scale) or length_scale <= 0.0:
        raise NonpositiveLengthScale("RBF length-scale must be positive", length_scale=length_scale)


def rbf_kernel(x: Sequence[float], x_prime: Sequence[float], length_scale: float) -> float:
    """k(x, x') = exp(-||x - x'||^2 / (2 l^2))"""
    _check_length_scale(length_scale)
    x = np.asarray(x, dtype=float).reshape(-1)
    x_prime = np.asarray(x_prime, dtype=float).reshape(-1)
    if x.shape != x_prime.shape:
        raise DimensionMismatch("Kernel arguments differ in length", left=x.size, right=x_prime.size)
    return float(np.exp(-np.sum((x - x_prime) ** 2) / (2.0 * length_scale ** 2)))


def kernel_matrix(a: np.ndarray, b: np.ndarray, length_scale: float) -> np.ndarray:
    """Gram matrix of the RBF kernel between the rows of ``a`` and ``b``"""
    _check_length_scale(length_scale)
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * length_scale ** 2))


def _as_inputs(inputs: Any) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs.reshape(-1, 1)
    return inputs


def _as_outputs(outputs: Any) -> np.ndarray:
    outputs = np.asarray(outputs, dtype=float)
    if outputs.ndim == 1:
        outputs = outputs.reshape(-1, 1)
    return outputs


def _cholesky(gram: np.ndarray, nugget: float, escalate: bool = True) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of gram + nugget I, raising the nugget tenfold on failure"""
    identity = np.eye(gram.shape[0])
    exponent = 0
    while True:
        jitter = nugget * 10.0 ** exponent
        try:
            factor = linalg.cholesky(gram + jitter * identity, lower=True)
            if exponent:
                logger.warning(f"⚠️ Cholesky needed nugget escalation to {jitter:.1e}")
            return factor, jitter
        except linalg.LinAlgError:
            if not escalate or nugget * 10.0 ** (exponent + 1) > MAX_NUGGET * (1.0 + 1e-9):
                raise IllConditioned(
                    "Gram matrix is not positive definite at the largest permitted nugget",
                    nugget=jitter,
                    n_points=gram.shape[0],
                )
            exponent += 1


def log_marginal_likelihood(
    inputs: np.ndarray,
    outputs: np.ndarray,
    length_scale: float,
    nugget: float = DEFAULT_NUGGET,
) -> float:
    """
    Log marginal likelihood of a pooled output block, concentrated in a
    shared signal amplitude

    With K the unit-amplitude Gram matrix and Y the N x k outputs, the
    amplitude maximizing the likelihood is s^2 = tr(Y^T K^-1 Y) / (N k), and

        L(l) = -(N k / 2) log s^2 - (k / 2) log|K| + const

    Raises:
        IllConditioned: if K + nugget I has no Cholesky factor
    """
    inputs, outputs = _as_inputs(inputs), _as_outputs(outputs)
    n, k = outputs.shape
    factor, _ = _cholesky(kernel_matrix(inputs, inputs, length_scale), nugget, escalate=False)
    alpha = linalg.cho_solve((factor, True), outputs)

    quadratic = float(np.sum(outputs * alpha))
    if quadratic <= 0.0:
        return -np.inf
    log_det = 2.0 * np.sum(np.log(np.diag(factor)))
    return -0.5 * n * k * np.log(quadratic / (n * k)) - 0.5 * k * log_det


@dataclass(frozen=True, eq=False)
class GpPrediction:
    """Posterior mean of every output column and the shared posterior variance"""

    mean: np.ndarray
    variance: float


@dataclass(frozen=True, eq=False)
class GpModel:
    """Fitted GP block: training data, hyperparameters and cached factorization"""

    train_inputs: np.ndarray
    train_outputs: np.ndarray
    length_scale: float
    nugget: float
    output_mean: np.ndarray
    input_mean: np.ndarray
    input_scale: np.ndarray
    cholesky_factor: np.ndarray
    weights: np.ndarray

    @property
    def n_outputs(self) -> int:
        return self.train_outputs.shape[1]

    @property
    def input_dim(self) -> int:
        return self.train_inputs.shape[1]

    def _scaled(self, inputs: np.ndarray) -> np.ndarray:
        return (inputs - self.input_mean) / self.input_scale

    def to_state(self) -> Dict[str, Any]:
        """Raw training data and hyperparameters; the factorization is rebuilt on load"""
        return {
            "train_inputs": self.train_inputs.tolist(),
            "train_outputs": self.train_outputs.tolist(),
            "length_scale": self.length_scale,
            "nugget": self.nugget,
            "output_mean": self.output_mean.tolist(),
            "input_mean": self.input_mean.tolist(),
            "input_scale": self.input_scale.tolist(),
        }

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> "GpModel":
        inputs = _as_inputs(state["train_inputs"])
        outputs = np.asarray(state["train_outputs"], dtype=float).reshape(inputs.shape[0], -1)
        return _assemble(
            inputs,
            outputs,
            float(state["length_scale"]),
            float(state["nugget"]),
            np.asarray(state["output_mean"], dtype=float).reshape(-1),
            np.asarray(state["input_mean"], dtype=float).reshape(-1),
            np.asarray(state["input_scale"], dtype=float).reshape(-1),
            escalate=False,
        )


def _assemble(
    inputs: np.ndarray,
    outputs: np.ndarray,
    length_scale: float,
    nugget: float,
    output_mean: np.ndarray,
    input_mean: np.ndarray,
    input_scale: np.ndarray,
    escalate: bool = True,
) -> GpModel:
    inputs, outputs = np.array(inputs, dtype=float), np.array(outputs, dtype=float)
    scaled = (inputs - input_mean) / input_scale
    factor, jitter = _cholesky(kernel_matrix(scaled, scaled, length_scale), nugget, escalate=escalate)
    weights = linalg.cho_solve((factor, True), outputs - output_mean)
    for array in (inputs, outputs, output_mean, input_mean, input_scale, factor, weights):
        array.setflags(write=False)
    return GpModel(
        train_inputs=inputs,
        train_outputs=outputs,
        length_scale=float(length_scale),
        nugget=float(jitter),
        output_mean=output_mean,
        input_mean=input_mean,
        input_scale=input_scale,
        cholesky_factor=factor,
        weights=weights,
    )


def _column_means(outputs: np.ndarray) -> np.ndarray:
    # Constant columns get their exact value so they center to zero
    means = np.mean(outputs, axis=0)
    constant = np.ptp(outputs, axis=0) == 0.0
    means[constant] = outputs[0, constant]
    return means


def fit_length_scale(
    inputs: np.ndarray,
    outputs: np.ndarray,
    l_init: float = 1.0,
    nugget: float = DEFAULT_NUGGET,
    bounds: Tuple[float, float] = DEFAULT_BOUNDS,
) -> float:
    """
    Length-scale maximizing the pooled log marginal likelihood

    A coarse log-spaced grid over ``bounds`` picks a bracket, a bounded
    Brent search refines it, and the result is compared against ``l_init``.
    Length-scales whose Gram matrix does not factor at ``nugget`` are ruled out.
    """
    _check_length_scale(l_init)
    low, high = np.log10(bounds[0]), np.log10(bounds[1])
    if not low < high:
        raise ValueError(f"Invalid length-scale bounds: {bounds}")

    def objective(log_l: float) -> float:
        try:
            return -log_marginal_likelihood(inputs, outputs, 10.0 ** log_l, nugget)
        except IllConditioned:
            return np.inf

    grid = np.linspace(low, high, GRID_POINTS)
    values = np.array([objective(log_l) for log_l in grid])
    best = int(np.argmin(values))
    bracket = (grid[max(best - 1, 0)], grid[min(best + 1, GRID_POINTS - 1)])

    refined = optimize.minimize_scalar(objective, bounds=bracket, method="bounded", options={"xatol": 1e-4})
    log_init = float(np.clip(np.log10(l_init), low, high))
    candidates = [
        (objective(log_init), log_init),
        (values[best], grid[best]),
        (float(refined.fun), float(refined.x)),
    ]
    value, log_l = min(candidates, key=lambda candidate: candidate[0])
    if not np.isfinite(value):
        raise IllConditioned(
            "No length-scale in the search range gives a factorable Gram matrix",
            nugget=nugget,
            n_points=inputs.shape[0],
        )
    logger.debug(f"Fitted length-scale {10.0 ** log_l:.4g} (negative log likelihood {value:.6g})")
    return float(10.0 ** log_l)


def gp_fit(
    inputs: Sequence[Sequence[float]],
    outputs: Any,
    l_init: float = 1.0,
    nugget: float = DEFAULT_NUGGET,
    optimize_length_scale: bool = True,
    bounds: Tuple[float, float] = DEFAULT_BOUNDS,
    center: bool = True,
    standardize_inputs: bool = False,
) -> GpModel:
    """
    Fit a GP block to training inputs and one or more output columns

    Args:
        inputs: N parameter vectors
        outputs: N values, or an N x k block sharing one length-scale
        l_init: Initial (or, without optimization, fixed) length-scale
        nugget: Diagonal stabilizer, escalated tenfold up to 1e-4 on failure
        optimize_length_scale: Maximize the marginal likelihood over ``bounds``
        bounds: Length-scale search range
        center: Subtract the column means before fitting, add them back at prediction
        standardize_inputs: Rescale each input dimension to zero mean, unit spread

    Returns:
        Fitted GpModel
    """
    inputs, outputs = _as_inputs(inputs), _as_outputs(outputs)
    _check_length_scale(l_init)
    if inputs.shape[0] < 1 or inputs.shape[0] != outputs.shape[0]:
        raise DimensionMismatch(
            "GP needs as many outputs as inputs",
            n_inputs=inputs.shape[0],
            n_outputs=outputs.shape[0],
        )
    if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(outputs))):
        raise ValueError("GP training data has non-finite entries")

    n_inputs, input_dim = inputs.shape
    if standardize_inputs:
        input_mean = np.mean(inputs, axis=0)
        input_scale = np.std(inputs, axis=0)
        input_scale[input_scale == 0.0] = 1.0
    else:
        input_mean = np.zeros(input_dim)
        input_scale = np.ones(input_dim)

    output_mean = _column_means(outputs) if center else np.zeros(outputs.shape[1])
    residual = outputs - output_mean

    length_scale = float(l_init)
    if optimize_length_scale and n_inputs >= 2 and np.any(residual):
        scaled = (inputs - input_mean) / input_scale
        length_scale = fit_length_scale(scaled, residual, l_init, nugget, bounds)

    return _assemble(inputs, outputs, length_scale, nugget, output_mean, input_mean, input_scale)


def gp_predict(model: GpModel, x_star: Sequence[float]) -> GpPrediction:
    """
    Posterior mean K*^T K^-1 W and variance K** - K*^T K^-1 K* at one point

    The variance uses the unit-amplitude kernel, so it reverts to 1 far
    from the data; small negative round-off is clamped to 0.
    """
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    if x_star.size != model.input_dim:
        raise DimensionMismatch(
            "Query point dimension differs from the training inputs",
            expected=model.input_dim,
            got=x_star.size,
        )

    scaled_train = model._scaled(model.train_inputs)
    cross = kernel_matrix(scaled_train, model._scaled(x_star[None, :]), model.length_scale)[:, 0]
    mean = model.output_mean + cross @ model.weights

    v = linalg.solve_triangular(model.cholesky_factor, cross, lower=True)
    variance = max(0.0, 1.0 - float(v @ v))
    return GpPrediction(mean=mean, variance=variance)


def gp_predict_many(model: GpModel, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior means (M x k) and variances (M,) at several query points"""
    points = _as_inputs(points)
    if points.shape[1] != model.input_dim:
        raise DimensionMismatch(
            "Query point dimension differs from the training inputs",
            expected=model.input_dim,
            got=points.shape[1],
        )
    cross = kernel_matrix(model._scaled(model.train_inputs), model._scaled(points), model.length_scale)
    means = model.output_mean + cross.T @ model.weights
    v = linalg.solve_triangular(model.cholesky_factor, cross, lower=True)
    variances = np.maximum(0.0, 1.0 - np.sum(v * v, axis=0))
    return means, variances

