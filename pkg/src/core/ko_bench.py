"""
Kraichnan-Orszag three-mode benchmark

dv1/dt = v1 v3, dv2/dt = -v2 v3, dv3/dt = -v1^2 + v2^2 with random initial
conditions v2(0) = 0.1 xi_1, v3(0) = xi_2 and xi ~ Uniform(-1, 1)^2. Only
the v1 history is kept as the surrogate target.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .pipeline import SolutionSnapshot, matricize
from ..utils.exceptions import NonFinite

RNG_NAME = "numpy.random.Generator(PCG64)"
STEP_TOL = 1e-9


@dataclass(frozen=True)
class KoState:
    v1: float
    v2: float
    v3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v1, self.v2, self.v3], dtype=float)


class KoConfig(BaseModel):
    """Integration horizon, step and initial-condition law"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    t_final: float = Field(30.0, gt=0.0)
    dt: float = Field(0.003, gt=0.0)
    v1_0: float = 1.0
    v2_scale: float = 0.1
    n_samples: int = Field(1024, ge=1)
    seed: int = 0
    shape: Tuple[int, int] = (100, 100)

    @model_validator(mode="after")
    def _check_steps(self) -> "KoConfig":
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > STEP_TOL * max(1.0, steps):
            raise ValueError(f"t_final / dt must be an integer number of steps, got {steps}")
        if self.shape[0] * self.shape[1] != self.n_steps:
            raise ValueError(f"Shape {self.shape} does not hold {self.n_steps} time steps")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def metadata(self) -> dict:
        return {
            "generator": "kraichnan-orszag",
            "integrator": "rk4-fixed-step",
            "rng": RNG_NAME,
            "t_final": self.t_final,
            "dt": self.dt,
            "v1_0": self.v1_0,
            "v2_scale": self.v2_scale,
            "seed": self.seed,
        }


def _rhs(y: np.ndarray) -> np.ndarray:
    v1, v2, v3 = y[..., 0], y[..., 1], y[..., 2]
    return np.stack([v1 * v3, -v2 * v3, -v1 * v1 + v2 * v2], axis=-1)


def ko_rhs(state: KoState) -> KoState:
    """Time derivative (v1 v3, -v2 v3, -v1^2 + v2^2)"""
    return KoState(*(float(value) for value in _rhs(state.as_array())))


def initial_states(xis: np.ndarray, config: KoConfig) -> np.ndarray:
    xis = np.asarray(xis, dtype=float).reshape(-1, 2)
    return np.column_stack([np.full(len(xis), config.v1_0), config.v2_scale * xis[:, 0], xis[:, 1]])


def integrate_ko_batch(xis: np.ndarray, config: KoConfig = KoConfig(), component: int = 0) -> np.ndarray:
    """
    Classical fixed-step RK4 for many samples at once

    Args:
        xis: N x 2 array of (xi_1, xi_2)
        config: Horizon and step
        component: State component to record (0 for v1, 1 for v2, 2 for v3)

    Returns:
        N x n_steps array; column k holds the component at time (k + 1) dt
    """
    if component not in (0, 1, 2):
        raise ValueError(f"Component must be 0, 1 or 2, got {component}")
    y = initial_states(xis, config)
    dt = config.dt
    trajectory = np.empty((y.shape[0], config.n_steps))

    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(config.n_steps):
            k1 = _rhs(y)
            k2 = _rhs(y + 0.5 * dt * k1)
            k3 = _rhs(y + 0.5 * dt * k2)
            k4 = _rhs(y + dt * k3)
            y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            trajectory[:, step] = y[:, component]

    blown = np.flatnonzero(~np.all(np.isfinite(trajectory), axis=1))
    if blown.size:
        raise NonFinite("Kraichnan-Orszag state blew up", sample=int(blown[0]), dt=dt, t_final=config.t_final)
    return trajectory


def integrate_ko(xi: Sequence[float], config: KoConfig = KoConfig()) -> np.ndarray:
    """v1 trajectory of a single sample"""
    return integrate_ko_batch(np.asarray(xi, dtype=float).reshape(1, 2), config)[0]


def sample_parameters(n_samples: int, seed: int) -> np.ndarray:
    """n_samples x 2 draws from Uniform(-1, 1)^2"""
    if n_samples < 0:
        raise ValueError(f"Sample count must be nonnegative, got {n_samples}")
    return np.random.Generator(np.random.PCG64(seed)).uniform(-1.0, 1.0, size=(n_samples, 2))


def sample_ko_dataset(
    n_samples: int,
    seed: int,
    config: KoConfig = KoConfig(),
) -> Tuple[np.ndarray, List[SolutionSnapshot]]:
    """
    Monte Carlo training set of matricized v1 trajectories

    Returns:
        (N x 2 parameter array, snapshots of the configured shape in sample order)
    """
    if n_samples < 1:
        raise ValueError(f"Sample count must be positive, got {n_samples}")
    params = sample_parameters(n_samples, seed)
    logger.info(f"🌀 Integrating {n_samples} Kraichnan-Orszag trajectories ({config.n_steps} steps each)")
    trajectories = integrate_ko_batch(params, config)
    n_f, m_f = config.shape
    snapshots = [matricize(row, n_f, m_f, source_id=f"{i:04d}") for i, row in enumerate(trajectories)]
    return params, snapshots
