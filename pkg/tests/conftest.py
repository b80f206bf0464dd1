"""
Shared fixtures for the GrassGP test suite
"""

import sys
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pytest

# Make `src` importable the same way main.py does
ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from src.core.pipeline import SolutionSnapshot  # noqa: E402
from src.geometry.manifold import GrassmannPoint  # noqa: E402

FAMILY_CENTERS = (-2.0, 0.0, 2.0)
FAMILY_SHAPE = (12, 6)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale benchmark tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale benchmark reproduction, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def random_point(rng: np.random.Generator, n: int, p: int) -> GrassmannPoint:
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    return GrassmannPoint(q)


def family_snapshot(family: int, r1: float, r2: float) -> np.ndarray:
    """
    Rank-2 snapshot of one family at local coordinates (r1, r2) in [-1, 1]^2

    Family f spans axes 4f, 4f+1 of R^12, each column tilted towards 4f+2,
    4f+3. Different families are exactly orthogonal.
    """
    n_f, m_f = FAMILY_SHAPE
    a, b, c, d = 0.3 * r1, 0.2 * r2, 0.25 * r2, 0.15 * r1
    offset = 4 * family

    u = np.zeros((n_f, 2))
    u[offset, 0], u[offset + 2, 0] = np.cos(a), np.sin(a)
    u[offset + 1, 1], u[offset + 3, 1] = np.cos(b), np.sin(b)
    v = np.zeros((m_f, 2))
    v[0, 0], v[2, 0] = np.cos(c), np.sin(c)
    v[1, 1], v[3, 1] = np.cos(d), np.sin(d)
    sigma = np.array([3.0 + 0.5 * r1, 1.0 + 0.3 * r2])
    return (u * sigma) @ v.T


def family_param(family: int, r1: float, r2: float) -> np.ndarray:
    return np.array([FAMILY_CENTERS[family] + 0.5 * r1, r2])


def make_families(n_per_family: int = 30, seed: int = 0) -> Tuple[np.ndarray, List[SolutionSnapshot], np.ndarray]:
    """Three well-separated solution families, each in its own parameter region"""
    rng = np.random.default_rng(seed)
    params, snapshots, families = [], [], []
    for family in range(3):
        for r1, r2 in rng.uniform(-1.0, 1.0, size=(n_per_family, 2)):
            params.append(family_param(family, r1, r2))
            snapshots.append(SolutionSnapshot(family_snapshot(family, r1, r2), f"{len(snapshots):04d}"))
            families.append(family)
    return np.array(params), snapshots, np.array(families)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def families() -> Tuple[np.ndarray, List[SolutionSnapshot], np.ndarray]:
    return make_families()
