"""
Tests for Grassmann geometry
"""

import numpy as np
import pytest

from conftest import random_point
from src.geometry.manifold import (
    DistanceMetric,
    GrassmannPoint,
    RankPolicy,
    TangentVector,
    distance,
    exp_map,
    geodesic,
    log_map,
    principal_angles,
    project_to_grassmann,
    projection_kernel,
)
from src.utils.exceptions import AmbientMismatch, ShapeMismatch, SingularOverlap, ZeroMatrix


def e(i: int, n: int) -> np.ndarray:
    vector = np.zeros(n)
    vector[i] = 1.0
    return vector


def span(*columns: np.ndarray) -> GrassmannPoint:
    return GrassmannPoint(np.column_stack(columns))


def projection_distance(x1: GrassmannPoint, x2: GrassmannPoint) -> float:
    return distance(x1, x2, DistanceMetric.PROJECTION)


def random_tangent(rng: np.random.Generator, base: GrassmannPoint, norm: float) -> np.ndarray:
    gamma = TangentVector.project(rng.standard_normal(base.shape), base).matrix
    return norm * gamma / np.linalg.norm(gamma)


class TestGrassmannPoint:
    def test_rejects_non_orthonormal_basis(self):
        with pytest.raises(ValueError):
            GrassmannPoint(np.array([[1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]))

    def test_rejects_more_columns_than_rows(self):
        with pytest.raises(ShapeMismatch):
            GrassmannPoint(np.eye(2, 3))

    def test_basis_is_read_only(self):
        point = GrassmannPoint(np.eye(3)[:, :2])
        with pytest.raises(ValueError):
            point.basis[0, 0] = 2.0

    def test_from_matrix_orthonormalizes(self):
        point = GrassmannPoint.from_matrix(np.array([[2.0, 1.0], [0.0, 3.0], [0.0, 0.0]]))
        assert point.shape == (3, 2)
        assert np.allclose(point.basis.T @ point.basis, np.eye(2), atol=1e-12)


class TestProjectToGrassmann:
    def test_identity_fixed_rank(self):
        reduced = project_to_grassmann(np.eye(3), RankPolicy.fixed(2))
        assert np.allclose(reduced.sigma, [1.0, 1.0])
        assert projection_distance(reduced.U, span(e(0, 3), e(1, 3))) < 1e-12
        assert projection_distance(reduced.V, span(e(0, 3), e(1, 3))) < 1e-12

    def test_diagonal_singular_values(self):
        reduced = project_to_grassmann(np.diag([3.0, 2.0, 1.0]), RankPolicy.fixed(3))
        assert np.allclose(reduced.sigma, [3.0, 2.0, 1.0])

    def test_rank_two_reconstruction(self, rng):
        a, b, c, d = rng.standard_normal(6), rng.standard_normal(4), rng.standard_normal(6), rng.standard_normal(4)
        matrix = np.outer(a, b) + np.outer(c, d)
        reduced = project_to_grassmann(matrix, RankPolicy.tolerance(1e-8))
        assert reduced.rank == 2
        assert np.linalg.norm(reduced.reconstruct() - matrix) < 1e-10
        assert np.allclose(reduced.sigma, np.linalg.svd(matrix, compute_uv=False)[:2], atol=1e-12)

    def test_sign_convention(self, rng):
        reduced = project_to_grassmann(rng.standard_normal((7, 5)), RankPolicy.fixed(3))
        pivots = np.argmax(np.abs(reduced.U.basis), axis=0)
        assert np.all(reduced.U.basis[pivots, np.arange(3)] > 0.0)

    def test_sign_convention_is_stable_under_negation(self, rng):
        matrix = rng.standard_normal((5, 4))
        first = project_to_grassmann(matrix, RankPolicy.fixed(2))
        second = project_to_grassmann(-matrix, RankPolicy.fixed(2))
        assert np.allclose(first.U.basis, second.U.basis)
        assert np.allclose(first.V.basis, -second.V.basis)

    def test_zero_matrix(self):
        with pytest.raises(ZeroMatrix):
            project_to_grassmann(np.zeros((4, 3)))

    def test_fixed_rank_too_large(self):
        with pytest.raises(ShapeMismatch):
            project_to_grassmann(np.eye(3), RankPolicy.fixed(4))

    def test_at_rank_pads_singular_values(self):
        reduced = project_to_grassmann(np.diag([2.0, 1.0, 0.0]), RankPolicy.tolerance(1e-8))
        assert reduced.rank == 2
        extended = reduced.at_rank(3)
        assert extended.rank == 3
        assert extended.sigma[2] == 0.0
        assert np.allclose(extended.reconstruct(), reduced.reconstruct())


class TestLogExp:
    def setup_method(self):
        self.x0 = span(e(0, 4), e(1, 4))
        self.x1 = span(np.cos(0.3) * e(0, 4) + np.sin(0.3) * e(2, 4), e(1, 4))

    def test_log_of_self_is_zero(self):
        assert np.allclose(log_map(self.x0, self.x0).matrix, 0.0)

    def test_log_single_rotation(self):
        gamma = log_map(self.x0, self.x1)
        assert gamma.norm() == pytest.approx(0.3, abs=1e-12)
        assert gamma.matrix[2, 0] == pytest.approx(0.3, abs=1e-12)
        assert np.max(np.abs(self.x0.basis.T @ gamma.matrix)) < 1e-8

    def test_exp_of_zero(self):
        result = exp_map(self.x0, TangentVector.zeros(self.x0))
        assert np.allclose(result.basis, self.x0.basis)

    def test_quarter_turn(self):
        base = span(e(0, 2))
        result = exp_map(base, (np.pi / 2) * e(1, 2).reshape(2, 1))
        assert projection_distance(result, span(e(1, 2))) < 1e-8

    def test_round_trips(self, rng):
        for _ in range(20):
            base = random_point(rng, 7, 3)
            gamma = random_tangent(rng, base, rng.uniform(0.05, 0.7))
            target = exp_map(base, gamma)
            assert np.max(np.abs(target.basis.T @ target.basis - np.eye(3))) < 1e-9
            recovered = log_map(base, target)
            assert np.linalg.norm(recovered.matrix - gamma) < 1e-8
            assert projection_distance(exp_map(base, recovered), target) < 1e-8

    def test_orthogonal_subspaces_raise(self):
        with pytest.raises(SingularOverlap):
            log_map(span(e(0, 3)), span(e(1, 3)))

    def test_nearly_orthogonal_line_raises(self):
        with pytest.raises(SingularOverlap) as info:
            log_map(span(e(0, 3)), span(1e-15 * e(0, 3) + e(1, 3)))
        assert info.value.context["smallest_cosine"] < 1e-12

    def test_nearly_orthogonal_planes_raise(self):
        tilt = 1e-15
        target = span(tilt * e(0, 5) + e(2, 5), tilt * e(1, 5) + e(3, 5))
        with pytest.raises(SingularOverlap):
            log_map(span(e(0, 5), e(1, 5)), target)

    def test_wide_angle_still_maps(self):
        angle = 0.5 * np.pi - 1e-6
        target = span(np.cos(angle) * e(0, 3) + np.sin(angle) * e(1, 3))
        assert log_map(span(e(0, 3)), target).norm() == pytest.approx(angle, abs=1e-8)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            exp_map(self.x0, np.zeros((4, 1)))

    def test_log_requires_same_manifold(self):
        with pytest.raises(ShapeMismatch):
            log_map(self.x0, span(e(0, 4)))

    def test_tangent_vector_rejects_normal_component(self):
        with pytest.raises(ValueError):
            TangentVector(self.x0.basis, self.x0)


class TestGeodesic:
    def setup_method(self):
        self.x0 = span(e(0, 4), e(1, 4))
        self.x1 = span(np.cos(0.3) * e(0, 4) + np.sin(0.3) * e(2, 4), e(1, 4))

    def test_endpoints(self):
        assert projection_distance(geodesic(self.x0, self.x1, 0.0), self.x0) < 1e-10
        assert projection_distance(geodesic(self.x0, self.x1, 1.0), self.x1) < 1e-8

    def test_midpoint_angle(self):
        angles = principal_angles(self.x0, geodesic(self.x0, self.x1, 0.5)).angles
        assert angles[-1] == pytest.approx(0.15, abs=1e-8)

    def test_angle_linearity(self, rng):
        x0 = random_point(rng, 6, 2)
        x1 = exp_map(x0, random_tangent(rng, x0, 0.6))
        theta = principal_angles(x0, x1).angles
        for z in (0.25, 0.5, 0.8):
            assert np.allclose(principal_angles(x0, geodesic(x0, x1, z)).angles, z * theta, atol=1e-8)

    def test_parameter_range(self):
        with pytest.raises(ValueError):
            geodesic(self.x0, self.x1, 1.5)


class TestPrincipalAnglesAndDistances:
    def test_identical_subspaces(self, rng):
        x = random_point(rng, 5, 3)
        assert np.allclose(principal_angles(x, x).angles, 0.0, atol=1e-7)
        for metric in DistanceMetric:
            assert distance(x, x, metric) == pytest.approx(0.0, abs=1e-7)

    def test_orthogonal_lines(self):
        assert principal_angles(span(e(0, 3)), span(e(1, 3))).angles[0] == pytest.approx(np.pi / 2)
        assert distance(span(e(0, 3)), span(e(1, 3))) == pytest.approx(np.pi / 2)

    def test_constructed_angle(self):
        x2 = span(np.cos(0.7) * e(0, 3) + np.sin(0.7) * e(1, 3))
        assert principal_angles(span(e(0, 3)), x2).angles[0] == pytest.approx(0.7, abs=1e-12)

    def test_small_angle_accuracy(self):
        x2 = span(np.cos(1e-9) * e(0, 3) + np.sin(1e-9) * e(1, 3))
        assert principal_angles(span(e(0, 3)), x2).angles[0] == pytest.approx(1e-9, rel=1e-6)

    def test_unequal_dimensions(self):
        line, plane = span(e(0, 3)), span(e(0, 3), e(1, 3))
        assert len(principal_angles(line, plane)) == 1
        assert distance(line, plane, DistanceMetric.GRASSMANN) == pytest.approx(np.pi / 2)
        assert distance(line, plane, DistanceMetric.PROJECTION) == pytest.approx(1.0)
        assert distance(line, plane, DistanceMetric.PROCRUSTES) == pytest.approx(1.0)

    def test_unequal_dimensions_procrustes_with_angle(self):
        tilted = span(np.cos(0.6) * e(0, 4) + np.sin(0.6) * e(2, 4))
        plane = span(e(0, 4), e(1, 4))
        expected = np.sqrt(1.0 + np.sin(0.3) ** 2)
        assert distance(tilted, plane, DistanceMetric.PROCRUSTES) == pytest.approx(expected, abs=1e-12)
        assert distance(plane, tilted, DistanceMetric.PROCRUSTES) == pytest.approx(expected, abs=1e-12)

    def test_ambient_mismatch(self):
        with pytest.raises(AmbientMismatch):
            principal_angles(span(e(0, 3)), span(e(0, 4)))
        with pytest.raises(AmbientMismatch):
            projection_kernel(span(e(0, 3)), span(e(0, 4)))

    def test_projection_metric_axioms(self, rng):
        for _ in range(500):
            x, y, z = (random_point(rng, 5, 2) for _ in range(3))
            assert projection_distance(x, y) == pytest.approx(projection_distance(y, x), abs=1e-12)
            assert projection_distance(x, z) <= projection_distance(x, y) + projection_distance(y, z) + 1e-10

    def test_rotation_invariance(self, rng):
        x1, x2 = random_point(rng, 6, 3), random_point(rng, 6, 3)
        r1, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        r2, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        rotated1, rotated2 = GrassmannPoint(x1.basis @ r1), GrassmannPoint(x2.basis @ r2)
        for metric in DistanceMetric:
            assert distance(rotated1, rotated2, metric) == pytest.approx(distance(x1, x2, metric), abs=1e-9)

    def test_metric_accepts_string(self):
        assert distance(span(e(0, 3)), span(e(1, 3)), "projection") == pytest.approx(1.0)


class TestProjectionKernel:
    def test_self_similarity(self, rng):
        x = random_point(rng, 6, 3)
        assert projection_kernel(x, x) == pytest.approx(3.0)

    def test_orthogonal_lines(self):
        assert projection_kernel(span(e(0, 3)), span(e(1, 3))) == pytest.approx(0.0)

    def test_rotated_line(self):
        x1 = span(e(0, 3))
        x2 = span(np.cos(0.7) * e(0, 3) + np.sin(0.7) * e(1, 3))
        assert projection_kernel(x1, x2) == pytest.approx(0.5849835, abs=1e-7)
        sine = np.sin(principal_angles(x1, x2).angles[0])
        assert projection_kernel(x1, x2) == pytest.approx(1.0 - sine ** 2, abs=1e-12)

    def test_gram_is_positive_semidefinite(self, rng):
        points = [random_point(rng, 6, 2) for _ in range(20)]
        gram = np.array([[projection_kernel(a, b) for b in points] for a in points])
        assert np.allclose(gram, gram.T)
        assert np.linalg.eigvalsh(gram).min() > -1e-9
