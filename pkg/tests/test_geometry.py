"""Fermat/Snell geometry, modified paths and the region estimate."""

import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from enclab.core.exceptions import DomainError
from enclab.optics.geometry import (
    amplitude_e0, critical_radius, hessian_fd, in_cone, linear_growth_constant,
    modified_path, modified_path_decomposition, modified_paths, optical_distance_sets,
    path_time, reflection_point, region_estimate, snell_point, snell_points, travel_bound,
)
from enclab.optics.shapes import Ball, Ellipsoid, UnionOfBalls


class TestPathTime:

    def test_vertical_path(self, medium):
        assert path_time([0, 0, -1], [0, 0, 1], [0, 0], medium) == pytest.approx(1.5)

    def test_straight_line_in_homogeneous_medium(self, homogeneous):
        # segment from (0,0,-3) to (4,0,4) crosses x3 = 0 at x1 = 12/7
        value = path_time([0, 0, -3], [4, 0, 4], [12.0 / 7.0, 0], homogeneous)
        assert value == pytest.approx(math.sqrt(65.0), rel=1e-14)

    def test_oblique_substitution(self, medium):
        value = path_time([0, 0, -1], [2, 0, 1], [1, 0], medium)
        assert value == pytest.approx(math.sqrt(2.0) + math.sqrt(2.0) / 2.0, rel=1e-14)

    @pytest.mark.parametrize("x,y", [
        ([0, 0, 0.0], [0, 0, 1]),
        ([0, 0, 1.0], [0, 0, 1]),
        ([0, 0, -1.0], [0, 0, 0]),
    ])
    def test_domain(self, medium, x, y):
        with pytest.raises(DomainError):
            path_time(x, y, [0, 0], medium)


class TestSnellPoint:

    def test_axial_symmetry(self, medium):
        sol = snell_point([0, 0, -2.5], [0, 0, 0.7], medium)
        np.testing.assert_array_equal(sol.z_prime, [0.0, 0.0])
        assert sol.theta_minus == 0.0
        assert sol.theta_plus == 0.0

    def test_homogeneous_reduces_to_segment(self, homogeneous):
        x, y = np.array([0.0, 0.0, -3.0]), np.array([4.0, 0.0, 4.0])
        sol = snell_point(x, y, homogeneous)
        np.testing.assert_allclose(sol.z_prime, [12.0 / 7.0, 0.0], atol=1e-10)
        assert sol.l_value == pytest.approx(math.sqrt(65.0), rel=1e-12)

    def test_matches_bounded_scalar_minimization(self, medium):
        x, y = np.array([0.0, 0.0, -1.0]), np.array([3.0, 0.0, 2.0])
        sol = snell_point(x, y, medium)
        ref = minimize_scalar(
            lambda s: path_time(x, y, [s, 0.0], medium),
            bounds=(0.0, 3.0), method="bounded", options={"xatol": 1e-12},
        )
        assert sol.z_prime[0] == pytest.approx(ref.x, abs=1e-6)
        assert sol.l_value <= ref.fun + 1e-14
        assert sol.l_value == pytest.approx(ref.fun, rel=1e-12)

    def test_invariants_on_random_pairs(self, medium):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = np.array([*rng.uniform(-3, 3, 2), -rng.uniform(0.2, 3)])
            y = np.array([*rng.uniform(-3, 3, 2), rng.uniform(0.2, 3)])
            sol = snell_point(x, y, medium)
            assert sol.snell_residual < 1e-10
            assert math.sin(sol.theta_minus) < medium.a0
            assert sol.det_h > 0
            assert sol.lambda_min > 0
            # collinear with x'y' and between the end points
            d = y[:2] - x[:2]
            offset = sol.z_prime - x[:2]
            cross = d[0] * offset[1] - d[1] * offset[0]
            assert abs(cross) < 1e-10 * np.linalg.norm(d) ** 2 + 1e-14
            assert np.linalg.norm(offset) <= np.linalg.norm(d) * (1 + 1e-12)
            # local optimality
            for dz in rng.normal(scale=1e-3, size=(4, 2)):
                assert path_time(x, y, sol.z_prime + dz, medium) >= sol.l_value

    def test_closed_form_hessian_against_finite_differences(self, medium):
        x, y = np.array([0.3, -0.2, -1.2]), np.array([1.5, 0.7, 1.4])
        sol = snell_point(x, y, medium)
        np.testing.assert_allclose(sol.hessian, hessian_fd(x, y, medium), rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(sol.hessian, sol.hessian.T)

    def test_vectorized_solver_agrees(self, medium):
        rng = np.random.default_rng(11)
        xs = np.column_stack([rng.uniform(-2, 2, 20), rng.uniform(-2, 2, 20), -rng.uniform(0.3, 2, 20)])
        ys = np.column_stack([rng.uniform(-2, 2, 20), rng.uniform(-2, 2, 20), rng.uniform(0.3, 2, 20)])
        zs, ls = snell_points(xs, ys, medium)
        for x, y, z, l in zip(xs, ys, zs, ls):
            sol = snell_point(x, y, medium)
            np.testing.assert_allclose(z, sol.z_prime, atol=1e-10)
            assert l == pytest.approx(sol.l_value, rel=1e-12)

    def test_rigid_motion_invariance(self, medium):
        x, y = np.array([0.4, 0.1, -1.3]), np.array([-1.1, 0.8, 2.2])
        base = snell_point(x, y, medium).l_value
        angle = 0.73
        rot = np.array([[math.cos(angle), -math.sin(angle), 0], [math.sin(angle), math.cos(angle), 0], [0, 0, 1]])
        shift = np.array([2.5, -1.0, 0.0])
        moved = snell_point(rot @ x + shift, rot @ y + shift, medium).l_value
        assert abs(moved - base) < 1e-12


class TestOpticalDistance:

    def test_coaxial_balls(self, medium):
        D = Ball([0, 0, -2], 0.5)
        B = Ball([0, 0, 3], 1.0)
        result = optical_distance_sets(D, B, medium, rng=np.random.default_rng(0))
        assert result.l_value == pytest.approx(2.5, rel=1e-7)
        np.testing.assert_allclose(result.x_star, [0, 0, -1.5], atol=1e-4)
        np.testing.assert_allclose(result.y_star, [0, 0, 2.0], atol=1e-4)

    def test_homogeneous_is_euclidean_distance(self, homogeneous):
        D = Ball([1.0, 0, -2], 0.5)
        B = Ball([-1.0, 0.5, 2], 0.75)
        result = optical_distance_sets(D, B, homogeneous, rng=np.random.default_rng(0))
        expected = np.linalg.norm(D.center - B.center) - 0.5 - 0.75
        assert result.l_value == pytest.approx(expected, rel=1e-7)

    def test_ellipsoid_against_brute_force(self, medium):
        D = Ellipsoid([0.8, -0.3, -2.0], [0.6, 0.4, 0.3])
        B = Ball([-0.5, 0.4, 2.5], 0.8)
        result = optical_distance_sets(D, B, medium, rng=np.random.default_rng(3))
        rng = np.random.default_rng(5)
        xs = D.sample_boundary(400, rng)
        ys = B.sample_boundary(400, rng)
        _, ls = snell_points(np.repeat(xs, len(ys), axis=0), np.tile(ys, (len(xs), 1)), medium)
        assert result.l_value <= ls.min() + 1e-9
        assert result.l_value == pytest.approx(ls.min(), rel=2e-2)

    def test_union_of_balls_picks_nearest_component(self, medium):
        D = UnionOfBalls([[0, 0, -4.0], [0, 0, -2.0]], [0.5, 0.5])
        B = Ball([0, 0, 3], 1.0)
        result = optical_distance_sets(D, B, medium, multistarts=8, rng=np.random.default_rng(0))
        assert result.l_value == pytest.approx(2.5, rel=1e-7)

    def test_rejects_shapes_across_interface(self, medium):
        with pytest.raises(DomainError):
            optical_distance_sets(Ball([0, 0, -0.2], 0.5), Ball([0, 0, 3], 1.0), medium)


class TestModifiedPath:

    def test_equals_l_at_refraction_point(self, medium):
        x, y = np.array([0.2, 0.0, -1.0]), np.array([1.0, 0.5, 1.5])
        sol = snell_point(x, y, medium)
        assert modified_path(x, y, sol.z_prime, medium) == pytest.approx(sol.l_value, rel=1e-14)

    def test_total_reflection_branch(self, medium):
        value = modified_path([0, 0, -1], [5, 0, 1], [5, 0], medium)
        assert value == pytest.approx(math.sqrt(3.0) / 2.0 + 3.0, rel=1e-14)
        z0, decomposed = modified_path_decomposition([0, 0, -1], [5, 0, 1], [5, 0], medium)
        assert decomposed == pytest.approx(value, rel=1e-12)
        assert np.linalg.norm(z0) == pytest.approx(critical_radius([0, 0, -1], 1.0, medium))

    def test_no_decomposition_inside_cone(self, medium):
        z0, _ = modified_path_decomposition([0, 0, -1], [0.1, 0, 1], [0.1, 0], medium)
        assert z0 is None

    def test_never_below_optical_distance(self, medium):
        rng = np.random.default_rng(2)
        n = 5000
        xs = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(-2, 2, n), -rng.uniform(0.2, 2, n)])
        ys = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(-2, 2, n), rng.uniform(0.2, 2, n)])
        zs = rng.uniform(-6, 6, (n, 2))
        _, ls = snell_points(xs, ys, medium)
        assert np.all(modified_paths(xs, ys, zs, medium) - ls >= -1e-12)

    def test_reflection_point_on_critical_circle(self, medium):
        x = np.array([0.5, -0.5, -2.0])
        z0 = reflection_point(x, [4.0, 3.0], medium)
        assert np.linalg.norm(z0 - x[:2]) == pytest.approx(critical_radius(x, 1.0, medium), rel=1e-12)
        with pytest.raises(DomainError):
            reflection_point(x, x[:2] + 0.1, medium)


class TestTravelBoundAndCone:

    def test_travel_bound_values(self, medium):
        assert travel_bound([0, 0, -1.3], [0.7, 0], 0.0, medium) == pytest.approx(1.3)
        assert travel_bound([0, 0, -1], [1, 0], math.pi / 6, medium) == pytest.approx(
            math.sqrt(3.0) / 2.0 + 0.5, rel=1e-14
        )

    def test_travel_bound_at_incidence_angle(self, medium):
        x, z = np.array([0.0, 0.0, -1.0]), np.array([2.0, 0.0])
        theta = math.atan2(2.0, 1.0)
        assert travel_bound(x, z, theta, medium) == pytest.approx(math.sqrt(5.0), rel=1e-14)

    def test_cone_membership(self, medium):
        x = np.array([0.0, 0.0, -1.0])
        assert in_cone(x, [0.0, 0.0], 0.3, medium)
        assert not in_cone(x, [1.0 / math.sqrt(3.0) + 1e-9, 0.0], 1.0, medium)
        assert in_cone(x, [1.0 / math.sqrt(3.0) - 1e-6, 0.0], 1.0, medium)

    def test_cone_forms_agree_on_random_points(self, medium):
        rng = np.random.default_rng(4)
        x = np.array([0.3, 0.2, -1.4])
        for z in rng.uniform(-3, 3, (200, 2)):
            for delta in (0.5, 1.0, 1.5):
                in_cone(x, z, delta, medium)

    def test_cone_delta_range(self, medium):
        with pytest.raises(DomainError):
            in_cone([0, 0, -1], [0, 0], 2.5, medium)


class TestAmplitude:

    def test_normal_incidence(self, medium):
        assert amplitude_e0([0, 0, -1], [0, 0], medium) == pytest.approx(8.0 / 3.0, rel=1e-14)

    def test_vanishes_at_critical_cone(self, medium):
        x = np.array([0.0, 0.0, -1.0])
        rc = critical_radius(x, 1.0, medium)
        values = [amplitude_e0(x, [rc * (1 - eps), 0.0], medium) for eps in (1e-2, 1e-4, 1e-6)]
        assert values[0] > values[1] > values[2] > 0
        assert values[2] < 2e-2
        with pytest.raises(DomainError):
            amplitude_e0(x, [rc * 1.01, 0.0], medium)


class TestRegionEstimate:

    def test_inclusion_is_contained(self, medium):
        D = Ball([0, 0, -2], 0.5)
        B = Ball([0, 0, 3], 1.0)
        pts = D.sample_interior(500, np.random.default_rng(1))
        assert np.all(region_estimate(2.5, B, medium, pts))

    def test_attaining_point_is_not_a_member(self, medium):
        B = Ball([0, 0, 3], 1.0)
        assert not region_estimate(2.5, B, medium, np.array([[0.0, 0.0, -1.5]]))[0]

    def test_deep_points_are_members(self, medium):
        B = Ball([0, 0, 3], 1.0)
        assert region_estimate(2.5, B, medium, np.array([[10.0, -4.0, -20.0]]))[0]

    def test_positive_threshold_required(self, medium):
        with pytest.raises(DomainError):
            region_estimate(0.0, Ball([0, 0, 3], 1.0), medium, np.zeros((1, 3)) - 1)


def test_linear_growth_constant(medium):
    D = Ball([0, 0, -2], 0.5)
    B = Ball([0, 0, 3], 1.0)
    c0, delta0 = linear_growth_constant(D, B, medium, 1.0, samples=500, rng=np.random.default_rng(0))
    assert c0 > 0
    assert 0 <= delta0 < 1
