import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from grassrisk.errors import AngleTooLarge, DomainError, NotMinimizer
from grassrisk.grassmann import GrassmannPoint, TangentLift, exp_map, random_point, random_tangent
from grassrisk.models import make_rng
from grassrisk.rayleigh import (
    BlockRayleigh,
    concordance_profile,
    geodesic_profile,
    gradient,
    hessian_apply,
    hessian_lipschitz_gap,
    hessian_matrix,
    psi,
    self_concordance_margin,
    taylor_sandwich,
    third_derivative,
    value,
)

from oracles import geodesic_scalar_mp, mp_derivatives, psi_mp

dims = st.integers(2, 8).flatmap(lambda d: st.tuples(st.just(d), st.integers(1, min(3, d - 1))))
seeds = st.integers(0, 2**32 - 1)


def random_objective(rng, d, k):
    A = rng.standard_normal((d, d))
    return BlockRayleigh(A + A.T, k)


def near_minimizer(seed, d, k, theta):
    rng = make_rng(seed)
    B = random_objective(rng, d, k)
    while B.gap < 1e-3:
        B = random_objective(rng, d, k)
    Vs = B.minimizer()
    xi = random_tangent(Vs, rng)
    xi = xi * (theta / np.linalg.svd(xi.delta, compute_uv=False)[0])
    return B, Vs, exp_map(Vs, xi)


def planar(theta):
    B = BlockRayleigh(np.diag([2.0, 1.0]), 1)
    Vs = GrassmannPoint(np.array([[1.0], [0.0]]))
    V = GrassmannPoint(np.array([[math.cos(theta)], [math.sin(theta)]]))
    return B, Vs, V


class TestValueAndGradient:
    def test_identity_matrix(self, rng):
        V = random_point(5, 2, rng)
        assert abs(value(BlockRayleigh(np.eye(5), 2), V) + 1.0) <= 1e-15

    def test_top_eigenvectors(self):
        B = BlockRayleigh(np.diag([3.0, 2.0, 1.0]), 2)
        assert value(B, B.minimizer()) == -2.5

    def test_basis_invariance(self, rng):
        B = random_objective(rng, 6, 3)
        V = random_point(6, 3, rng)
        R = np.linalg.qr(rng.standard_normal((3, 3)))[0]
        assert abs(value(B, V) - value(B, GrassmannPoint(V.basis @ R))) <= 1e-12

    def test_critical_points(self):
        B = BlockRayleigh(np.diag([2.0, 1.0]), 1)
        assert np.allclose(gradient(B, B.minimizer()).delta, 0.0)
        assert np.allclose(gradient(B, GrassmannPoint(np.array([[0.0], [1.0]]))).delta, 0.0)

    def test_asymmetric_rejected(self):
        with pytest.raises(Exception):
            BlockRayleigh(np.array([[1.0, 2.0], [0.0, 1.0]]), 1)

    def test_spectrum_reconstructs(self, rng):
        B = random_objective(rng, 7, 2)
        R = (B.eigenvectors * B.eigenvalues) @ B.eigenvectors.T
        assert np.linalg.norm(R - B.matrix) <= 1e-10 * np.linalg.norm(B.matrix)


class TestDerivatives:
    @given(dims, seeds)
    def test_against_high_precision_differences(self, dk, seed):
        rng = make_rng(seed)
        B = random_objective(rng, *dk)
        V = random_point(*dk, rng)
        xi = random_tangent(V, rng)
        g1, g2, g3 = mp_derivatives(geodesic_scalar_mp(B.matrix, V.basis, xi.delta))
        ours = (gradient(B, V).inner(xi), hessian_apply(B, V, xi).inner(xi), third_derivative(B, V, xi, xi, xi))
        scale = np.linalg.norm(B.matrix) * np.array([xi.norm(), xi.norm() ** 2, xi.norm() ** 3])
        for ref, got, s in zip((g1, g2, g3), ours, scale):
            assert abs(got - ref) <= 1e-10 * s

    def test_hessian_vanishes_for_identity(self, rng):
        V = random_point(5, 2, rng)
        xi = random_tangent(V, rng)
        assert np.allclose(hessian_apply(BlockRayleigh(np.eye(5), 2), V, xi).delta, 0.0, atol=1e-14)

    def test_third_derivative_trivial_cases(self, rng):
        V = random_point(5, 2, rng)
        a, b = random_tangent(V, rng), random_tangent(V, rng)
        zero = TangentLift(V, np.zeros((5, 2)))
        assert third_derivative(random_objective(rng, 5, 2), V, a, b, zero) == 0.0
        assert abs(third_derivative(BlockRayleigh(np.eye(5), 2), V, a, b, a)) <= 1e-13

    @given(dims, seeds)
    def test_third_derivative_symmetric_in_first_pair(self, dk, seed):
        # curvature breaks full symmetry; the first two slots commute exactly
        rng = make_rng(seed)
        B = random_objective(rng, *dk)
        V = random_point(*dk, rng)
        x = [random_tangent(V, rng) for _ in range(3)]
        ref = third_derivative(B, V, *x)
        assert abs(third_derivative(B, V, x[1], x[0], x[2]) - ref) <= 1e-12 * max(1, abs(ref))

    @given(dims, seeds)
    def test_bounds_and_symmetry(self, dk, seed):
        rng = make_rng(seed)
        B = random_objective(rng, *dk)
        V = random_point(*dk, rng)
        a, b, c = (random_tangent(V, rng) for _ in range(3))
        nA = np.linalg.norm(B.matrix)
        assert abs(hessian_apply(B, V, a).inner(b) - a.inner(hessian_apply(B, V, b))) <= 1e-10 * nA * a.norm() * b.norm()
        assert abs(third_derivative(B, V, a, b, c)) <= 4 * nA * a.norm() * b.norm() * c.norm()
        change, bound = hessian_lipschitz_gap(B, V, a)
        assert change <= bound

    def test_hessian_matrix_symmetric(self, rng):
        B = random_objective(rng, 6, 2)
        H = hessian_matrix(B, random_point(6, 2, rng))
        assert np.allclose(H, H.T, atol=1e-12)


class TestGeodesicProfile:
    def test_planar_values(self):
        B, Vs, V = planar(0.3)
        t = np.linspace(0, 1, 7)
        prof = geodesic_profile(B, Vs, V, t)
        assert np.allclose(prof.g, -(2 * np.cos(0.3 * t) ** 2 + np.sin(0.3 * t) ** 2) / 2, atol=1e-15)

    def test_same_point(self, rng):
        B = random_objective(rng, 4, 2)
        V = random_point(4, 2, rng)
        prof = geodesic_profile(B, V, V, np.linspace(0, 1, 5))
        assert np.allclose(prof.g, prof.g[0])
        assert np.allclose(prof.g2, 0) and np.allclose(prof.g3, 0)

    @given(dims, seeds, st.floats(0.05, 1.4))
    def test_two_paths_and_high_precision(self, dk, seed, theta):
        rng = make_rng(seed)
        B = random_objective(rng, *dk)
        U = random_point(*dk, rng)
        xi = random_tangent(U, rng)
        xi = xi * (theta / np.linalg.svd(xi.delta, compute_uv=False)[0])
        V = exp_map(U, xi)
        t = np.array([0.0, 0.35, 0.8])
        prof = geodesic_profile(B, U, V, t)
        assert prof.agreement() <= 1e-8
        g = geodesic_scalar_mp(B.matrix, U.basis, xi.delta)
        s = np.linalg.norm(B.matrix) * max(1.0, xi.norm()) ** 3
        for i, ti in enumerate(t):
            d1, d2, d3 = mp_derivatives(g, ti)
            assert abs(prof.g1[i] - d1) <= 1e-9 * s
            assert abs(prof.g2[i] - d2) <= 1e-9 * s
            assert abs(prof.g3[i] - d3) <= 1e-9 * s


class TestPsi:
    def test_small_angle_limit(self):
        assert abs(psi(1e-6) - 1.0) <= 1e-5

    def test_boundary_limit(self):
        assert abs(psi(math.pi / 4 - 1e-9) - 1.485) <= 1e-3

    def test_increasing(self):
        vals = [psi(t) for t in np.linspace(1e-4, math.pi / 4 - 1e-4, 100)]
        assert np.all(np.diff(vals) > 0)

    @pytest.mark.parametrize("theta", [1e-3, 0.1, 0.4, 0.7, 0.78, math.pi / 4 - 1e-6])
    def test_against_mpmath(self, theta):
        assert abs(psi(theta) - psi_mp(theta)) <= 1e-10

    @pytest.mark.parametrize("theta", [0.0, -0.1, math.pi / 4, 1.0])
    def test_domain(self, theta):
        with pytest.raises(DomainError):
            psi(theta)


class TestConcordance:
    def test_coincident_points(self):
        B, Vs, _ = planar(0.1)
        assert np.array_equal(self_concordance_margin(B, Vs), np.zeros(50))

    def test_planar_margin(self):
        B, Vs, V = planar(0.7)
        assert np.min(self_concordance_margin(B, V)) >= -1e-12
        assert np.min(self_concordance_margin(B, V, orientation="reverse")) >= -1e-12

    def test_planar_sandwich(self):
        B, Vs, V = planar(0.5)
        s = taylor_sandwich(B, V)
        assert abs(s.actual - 0.5 * math.sin(0.5) ** 2) <= 1e-15
        assert s.slack >= 0 and s.sharp_slack >= -1e-15

    def test_wrong_minimizer(self):
        B, Vs, V = planar(0.3)
        with pytest.raises(NotMinimizer):
            concordance_profile(B, V, V_star=GrassmannPoint(np.array([[0.0], [1.0]])))

    def test_angle_too_large(self):
        B, Vs, V = planar(0.9)
        with pytest.raises(AngleTooLarge):
            taylor_sandwich(B, V)

    def test_small_angle_ratio(self):
        B, Vs, V = near_minimizer(5, 6, 2, 1e-4)
        s = taylor_sandwich(B, V)
        assert abs(s.actual / s.quad_term - 1) <= 1e-3

    @given(dims, seeds, st.floats(1e-3, math.pi / 4 - 1e-3))
    def test_margins_from_minimizer(self, dk, seed, theta):
        B, Vs, V = near_minimizer(seed, *dk, theta)
        for orient in ("forward", "reverse"):
            prof = concordance_profile(B, V, orientation=orient)
            assert np.min(prof.margin) >= -1e-9
            assert np.min(prof.g2) > 0

    @given(dims, seeds, st.floats(1e-3, math.pi / 4 - 1e-3))
    def test_sandwich_forward(self, dk, seed, theta):
        B, Vs, V = near_minimizer(seed, *dk, theta)
        s = taylor_sandwich(B, V)
        assert s.slack >= -1e-10
        assert s.sharp_slack >= -1e-10

    def test_closed_form_matches_transport_path(self):
        B, Vs, V = near_minimizer(11, 7, 3, 0.6)
        t = np.linspace(0, 1 - 1e-6, 50)
        prof = concordance_profile(B, V, t)
        ref = geodesic_profile(B, Vs, V, t)
        assert np.allclose(prof.g2, ref.g2, atol=1e-12 * np.max(np.abs(ref.g2)))
        assert np.allclose(prof.g3, ref.g3, atol=1e-12 * np.max(np.abs(ref.g2)))
