from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coneladder.errors import MassNotOne, NoBoundary, WindowTooSmallForHorizon
from coneladder.lattice import ConeRegion, StateWindow, build_killed_kernel, make_step_distribution
from coneladder.tilting import (
    boundary_point,
    canonical_truncation,
    grad_check,
    green_decay_rate,
    jump_mgf,
    jump_mgf_grad,
    slow_variation_check,
    support_function,
    truncate_and_tilt,
)

HALF = ConeRegion.from_normals([[1]])
MU_SYM = make_step_distribution([([1], "1/2"), ([-1], "1/2")])
MU_UP = make_step_distribution([([1], "2/3"), ([-1], "1/3")])
MU_NEG = make_step_distribution(
    [([1, 0], "3/20"), ([-1, 0], "7/20"), ([0, 1], "3/20"), ([0, -1], "7/20")]
)


def kernel_1d(mu, bound):
    win = StateWindow.build(HALF, bound)
    return build_killed_kernel(mu, HALF, win)


class TestGeneratingFunction:
    def test_centered_minimum_at_origin(self):
        assert jump_mgf(MU_SYM, [0.0]) == 1.0
        for a in (-1.0, -0.2, 0.3, 2.0):
            assert jump_mgf(MU_SYM, [a]) > 1.0

    def test_total_mass_at_zero(self):
        mu = make_step_distribution([([1], "1/4"), ([-1], "1/4")])
        assert jump_mgf(mu, [0.0]) == pytest.approx(0.5)

    def test_known_unit_level(self):
        assert jump_mgf(MU_UP, [-np.log(2.0)]) == pytest.approx(1.0, rel=1e-14)

    @given(
        st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2)
    )
    @settings(max_examples=60, deadline=None)
    def test_midpoint_convexity(self, a1, a2, b1, b2):
        a, b = np.array([a1, a2]), np.array([b1, b2])
        mid = jump_mgf(MU_NEG, (a + b) / 2.0)
        assert mid <= 0.5 * (jump_mgf(MU_NEG, a) + jump_mgf(MU_NEG, b)) + 1e-12

    def test_gradient_vs_finite_differences(self):
        for alpha in ([0.0, 0.0], [0.3, -0.4], [-0.7, 0.2]):
            assert grad_check(MU_NEG, alpha) < 1e-8


class TestBoundaryPoint:
    def test_centered_has_no_boundary(self):
        with pytest.raises(NoBoundary):
            boundary_point(MU_SYM, [1.0])

    def test_drift_up_backward_direction(self):
        alpha = boundary_point(MU_UP, [-1.0])
        assert alpha[0] == pytest.approx(-np.log(2.0), abs=1e-10)

    def test_drift_up_forward_direction(self):
        alpha = boundary_point(MU_UP, [1.0])
        assert alpha[0] == pytest.approx(0.0, abs=1e-10)

    def test_gradient_alignment_2d(self):
        for u in ([1.0, 0.0], [0.0, -1.0], [1.0, 1.0], [-2.0, 1.0]):
            alpha = boundary_point(MU_NEG, u)
            assert jump_mgf(MU_NEG, alpha) == pytest.approx(1.0, abs=1e-10)
            g = jump_mgf_grad(MU_NEG, alpha)
            cosine = g @ np.asarray(u) / (np.linalg.norm(g) * np.linalg.norm(u))
            assert cosine == pytest.approx(1.0, abs=1e-8)

    def test_axis_direction_matches_1d_reduction(self):
        # separable law: the first coordinate solves its own scalar problem
        alpha = boundary_point(MU_NEG, [1.0, 0.0])
        t = np.exp(alpha[0])
        # 3/20 t + 7/20 / t + min over the second coordinate (= 2 sqrt(21)/20)
        assert 0.15 * t + 0.35 / t + 2 * np.sqrt(0.15 * 0.35) == pytest.approx(1.0, abs=1e-9)


class TestSupportFunction:
    def test_centered_zero(self):
        assert support_function(MU_SYM, [1.0]) == 0.0
        assert support_function(MU_SYM, [-1.0]) == 0.0

    def test_drift_up_interval(self):
        assert support_function(MU_UP, [1.0]) == pytest.approx(0.0, abs=1e-10)
        assert support_function(MU_UP, [-1.0]) == pytest.approx(np.log(2.0), abs=1e-10)

    @given(st.floats(-0.9, 0.3), st.floats(-0.9, 0.3))
    @settings(max_examples=40, deadline=None)
    def test_upper_bound_over_sampled_sublevel_points(self, a1, a2):
        alpha = np.array([a1, a2])
        if jump_mgf(MU_NEG, alpha) <= 1.0:
            for u in ([1.0, 0.0], [1.0, 1.0], [-1.0, 2.0]):
                assert alpha @ np.asarray(u) <= support_function(MU_NEG, u) + 1e-8


class TestTruncateAndTilt:
    def test_scaled_truncation_monotone(self):
        m2 = canonical_truncation(MU_SYM, 2)
        m5 = canonical_truncation(MU_SYM, 5)
        assert m2.total_mass == Fraction(1, 2)
        for v in m2.entries:
            assert m2.entries[v] <= m5.entries[v] <= MU_SYM.entries[v]

    def test_tilt_on_boundary_is_stochastic(self):
        muk = canonical_truncation(MU_SYM, 4)
        alpha = boundary_point(muk, [1.0])
        tilted = truncate_and_tilt(MU_SYM, 4, alpha)
        assert abs(float(tilted.total_mass) - 1.0) < 1e-10

    def test_wrong_alpha_rejected(self):
        with pytest.raises(MassNotOne):
            truncate_and_tilt(MU_SYM, 4, [0.0])

    def test_boundary_tilt_shrinks_to_zero_for_centered_law(self):
        previous = np.inf
        for k in (2, 4, 16, 64, 256):
            alpha = boundary_point(canonical_truncation(MU_SYM, k), [1.0])
            assert 0 < alpha[0] < previous
            previous = alpha[0]
        assert previous < 0.1

    def test_full_mass_boundary_tilt_is_identity_mass(self):
        alpha = boundary_point(MU_UP, [-1.0])
        tilted_entries = {
            v: float(p) * float(np.exp(np.dot(v, alpha))) for v, p in MU_UP.entries.items()
        }
        assert sum(tilted_entries.values()) == pytest.approx(1.0, abs=1e-12)


class TestGreenDecay:
    def test_same_point_rate_vanishes(self):
        # G(n, n) grows linearly on the half-line, so the finite-n rate is
        # log(2n)/n: positive, decreasing, with limit (and prediction) zero
        ker = kernel_1d(MU_SYM, 64)
        rep = green_decay_rate(ker, [1], [1], [4, 8, 16, 32])
        assert rep.predicted == 0.0
        assert (rep.measured > 0).all() and (np.diff(rep.measured) < 0).all()
        assert abs(rep.extrapolated) < 0.1

    def test_drift_up_backward_rate(self):
        ker = kernel_1d(MU_UP, 128)
        rep = green_decay_rate(ker, [1], [0], [15, 30, 60])
        assert rep.predicted == pytest.approx(-np.log(2.0), abs=1e-10)
        assert rep.final == pytest.approx(-np.log(2.0), rel=0.02)

    def test_centered_rate_towards_zero(self):
        ker = kernel_1d(MU_SYM, 128)
        rep = green_decay_rate(ker, [0], [1], [10, 20, 40])
        assert rep.predicted == 0.0
        assert abs(rep.final) < 0.15

    def test_window_guard(self):
        ker = kernel_1d(MU_SYM, 16)
        with pytest.raises(WindowTooSmallForHorizon):
            green_decay_rate(ker, [0], [1], [40])


class TestSlowVariation:
    def test_centered_passes(self):
        ker = kernel_1d(MU_SYM, 256)
        rep = slow_variation_check(ker, [1], [5, 10, 20, 40], base_points=[[0], [2]])
        assert rep.passes(rate_ceiling=0.15)

    def test_single_step_entries_equal_log_q(self):
        from coneladder.potential import hitting_probability

        ker = kernel_1d(MU_SYM, 64)
        rep = slow_variation_check(ker, [1], [1, 2], base_points=[[0]])
        q01 = hitting_probability(ker, [0], [1])
        assert rep.forward.measured[0] == pytest.approx(np.log(q01), abs=1e-12)

    def test_drifted_backward_rate_fails(self):
        ker = kernel_1d(MU_UP, 256)
        rep = slow_variation_check(ker, [1], [5, 10, 20, 40], base_points=[[0]])
        assert not rep.passes(rate_ceiling=0.15)
        assert rep.backward.final == pytest.approx(-np.log(2.0), rel=0.01)
        assert abs(rep.forward.final) < 0.05
