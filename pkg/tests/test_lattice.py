from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coneladder.errors import DimensionMismatch, MassExceedsOne, NegativeProbability, OutOfWindow
from coneladder.lattice import (
    ConeRegion,
    StateWindow,
    build_killed_kernel,
    cone_contains,
    make_step_distribution,
    verify_translation_property,
)


def sym1d():
    return make_step_distribution([([1], "1/2"), ([-1], "1/2")])


HALF_LINE = ConeRegion.from_normals([[1]])
QUADRANT = ConeRegion.from_normals([[1, 0], [0, 1]])
WEDGE = ConeRegion.from_normals([[0, 1], [1, -1]])


class TestStepDistribution:
    def test_symmetric_1d(self):
        mu = sym1d()
        assert mu.total_mass == 1
        assert mu.is_centered()

    def test_mass_exceeds_one(self):
        with pytest.raises(MassExceedsOne):
            make_step_distribution([([1], "1/2"), ([-1], "3/5")])

    def test_centered_2d(self):
        mu = make_step_distribution(
            [([1, 0], "1/4"), ([-1, 0], "1/4"), ([0, 1], "1/4"), ([0, -1], "1/4")]
        )
        assert mu.total_mass == 1 and mu.is_centered()

    def test_negative_probability(self):
        with pytest.raises(NegativeProbability):
            make_step_distribution([([1], "-1/2")])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            make_step_distribution([([1], "1/4"), ([1, 0], "1/4")])

    def test_rational_strings_kept_exact(self):
        mu = make_step_distribution([([1], "1/3"), ([-1], "2/3")])
        assert mu.entries[(1,)] == Fraction(1, 3)
        assert mu.mass_defect == 0

    def test_substochastic_defect(self):
        mu = make_step_distribution([([1], "1/4"), ([-1], "1/4")])
        assert mu.mass_defect == Fraction(1, 2)


class TestCone:
    def test_vertex(self):
        assert cone_contains(QUADRANT, (0, 0))

    def test_violated_constraint(self):
        assert not cone_contains(QUADRANT, (3, -1))

    def test_half_line(self):
        assert cone_contains(HALF_LINE, (5,))
        assert not cone_contains(HALF_LINE, (-1,))

    def test_wedge(self):
        assert cone_contains(WEDGE, (4, 2))
        assert not cone_contains(WEDGE, (2, 4))

    @given(
        st.integers(-20, 20), st.integers(-20, 20), st.integers(-20, 20), st.integers(-20, 20)
    )
    def test_additive_closure(self, a, b, c, d):
        x, u = np.array([a, b]), np.array([c, d])
        for cone in (QUADRANT, WEDGE):
            if cone.contains(x) and cone.contains(u):
                assert cone.contains(x + u)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cone_contains(QUADRANT, (1,))


class TestWindow:
    def test_enumeration_and_origin(self):
        win = StateWindow.build(QUADRANT, 3)
        assert win.size == 16
        assert (win.states[win.origin] == 0).all()

    def test_wedge_membership(self):
        win = StateWindow.build(WEDGE, 5)
        assert all(a >= b >= 0 for a, b in win.states)

    def test_position_of_out_of_box(self):
        win = StateWindow.build(HALF_LINE, 4)
        assert win.position_of(np.array([7])) == -1
        with pytest.raises(OutOfWindow):
            win.index([9])


class TestKilledKernel:
    def test_boundary_kill(self):
        win = StateWindow.build(HALF_LINE, 10)
        ker = build_killed_kernel(sym1d(), HALF_LINE, win)
        i0 = win.index([0])
        assert ker.matrix[i0, win.index([1])] == 0.5
        assert ker.theta_mass[i0] == pytest.approx(0.5)

    def test_interior_row(self):
        win = StateWindow.build(HALF_LINE, 10)
        ker = build_killed_kernel(sym1d(), HALF_LINE, win)
        i5 = win.index([5])
        assert ker.matrix[i5, win.index([4])] == 0.5
        assert ker.matrix[i5, win.index([6])] == 0.5
        assert ker.theta_mass[i5] == 0.0

    def test_window_edge_kill(self):
        win = StateWindow.build(HALF_LINE, 10)
        ker = build_killed_kernel(sym1d(), HALF_LINE, win)
        iM = win.index([10])
        assert ker.matrix[iM, win.index([9])] == 0.5
        assert ker.theta_mass[iM] == pytest.approx(0.5)

    def test_row_sums_at_most_one(self):
        mu = make_step_distribution(
            [([1, 1], "1/4"), ([1, -1], "1/4"), ([-1, 1], "1/4"), ([-1, -1], "1/4")]
        )
        win = StateWindow.build(QUADRANT, 12)
        ker = build_killed_kernel(mu, QUADRANT, win)
        assert ker.row_sums().max() <= 1 + 1e-12

    def test_window_monotonicity(self):
        """Growing the window never removes transition mass from kept pairs."""
        small = StateWindow.build(HALF_LINE, 6)
        big = StateWindow.build(HALF_LINE, 12)
        k_small = build_killed_kernel(sym1d(), HALF_LINE, small)
        k_big = build_killed_kernel(sym1d(), HALF_LINE, big)
        for x in range(7):
            for y in range(7):
                a = k_small.matrix[small.index([x]), small.index([y])]
                b = k_big.matrix[big.index([x]), big.index([y])]
                assert b >= a - 1e-15
            assert k_big.theta_mass[big.index([x])] <= k_small.theta_mass[small.index([x])] + 1e-15


class TestTranslationProperty:
    def test_homogeneous_equality(self):
        win = StateWindow.build(HALF_LINE, 12)
        ker = build_killed_kernel(sym1d(), HALF_LINE, win)
        report = verify_translation_property(ker, [1])
        assert report.ok
        assert report.max_equality_gap == 0.0

    def test_zero_shift_vacuous(self):
        win = StateWindow.build(HALF_LINE, 8)
        ker = build_killed_kernel(sym1d(), HALF_LINE, win)
        report = verify_translation_property(ker, [0])
        assert report.ok and report.max_equality_gap == 0.0

    def test_perturbed_row_detected(self):
        win = StateWindow.build(HALF_LINE, 8)
        ker = build_killed_kernel(sym1d(), HALF_LINE, win)
        # brute-force scan must flag a row whose mass was reduced
        bad = ker.with_replaced_row([4], [([3], 0.5), ([5], 0.25)])
        report = verify_translation_property(bad, [1])
        assert not report.ok
        assert any(x == (3,) and y == (4,) for x, y, *_ in report.violations)

    @given(st.integers(0, 3), st.integers(0, 3))
    @settings(max_examples=20, deadline=None)
    def test_homogeneous_2d_shifts(self, u1, u2):
        mu = make_step_distribution(
            [([1, 0], "1/4"), ([-1, 0], "1/4"), ([0, 1], "1/4"), ([0, -1], "1/4")]
        )
        win = StateWindow.build(QUADRANT, 8)
        ker = build_killed_kernel(mu, QUADRANT, win)
        assert verify_translation_property(ker, [u1, u2]).ok
