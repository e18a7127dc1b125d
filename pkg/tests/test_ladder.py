from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coneladder.lattice import ConeRegion, StateWindow, build_killed_kernel, make_step_distribution
from coneladder.ladder import (
    classify_regime,
    crosscheck_ladder_sample,
    ladder_kernel,
    ratio_vs_V,
    renewal_function,
    renewal_identity_residual,
)
from coneladder.potential import green_row, hitting_probability, green_apply, PotentialVector
from coneladder.refine import refine, richardson

from oracles import expected_exit_time_1d, gambler_descent_prob

HALF = ConeRegion.from_normals([[1]])
QUAD = ConeRegion.from_normals([[1, 0], [0, 1]])


def setup_1d(p_up="1/2", bound=128):
    mu = make_step_distribution([([1], p_up), ([-1], str(Fraction(1) - Fraction(p_up)))])
    win = StateWindow.build(HALF, bound)
    ker = build_killed_kernel(mu, HALF, win)
    return ker, ladder_kernel(ker, base_bound=bound)


class TestLadderKernel:
    def test_origin_row_is_pure_absorption(self):
        ker, lad = setup_1d()
        i = lad.base_position([0])
        assert lad.window_row_sums[i] == pytest.approx(0.0, abs=1e-12)
        assert lad.theta_mass[i] == pytest.approx(1.0, abs=1e-12)

    def test_symmetric_single_down_step(self):
        # oracle: the entry equals G(0,0) mu(-1) with G(0,0) -> 2
        ker, lad = setup_1d(bound=2048)
        g00 = green_row(ker, [0]).at([0])
        i = lad.base_position([3])
        j = lad.base_position([2])
        entry = lad.kappa[(2 - 3) + 2048]
        assert entry == pytest.approx(g00 * 0.5, abs=1e-14)
        assert entry == pytest.approx(1.0, abs=1e-3)

    def test_drift_up_entry(self):
        # oracle: p_H(1, 0) = G(0,0)/3 = 1/2 with exponentially small window error
        ker, lad = setup_1d("2/3")
        entry = lad.kappa[-1 + 128]
        assert entry == pytest.approx(0.5, abs=1e-10)

    def test_substochastic_rows(self):
        for p in ("1/2", "1/3", "2/3"):
            _, lad = setup_1d(p)
            assert lad.window_row_sums.max() <= 1 + 1e-10

    def test_two_term_crosscheck(self):
        mu = make_step_distribution(
            [([1, 1], "1/4"), ([1, -1], "1/4"), ([-1, 1], "1/4"), ([-1, -1], "1/4")]
        )
        win = StateWindow.build(QUAD, 24)
        ker = build_killed_kernel(mu, QUAD, win)
        lad = ladder_kernel(ker, base_bound=24)
        gap = crosscheck_ladder_sample(lad, np.random.default_rng(11), samples=80)
        assert gap < 1e-12


class TestRenewal:
    def test_origin_value(self):
        for p in ("1/2", "1/3", "2/3"):
            _, lad = setup_1d(p)
            table = renewal_function(lad)
            assert table.at([0]) == pytest.approx(1.0, abs=1e-12)

    def test_symmetric_affine(self):
        # oracle: the ladder moves down one level per step almost surely
        def v_at(bound):
            _, lad = setup_1d(bound=bound)
            table = renewal_function(lad)
            return np.array([table.at([x]) for x in range(11)])

        ref = refine(v_at, 1024, levels=3)
        assert np.abs(ref.value - (np.arange(11) + 1.0)).max() < 1e-6

    def test_drift_up_closed_form(self):
        _, lad = setup_1d("2/3")
        table = renewal_function(lad)
        for x in range(12):
            assert table.at([x]) == pytest.approx(2.0 - 0.5**x, abs=1e-10)

    def test_drift_down_affine(self):
        _, lad = setup_1d("1/3")
        table = renewal_function(lad)
        for x in range(12):
            assert table.at([x]) == pytest.approx(x + 1.0, abs=1e-10)

    def test_at_least_one_everywhere(self):
        _, lad = setup_1d()
        table = renewal_function(lad)
        assert (table.V.values[table.V.defined] >= 1.0 - 1e-10).all()

    def test_wald_proportionality_drift_down(self):
        # integrable regime: V = g / g(e) with g the expected exit time
        ker, lad = setup_1d("1/3")
        table = renewal_function(lad)
        g = green_apply(ker, PotentialVector.full(ker.window, np.ones(ker.size)))
        for x in (0, 2, 7, 15):
            expect = float(expected_exit_time_1d(Fraction(1, 3), x) / expected_exit_time_1d(Fraction(1, 3), 0))
            assert table.at([x]) == pytest.approx(expect, abs=1e-9)
            assert g.values[ker.window.index([x])] / g.values[ker.window.origin] == pytest.approx(
                expect, rel=1e-10
            )


class TestShiftIdentity:
    def test_zero_shift_exact(self):
        ker, lad = setup_1d()
        table = renewal_function(lad)
        assert renewal_identity_residual(ker, table.V, [4], [0]) == pytest.approx(0.0, abs=1e-14)

    def test_symmetric_refined(self):
        def resid(bound):
            ker, lad = setup_1d(bound=bound)
            table = renewal_function(lad)
            return renewal_identity_residual(ker, table.V, [2], [3])

        ref = refine(resid, 1024, levels=3)
        assert abs(ref.value) < 1e-6

    def test_drift_up_machine_exact(self):
        ker, lad = setup_1d("2/3")
        table = renewal_function(lad)
        for x, u in [(2, 3), (0, 1), (5, 2)]:
            assert abs(renewal_identity_residual(ker, table.V, [x], [u])) < 1e-12


class TestRegime:
    def test_symmetric_not_integrable(self):
        ker, _ = setup_1d(bound=64)
        name, diag = classify_regime(ker, doublings=3)
        assert name == "non-integrable"
        assert all(b > a for a, b in zip(diag["g_origin"], diag["g_origin"][1:]))

    def test_drift_down_integrable(self):
        ker, _ = setup_1d("1/3", bound=64)
        name, diag = classify_regime(ker, doublings=3)
        assert name == "integrable"
        assert diag["g_origin"][-1] == pytest.approx(3.0, rel=1e-10)

    def test_drift_up_not_integrable(self):
        ker, _ = setup_1d("2/3", bound=64)
        assert classify_regime(ker, doublings=3)[0] == "non-integrable"


class TestRatio:
    def test_start_is_one(self):
        ker, lad = setup_1d(bound=64)
        rep = ratio_vs_V(ker, renewal_function(lad).V, [3], 30)
        assert rep.f[0] == 1.0

    def test_harnack_sandwich(self):
        """Q(x, e) <= f_n(x) <= 1/Q(e, x) for every n."""
        ker, lad = setup_1d(bound=64)
        rep = ratio_vs_V(ker, renewal_function(lad).V, [3], 30)
        lower = hitting_probability(ker, [3], [0])
        upper = 1.0 / hitting_probability(ker, [0], [3])
        assert (rep.f >= lower - 1e-12).all()
        assert (rep.f <= upper + 1e-12).all()

    @given(st.integers(1, 6))
    @settings(max_examples=8, deadline=None)
    def test_harnack_sandwich_random_states(self, x):
        ker, lad = setup_1d(bound=64)
        rep = ratio_vs_V(ker, renewal_function(lad).V, [x], 20)
        lower = hitting_probability(ker, [x], [0])
        upper = 1.0 / hitting_probability(ker, [0], [x])
        assert (rep.f >= lower - 1e-12).all() and (rep.f <= upper + 1e-12).all()

    def test_drift_down_liminf_dominates(self):
        ker, lad = setup_1d("1/3", bound=512)
        table = renewal_function(lad)
        rep = ratio_vs_V(ker, table.V, [4], 300)
        assert rep.tail_min >= table.at([4]) - 0.01
        assert table.at([4]) == pytest.approx(5.0, abs=1e-9)


class TestProductStructure:
    def test_parity_off_state_value(self):
        # stopped-martingale oracle: V(1, 0) = 2 for the diagonal-step walk
        mu = make_step_distribution(
            [([1, 1], "1/4"), ([1, -1], "1/4"), ([-1, 1], "1/4"), ([-1, -1], "1/4")]
        )

        def v10(bound):
            win = StateWindow.build(QUAD, bound)
            ker = build_killed_kernel(mu, QUAD, win)
            return renewal_function(ladder_kernel(ker, base_bound=bound)).at([1, 0])

        vals = [v10(b) for b in (16, 32, 64)]
        assert vals[0] < vals[1] < vals[2] <= 2.0 + 1e-9  # monotone from below
