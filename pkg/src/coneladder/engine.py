"""Per-scenario computation cache tying the numerical modules together."""

from __future__ import annotations

import numpy as np

from .harmonic import HarmonicCandidate, closed_form_harmonic, ratio_limit_candidate
from .ladder import LadderKernel, RenewalTable, classify_regime, ladder_kernel, renewal_function
from .lattice import KilledKernel, StateWindow, build_killed_kernel
from .potential import PotentialVector, get_solver
from .refine import RefinedValue, refine
from .scenario import Scenario


class ScenarioEngine:
    """Builds and memoises windows, kernels, ladders and candidates."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self._windows: dict[int, StateWindow] = {}
        self._kernels: dict[int, KilledKernel] = {}
        self._ladders: dict[int, LadderKernel] = {}
        self._renewals: dict[int, RenewalTable] = {}
        self._ratio_limits: dict[int, HarmonicCandidate] = {}
        self._harmonics: dict[int, HarmonicCandidate] = {}
        self._exit_times: dict[int, np.ndarray] = {}
        self._regime: tuple[str, dict] | None = None

    # -- construction ---------------------------------------------------------
    def window(self, bound: int | None = None) -> StateWindow:
        b = self.scenario.window_bound if bound is None else bound
        if b not in self._windows:
            self._windows[b] = StateWindow.build(self.scenario.cone, b)
        return self._windows[b]

    def kernel(self, bound: int | None = None) -> KilledKernel:
        b = self.scenario.window_bound if bound is None else bound
        if b not in self._kernels:
            self._kernels[b] = build_killed_kernel(self.scenario.mu, self.scenario.cone, self.window(b))
        return self._kernels[b]

    def ladder(self, bound: int | None = None) -> LadderKernel:
        b = self.scenario.window_bound if bound is None else bound
        if b not in self._ladders:
            self._ladders[b] = ladder_kernel(self.kernel(b), base_bound=b)
        return self._ladders[b]

    def renewal(self, bound: int | None = None) -> RenewalTable:
        b = self.scenario.window_bound if bound is None else bound
        if b not in self._renewals:
            table = renewal_function(self.ladder(b))
            self._renewals[b] = RenewalTable(table.V, self.regime()[0], table.diagnostics)
        return self._renewals[b]

    def exit_time(self, bound: int | None = None) -> np.ndarray:
        """``g = E_x(exit time)`` on the (truncated) window."""
        b = self.scenario.window_bound if bound is None else bound
        if b not in self._exit_times:
            k = self.kernel(b)
            self._exit_times[b] = get_solver(k).solve(np.ones(k.size))
        return self._exit_times[b]

    def ratio_limit(self, bound: int | None = None) -> HarmonicCandidate:
        b = self.scenario.window_bound if bound is None else bound
        if b not in self._ratio_limits:
            self._ratio_limits[b] = ratio_limit_candidate(self.kernel(b))
        return self._ratio_limits[b]

    def harmonic(self, bound: int | None = None) -> HarmonicCandidate | None:
        """The scenario's closed-form candidate, normalised to 1 at the origin."""
        kind = self.scenario.harmonic_kind
        if kind is None:
            return None
        b = self.scenario.window_bound if bound is None else bound
        if b not in self._harmonics:
            cand = closed_form_harmonic(self.scenario.mu, self.scenario.cone, kind, self.window(b))
            self._harmonics[b] = cand.normalized()
        return self._harmonics[b]

    # -- derived --------------------------------------------------------------
    def regime(self) -> tuple[str, dict]:
        if self._regime is None:
            pinned = self.scenario.regime
            params = self.scenario.checks.get("regime", {})
            heur, diag = classify_regime(
                self.kernel(),
                doublings=params.get("doublings", 3),
                stab_tol=params.get("stab_tol", self.scenario.tolerances.doubling),
            )
            diag = dict(diag)
            diag["heuristic"] = heur
            if pinned is not None:
                diag["pinned"] = pinned
            self._regime = (pinned or heur, diag)
        return self._regime

    def refinement_bounds(self, levels: int | None = None) -> list[int]:
        lv = self.scenario.refine_levels if levels is None else levels
        return [self.scenario.window_bound * 2**i for i in range(lv)]

    def refined_renewal(self, points, levels: int | None = None) -> RefinedValue:
        """Ladder-based V at the given states, Richardson-refined over doublings."""
        pts = [tuple(int(c) for c in p) for p in points]

        def compute(bound):
            table = self.renewal(bound)
            return np.array([table.at(p) for p in pts])

        return refine(compute, self.scenario.window_bound, self.scenario.refine_levels if levels is None else levels)

    def refined_ratio_limit(self, points, levels: int | None = None) -> RefinedValue:
        """Ratio-limit V-estimate at given states; window error is O(1/M^2)."""
        pts = [tuple(int(c) for c in p) for p in points]

        def compute(bound):
            cand = self.ratio_limit(bound)
            win = cand.values.window
            return np.array([cand.values.values[win.index(p)] for p in pts])

        return refine(
            compute,
            self.scenario.window_bound,
            self.scenario.refine_levels if levels is None else levels,
            power=2,
        )
