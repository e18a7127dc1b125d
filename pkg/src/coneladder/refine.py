"""Window-doubling refinement and Richardson extrapolation.

Truncating the cone to a box biases every Green-type quantity downwards with
an error that expands in powers of ``1/M`` (M the window bound).  Computing a
quantity on a doubling ladder of windows and eliminating successive powers of
``1/M`` is therefore the standard refinement used across the package; the raw
doubling deltas are always reported alongside so convergence can be audited.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RefinedValue:
    """A quantity computed on a window-doubling ladder.

    Attributes
    ----------
    bounds : tuple of int
        Window bounds used, increasing.
    raw : np.ndarray
        Stacked raw values, ``raw[i]`` computed at ``bounds[i]``.
    value : np.ndarray
        Richardson limit (error terms ``1/M, 1/M^2, ...`` eliminated).
    deltas : np.ndarray
        Relative doubling deltas ``|raw[i+1]-raw[i]| / (|raw[i+1]| + 1)``.
    """

    bounds: tuple[int, ...]
    raw: np.ndarray
    value: np.ndarray
    deltas: np.ndarray

    @property
    def last_delta(self) -> float:
        return float(self.deltas[-1].max()) if self.deltas.size else 0.0

    def converged(self, tol: float = 1e-3) -> bool:
        """Doubling-convergence check: last relative delta below tol."""
        return self.last_delta < tol


def richardson(values, bounds, power: int = 1) -> np.ndarray:
    """Eliminate leading ``1/M^power`` error terms from a doubling sequence.

    ``values[i]`` was computed at window bound ``bounds[i]``; Neville's table
    extrapolates the polynomial in ``h = 1/M^power`` through all nodes to
    ``h = 0``, killing one error power per extra level.
    """
    xs = [1.0 / b**power for b in bounds]
    table = [np.asarray(v, dtype=float) for v in values]
    n = len(table)
    for j in range(1, n):
        table = [
            (xs[i] * table[i + 1] - xs[i + j] * table[i]) / (xs[i] - xs[i + j])
            for i in range(n - j)
        ]
    return table[0]


def refine(compute, base_bound: int, levels: int, factor: int = 2, power: int = 1) -> RefinedValue:
    """Run ``compute(bound)`` on a doubling ladder and extrapolate.

    ``compute`` must return an ndarray (or scalar) of fixed shape across
    levels, e.g. a quantity restricted to a window-independent safe set.
    ``power`` is the leading error exponent in ``1/M``.
    """
    bounds = tuple(base_bound * factor**i for i in range(levels))
    raw = [np.atleast_1d(np.asarray(compute(b), dtype=float)) for b in bounds]
    stacked = np.stack(raw)
    if levels == 1:
        return RefinedValue(bounds, stacked, raw[0], np.zeros((0,) + raw[0].shape))
    deltas = np.abs(np.diff(stacked, axis=0)) / (np.abs(stacked[1:]) + 1.0)
    value = richardson(raw, bounds, power=power)
    return RefinedValue(bounds, stacked, value, deltas)
