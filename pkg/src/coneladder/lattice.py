"""Step laws, convex lattice cones, finite state windows and killed kernels.

The walk lives on ``E = cone ∩ Z^d`` and is sent to an implicit absorbing
state ``theta`` at its first exit from the cone.  All numerical work happens
on a finite window ``E ∩ box``; probability mass leaving the window is routed
to ``theta`` as well (truncation acts as extra killing, so every truncated
quantity is a monotone lower bound refined by window doubling).

Step probabilities are kept as exact :class:`fractions.Fraction` values and
converted to floating point only when a kernel matrix is assembled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import (
    DimensionMismatch,
    EmptyWindow,
    MassExceedsOne,
    NegativeProbability,
)

IntVector = tuple[int, ...]


def _as_int_vector(v, dimension: int | None = None) -> IntVector:
    vec = tuple(int(c) for c in np.asarray(v).ravel())
    if dimension is not None and len(vec) != dimension:
        raise DimensionMismatch(f"expected dimension {dimension}, got {len(vec)}")
    return vec


def _as_fraction(p) -> Fraction:
    if isinstance(p, float):
        # recover the intended rational from a decimal literal
        return Fraction(p).limit_denominator(10**12)
    return Fraction(p)


@dataclass(frozen=True, eq=False)
class StepDistribution:
    """Finite lattice step law with total mass at most one.

    Attributes
    ----------
    entries : dict
        Mapping step vector -> exact probability (Fraction), all positive.
    dimension : int
    """

    entries: dict[IntVector, Fraction]
    dimension: int

    @property
    def total_mass(self) -> Fraction:
        return sum(self.entries.values(), Fraction(0))

    @property
    def mass_defect(self) -> Fraction:
        """Killing mass carried by the law itself (1 - total mass)."""
        return Fraction(1) - self.total_mass

    @property
    def vectors(self) -> np.ndarray:
        return np.array(sorted(self.entries), dtype=np.int64).reshape(len(self.entries), self.dimension)

    @property
    def probs(self) -> np.ndarray:
        return np.array([float(self.entries[tuple(v)]) for v in self.vectors])

    def mean(self) -> tuple[Fraction, ...]:
        m = [Fraction(0)] * self.dimension
        for vec, p in self.entries.items():
            for i, c in enumerate(vec):
                m[i] += p * c
        return tuple(m)

    def is_centered(self) -> bool:
        return all(c == 0 for c in self.mean())

    def max_step_norm(self) -> int:
        return max(max(abs(c) for c in v) for v in self.entries)

    def scaled(self, factor: Fraction) -> "StepDistribution":
        """Return the sub-probability law ``factor * mu`` (0 < factor <= 1)."""
        f = _as_fraction(factor)
        if not 0 < f <= 1:
            raise MassExceedsOne(f"scale factor must lie in (0, 1], got {f}")
        return StepDistribution({v: p * f for v, p in self.entries.items()}, self.dimension)


def make_step_distribution(entries: Iterable[tuple[Sequence[int], object]]) -> StepDistribution:
    """Validate and build a :class:`StepDistribution`.

    Parameters
    ----------
    entries : iterable of (vector, prob)
        Probabilities may be Fractions, ints, rational strings like ``"1/2"``
        or floats (floats are converted to nearby exact rationals).

    Raises
    ------
    NegativeProbability, MassExceedsOne, DimensionMismatch
    """
    items = list(entries)
    if not items:
        raise DimensionMismatch("a step distribution needs at least one step")
    dim = len(_as_int_vector(items[0][0]))
    table: dict[IntVector, Fraction] = {}
    for vec, prob in items:
        v = _as_int_vector(vec, dim)
        p = _as_fraction(prob)
        if p <= 0:
            raise NegativeProbability(f"step {v} has non-positive probability {p}")
        table[v] = table.get(v, Fraction(0)) + p
    total = sum(table.values(), Fraction(0))
    if total > 1:
        raise MassExceedsOne(f"total step mass {total} exceeds one")
    return StepDistribution(table, dim)


@dataclass(frozen=True, eq=False)
class ConeRegion:
    """Closed convex lattice cone given by inner-pointing integer normals.

    ``x`` belongs to the cone iff ``<a_i, x> >= 0`` for every normal ``a_i``.
    The origin always belongs, and membership is closed under addition.
    """

    normals: np.ndarray  # (m, d) integer array
    dimension: int

    @staticmethod
    def from_normals(normals: Sequence[Sequence[int]]) -> "ConeRegion":
        arr = np.asarray(normals, dtype=np.int64)
        if arr.ndim != 2:
            raise DimensionMismatch("normals must form a 2-d array")
        return ConeRegion(arr, int(arr.shape[1]))

    def contains(self, points) -> np.ndarray:
        """Vectorised membership test: points of shape (..., d) -> bool array."""
        pts = np.asarray(points, dtype=np.int64)
        if pts.shape[-1] != self.dimension:
            raise DimensionMismatch(
                f"points have dimension {pts.shape[-1]}, cone has {self.dimension}"
            )
        return (pts @ self.normals.T >= 0).all(axis=-1)


def cone_contains(cone: ConeRegion, x) -> bool:
    """Membership of a single lattice point in the closed cone."""
    return bool(cone.contains(np.asarray(x, dtype=np.int64)))


@dataclass(frozen=True, eq=False)
class StateWindow:
    """Enumerated finite window ``E ∩ [0, bound]^d`` with integer indexing.

    States are listed in lexicographic order of their coordinates; the origin
    is always present (index :attr:`origin`).
    """

    cone: ConeRegion
    bound: int
    states: np.ndarray          # (n, d) int64, lexicographic
    _positions: np.ndarray = field(repr=False)  # raveled box index -> window index or -1
    origin: int = 0

    @staticmethod
    def build(cone: ConeRegion, bound: int) -> "StateWindow":
        d = cone.dimension
        if bound < 0:
            raise EmptyWindow("window bound must be non-negative")
        axes = [np.arange(bound + 1)] * d
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        mask = cone.contains(grid)
        states = grid[mask]
        if states.shape[0] == 0:
            raise EmptyWindow("window contains no cone states")
        positions = np.full((bound + 1) ** d, -1, dtype=np.int64)
        ravel = np.ravel_multi_index(states.T, (bound + 1,) * d)
        positions[ravel] = np.arange(states.shape[0])
        origin = int(positions[0])
        if origin < 0:
            raise EmptyWindow("origin is not a window state")
        win = StateWindow(cone, bound, states, positions, origin)
        return win

    @property
    def size(self) -> int:
        return int(self.states.shape[0])

    @property
    def dimension(self) -> int:
        return self.cone.dimension

    def position_of(self, points) -> np.ndarray:
        """Window indices for points of shape (..., d); -1 if not in window."""
        pts = np.asarray(points, dtype=np.int64)
        shape = pts.shape[:-1]
        flat = pts.reshape(-1, self.dimension)
        inside = ((flat >= 0) & (flat <= self.bound)).all(axis=1)
        out = np.full(flat.shape[0], -1, dtype=np.int64)
        if inside.any():
            ravel = np.ravel_multi_index(flat[inside].T, (self.bound + 1,) * self.dimension)
            out[inside] = self._positions[ravel]
        return out.reshape(shape)

    def index(self, point) -> int:
        """Window index of a single point; raises if absent."""
        idx = int(self.position_of(np.asarray(point, dtype=np.int64)))
        if idx < 0:
            from .errors import OutOfWindow

            raise OutOfWindow(f"state {tuple(int(c) for c in np.ravel(point))} not in window")
        return idx

    def box_mask(self, limit: int) -> np.ndarray:
        """Boolean mask of states with every coordinate at most ``limit``."""
        return (self.states <= limit).all(axis=1)

    def interior_mask(self, margin: int) -> np.ndarray:
        """States whose ``margin``-neighbourhood stays inside the box."""
        return (self.states <= self.bound - margin).all(axis=1)


@dataclass(frozen=True, eq=False)
class KilledKernel:
    """Substochastic one-step kernel on a window, absorbing state implicit.

    ``matrix[i, j]`` is the probability of moving from window state i to
    window state j; ``theta_mass[i] = 1 - row_sum(i)`` collects cone exits,
    window exits and the mass defect of the step law.
    """

    window: StateWindow
    matrix: sparse.csr_matrix
    theta_mass: np.ndarray
    homogeneous: bool = False
    mu: StepDistribution | None = None

    @property
    def size(self) -> int:
        return self.window.size

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def with_replaced_row(self, state, pairs: Iterable[tuple[Sequence[int], float]]) -> "KilledKernel":
        """Copy of the kernel with one row overwritten (for perturbation tests)."""
        i = self.window.index(state)
        mat = self.matrix.tolil(copy=True)
        mat.rows[i] = []
        mat.data[i] = []
        for target, prob in pairs:
            j = self.window.index(target)
            mat[i, j] = float(prob)
        csr = mat.tocsr()
        sums = np.asarray(csr.sum(axis=1)).ravel()
        if (sums > 1 + 1e-12).any():
            raise MassExceedsOne("replaced row exceeds unit mass")
        theta = 1.0 - sums
        return KilledKernel(self.window, csr, theta, homogeneous=False, mu=None)


def build_killed_kernel(mu: StepDistribution, cone: ConeRegion, window: StateWindow) -> KilledKernel:
    """Assemble the window kernel ``p(x, y) = mu(y - x)`` with exit killing.

    Mass aimed outside the cone *or* outside the window is routed to theta.
    """
    if mu.dimension != cone.dimension:
        raise DimensionMismatch("step law and cone dimensions differ")
    if window.size == 0:
        raise EmptyWindow("empty state window")
    n = window.size
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    for vec, prob in sorted(mu.entries.items()):
        targets = window.states + np.asarray(vec, dtype=np.int64)
        pos = window.position_of(targets)
        ok = pos >= 0
        rows.append(np.nonzero(ok)[0])
        cols.append(pos[ok])
        vals.append(np.full(int(ok.sum()), float(prob)))
    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    theta = 1.0 - np.asarray(matrix.sum(axis=1)).ravel()
    return KilledKernel(window, matrix, theta, homogeneous=True, mu=mu)


@dataclass(frozen=True)
class TranslationReport:
    """Outcome of the translation-domination scan for one shift u."""

    u: IntVector
    pairs_checked: int
    violations: list[tuple[IntVector, IntVector, float, float]]
    max_equality_gap: float

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_translation_property(kernel: KilledKernel, u) -> TranslationReport:
    """Scan all comparable pairs for ``p(x+u, y+u) >= p(x, y)``.

    For pairs with x, y, x+u, y+u all inside the window the inequality must
    hold; homogeneous kernels must satisfy it with equality.  Report only,
    never raises.
    """
    win = kernel.window
    uvec = np.asarray(_as_int_vector(u, win.dimension), dtype=np.int64)
    shifted_pos = win.position_of(win.states + uvec)
    coo = kernel.matrix.tocoo()
    x_shift = shifted_pos[coo.row]
    y_shift = shifted_pos[coo.col]
    valid = (x_shift >= 0) & (y_shift >= 0)
    dense_lookup = kernel.matrix  # csr supports fancy getitem via [i, j]
    violations: list[tuple[IntVector, IntVector, float, float]] = []
    max_gap = 0.0
    p_shift = np.asarray(
        dense_lookup[x_shift[valid], y_shift[valid]]
    ).ravel()
    p_base = coo.data[valid]
    gaps = p_shift - p_base
    bad = np.nonzero(gaps < -1e-15)[0]
    idx_valid = np.nonzero(valid)[0]
    for k in bad:
        i = coo.row[idx_valid[k]]
        j = coo.col[idx_valid[k]]
        violations.append(
            (
                tuple(int(c) for c in win.states[i]),
                tuple(int(c) for c in win.states[j]),
                float(p_base[k]),
                float(p_shift[k]),
            )
        )
    if gaps.size:
        max_gap = float(np.abs(gaps).max())
    return TranslationReport(tuple(int(c) for c in uvec), int(valid.sum()), violations, max_gap)
