"""Green functions, hitting probabilities and the shift/excess operators.

Everything here is exact linear algebra on the truncated window: the Green
function is row/column of ``(I - P)^{-1}`` obtained from one cached sparse LU
factorisation per kernel.  Because truncation only adds killing, all Green
quantities grow monotonically under window enlargement.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import (
    NegativeAEntry,
    NotSuperharmonic,
    OutOfWindow,
    SolverFailure,
    WindowTooSmallForHorizon,
)
from .lattice import KilledKernel, StateWindow, _as_int_vector

_SOLVER_CACHE: "weakref.WeakKeyDictionary[KilledKernel, _KernelSolver]" = weakref.WeakKeyDictionary()

#: residual ceiling for every direct solve
SOLVER_RESIDUAL_TOL = 1e-10


@dataclass(eq=False)
class PotentialVector:
    """Real-valued function on a window; theta carries the implicit value 0.

    ``defined`` masks the states where the value is meaningful (operators that
    need out-of-window information shrink it).
    """

    window: StateWindow
    values: np.ndarray
    defined: np.ndarray

    @staticmethod
    def full(window: StateWindow, values) -> "PotentialVector":
        vals = np.asarray(values, dtype=float)
        if vals.shape != (window.size,):
            raise OutOfWindow("value vector does not match window size")
        return PotentialVector(window, vals, np.ones(window.size, dtype=bool))

    @staticmethod
    def from_function(window: StateWindow, fn) -> "PotentialVector":
        return PotentialVector.full(window, np.asarray(fn(window.states), dtype=float))

    def sup_norm(self, mask=None) -> float:
        m = self.defined if mask is None else (self.defined & mask)
        if not m.any():
            return 0.0
        return float(np.abs(self.values[m]).max())

    def restrict(self, mask) -> "PotentialVector":
        return PotentialVector(self.window, self.values, self.defined & mask)

    def zero_extended(self) -> np.ndarray:
        out = np.where(self.defined, self.values, 0.0)
        return out


@dataclass(eq=False)
class GreenRow:
    """One row ``G(x, .)`` of the Green function on the window."""

    window: StateWindow
    source: int
    values: np.ndarray

    def at(self, y) -> float:
        return float(self.values[self.window.index(y)])


class _KernelSolver:
    """Cached LU factorisation of ``I - P`` for one kernel."""

    def __init__(self, kernel: KilledKernel):
        n = kernel.size
        a = (sparse.identity(n, format="csc") - kernel.matrix.tocsc()).tocsc()
        try:
            self.lu = splu(a)
        except RuntimeError as exc:  # pragma: no cover - pathological input
            raise SolverFailure(f"factorisation of I - P failed: {exc}") from exc
        self.matrix = a
        self.kernel = kernel

    def _check(self, x: np.ndarray, b: np.ndarray, transposed: bool) -> np.ndarray:
        op = self.matrix.T if transposed else self.matrix
        resid = np.abs(op @ x - b).max()
        # backward-error scaling: residual relative to data and solution size
        scale = max(1.0, np.abs(b).max(), np.abs(x).max())
        if not np.isfinite(resid) or resid > SOLVER_RESIDUAL_TOL * scale:
            raise SolverFailure(
                f"direct solve residual {resid:.3e} exceeds {SOLVER_RESIDUAL_TOL:.1e} * {scale:.3e}"
            )
        return x

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve (I - P) g = b."""
        return self._check(self.lu.solve(np.asarray(b, dtype=float)), b, False)

    def solve_transposed(self, b: np.ndarray) -> np.ndarray:
        """Solve (I - P)^T w = b (rows of the Green function)."""
        return self._check(self.lu.solve(np.asarray(b, dtype=float), trans="T"), b, True)


def get_solver(kernel: KilledKernel) -> _KernelSolver:
    solver = _SOLVER_CACHE.get(kernel)
    if solver is None:
        solver = _KernelSolver(kernel)
        _SOLVER_CACHE[kernel] = solver
    return solver


def green_row(kernel: KilledKernel, x) -> GreenRow:
    """Row ``G(x, .)`` as the unique solution of ``G(x,.) = delta_x + G(x,.) P``."""
    i = kernel.window.index(x)
    b = np.zeros(kernel.size)
    b[i] = 1.0
    vals = get_solver(kernel).solve_transposed(b)
    return GreenRow(kernel.window, i, vals)


def green_column(kernel: KilledKernel, y) -> np.ndarray:
    """Column ``G(., y)`` (expected visits to y from every window state)."""
    j = kernel.window.index(y)
    b = np.zeros(kernel.size)
    b[j] = 1.0
    return get_solver(kernel).solve(b)


def hitting_probability(kernel: KilledKernel, x, y) -> float:
    """``Q(x,y) = G(x,y)/G(y,y)`` for x != y and ``Q(y,y) = 1 - 1/G(y,y)``."""
    col = green_column(kernel, y)
    win = kernel.window
    gyy = float(col[win.index(y)])
    i, j = win.index(x), win.index(y)
    if i == j:
        return 1.0 - 1.0 / gyy
    return float(col[i]) / gyy


def survival_table(kernel: KilledKernel, starts, horizon: int) -> np.ndarray:
    """Exact survival probabilities ``P_x(tau > n)`` for n = 0..horizon.

    Requires the window to contain the full reachable range of every start up
    to the horizon, so truncation cannot touch the result.
    """
    win = kernel.window
    if kernel.mu is None:
        raise SolverFailure("survival table needs a step law attached to the kernel")
    reach = kernel.mu.max_step_norm()
    start_idx = []
    for x in starts:
        vec = _as_int_vector(x, win.dimension)
        if max(vec) + horizon * reach > win.bound:
            raise WindowTooSmallForHorizon(
                f"window bound {win.bound} < {max(vec)} + {horizon} * {reach}"
            )
        start_idx.append(win.index(vec))
    out = np.empty((len(start_idx), horizon + 1))
    v = np.ones(win.size)
    mat = kernel.matrix
    idx = np.array(start_idx, dtype=np.int64)
    out[:, 0] = 1.0
    for n in range(1, horizon + 1):
        v = mat @ v
        out[:, n] = v[idx]
    return out


def survival_sequence(kernel: KilledKernel, x, horizon: int) -> np.ndarray:
    """``[P_x(tau > n) for n in 0..horizon]`` by exact dynamic programming."""
    return survival_table(kernel, [x], horizon)[0]


def apply_T(phi: PotentialVector, u) -> PotentialVector:
    """Shift operator ``(T_u phi)(x) = phi(x + u)``; undefined where x+u leaves
    the window."""
    win = phi.window
    uvec = np.asarray(_as_int_vector(u, win.dimension), dtype=np.int64)
    pos = win.position_of(win.states + uvec)
    ok = pos >= 0
    vals = np.zeros(win.size)
    defined = np.zeros(win.size, dtype=bool)
    vals[ok] = phi.values[pos[ok]]
    defined[ok] = phi.defined[pos[ok]]
    return PotentialVector(win, vals, defined)


def apply_P(kernel: KilledKernel, phi: PotentialVector) -> PotentialVector:
    """One kernel step ``(P phi)(x)``.

    Homogeneous kernels are applied with their exact cone semantics: a state
    becomes undefined when some step lands inside the cone but beyond the
    window (the window matrix would silently treat that mass as killed).
    General kernels are window-native, so the sparse matrix is the kernel.
    """
    win = kernel.window
    if kernel.homogeneous and kernel.mu is not None:
        vals = np.zeros(win.size)
        defined = np.ones(win.size, dtype=bool)
        for svec, prob in sorted(kernel.mu.entries.items()):
            y = win.states + np.asarray(svec, dtype=np.int64)
            in_cone = win.cone.contains(y)
            pos = win.position_of(y)
            have = in_cone & (pos >= 0)
            vals[have] += float(prob) * phi.values[pos[have]]
            defined &= ~(in_cone & (pos < 0))
            defined &= ~(have & ~phi.defined[np.clip(pos, 0, None)])
        return PotentialVector(win, vals, defined)
    vals = kernel.matrix @ phi.zero_extended()
    bad = kernel.matrix @ (~phi.defined).astype(float)
    defined = phi.defined & (bad == 0.0)
    return PotentialVector(win, vals, defined)


def _require_nonnegative(phi: PotentialVector):
    if (phi.values[phi.defined] < -1e-12).any():
        raise NegativeAEntry("operator defined for non-negative functions only")


def apply_A(kernel: KilledKernel, u, phi: PotentialVector, extend: str = "mask") -> PotentialVector:
    """Excess operator ``(A_u phi)(x) = sum_y a_u(x, y) phi(y)``.

    For a homogeneous kernel the entries reduce to
    ``a_u(x, y) = mu(y - x - u)`` when ``y - u`` leaves the cone and 0
    otherwise, so the sum runs over the one-step neighbourhood of ``x + u``.

    extend:
        "mask"  - states needing phi outside the window become undefined;
        "zero"  - treat phi as 0 beyond the window (lower bound, used by
                  Green solves that are refined by window doubling).
    """
    if not kernel.homogeneous or kernel.mu is None:
        return apply_A_general(kernel, u, phi)
    _require_nonnegative(phi)
    win = kernel.window
    cone = win.cone
    uvec = np.asarray(_as_int_vector(u, win.dimension), dtype=np.int64)
    vals = np.zeros(win.size)
    defined = np.ones(win.size, dtype=bool)
    for svec, prob in sorted(kernel.mu.entries.items()):
        y = win.states + uvec + np.asarray(svec, dtype=np.int64)
        in_cone = cone.contains(y)
        escaped = in_cone & ~cone.contains(y - uvec)
        pos = win.position_of(y)
        have = escaped & (pos >= 0)
        vals[have] += float(prob) * phi.values[pos[have]]
        missing = escaped & (pos < 0)
        if missing.any() and extend == "mask":
            defined &= ~missing
        unknown_phi = have & ~phi.defined[np.clip(pos, 0, None)]
        defined &= ~unknown_phi
    return PotentialVector(win, vals, defined)


def apply_A_general(kernel: KilledKernel, u, phi: PotentialVector) -> PotentialVector:
    """Two-term form ``a_u(x,y) = p(x+u, y) - p(x, y-u) [y-u in cone]``.

    Works for arbitrary window kernels; raises :class:`NegativeAEntry` when
    the translation-domination hypothesis fails.  States whose shifted row
    leaves the window are masked out.
    """
    _require_nonnegative(phi)
    win = kernel.window
    cone = win.cone
    uvec = np.asarray(_as_int_vector(u, win.dimension), dtype=np.int64)
    n = win.size
    pos_up = win.position_of(win.states + uvec)      # x -> x+u
    pos_down = win.position_of(win.states - uvec)    # y -> y-u
    down_in_cone = cone.contains(win.states - uvec)
    mat = kernel.matrix
    vals = np.zeros(n)
    defined = pos_up >= 0
    phi_vals = phi.zero_extended()
    for x in range(n):
        if not defined[x]:
            continue
        row_shift = mat.getrow(pos_up[x])
        total = 0.0
        for j, p_shift in zip(row_shift.indices, row_shift.data):
            a = p_shift
            if down_in_cone[j]:
                if pos_down[j] >= 0:
                    a -= mat[x, pos_down[j]]
                else:
                    # y - u in cone but beyond the window: comparison unknown
                    defined[x] = False
                    break
            if a < -1e-12:
                raise NegativeAEntry(
                    f"a_u entry {a:.3e} < 0 at x={tuple(win.states[x])}, "
                    f"y={tuple(win.states[j])}"
                )
            if not phi.defined[j]:
                defined[x] = False
                break
            total += max(a, 0.0) * phi_vals[j]
        else:
            vals[x] = total
            continue
    return PotentialVector(win, vals, defined)


def green_apply(kernel: KilledKernel, phi: PotentialVector) -> PotentialVector:
    """Potential ``G phi`` solving ``(I - P) g = phi`` (phi >= 0)."""
    _require_nonnegative(phi)
    g = get_solver(kernel).solve(phi.zero_extended())
    return PotentialVector(kernel.window, g, np.ones(kernel.size, dtype=bool))


def riesz_decompose(
    kernel: KilledKernel,
    f: PotentialVector,
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
    safe_mask=None,
) -> tuple[PotentialVector, PotentialVector]:
    """Split a superharmonic f into harmonic and potential components.

    The deficit ``phi = f - P f`` is evaluated on states whose one-step
    neighbourhood is fully known; the potential part is ``G phi`` and the
    harmonic part is the plateau of the iterates ``P^n f`` monitored on
    ``safe_mask`` (window-edge truncation would otherwise drag every iterate
    to zero eventually, which is an artefact of the finite window).
    """
    win = kernel.window
    pf = apply_P(kernel, f)
    known = f.defined & pf.defined
    deficit = f.values - pf.values
    if (deficit[known] < -tol * max(1.0, np.abs(f.values[known]).max())).any():
        raise NotSuperharmonic(f"P f exceeds f by more than {tol}")
    phi = PotentialVector(win, np.where(known, np.maximum(deficit, 0.0), 0.0), np.ones(win.size, dtype=bool))
    potential = green_apply(kernel, phi)

    current = f.zero_extended()
    monitor = known if safe_mask is None else (known & safe_mask)
    for _ in range(max_iter):
        nxt = kernel.matrix @ current
        inc = np.abs(nxt - current)[monitor].max() if monitor.any() else 0.0
        current = nxt
        if inc < tol:
            break
    else:
        from .errors import IterationDivergence

        raise IterationDivergence("harmonic-part iteration did not settle")
    harmonic = PotentialVector(win, current, monitor.copy())
    return harmonic, PotentialVector(win, potential.values, monitor.copy())


def emit_potential_csv(pv: PotentialVector, path, value_name: str = "value"):
    """Write ``x0,..,x{d-1},<value_name>`` rows for the defined states."""
    win = pv.window
    with open(path, "w") as fh:
        cols = ",".join(f"x{i}" for i in range(win.dimension))
        fh.write(f"{cols},{value_name}\n")
        for idx in np.nonzero(pv.defined)[0]:
            coords = ",".join(str(int(c)) for c in win.states[idx])
            fh.write(f"{coords},{pv.values[idx]!r}\n")


def emit_green_row_csv(row: GreenRow, path):
    emit_potential_csv(
        PotentialVector.full(row.window, row.values), path, value_name="value"
    )
