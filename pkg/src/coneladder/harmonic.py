"""Harmonic candidates, the shift identity, Doob transforms and ladder splits.

Candidate harmonic functions come from three sources: closed forms attached
to a scenario (products of one-coordinate factors, or the wedge polynomial),
the ratio limit of survival probabilities realised as a spectral projection
on the window, and the renewal function itself.  Closed forms are validated
against the exact kernel at construction time.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (
    DimensionMismatch,
    IterationDivergence,
    NonPositiveH,
    NotHarmonic,
    OutOfWindow,
    SolverFailure,
)
from .lattice import (
    ConeRegion,
    KilledKernel,
    StateWindow,
    StepDistribution,
    _as_int_vector,
    build_killed_kernel,
)
from .ladder import LadderKernel, renewal_function
from .potential import (
    PotentialVector,
    apply_A,
    apply_P,
    get_solver,
    green_apply,
)


@dataclass(eq=False)
class HarmonicCandidate:
    """A positive function proposed as harmonic, with its provenance."""

    source: str                      # "closed-form" | "ratio-limit" | "renewal"
    values: PotentialVector
    fn: object | None = None         # callable states -> values when closed form

    @property
    def origin_value(self) -> float:
        return float(self.values.values[self.values.window.origin])

    def normalized(self) -> "HarmonicCandidate":
        v = self.values
        scale = self.origin_value
        if scale <= 0:
            raise NonPositiveH("candidate vanishes at the origin")
        fn = None
        if self.fn is not None:
            inner = self.fn
            fn = lambda pts: np.asarray(inner(pts), dtype=float) / scale  # noqa: E731
        return HarmonicCandidate(
            self.source, PotentialVector(v.window, v.values / scale, v.defined), fn
        )


def _orthant_axes(cone: ConeRegion) -> bool:
    """True when the cone is the non-negative orthant (possibly scaled normals)."""
    normals = cone.normals
    if normals.shape[0] != cone.dimension:
        return False
    seen = set()
    for row in normals:
        nz = np.nonzero(row)[0]
        if nz.size != 1 or row[nz[0]] <= 0:
            return False
        seen.add(int(nz[0]))
    return seen == set(range(cone.dimension))


def _coordinate_factor(p: float, q: float, c: float):
    """Positive solution of ``p f(y+1) + q f(y-1) = c f(y)`` with f(-1) = 0,
    normalised to f(0) = 1."""
    disc = c * c - 4.0 * p * q
    if disc < -1e-13:
        raise NotHarmonic(f"no real factor: c^2 - 4pq = {disc:.3e} < 0")
    if abs(disc) <= 1e-13:
        r0 = c / (2.0 * p)

        def factor(y):
            y = np.asarray(y, dtype=float)
            return (y + 1.0) * r0**y

    else:
        root = np.sqrt(disc)
        r1 = (c + root) / (2.0 * p)
        r2 = (c - root) / (2.0 * p)

        def factor(y):
            y = np.asarray(y, dtype=float)
            return (r1 ** (y + 1.0) - r2 ** (y + 1.0)) / (r1 - r2)

    return factor


def _factor_product_fn(mu: StepDistribution, cone: ConeRegion):
    """Product-form harmonic for orthant walks with per-coordinate structure."""
    if not _orthant_axes(cone):
        raise NotHarmonic("factor products require an orthant cone")
    d = mu.dimension
    vecs = list(mu.entries)
    axis_steps = all(sum(c != 0 for c in v) == 1 and max(abs(c) for c in v) == 1 for v in vecs)
    pm_steps = all(all(abs(c) == 1 for c in v) for v in vecs)
    factors = []
    if axis_steps:
        for i in range(d):
            up = mu.entries.get(tuple(1 if j == i else 0 for j in range(d)), Fraction(0))
            down = mu.entries.get(tuple(-1 if j == i else 0 for j in range(d)), Fraction(0))
            if up == 0 or down == 0:
                raise NotHarmonic("coordinate needs both an up and a down step")
            factors.append(_coordinate_factor(float(up), float(down), float(up + down)))
    elif pm_steps:
        # independent +-1 coordinates: check the exact product factorisation
        margs = []
        for i in range(d):
            m_up = sum(p for v, p in mu.entries.items() if v[i] == 1)
            margs.append((m_up, mu.total_mass - m_up))
        for v, p in mu.entries.items():
            expected = Fraction(1)
            for i, c in enumerate(v):
                expected *= margs[i][0] if c == 1 else margs[i][1]
            if expected != p:
                raise NotHarmonic("step law is not an independent product")
        for i in range(d):
            factors.append(_coordinate_factor(float(margs[i][0]), float(margs[i][1]), 1.0))
    else:
        raise NotHarmonic("no factor-product structure in the step law")

    def fn(points):
        pts = np.asarray(points, dtype=np.int64)
        out = np.ones(pts.shape[:-1], dtype=float)
        for i in range(d):
            out = out * factors[i](pts[..., i])
        return out

    return fn


def _wedge_poly_fn(mu: StepDistribution, cone: ConeRegion):
    """Quartic harmonic of the simple walk on the wedge ``x1 >= x2 >= 0``."""
    if mu.dimension != 2:
        raise DimensionMismatch("wedge polynomial is two-dimensional")

    def fn(points):
        pts = np.asarray(points, dtype=float)
        a = pts[..., 0] + 2.0
        b = pts[..., 1] + 1.0
        return a * b * (a - b) * (a + b)

    return fn


_CLOSED_FORMS = {
    "factor_product": _factor_product_fn,
    "wedge_poly": _wedge_poly_fn,
}


def closed_form_harmonic(
    mu: StepDistribution,
    cone: ConeRegion,
    kind: str,
    window: StateWindow,
    validate_bound: int = 12,
    tol: float = 1e-9,
) -> HarmonicCandidate:
    """Build a closed-form candidate and verify it against the exact kernel."""
    if kind not in _CLOSED_FORMS:
        raise NotHarmonic(f"unknown closed form {kind!r}")
    fn = _CLOSED_FORMS[kind](mu, cone)
    small = StateWindow.build(cone, validate_bound)
    k_small = build_killed_kernel(mu, cone, small)
    h_small = PotentialVector.from_function(small, fn)
    report = verify_harmonic(k_small, h_small)
    if report.max_residual > tol * max(1.0, report.scale):
        raise NotHarmonic(
            f"closed form {kind!r} has kernel residual {report.max_residual:.3e}"
        )
    return HarmonicCandidate("closed-form", PotentialVector.from_function(window, fn), fn)


def ratio_limit_candidate(kernel: KilledKernel, max_iter: int = 300, tol: float = 1e-13) -> HarmonicCandidate:
    """Survival-ratio limit on the window by inverse iteration on ``I - P``.

    Starting the iteration from the all-ones vector reproduces the limit of
    the normalised survival profile ``P_x(tau > n) / P_e(tau > n)`` on the
    window: every solve multiplies each eigencomponent by ``1/(1-lambda)``,
    so the dominant (possibly degenerate) eigenspace keeps exactly the
    weights induced by the survival vector.
    """
    solver = get_solver(kernel)
    origin = kernel.window.origin
    y = np.ones(kernel.size)
    for _ in range(max_iter):
        z = solver.solve(y)
        scale = z[origin]
        if scale <= 0:
            raise SolverFailure("inverse iteration lost positivity at the origin")
        z = z / scale
        if np.abs(z - y).max() <= tol * np.abs(z).max():
            y = z
            break
        y = z
    else:
        raise IterationDivergence("ratio-limit iteration did not settle")
    return HarmonicCandidate("ratio-limit", PotentialVector.full(kernel.window, y))


@dataclass(eq=False)
class HarmonicReport:
    residuals: PotentialVector   # (P h - h)(x) where computable
    max_residual: float
    scale: float                 # sup |h| over the checked states


def verify_harmonic(kernel: KilledKernel, h: PotentialVector, safe_mask=None) -> HarmonicReport:
    """Per-state residual of ``P h = h`` using exact kernel semantics."""
    ph = apply_P(kernel, h)
    mask = h.defined & ph.defined
    if safe_mask is not None:
        mask = mask & safe_mask
    res = np.where(mask, ph.values - h.values, 0.0)
    out = PotentialVector(kernel.window, res, mask)
    scale = float(np.abs(h.values[mask]).max()) if mask.any() else 0.0
    return HarmonicReport(out, out.sup_norm(), scale)


def functional_relation_residual(kernel: KilledKernel, h: PotentialVector, u) -> PotentialVector:
    """Residuals ``h(y+u) - h(y) - (G A_u h)(y)`` of the shift identity."""
    win = kernel.window
    uvec = np.asarray(_as_int_vector(u, win.dimension), dtype=np.int64)
    shifted = win.position_of(win.states + uvec)
    a_h = apply_A(kernel, uvec, h, extend="zero")
    g = green_apply(
        kernel, PotentialVector(win, np.maximum(a_h.values, 0.0), np.ones(win.size, bool))
    )
    ok = (shifted >= 0) & h.defined
    ok &= np.where(shifted >= 0, h.defined[np.clip(shifted, 0, None)], False)
    vals = np.zeros(win.size)
    vals[ok] = h.values[shifted[ok]] - h.values[ok] - g.values[ok]
    return PotentialVector(win, vals, ok)


@dataclass(eq=False)
class TransformKernel:
    """Doob transform ``p_h(x, y) = p(x, y) h(y) / h(x)`` on the window.

    Rows are exact (stochastic up to fp noise) on states whose one-step
    neighbourhood stays inside the window; those states carry ``defined``.
    """

    window: StateWindow
    matrix: object               # csr matrix
    defined: np.ndarray

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()


def doob_transform(kernel: KilledKernel, h: PotentialVector, tol: float = 1e-8) -> TransformKernel:
    """Stochastic transform of the kernel by a positive harmonic function."""
    win = kernel.window
    if (h.values[h.defined] <= 0).any():
        raise NonPositiveH("h must be strictly positive on the window")
    report = verify_harmonic(kernel, h)
    if report.max_residual > tol * max(1.0, report.scale):
        raise NotHarmonic(f"P h - h residual {report.max_residual:.3e} exceeds {tol:.1e}")
    mat = kernel.matrix.tocoo()
    vals = mat.data * h.values[mat.col] / h.values[mat.row]
    from scipy import sparse

    out = sparse.coo_matrix((vals, (mat.row, mat.col)), shape=mat.shape).tocsr()
    ph = apply_P(kernel, h)
    defined = h.defined & ph.defined
    return TransformKernel(win, out, defined)


@dataclass(frozen=True)
class NeverExitCheck:
    """Predicted vs computed probability of never leaving the shifted cone."""

    predicted: float
    computed: tuple[float, ...]   # one value per window level, decreasing
    lower: float
    upper: float

    @property
    def bracket_width(self) -> float:
        return self.upper - self.lower


def never_exit_check(
    mu: StepDistribution,
    cone: ConeRegion,
    h_fn,
    x,
    u,
    bound: int,
    levels: int = 2,
) -> NeverExitCheck:
    """Never-exit probability of the h-transform from ``x+u`` for ``E+u``.

    predicted = h(x)/h(x+u); computed = 1 - (G A_u h)(x) / h(x+u) per window,
    which decreases towards the truth as the window grows (the exit
    expectation is truncated from below).  The bracket pads the last value by
    the last doubling delta.
    """
    xvec = np.asarray(_as_int_vector(x, mu.dimension), dtype=np.int64)
    uvec = np.asarray(_as_int_vector(u, mu.dimension), dtype=np.int64)
    hx = float(np.asarray(h_fn(xvec[None, :]))[0])
    hxu = float(np.asarray(h_fn((xvec + uvec)[None, :]))[0])
    predicted = hx / hxu
    computed = []
    for lev in range(levels):
        M = bound * 2**lev
        win = StateWindow.build(cone, M)
        ker = build_killed_kernel(mu, cone, win)
        h = PotentialVector.from_function(win, h_fn)
        a_h = apply_A(ker, uvec, h, extend="zero")
        g = green_apply(
            ker, PotentialVector(win, np.maximum(a_h.values, 0.0), np.ones(win.size, bool))
        )
        computed.append(1.0 - g.values[win.index(xvec)] / hxu)
    delta = abs(computed[-1] - computed[-2]) if levels >= 2 else 0.0
    return NeverExitCheck(predicted, tuple(computed), computed[-1] - delta, computed[-1])


@dataclass(eq=False)
class LadderDecomposition:
    """Split of a harmonic function along the ladder chain."""

    scaled_V: PotentialVector        # h(e) * V on the ladder base
    h_tilde: PotentialVector         # iterate limit of L^n h on the base
    complement: PotentialVector      # h - h(e) V
    residual: PotentialVector        # h - h(e)V - h_tilde on the safe states
    local_defect: float              # sup |(h - L h) - h(e)| over safe states
    superharmonic_gap: float         # max (L h - h + h(e)) over safe states
    converged: bool
    iterations: int
    last_increment: float


def theorem3_decomposition(
    lad: LadderKernel,
    h: PotentialVector,
    safe_mask=None,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> LadderDecomposition:
    """Iterate the ladder kernel on h and compare with ``h(e) V + h_tilde``.

    The iteration is monitored on the safe states; it is reported unconverged
    (never silently truncated) when the increment has not fallen below the
    tolerance within the iteration budget.
    """
    win = lad.window
    base = lad.base_index
    h_base = h.values[base]
    if not h.defined[base].all():
        raise OutOfWindow("h must be defined on the whole ladder base")
    he = float(h.values[win.origin])
    table = renewal_function(lad)
    v_base = table.V.values[base]

    safe = np.ones(lad.size, dtype=bool) if safe_mask is None else safe_mask[base]
    lh = lad.apply(h_base)
    defect = (h_base - lh) - he
    local_defect = float(np.abs(defect[safe]).max()) if safe.any() else 0.0
    superharmonic_gap = float((-defect[safe]).max()) if safe.any() else 0.0

    current = h_base.copy()
    inc = np.inf
    converged = False
    n = 0
    for n in range(1, max_iter + 1):
        nxt = lad.apply(current)
        inc = float(np.abs(nxt - current)[safe].max()) if safe.any() else 0.0
        current = nxt
        if inc <= tol * max(1.0, he):
            converged = True
            break

    def on_window(vals_base):
        vals = np.zeros(win.size)
        vals[base] = vals_base
        mask = np.zeros(win.size, dtype=bool)
        mask[base] = True
        return PotentialVector(win, vals, mask)

    scaled_v = on_window(he * v_base)
    h_tilde = on_window(current)
    complement = on_window(h_base - he * v_base)
    resid_vals = h_base - he * v_base - current
    resid = on_window(np.where(safe, resid_vals, 0.0))
    resid.defined[base] &= safe
    return LadderDecomposition(
        scaled_v,
        h_tilde,
        complement,
        resid,
        local_defect,
        superharmonic_gap,
        converged,
        n,
        inc,
    )
