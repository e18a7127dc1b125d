"""Jump generating function, tilted measures and Green decay rates.

The sublevel set ``D = {alpha : R(alpha) <= 1}`` of the jump generating
function governs every exponential rate here: its support function in a
direction ``w`` is the decay rate of Green values along ``w``.  For centered
laws D degenerates to the origin and all rates vanish, which is exactly the
slow-variation regime of the hitting probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (
    MassNotOne,
    NoBoundary,
    NonConvergence,
    WindowTooSmallForHorizon,
)
from .lattice import ConeRegion, KilledKernel, StepDistribution, _as_int_vector
from .potential import get_solver


@dataclass(frozen=True)
class TiltSpec:
    """A tilt parameter, optionally paired with a truncation level."""

    alpha: tuple[float, ...]
    truncation_level: int | None = None


def jump_mgf(mu: StepDistribution, alpha) -> float:
    """``R(alpha) = sum_x mu(x) exp(<alpha, x>)`` (finite support, convex)."""
    a = np.asarray(alpha, dtype=float)
    return float(np.sum(mu.probs * np.exp(mu.vectors @ a)))


def jump_mgf_grad(mu: StepDistribution, alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=float)
    w = mu.probs * np.exp(mu.vectors @ a)
    return mu.vectors.T @ w


def jump_mgf_hess(mu: StepDistribution, alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=float)
    w = mu.probs * np.exp(mu.vectors @ a)
    v = mu.vectors.astype(float)
    return (v * w[:, None]).T @ v


def grad_check(mu: StepDistribution, alpha, step: float = 1e-6) -> float:
    """Max gap between the analytic gradient and central differences."""
    a = np.asarray(alpha, dtype=float)
    g = jump_mgf_grad(mu, a)
    worst = 0.0
    for i in range(a.size):
        e = np.zeros_like(a)
        e[i] = step
        fd = (jump_mgf(mu, a + e) - jump_mgf(mu, a - e)) / (2 * step)
        worst = max(worst, abs(fd - g[i]))
    return worst


def _is_centered(mu: StepDistribution) -> bool:
    return all(m == 0 for m in mu.mean())


def boundary_point(mu: StepDistribution, u, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """The point of ``{R = 1}`` whose outward gradient is parallel to u.

    Solved by a damped Newton iteration on ``(grad R - lambda u, R - 1)``;
    the starting guess maximises ``<alpha, u>`` along the ray ``t u`` by
    bisection.  Raises :class:`NoBoundary` for centered laws (D = {0}) and
    :class:`NonConvergence` if the iteration stalls.
    """
    uvec = np.asarray(u, dtype=float)
    if not uvec.any():
        raise NonConvergence("direction must be non-zero")
    if _is_centered(mu) and mu.total_mass == 1:
        # R has its strict minimum 1 at the origin: the sublevel set is {0}
        raise NoBoundary("centered stochastic law: the sublevel set is the origin alone")
    d = mu.dimension
    # ray search: largest t >= 0 with R(t u) <= 1
    t_hi = 1.0
    while jump_mgf(mu, t_hi * uvec) <= 1.0 and t_hi < 1e6:
        t_hi *= 2.0
    t_lo = 0.0
    for _ in range(200):
        mid = 0.5 * (t_lo + t_hi)
        if jump_mgf(mu, mid * uvec) <= 1.0:
            t_lo = mid
        else:
            t_hi = mid
    alpha = t_lo * uvec
    lam = max(float(jump_mgf_grad(mu, alpha) @ uvec) / float(uvec @ uvec), 1e-8)
    z = np.concatenate([alpha, [lam]])

    def system(zv):
        a, l = zv[:d], zv[d]
        return np.concatenate([jump_mgf_grad(mu, a) - l * uvec, [jump_mgf(mu, a) - 1.0]])

    for _ in range(max_iter):
        f = system(z)
        if np.abs(f).max() < tol:
            break
        a = z[:d]
        jac = np.zeros((d + 1, d + 1))
        jac[:d, :d] = jump_mgf_hess(mu, a)
        jac[:d, d] = -uvec
        jac[d, :d] = jump_mgf_grad(mu, a)
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(f"singular Newton system: {exc}") from exc
        size = 1.0
        base = np.abs(f).max()
        for _ in range(40):
            cand = z + size * step
            if np.abs(system(cand)).max() < base:
                z = cand
                break
            size *= 0.5
        else:
            raise NonConvergence("Newton line search stalled")
    else:
        raise NonConvergence("boundary-point Newton did not converge")
    alpha = z[:d]
    grad = jump_mgf_grad(mu, alpha)
    gn, un = np.linalg.norm(grad), np.linalg.norm(uvec)
    angle_gap = np.linalg.norm(grad / gn - uvec / un)
    if abs(jump_mgf(mu, alpha) - 1.0) > 1e-10 or angle_gap > 1e-6:
        raise NonConvergence(
            f"solution check failed: R-1 = {jump_mgf(mu, alpha)-1:.2e}, angle gap {angle_gap:.2e}"
        )
    return alpha


def support_function(mu: StepDistribution, u, tol: float = 1e-12) -> float:
    """``sup { <alpha, u> : R(alpha) <= 1 }``; zero in the centered case."""
    if not np.asarray(u, dtype=float).any():
        return 0.0
    try:
        alpha = boundary_point(mu, u, tol=tol)
    except NoBoundary:
        return 0.0
    return float(alpha @ np.asarray(u, dtype=float))


def canonical_truncation(mu: StepDistribution, k: int) -> StepDistribution:
    """The scaling sequence ``mu_k = (1 - 1/k) mu`` (k >= 2), increasing to mu."""
    if k < 2:
        raise MassNotOne("truncation level must be at least 2")
    return mu.scaled(Fraction(k - 1, k))


def truncate_and_tilt(mu: StepDistribution, k: int, alpha, tol: float = 1e-10) -> StepDistribution:
    """Tilt the truncated law by ``alpha`` and insist the result is stochastic.

    ``alpha`` must sit on the boundary set of the truncated law (that is,
    ``R_k(alpha) = 1``), which makes ``exp(<alpha, x>) mu_k(x)`` a probability
    law; anything else raises :class:`MassNotOne`.
    """
    a = np.asarray(alpha, dtype=float)
    muk = canonical_truncation(mu, k)
    mass = jump_mgf(muk, a)
    if abs(mass - 1.0) > tol:
        raise MassNotOne(f"tilted mass {mass!r} is not 1 within {tol:.1e}")
    entries = {}
    for vec, p in muk.entries.items():
        tilted = float(p) * float(np.exp(np.asarray(vec, dtype=float) @ a))
        entries[vec] = Fraction(tilted)  # exact binary value of the float
    return StepDistribution(entries, mu.dimension)


@dataclass(eq=False)
class RateReport:
    """Measured exponential rate along a direction vs the predicted one."""

    direction: tuple[int, ...]
    n_values: np.ndarray
    measured: np.ndarray          # (1/n) log of the quantity
    predicted: float
    extrapolated: float           # a from fitting a + b/n on the tail half

    @property
    def final(self) -> float:
        return float(self.measured[-1])


def _tail_fit(n_values: np.ndarray, measured: np.ndarray) -> float:
    half = len(n_values) // 2
    ns = n_values[half:]
    ys = measured[half:]
    a = np.vstack([np.ones_like(ns, dtype=float), 1.0 / ns]).T
    coef, *_ = np.linalg.lstsq(a, ys, rcond=None)
    return float(coef[0])


def _green_value(kernel: KilledKernel, x, y) -> float:
    win = kernel.window
    col = np.zeros(kernel.size)
    col[win.index(y)] = 1.0
    g = get_solver(kernel).solve(col)
    return float(g[win.index(x)])


def green_decay_rate(kernel: KilledKernel, u_dir, v_dir, n_grid) -> RateReport:
    """Measured ``(1/n) log G(n u, n v)`` against ``-sup_D <alpha, v-u>``."""
    win = kernel.window
    u = np.asarray(_as_int_vector(u_dir, win.dimension), dtype=np.int64)
    v = np.asarray(_as_int_vector(v_dir, win.dimension), dtype=np.int64)
    ns = np.asarray(sorted(n_grid), dtype=np.int64)
    reach = int(ns[-1]) * int(max(np.abs(u).max(), np.abs(v).max()))
    if reach > win.bound:
        raise WindowTooSmallForHorizon(f"need window bound >= {reach}, have {win.bound}")
    solver = get_solver(kernel)
    measured = np.empty(len(ns))
    for i, n in enumerate(ns):
        col = np.zeros(kernel.size)
        col[win.index(n * v)] = 1.0
        g = solver.solve(col)
        measured[i] = np.log(max(g[win.index(n * u)], 1e-300)) / n
    predicted = -support_function(kernel.mu, (v - u).astype(float))
    return RateReport(tuple(int(c) for c in v - u), ns, measured, predicted, _tail_fit(ns, measured))


@dataclass(eq=False)
class SlowVariationReport:
    forward: RateReport            # (1/n) log Q(x, x + n u), worst base point
    backward: RateReport           # (1/n) log Q(x + n u, x), worst base point

    def passes(self, rate_ceiling: float = 0.15, trend_slack: float = 1e-3) -> bool:
        """Both |rates| small and non-increasing along the grid (with slack)."""
        ok = True
        for rep in (self.forward, self.backward):
            rates = np.abs(rep.measured)
            ok &= rates[-1] < rate_ceiling
            ok &= bool((np.diff(rates) <= trend_slack).all())
        return ok


def slow_variation_check(kernel: KilledKernel, u, n_grid, base_points=None) -> SlowVariationReport:
    """Hitting-probability rates along ``u`` sampled over several base points.

    Reports, for each n in the grid, the worst (largest magnitude) rate over
    the base points, separately for the forward and backward direction.
    """
    win = kernel.window
    uvec = np.asarray(_as_int_vector(u, win.dimension), dtype=np.int64)
    ns = np.asarray(sorted(n_grid), dtype=np.int64)
    if base_points is None:
        base_points = [np.zeros(win.dimension, dtype=np.int64)]
    base_points = [np.asarray(_as_int_vector(b, win.dimension), dtype=np.int64) for b in base_points]
    for b in base_points:
        target = b + int(ns[-1]) * uvec
        if (target > win.bound).any():
            raise WindowTooSmallForHorizon("base point + n u leaves the window")
    solver = get_solver(kernel)

    def q_column(y):
        col = np.zeros(kernel.size)
        col[win.index(y)] = 1.0
        g = solver.solve(col)
        return g, float(g[win.index(y)])

    # rates are non-positive; keep the worst (most negative) over base points
    fwd = np.full(len(ns), np.inf)
    bwd = np.full(len(ns), np.inf)
    for b in base_points:
        g_b, g_bb = q_column(b)
        for i, n in enumerate(ns):
            y = b + n * uvec
            g_y, g_yy = q_column(y)
            q_fwd = g_y[win.index(b)] / g_yy      # Q(b, b + n u)
            q_bwd = g_b[win.index(y)] / g_bb      # Q(b + n u, b)
            fwd[i] = min(fwd[i], np.log(max(q_fwd, 1e-300)) / n)
            bwd[i] = min(bwd[i], np.log(max(q_bwd, 1e-300)) / n)
    dir_t = tuple(int(c) for c in uvec)
    return SlowVariationReport(
        RateReport(dir_t, ns, fwd, 0.0, _tail_fit(ns, fwd)),
        RateReport(dir_t, ns, bwd, 0.0, _tail_fit(ns, bwd)),
    )
