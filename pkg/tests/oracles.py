"""Independent brute-force oracles used to pin expected values.

Everything here is deliberately primitive (exact rational dynamic
programming, explicit series summation, closed-form gambler's ruin) and
never touches the package's linear-algebra paths.
"""

from fractions import Fraction
from math import lgamma, exp

import numpy as np


def survival_exact_1d(p_up: Fraction, x: int, n: int) -> Fraction:
    """``P_x(tau > n)`` for the +-1 walk on the half-line, exact rational DP."""
    p = Fraction(p_up)
    q = 1 - p
    dist = {x: Fraction(1)}
    for _ in range(n):
        nxt: dict[int, Fraction] = {}
        for pos, mass in dist.items():
            if pos + 1 >= 0:
                nxt[pos + 1] = nxt.get(pos + 1, Fraction(0)) + mass * p
            if pos - 1 >= 0:
                nxt[pos - 1] = nxt.get(pos - 1, Fraction(0)) + mass * q
        dist = nxt
    return sum(dist.values(), Fraction(0))


def green_series_1d(p_up: Fraction, x: int, y: int, bound: int, terms: int) -> tuple[float, float]:
    """Partial Neumann series for G(x, y) on the window [0, bound].

    Returns (partial sum, alive mass at the last step) so callers can bound
    the tail via ``alive * sup_t remaining visits <= alive * G(y,y)-bound``.
    """
    p, q = float(p_up), 1.0 - float(p_up)
    dist = np.zeros(bound + 1)
    dist[x] = 1.0
    total = 0.0
    for _ in range(terms + 1):
        total += dist[y]
        nxt = np.zeros_like(dist)
        nxt[1:] += p * dist[:-1]
        nxt[:-1] += q * dist[1:]
        dist = nxt
    return total, float(dist.sum())


def gambler_descent_prob(p_up: Fraction, start: int) -> Fraction:
    """``P_start(hit 0 before dying)`` for the +-1 half-line walk.

    Nearest-neighbour paths cannot jump over 0, so this is the free-walk
    hitting probability: 1 when the drift is not upward, (q/p)^start else.
    """
    p = Fraction(p_up)
    q = 1 - p
    if p <= q:
        return Fraction(1)
    return (q / p) ** start


def expected_exit_time_1d(p_up: Fraction, x: int) -> Fraction:
    """``E_x(tau)`` for a downward-drifting +-1 walk: (x+1)/(q-p)."""
    p = Fraction(p_up)
    q = 1 - p
    if q <= p:
        raise ValueError("finite exit time needs downward drift")
    return Fraction(x + 1) / (q - p)


def reflection_survival_sym(x: int, n: int) -> float:
    """``P_x(tau > n)`` for the symmetric walk by the reflection principle.

    ``P_x(tau > n) = P(S_n in [-x, x+1]) `` for a free +-1 walk started at 0
    (ballot-style identity), evaluated with log-binomials for large n.
    """
    total = 0.0
    for target in range(-x, x + 2):
        k2 = n + target
        if k2 % 2 or not 0 <= k2 // 2 <= n:
            continue
        k = k2 // 2
        total += exp(lgamma(n + 1) - lgamma(k + 1) - lgamma(n - k + 1) - n * np.log(2.0))
    return total


def tv_distance(a: dict, b: dict) -> float:
    keys = set(a) | set(b)
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)
