"""Independent reference computations used by the tests.

Nothing here imports the package: every value is obtained by a different
route (closed forms, quadrature, brute force, hand-written integrators).
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate, special


def stable_levy_constant_1d(alpha: float) -> float:
    """``c`` in ``nu(dz) = c |z|^{-1-alpha} dz`` for the CF ``exp(-|u|^alpha)``."""
    return special.gamma(1 + alpha) * math.sin(math.pi * alpha / 2) / math.pi


def stable_mass_outside(alpha: float, r: float = 1.0) -> float:
    c = stable_levy_constant_1d(alpha)
    val, _ = integrate.quad(lambda z: c * z ** (-1 - alpha), r, np.inf)
    return 2 * val


def stable_moment_outside(alpha: float, p: float, r: float = 1.0) -> float:
    c = stable_levy_constant_1d(alpha)
    val, _ = integrate.quad(lambda z: c * z ** (p - 1 - alpha), r, np.inf)
    return 2 * val


def stable_second_moment_inside(alpha: float, r: float = 1.0) -> float:
    c = stable_levy_constant_1d(alpha)
    val, _ = integrate.quad(lambda z: c * z ** (1 - alpha), 0, r)
    return 2 * val


def brute_force_w(x, y, beta: float) -> float:
    """Minimum over all permutations of the mean matching cost, with the outer exponent."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    n = x.shape[0]
    best = math.inf
    for perm in itertools.permutations(range(n)):
        cost = math.fsum(float(np.sqrt(np.sum((x[i] - y[perm[i]]) ** 2))) ** beta for i in range(n))
        best = min(best, cost)
    mean = best / n
    return mean ** (1 / beta) if beta >= 1 else mean


def brute_force_total(x, y, beta: float) -> float:
    """Minimum total cost ``sum |x_i - y_perm(i)|^beta`` by enumeration."""
    n = len(x)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        cost = math.fsum(float(np.linalg.norm(x[i] - y[perm[i]])) ** beta for i in range(n))
        best = min(best, cost)
    return best


def rk4(f, y0: float, t_end: float, n: int = 1000) -> float:
    h = t_end / n
    y, t = y0, 0.0
    for _ in range(n):
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def gaussian_w1_to_law(sample: np.ndarray, mean: float = 0.0, std: float = 1.0) -> float:
    """``int |F_n(x) - Phi(x)| dx`` by quadrature between the sample points."""
    from scipy.stats import norm

    xs = np.sort(np.asarray(sample, float))
    n = xs.size
    lo, hi = min(xs[0], mean - 10 * std), max(xs[-1], mean + 10 * std)
    knots = np.concatenate([[lo], xs, [hi]])
    total = 0.0
    for k in range(knots.size - 1):
        a, b = knots[k], knots[k + 1]
        if b <= a:
            continue
        level = k / n
        val, _ = integrate.quad(lambda t: abs(level - norm.cdf(t, mean, std)), a, b)
        total += val
    return total
