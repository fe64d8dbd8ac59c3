"""Empirical measures, exact Wasserstein distances and the moment functional.

Two cost conventions are used for ``W_beta``:

* ``beta >= 1``: ``(min_pi mean |x - y|^beta) ** (1 / beta)``;
* ``beta < 1``:  ``min_pi mean |x - y|^beta`` (no outer root).

Both share the exponent ``1/beta ∧ 1`` of :func:`moment_m_beta`.  Every
distance helper returns plain floats; :func:`convention` gives the label.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import ConfigurationError, ContractError, ParameterError, SizeError
from .levy_noise import TimeGrid

#: Largest support size handed to the exact assignment solver.
N_EXACT = 512


def outer_exponent(beta: float) -> float:
    return 1.0 / beta if beta >= 1 else 1.0


def convention(beta: float) -> str:
    return f"W_{beta:g}:root" if beta >= 1 else f"W_{beta:g}:cost"


class EmpiricalMeasure:
    """Uniform atomic measure on ``N`` points of R^d."""

    __slots__ = ("support",)

    def __init__(self, support):
        pts = np.asarray(support, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ParameterError("an empirical measure needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("support points must be finite")
        self.support = pts

    @property
    def n(self) -> int:
        return self.support.shape[0]

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def mean(self) -> np.ndarray:
        return self.support.mean(axis=0)

    def translate(self, shift) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.support + np.asarray(shift, dtype=float))

    def __repr__(self):
        return f"EmpiricalMeasure(n={self.n}, dim={self.dim})"


class MeanSummary:
    """Stand-in for a measure known only through its mean vector."""

    __slots__ = ("_mean",)

    def __init__(self, mean):
        self._mean = np.atleast_1d(np.asarray(mean, dtype=float))

    @property
    def dim(self) -> int:
        return self._mean.size

    def mean(self) -> np.ndarray:
        return self._mean

    def __repr__(self):
        return f"MeanSummary({self._mean.tolist()})"


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------


def _as_points(mu) -> np.ndarray:
    return mu.support if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu).support


def w1_exact_1d(mu, nu) -> float:
    """Exact ``W_1`` between one-dimensional empirical measures.

    Equal sizes use the sorted (monotone) coupling; otherwise the quantile
    functions are integrated over the merged breakpoints ``i/n`` and ``j/m``.
    """
    x, y = _as_points(mu), _as_points(nu)
    if x.shape[1] != 1 or y.shape[1] != 1:
        raise ContractError("w1_exact_1d needs one-dimensional measures")
    return _w1_sorted(np.sort(x[:, 0]), np.sort(y[:, 0]))


def _w1_sorted(xs: np.ndarray, ys: np.ndarray) -> float:
    n, m = xs.size, ys.size
    if n == m:
        return math.fsum(np.abs(xs - ys)) / n
    if m % n == 0:
        return float(np.mean(np.abs(np.repeat(xs, m // n) - ys)))
    if n % m == 0:
        return float(np.mean(np.abs(xs - np.repeat(ys, n // m))))
    # breakpoints of both quantile functions, in units of 1/(n*m)
    cuts = np.union1d(np.arange(n + 1) * m, np.arange(m + 1) * n)
    widths = np.diff(cuts) / (n * m)
    mid = (cuts[:-1] + cuts[1:]) // 2
    return float(np.sum(widths * np.abs(xs[mid // m] - ys[mid // n])))


def w1_to_sorted_reference(sample: np.ndarray, sorted_ref: np.ndarray) -> float:
    """``W_1`` between a 1-d sample and an already sorted reference cloud."""
    return _w1_sorted(np.sort(np.asarray(sample, dtype=float).ravel()), sorted_ref)


def cost_matrix(x: np.ndarray, y: np.ndarray, beta: float) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return dist if beta == 1 else dist**beta


def optimal_matching(mu, nu, beta: float) -> tuple[np.ndarray, float]:
    """Optimal permutation and its total cost ``sum |x_i - y_perm(i)|^beta``."""
    x, y = _as_points(mu), _as_points(nu)
    if x.shape != y.shape:
        raise ContractError("exact matching needs supports of equal size and dimension")
    if x.shape[0] > N_EXACT:
        raise SizeError(
            f"N={x.shape[0]} exceeds the exact-assignment cap {N_EXACT}; "
            "use w1_exact_1d for d=1 or subsample"
        )
    cost = cost_matrix(x, y, beta)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty_like(cols)
    perm[rows] = cols
    return perm, math.fsum(cost[rows, cols])


def w_beta_exact_matching(mu, nu, beta: float) -> float:
    """Exact ``W_beta`` of two equal-size empirical measures via optimal assignment."""
    if not (0.0 < beta <= 2.0):
        raise ParameterError("beta must lie in (0, 2]")
    x = _as_points(mu)
    _, total = optimal_matching(mu, nu, beta)
    return (total / x.shape[0]) ** outer_exponent(beta)


def w_beta(mu, nu, beta: float) -> float:
    """``W_beta`` choosing the cheapest exact route for the inputs."""
    x, y = _as_points(mu), _as_points(nu)
    if x.shape[1] == 1 and beta >= 1:
        xs, ys = np.sort(x[:, 0]), np.sort(y[:, 0])
        if beta == 1:
            return _w1_sorted(xs, ys)
        if xs.size == ys.size:
            return (math.fsum(np.abs(xs - ys) ** beta) / xs.size) ** (1.0 / beta)
    return w_beta_exact_matching(x, y, beta)


def moment_m_beta(mu, beta: float) -> float:
    """``(mean |x|^beta) ** (1/beta ∧ 1)``."""
    if beta <= 0:
        raise ParameterError("beta must be positive")
    x = _as_points(mu)
    norms = np.linalg.norm(x, axis=1)
    return (math.fsum(norms**beta) / x.shape[0]) ** outer_exponent(beta)


# ---------------------------------------------------------------------------
# measure flows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeasureFlow:
    """A time-indexed family of measures on a grid.

    ``kind == "empirical"``: ``data`` has shape ``(K + 1, M, d)``.
    ``kind == "mean"``: ``data`` has shape ``(K + 1, d)``.
    """

    grid: TimeGrid
    kind: str
    data: np.ndarray

    def __post_init__(self):
        if self.kind not in ("empirical", "mean"):
            raise ParameterError(f"unknown flow representation {self.kind!r}")
        data = np.asarray(self.data, dtype=float)
        want = 3 if self.kind == "empirical" else 2
        if data.ndim != want or data.shape[0] != self.grid.nodes.size:
            raise ConfigurationError("flow data does not align with its grid")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_paths(cls, grid: TimeGrid, positions: np.ndarray) -> "MeasureFlow":
        return cls(grid, "empirical", positions)

    @classmethod
    def constant(cls, grid: TimeGrid, points) -> "MeasureFlow":
        pts = _as_points(points)
        return cls(grid, "empirical", np.broadcast_to(pts, (grid.nodes.size,) + pts.shape).copy())

    @property
    def dim(self) -> int:
        return self.data.shape[-1]

    def at(self, k: int):
        if self.kind == "mean":
            return MeanSummary(self.data[k])
        return EmpiricalMeasure(self.data[k])

    def means(self) -> np.ndarray:
        return self.data if self.kind == "mean" else self.data.mean(axis=1)

    def to_mean(self) -> "MeasureFlow":
        return self if self.kind == "mean" else MeasureFlow(self.grid, "mean", self.means())


def flow_distance_profile(f: MeasureFlow, g: MeasureFlow, beta: float) -> np.ndarray:
    """Per-node distances between two flows on the same grid."""
    if f.grid != g.grid:
        raise ConfigurationError("flows live on different grids")
    if f.kind != g.kind:
        raise ConfigurationError("flows use different representations")
    if f.kind == "mean":
        return np.linalg.norm(f.data - g.data, axis=1)
    return np.array([w_beta(f.data[k], g.data[k], beta) for k in range(f.data.shape[0])])


def flow_distance(f: MeasureFlow, g: MeasureFlow, beta: float) -> float:
    """Uniform-in-time distance ``sup_k W_beta(f_k, g_k)`` (means for mean-only flows)."""
    return float(np.max(flow_distance_profile(f, g, beta)))
