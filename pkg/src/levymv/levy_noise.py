"""Pure-jump Lévy noise built from its small-jump / big-jump decomposition.

A noise path on ``[0, T]`` is stored as

* per-step compensated small-jump increments (jumps inside the unit ball),
* an explicit, time-ordered list of big jumps (``|z| >= 1``),
* a per-step deterministic compensator drift, which is non-zero only after a
  truncation at level ``R`` has removed the jumps with ``|z| >= R`` from an
  asymmetric jump measure.

Jumps of modulus below a step-dependent cutoff ``eps`` are replaced by a
Gaussian vector with matching covariance; jumps with ``eps <= |z| < 1`` are
simulated exactly and summed into the step increment.  For the isotropic
stable measure ``eps = dt ** (1 / alpha)``.

Every random draw goes through a :class:`SeedLineage`, a counter-based
(Philox) stream keyed by ``(master, particle, replication, purpose)``, so that
truncated and untruncated runs, or runs with different particle counts, see
exactly the same randomness for a given particle.
"""
from __future__ import annotations

import functools
import math
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate, stats

from .exceptions import ConfigurationError, ParameterError

#: Radius separating small (compensated) from big (raw) jumps.
INNER_RADIUS = 1.0

# stream namespaces, see SeedLineage.purpose
PURPOSE_PARTICLE = 0
PURPOSE_REFERENCE = 1
PURPOSE_PICARD = 2
PURPOSE_PICARD_INIT = 3
PURPOSE_MOMENT = 4
PURPOSE_VALIDATE = 5


# ---------------------------------------------------------------------------
# time grids and random streams
# ---------------------------------------------------------------------------


class TimeGrid:
    """Strictly increasing time nodes ``0 = t_0 < ... < t_K = T``."""

    __slots__ = ("nodes",)

    def __init__(self, nodes):
        nodes = np.array(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ParameterError("a time grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ParameterError("time grid must start at 0")
        if not np.all(np.isfinite(nodes)) or np.any(np.diff(nodes) <= 0):
            raise ParameterError("time grid nodes must be finite and strictly increasing")
        nodes.setflags(write=False)
        self.nodes = nodes

    @classmethod
    def uniform(cls, horizon: float, n_steps: int) -> "TimeGrid":
        if horizon <= 0:
            raise ParameterError("horizon must be positive")
        if n_steps < 1:
            raise ParameterError("n_steps must be >= 1")
        nodes = np.linspace(0.0, horizon, n_steps + 1)
        nodes[-1] = horizon
        return cls(nodes)

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def refine(self, times) -> "TimeGrid":
        """Return a grid that also contains every time in ``times`` (jump-adapted)."""
        times = np.asarray(times, dtype=float).ravel()
        if times.size and (times.min() < 0 or times.max() > self.horizon):
            raise ParameterError("refinement times must lie in [0, T]")
        return TimeGrid(np.union1d(self.nodes, times))

    def step_index(self, times) -> np.ndarray:
        """Index ``k`` of the step ``(t_k, t_{k+1}]`` containing each time."""
        k = np.searchsorted(self.nodes, np.asarray(times, dtype=float), side="left") - 1
        return np.clip(k, 0, self.n_steps - 1)

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.nodes.shape == other.nodes.shape and bool(np.all(self.nodes == other.nodes))

    def __hash__(self):
        return hash(self.nodes.tobytes())

    def __repr__(self):
        return f"TimeGrid(T={self.horizon:g}, n_steps={self.n_steps})"


@dataclass(frozen=True)
class SeedLineage:
    """Coordinates of one independent random stream.

    ``purpose`` separates otherwise colliding families of streams (particle
    noise, reference clouds, Picard iterations, ...).
    """

    master: int
    particle: int = 0
    replication: int = 0
    purpose: int = PURPOSE_PARTICLE

    def generator(self) -> np.random.Generator:
        # the (master, purpose, replication) family fixes the Philox key; the
        # particle index selects a disjoint block of 2**128 counter values
        counter = np.zeros(4, dtype=np.uint64)
        counter[2] = self.particle
        return np.random.Generator(
            np.random.Philox(counter=counter, key=_family_key(self.master, self.purpose, self.replication))
        )


@functools.lru_cache(maxsize=4096)
def _family_key(master: int, purpose: int, replication: int) -> np.ndarray:
    key = np.random.SeedSequence(master, spawn_key=(purpose, replication)).generate_state(2, np.uint64)
    key.setflags(write=False)
    return key


# ---------------------------------------------------------------------------
# Lévy measures
# ---------------------------------------------------------------------------


def _unit_directions(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        return np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
    g = rng.standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere in R^dim (2 for dim=1)."""
    return 2.0 * math.pi ** (dim / 2) / math.gamma(dim / 2)


class LevyModel(ABC):
    """Jump intensity measure ``nu`` on R^d with a declared moment index ``beta``."""

    dim: int
    beta: float

    @property
    @abstractmethod
    def symmetric(self) -> bool:
        """True when ``nu`` is invariant under ``z -> -z``."""

    @abstractmethod
    def mass(self, r_in: float, r_out: float) -> float:
        """``nu({r_in <= |z| < r_out})``."""

    @abstractmethod
    def abs_moment(self, p: float, r_in: float, r_out: float) -> float:
        """``int_{r_in <= |z| < r_out} |z|^p dnu``, ``inf`` when divergent."""

    def second_moment(self, r_in: float, r_out: float) -> float:
        return self.abs_moment(2.0, r_in, r_out)

    @abstractmethod
    def mean_vector(self, r_in: float, r_out: float) -> np.ndarray:
        """``int_{r_in <= |z| < r_out} z dnu``."""

    @abstractmethod
    def sample_annulus(self, n: int, r_in, r_out: float, rng: np.random.Generator) -> np.ndarray:
        """``n`` i.i.d. draws from ``nu`` restricted to the annulus, normalised."""

    @abstractmethod
    def small_cutoff(self, dt: float) -> float:
        """Radius below which small jumps are replaced by a Gaussian over ``dt``."""

    def _check_beta(self):
        if not (0.0 < self.beta <= 2.0):
            raise ParameterError("beta must lie in (0, 2]")


@dataclass(frozen=True)
class IsotropicStable(LevyModel):
    """Rotation invariant ``alpha``-stable jump measure.

    Normalised so that ``E exp(i u.Z_t) = exp(-t |u|^alpha)``; the Lévy density
    is ``c |z|^{-d-alpha}`` with :func:`stable_levy_constant`.
    """

    alpha: float
    dim: int = 1
    beta: float | None = None

    def __post_init__(self):
        if not (0.0 < self.alpha < 2.0):
            raise ParameterError("alpha out of (0,2)")
        if self.dim < 1:
            raise ParameterError("dim must be a positive integer")
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 if self.alpha > 1 else self.alpha / 2)
        self._check_beta()
        if self.beta >= self.alpha:
            raise ParameterError(
                f"declared beta={self.beta} needs beta < alpha={self.alpha} for a stable tail"
            )

    @property
    def symmetric(self) -> bool:
        return True

    @property
    def radial_constant(self) -> float:
        """``k`` in the radial intensity ``k r^{-1-alpha} dr``."""
        return stable_levy_constant(self.alpha, self.dim) * sphere_area(self.dim)

    def radial_intensity(self, r):
        return self.radial_constant * np.asarray(r, dtype=float) ** (-1.0 - self.alpha)

    def mass(self, r_in, r_out):
        a = self.alpha
        if r_in <= 0:
            return math.inf
        outer = 0.0 if math.isinf(r_out) else r_out ** (-a)
        return max(self.radial_constant / a * (r_in ** (-a) - outer), 0.0)

    def abs_moment(self, p, r_in, r_out):
        a, k = self.alpha, self.radial_constant
        if r_out <= r_in:
            return 0.0
        if p == a:
            if r_in == 0 or math.isinf(r_out):
                return math.inf
            return k * math.log(r_out / r_in)
        if p < a and r_in == 0:
            return math.inf
        if p > a and math.isinf(r_out):
            return math.inf
        hi = 0.0 if math.isinf(r_out) else r_out ** (p - a)
        lo = 0.0 if r_in == 0 else r_in ** (p - a)
        return k * (hi - lo) / (p - a)

    def mean_vector(self, r_in, r_out):
        return np.zeros(self.dim)

    def sample_annulus(self, n, r_in, r_out, rng):
        a = self.alpha
        r_in = np.broadcast_to(np.asarray(r_in, dtype=float), (n,))
        u = rng.random(n)
        lo = r_in ** (-a)
        hi = 0.0 if math.isinf(r_out) else r_out ** (-a)
        radius = (lo - u * (lo - hi)) ** (-1.0 / a)
        return radius[:, None] * _unit_directions(n, self.dim, rng)

    def small_cutoff(self, dt):
        return min(dt ** (1.0 / self.alpha), INNER_RADIUS)


def stable_levy_constant(alpha: float, dim: int) -> float:
    """Density constant ``c`` with ``nu(dz) = c |z|^{-d-alpha} dz`` for CF ``exp(-|u|^alpha)``."""
    return (
        alpha
        * 2.0 ** (alpha - 1.0)
        * math.gamma((dim + alpha) / 2.0)
        / (math.pi ** (dim / 2.0) * math.gamma(1.0 - alpha / 2.0))
    )


@dataclass(frozen=True)
class CompoundPoisson(LevyModel):
    """Finite jump measure ``sum_k rate_k delta_{z_k}``."""

    atoms: tuple
    beta: float = 2.0
    dim: int = field(init=False)
    _points: np.ndarray = field(init=False, repr=False, compare=False)
    _rates: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts, rates = [], []
        for z, rate in self.atoms:
            pts.append(np.atleast_1d(np.asarray(z, dtype=float)))
            rates.append(float(rate))
        if not pts:
            raise ParameterError("compound Poisson measure needs at least one atom")
        dims = {p.size for p in pts}
        if len(dims) != 1:
            raise ParameterError("all atoms must share one dimension")
        points = np.vstack(pts)
        rates = np.asarray(rates)
        if np.any(np.linalg.norm(points, axis=1) == 0):
            raise ParameterError("a Lévy measure cannot charge the origin")
        if np.any(rates < 0) or not np.all(np.isfinite(rates)) or not np.all(np.isfinite(points)):
            raise ParameterError("atom rates must be finite and non-negative")
        object.__setattr__(
            self, "atoms", tuple((tuple(map(float, p)), float(r)) for p, r in zip(points, rates))
        )
        object.__setattr__(self, "dim", int(points.shape[1]))
        object.__setattr__(self, "_points", points)
        object.__setattr__(self, "_rates", rates)
        self._check_beta()

    @property
    def symmetric(self) -> bool:
        table = {}
        for p, r in zip(map(tuple, self._points), self._rates):
            table[p] = table.get(p, 0.0) + r
        return all(table.get(tuple(-np.asarray(p)), 0.0) == r for p, r in table.items())

    def _select(self, r_in, r_out):
        norms = np.linalg.norm(self._points, axis=1)
        return (norms >= r_in) & (norms < r_out)

    def mass(self, r_in, r_out):
        return float(self._rates[self._select(r_in, r_out)].sum())

    def abs_moment(self, p, r_in, r_out):
        sel = self._select(r_in, r_out)
        norms = np.linalg.norm(self._points[sel], axis=1)
        return float(np.sum(self._rates[sel] * norms**p))

    def mean_vector(self, r_in, r_out):
        sel = self._select(r_in, r_out)
        return (self._rates[sel, None] * self._points[sel]).sum(axis=0)

    def sample_annulus(self, n, r_in, r_out, rng):
        if np.ndim(r_in):
            raise ParameterError("compound Poisson sampling takes a scalar inner radius")
        sel = np.flatnonzero(self._select(r_in, r_out))
        total = self._rates[sel].sum()
        if n == 0:
            return np.zeros((0, self.dim))
        if total == 0:
            raise ParameterError("annulus carries no mass")
        idx = rng.choice(sel, size=n, p=self._rates[sel] / total)
        return self._points[idx].copy()

    def small_cutoff(self, dt):
        return 0.0


class RadialDensity(LevyModel):
    """Isotropic measure with tabulated radial intensity ``g``.

    ``nu(|z| in dr, z/|z| in dtheta) = g(r) dr sigma(dtheta)`` with ``sigma`` the
    uniform probability on the sphere.  ``g`` is linearly interpolated between
    the table points and vanishes outside ``[radii[0], radii[-1]]``.
    """

    _SUB = 64

    def __init__(self, radii, values, dim: int = 1, beta: float = 2.0):
        radii = np.asarray(radii, dtype=float)
        values = np.asarray(values, dtype=float)
        if radii.ndim != 1 or radii.shape != values.shape or radii.size < 2:
            raise ParameterError("radii and values must be matching 1-d tables")
        if radii[0] <= 0 or np.any(np.diff(radii) <= 0):
            raise ParameterError("radii must be positive and strictly increasing")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ParameterError("radial intensity must be finite and non-negative")
        if dim < 1:
            raise ParameterError("dim must be a positive integer")
        self.radii, self.values, self.dim, self.beta = radii, values, int(dim), float(beta)
        self._check_beta()
        knots = np.union1d(radii, [INNER_RADIUS]) if radii[0] < INNER_RADIUS < radii[-1] else radii
        fine = np.concatenate(
            [np.linspace(a, b, self._SUB, endpoint=False) for a, b in zip(knots[:-1], knots[1:])]
            + [knots[-1:]]
        )
        g = np.interp(fine, radii, values)
        self._r = fine
        self._cum0 = integrate.cumulative_trapezoid(g, fine, initial=0.0)
        self._cum2 = integrate.cumulative_trapezoid(g * fine**2, fine, initial=0.0)

    def __repr__(self):
        return f"RadialDensity(n_table={self.radii.size}, dim={self.dim}, beta={self.beta})"

    @property
    def symmetric(self) -> bool:
        return True

    def radial_intensity(self, r):
        return np.interp(r, self.radii, self.values, left=0.0, right=0.0)

    def _cum(self, table, r):
        return float(np.interp(r, self._r, table))

    def mass(self, r_in, r_out):
        return max(self._cum(self._cum0, r_out) - self._cum(self._cum0, r_in), 0.0)

    def second_moment(self, r_in, r_out):
        return max(self._cum(self._cum2, r_out) - self._cum(self._cum2, r_in), 0.0)

    def abs_moment(self, p, r_in, r_out):
        if p == 2.0:
            return self.second_moment(r_in, r_out)
        lo, hi = max(r_in, self.radii[0]), min(r_out, self.radii[-1])
        if hi <= lo:
            return 0.0
        pts = self.radii[(self.radii > lo) & (self.radii < hi)]
        val, _ = integrate.quad(
            lambda r: r**p * np.interp(r, self.radii, self.values),
            lo, hi, points=pts if pts.size else None, limit=max(100, 4 * pts.size),
        )
        return val

    def mean_vector(self, r_in, r_out):
        return np.zeros(self.dim)

    def sample_annulus(self, n, r_in, r_out, rng):
        r_in = np.broadcast_to(np.asarray(r_in, dtype=float), (n,))
        lo = np.interp(r_in, self._r, self._cum0)
        hi = np.interp(min(r_out, self._r[-1]), self._r, self._cum0)
        u = lo + rng.random(n) * (hi - lo)
        radius = np.interp(u, self._cum0, self._r)
        return radius[:, None] * _unit_directions(n, self.dim, rng)

    def small_cutoff(self, dt):
        r0 = float(self.radii[0])
        if r0 >= INNER_RADIUS or self.mass(r0, INNER_RADIUS) * dt <= 1.0:
            return min(r0, INNER_RADIUS)
        # about one exactly simulated small jump per step
        target = self._cum(self._cum0, INNER_RADIUS) - 1.0 / dt
        return float(np.interp(target, self._cum0, self._r))


def beta_moment(model: LevyModel, beta: float) -> float:
    """``int_{|z| >= 1} |z|^beta dnu``; ``math.inf`` when the integral diverges."""
    if beta <= 0:
        raise ParameterError("beta must be positive")
    return model.abs_moment(beta, INNER_RADIUS, math.inf)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def _positive_stable(a: float, size, rng: np.random.Generator) -> np.ndarray:
    """Kanter's representation: Laplace transform ``exp(-s^a)``, ``0 < a < 1``."""
    u = rng.uniform(0.0, math.pi, size)
    e = rng.exponential(1.0, size)
    return (
        np.sin(a * u) / np.sin(u) ** (1.0 / a) * (np.sin((1.0 - a) * u) / e) ** ((1.0 - a) / a)
    )


def sample_stable_increment(alpha: float, dt: float, dim: int, rng: np.random.Generator, size=None):
    """Increment over ``dt`` of the isotropic stable process with CF ``exp(-t|u|^alpha)``.

    Uses the sub-Gaussian representation ``sqrt(2 A) G`` where ``A`` is a
    positive ``alpha/2``-stable variable and ``G`` a standard Gaussian vector.
    ``alpha = 2`` gives a centred Gaussian with covariance ``2 dt I``.

    Returns shape ``(dim,)`` or ``(size, dim)``.
    """
    if not (0.0 < alpha <= 2.0):
        raise ParameterError("alpha out of (0,2]")
    if dt < 0:
        raise ParameterError("dt must be non-negative")
    if dim < 1:
        raise ParameterError("dim must be a positive integer")
    n = 1 if size is None else int(size)
    if dt == 0:
        out = np.zeros((n, dim))
    else:
        g = rng.standard_normal((n, dim))
        if alpha == 2.0:
            scale = np.full((n, 1), math.sqrt(2.0))
        else:
            scale = np.sqrt(2.0 * _positive_stable(alpha / 2.0, n, rng))[:, None]
        out = dt ** (1.0 / alpha) * scale * g
    return out[0] if size is None else out


class BigJumpEvent(NamedTuple):
    time: float
    size: np.ndarray


def _draw_big_jumps(model: LevyModel, horizon: float, rng: np.random.Generator):
    lam = model.mass(INNER_RADIUS, math.inf)
    n = int(rng.poisson(lam * horizon)) if lam > 0 else 0
    times = np.sort(rng.uniform(0.0, horizon, n))
    sizes = model.sample_annulus(n, INNER_RADIUS, math.inf, rng) if n else np.zeros((0, model.dim))
    return times, sizes


def sample_big_jumps(model: LevyModel, horizon: float, outer_radius: float, rng) -> list[BigJumpEvent]:
    """Jumps with ``1 <= |z| < outer_radius`` of one path on ``[0, horizon]``.

    The full big-jump configuration is drawn first and then thinned, so for a
    given stream the list at a smaller radius is a subset of the list at a
    larger one.
    """
    if outer_radius <= INNER_RADIUS:
        raise ParameterError("outer radius must exceed the inner radius (empty annulus)")
    times, sizes = _draw_big_jumps(model, horizon, rng)
    keep = np.linalg.norm(sizes, axis=1) < outer_radius
    return [BigJumpEvent(float(t), s) for t, s in zip(times[keep], sizes[keep])]


def synthesize_small_jump_increments(model: LevyModel, grid: TimeGrid, rng) -> np.ndarray:
    """Compensated integral of the jumps in the unit ball over each step, shape ``(K, d)``."""
    steps = grid.steps
    d = model.dim
    if isinstance(model, CompoundPoisson):
        sel = model._select(0.0, INNER_RADIUS)
        if not sel.any():
            return np.zeros((steps.size, d))
        pts, rates = model._points[sel], model._rates[sel]
        counts = rng.poisson(np.outer(steps, rates))
        return counts @ pts - np.outer(steps, rates @ pts)

    eps, std, cum_rates, drift = _small_jump_plan(model, grid)
    out = rng.standard_normal((steps.size, d)) * std[:, None]
    # one Poisson count for the whole path, split over the steps in proportion
    # to their rates (equivalent in law to independent per-step counts)
    total = int(rng.poisson(cum_rates[-1])) if cum_rates[-1] > 0 else 0
    if total:
        owner = np.searchsorted(cum_rates, rng.random(total) * cum_rates[-1], side="right")
        np.minimum(owner, steps.size - 1, out=owner)
        jumps = model.sample_annulus(total, eps[owner], INNER_RADIUS, rng)
        for j in range(d):
            out[:, j] += np.bincount(owner, weights=jumps[:, j], minlength=steps.size)
    if drift is not None:
        out -= drift
    return out


@functools.lru_cache(maxsize=128)
def _small_jump_plan(model: LevyModel, grid: TimeGrid):
    """Per-step cutoff, Gaussian std, exact-jump rate and compensator (cached)."""
    steps = grid.steps
    eps = np.array([model.small_cutoff(h) for h in steps])
    var = np.array([model.second_moment(0.0, e) for e in eps]) * steps / model.dim
    rates = np.array([model.mass(e, INNER_RADIUS) for e in eps]) * steps
    drift = None
    if not model.symmetric:
        drift = steps[:, None] * np.array([model.mean_vector(e, INNER_RADIUS) for e in eps])
    return eps, np.sqrt(var), np.cumsum(rates), drift


# ---------------------------------------------------------------------------
# realizations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseRealization:
    """One noise path on a grid (immutable)."""

    model: LevyModel
    grid: TimeGrid
    small_increments: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    compensator_drift: np.ndarray
    lineage: SeedLineage | None = None
    outer_radius: float = math.inf

    def __post_init__(self):
        for name in ("small_increments", "jump_times", "jump_sizes", "compensator_drift"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(np.diff(self.jump_times) <= 0):
            raise ParameterError("big-jump times must be strictly increasing")

    @property
    def big_jumps(self) -> list[BigJumpEvent]:
        return [BigJumpEvent(float(t), s.copy()) for t, s in zip(self.jump_times, self.jump_sizes)]

    @property
    def jump_steps(self) -> np.ndarray:
        """Step index whose right node receives each big jump."""
        return self.grid.step_index(self.jump_times)

    def big_increments(self) -> np.ndarray:
        out = np.zeros_like(self.small_increments)
        np.add.at(out, self.jump_steps, self.jump_sizes)
        return out

    def increments(self) -> np.ndarray:
        return self.small_increments + self.compensator_drift + self.big_increments()

    def path(self) -> np.ndarray:
        """Noise values at the grid nodes, shape ``(K + 1, d)``."""
        inc = self.increments()
        return np.vstack([np.zeros((1, inc.shape[1])), np.cumsum(inc, axis=0)])


def realize_noise(
    model: LevyModel,
    grid: TimeGrid,
    lineage: SeedLineage | None = None,
    *,
    rng: np.random.Generator | None = None,
    outer_radius: float = math.inf,
) -> NoiseRealization:
    """Draw one noise path.  Big jumps are drawn before the grid-dependent part."""
    if rng is None:
        if lineage is None:
            raise ParameterError("need a seed lineage or a generator")
        rng = lineage.generator()
    times, sizes = _draw_big_jumps(model, grid.horizon, rng)
    small = synthesize_small_jump_increments(model, grid, rng)
    noise = NoiseRealization(
        model, grid, small, times, sizes, np.zeros_like(small), lineage, math.inf
    )
    return noise if math.isinf(outer_radius) else truncate_realization(noise, outer_radius)


def truncate_realization(noise: NoiseRealization, level: float) -> NoiseRealization:
    """Drop big jumps with ``|z| >= level`` and compensate the retained annulus.

    The result shares the seed lineage of ``noise``; ``level = inf`` returns the
    realization unchanged.
    """
    if level < INNER_RADIUS:
        raise ParameterError("truncation level must be >= 1")
    if math.isinf(level):
        return noise
    keep = np.linalg.norm(noise.jump_sizes, axis=1) < level
    drift = noise.model.mean_vector(INNER_RADIUS, level)
    comp = -noise.grid.steps[:, None] * drift[None, :]
    return replace(
        noise,
        jump_times=noise.jump_times[keep],
        jump_sizes=noise.jump_sizes[keep],
        compensator_drift=comp,
        outer_radius=float(level),
    )


@dataclass(frozen=True)
class EnsembleNoise:
    """Noise for ``n`` particles on one grid, laid out for vectorised stepping.

    ``small`` has shape ``(n, K, d)``; big jumps are kept as flat arrays so that
    truncation only needs a mask.
    """

    model: LevyModel
    grid: TimeGrid
    small: np.ndarray
    compensator: np.ndarray
    jump_particle: np.ndarray
    jump_step: np.ndarray
    jump_sizes: np.ndarray
    outer_radius: float = math.inf

    @classmethod
    def from_realizations(cls, noises: Sequence[NoiseRealization]) -> "EnsembleNoise":
        if not noises:
            raise ParameterError("empty ensemble")
        grid, model = noises[0].grid, noises[0].model
        if any(nz.grid != grid for nz in noises):
            raise ConfigurationError("all realizations must share one grid")
        counts = [nz.jump_times.size for nz in noises]
        d = model.dim
        return cls(
            model,
            grid,
            np.stack([nz.small_increments for nz in noises]),
            np.array(noises[0].compensator_drift),
            np.repeat(np.arange(len(noises)), counts),
            np.concatenate([nz.jump_steps for nz in noises]) if sum(counts) else np.zeros(0, int),
            np.concatenate([nz.jump_sizes for nz in noises]) if sum(counts) else np.zeros((0, d)),
            noises[0].outer_radius,
        )

    @property
    def n_particles(self) -> int:
        return self.small.shape[0]

    def big_dense(self) -> np.ndarray:
        out = np.zeros_like(self.small)
        np.add.at(out, (self.jump_particle, self.jump_step), self.jump_sizes)
        return out

    def subset(self, n: int) -> "EnsembleNoise":
        keep = self.jump_particle < n
        return replace(
            self,
            small=self.small[:n],
            jump_particle=self.jump_particle[keep],
            jump_step=self.jump_step[keep],
            jump_sizes=self.jump_sizes[keep],
        )

    def truncated(self, level: float) -> "EnsembleNoise":
        if level < INNER_RADIUS:
            raise ParameterError("truncation level must be >= 1")
        if math.isinf(level):
            return self
        keep = np.linalg.norm(self.jump_sizes, axis=1) < level
        drift = self.model.mean_vector(INNER_RADIUS, level)
        return replace(
            self,
            compensator=-self.grid.steps[:, None] * drift[None, :],
            jump_particle=self.jump_particle[keep],
            jump_step=self.jump_step[keep],
            jump_sizes=self.jump_sizes[keep],
            outer_radius=float(level),
        )


def realize_ensemble(
    model: LevyModel,
    grid: TimeGrid,
    master: int,
    n_particles: int,
    *,
    replication: int = 0,
    purpose: int = PURPOSE_PARTICLE,
    first_particle: int = 0,
    pre_draw=None,
):
    """Noise for particles ``first_particle, ..., first_particle + n - 1``.

    Particle ``i`` uses ``SeedLineage(master, i, replication, purpose)`` and
    the same draw order as :func:`realize_noise`, so its path does not depend
    on how many other particles are drawn.  ``pre_draw(rng)``, when given, is
    called first on each particle stream (initial conditions) and its results
    are returned stacked.

    Returns ``(pre_draws or None, EnsembleNoise)``.
    """
    K, d = grid.n_steps, model.dim
    small = np.empty((n_particles, K, d))
    pre, j_part, j_step, j_size = [], [], [], []
    for i in range(n_particles):
        rng = SeedLineage(master, first_particle + i, replication, purpose).generator()
        if pre_draw is not None:
            pre.append(pre_draw(rng))
        times, sizes = _draw_big_jumps(model, grid.horizon, rng)
        small[i] = synthesize_small_jump_increments(model, grid, rng)
        if times.size:
            j_part.append(np.full(times.size, i))
            j_step.append(grid.step_index(times))
            j_size.append(sizes)
    noise = EnsembleNoise(
        model,
        grid,
        small,
        np.zeros((K, d)),
        np.concatenate(j_part) if j_part else np.zeros(0, dtype=int),
        np.concatenate(j_step) if j_step else np.zeros(0, dtype=int),
        np.concatenate(j_size) if j_size else np.zeros((0, d)),
    )
    return (np.stack(pre) if pre_draw is not None else None), noise


# ---------------------------------------------------------------------------
# binary event log
# ---------------------------------------------------------------------------

_NOISE_MAGIC = b"LVMVNOIS"
_HEADER = struct.Struct("<8sIIIIdQQQd")


def write_event_log(path, noise: NoiseRealization) -> None:
    """Dump a realization: header, nodes, step increments, compensator, jumps.

    All floats are little-endian float64.  Jump records are ``(time, size...)``.
    """
    lin = noise.lineage or SeedLineage(0)
    K, d = noise.small_increments.shape
    header = _HEADER.pack(
        _NOISE_MAGIC, 1, d, K, noise.jump_times.size, noise.grid.horizon,
        lin.master, lin.particle, lin.replication, noise.outer_radius,
    )
    jumps = np.column_stack([noise.jump_times, noise.jump_sizes]) if noise.jump_times.size else np.zeros((0, d + 1))
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in (noise.grid.nodes, noise.small_increments, noise.compensator_drift, jumps):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_event_log(path, model: LevyModel) -> NoiseRealization:
    raw = Path(path).read_bytes()
    magic, version, d, K, n_jumps, _, master, particle, replication, radius = _HEADER.unpack_from(raw)
    if magic != _NOISE_MAGIC or version != 1:
        raise ConfigurationError(f"{path}: not a noise event log")
    if d != model.dim:
        raise ConfigurationError("log dimension does not match the model")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    sizes = [K + 1, K * d, K * d, n_jumps * (d + 1)]
    if body.size != sum(sizes):
        raise ConfigurationError(f"{path}: truncated or corrupt event log")
    parts = np.split(body, np.cumsum(sizes)[:-1])
    jumps = parts[3].reshape(n_jumps, d + 1)
    return NoiseRealization(
        model,
        TimeGrid(parts[0]),
        parts[1].reshape(K, d),
        jumps[:, 0],
        jumps[:, 1:],
        parts[2].reshape(K, d),
        SeedLineage(master, particle, replication),
        radius,
    )


# ---------------------------------------------------------------------------
# statistical validation battery
# ---------------------------------------------------------------------------


def _poisson_chi2(counts: np.ndarray, mean: float):
    kmax = int(counts.max())
    expected = stats.poisson.pmf(np.arange(kmax + 1), mean) * counts.size
    expected[-1] += stats.poisson.sf(kmax, mean) * counts.size
    observed = np.bincount(counts, minlength=kmax + 1).astype(float)
    # merge sparse cells into their neighbour until every expectation is >= 5
    obs, exp = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= 5:
            obs.append(o_acc)
            exp.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0:
        if exp:
            obs[-1] += o_acc
            exp[-1] += e_acc
        else:
            obs.append(o_acc)
            exp.append(e_acc)
    if len(exp) < 2:
        return math.nan, 1.0
    res = stats.chisquare(obs, exp)
    return float(res.statistic), float(res.pvalue)


def validate_noise(
    model: LevyModel,
    seed: int,
    *,
    horizon: float = 1.0,
    n_paths: int = 10_000,
    cf_samples: int = 100_000,
    cf_alpha: float = 1.5,
    cf_points: Sequence[float] = (0.5, 1.0, 2.0),
    given_count: int = 4,
    significance: float = 0.01,
) -> dict:
    """Goodness-of-fit battery for the samplers.

    * big-jump counts vs Poisson(lambda T), chi-squared;
    * jump times of paths with exactly ``given_count`` jumps vs Uniform[0,T], KS;
    * all sorted jump times pooled vs Uniform[0,T] (order-statistics law), KS;
    * stable-increment characteristic function at ``cf_points``, 3 standard errors;
    * self-similarity ``X(c dt) = c^{1/alpha} X(dt)`` in law, two-sample KS.
    """
    results = {}
    lam = model.mass(INNER_RADIUS, math.inf) * horizon
    counts = np.empty(n_paths, dtype=int)
    given, pooled = [], []
    for p in range(n_paths):
        rng = SeedLineage(seed, p, 0, PURPOSE_VALIDATE).generator()
        times, _ = _draw_big_jumps(model, horizon, rng)
        counts[p] = times.size
        pooled.append(times)
        if times.size == given_count:
            given.append(times)
    stat, pval = _poisson_chi2(counts, lam)
    results["poisson_count_chi2"] = {
        "statistic": stat, "pvalue": pval, "expected_mean": lam,
        "sample_mean": float(counts.mean()), "passed": pval >= significance,
    }
    uniform = stats.uniform(loc=0.0, scale=horizon).cdf
    if given:
        ks = stats.kstest(np.concatenate(given), uniform)
        results["conditional_times_ks"] = {
            "n": given_count, "paths": len(given), "statistic": float(ks.statistic),
            "pvalue": float(ks.pvalue), "passed": bool(ks.pvalue >= significance),
        }
    all_times = np.concatenate(pooled) if pooled else np.zeros(0)
    if all_times.size:
        ks = stats.kstest(all_times, uniform)
        results["order_statistics_ks"] = {
            "statistic": float(ks.statistic), "pvalue": float(ks.pvalue),
            "passed": bool(ks.pvalue >= significance),
        }

    rng = SeedLineage(seed, 0, 1, PURPOSE_VALIDATE).generator()
    x = sample_stable_increment(cf_alpha, 1.0, 1, rng, size=cf_samples)[:, 0]
    cf_rows = []
    for u in cf_points:
        c = np.cos(u * x)
        est, se = float(c.mean()), float(c.std(ddof=1) / math.sqrt(c.size))
        exact = math.exp(-abs(u) ** cf_alpha)
        cf_rows.append({"u": u, "estimate": est, "exact": exact, "se": se,
                        "passed": abs(est - exact) <= 3 * se})
    results["stable_cf"] = {"alpha": cf_alpha, "points": cf_rows,
                            "passed": all(r["passed"] for r in cf_rows)}

    c_scale, n_scale = 3.0, 10_000
    rng_a = SeedLineage(seed, 0, 2, PURPOSE_VALIDATE).generator()
    rng_b = SeedLineage(seed, 0, 3, PURPOSE_VALIDATE).generator()
    lhs = sample_stable_increment(cf_alpha, c_scale * 0.5, 1, rng_a, size=n_scale)[:, 0]
    rhs = c_scale ** (1 / cf_alpha) * sample_stable_increment(cf_alpha, 0.5, 1, rng_b, size=n_scale)[:, 0]
    ks = stats.ks_2samp(lhs, rhs)
    results["self_similarity_ks"] = {"statistic": float(ks.statistic), "pvalue": float(ks.pvalue),
                                     "passed": bool(ks.pvalue >= significance)}
    results["passed"] = all(v["passed"] for v in results.values() if isinstance(v, dict))
    return results

