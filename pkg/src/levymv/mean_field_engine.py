"""Euler stepping of the mean-field particle system and of its limit copies.

Both systems share one explicit scheme on a grid ``t_0 < ... < t_K``::

    X^-_{k+1} = X_k + b(t_k, X_k, mu_k) h + sigma(t_k, X_k, mu_k) (small_k + comp_k)
    X_{k+1}   = X^-_{k+1} + sigma(t_{k+1}, X^-_{k+1}, mu^-_{k+1}) big_k

where ``big_k`` collects the big jumps falling in ``(t_k, t_{k+1}]``.  For the
particle system ``mu`` is the empirical measure of the current positions (the
pre-jump positions for the jump part); for the limit copies it is read from a
frozen :class:`~levymv.measure_metrics.MeasureFlow`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .exceptions import BlowUpError, ConfigurationError, ParameterError
from .levy_noise import (
    INNER_RADIUS,
    PURPOSE_PARTICLE,
    EnsembleNoise,
    LevyModel,
    TimeGrid,
    realize_ensemble,
)
from .measure_metrics import EmpiricalMeasure, MeanSummary, MeasureFlow, moment_m_beta, w_beta

MEASURE_DEPENDENCE = ("general", "mean-only", "none")


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientSet:
    """Drift and diffusion of a McKean-Vlasov SDE.

    ``drift(t, x, mu)`` maps positions of shape ``(n, d)`` to ``(n, d)``.
    ``diffusion`` is either a constant ``(d, d)`` matrix or a callable returning
    ``(n, d, d)``.  ``mu`` is an :class:`EmpiricalMeasure`, or a
    :class:`MeanSummary` when ``measure_dependence`` is ``"mean-only"``.

    ``affine_in_x`` marks drifts of the form ``A x + g(t, mean(mu))``; together
    with a constant diffusion it makes the mean flow of the limit equation
    computable without simulation.
    """

    drift: Callable
    diffusion: object
    dim: int
    lipschitz_constant: float
    growth_constant: float
    measure_dependence: str = "general"
    affine_in_x: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.measure_dependence not in MEASURE_DEPENDENCE:
            raise ParameterError(f"measure_dependence must be one of {MEASURE_DEPENDENCE}")
        if not callable(self.diffusion):
            sig = np.atleast_2d(np.asarray(self.diffusion, dtype=float))
            if sig.shape != (self.dim, self.dim):
                raise ParameterError("constant diffusion must be a d x d matrix")
            object.__setattr__(self, "diffusion", sig)

    @property
    def constant_diffusion(self) -> bool:
        return not callable(self.diffusion)

    def sigma(self, t, x, mu):
        return self.diffusion if self.constant_diffusion else self.diffusion(t, x, mu)


def _matrix(a, dim: int) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim == 0:
        return m * np.eye(dim)
    m = np.atleast_2d(m)
    if m.shape != (dim, dim):
        raise ParameterError(f"expected a {dim}x{dim} matrix, got shape {m.shape}")
    return m


def _apply(sig: np.ndarray, v: np.ndarray) -> np.ndarray:
    if sig.ndim == 2:
        if sig.shape == (1, 1):
            return sig[0, 0] * v
        return v @ sig.T
    return np.einsum("nij,nj->ni", sig, v)


def stable_ou_coefficients(A, A_prime, B=None, dim: int = 1) -> CoefficientSet:
    """Drift ``A x + A' mean(mu)`` and constant diffusion ``B`` (identity by default)."""
    A, Ap = _matrix(A, dim), _matrix(A_prime, dim)
    B = np.eye(dim) if B is None else _matrix(B, dim)
    if not Ap.any():
        dependence = "none"
    else:
        dependence = "mean-only"

    def drift(t, x, mu):
        if dependence == "none":
            return x @ A.T
        return x @ A.T + mu.mean() @ Ap.T

    lip = float(np.linalg.norm(A, 2) + np.linalg.norm(Ap, 2))
    return CoefficientSet(
        drift, B, dim, lip, max(lip, float(np.linalg.norm(B, 2))), dependence,
        affine_in_x=True, name="stable_ou", params={"A": A, "A_prime": Ap, "B": B},
    )


def sine_mean_field_coefficients(A=-1.0, kappa=1.0, B=None, dim: int = 1) -> CoefficientSet:
    """Drift ``A x + kappa sin(mean(mu))`` (componentwise sine); diffusion ``B``."""
    A = _matrix(A, dim)
    B = np.eye(dim) if B is None else _matrix(B, dim)

    def drift(t, x, mu):
        return x @ A.T + kappa * np.sin(mu.mean())

    lip = float(np.linalg.norm(A, 2) + abs(kappa))
    return CoefficientSet(
        drift, B, dim, lip, max(lip, abs(kappa), float(np.linalg.norm(B, 2))), "mean-only",
        affine_in_x=True, name="sine_mean_field", params={"A": A, "kappa": kappa, "B": B},
    )


def sine_interaction_coefficients(a=1.0, kappa=1.0, sigma0=1.0, sigma1=0.0, dim: int = 1) -> CoefficientSet:
    """Genuinely measure dependent, W_1-Lipschitz coefficients.

    ``b(x, mu) = -a x + kappa * int sin(x - y) dmu(y)`` (componentwise) and
    ``sigma(x, mu) = (sigma0 + sigma1 cos(mean_1(mu))) I``.
    """

    def drift(t, x, mu):
        if not isinstance(mu, EmpiricalMeasure):
            raise ConfigurationError("sine interaction needs an empirical measure")
        y = mu.support
        c, s = np.cos(y).mean(axis=0), np.sin(y).mean(axis=0)
        return -a * x + kappa * (np.sin(x) * c - np.cos(x) * s)

    if sigma1 == 0:
        diffusion = sigma0 * np.eye(dim)
    else:
        def diffusion(t, x, mu):
            level = sigma0 + sigma1 * math.cos(float(mu.mean()[0]))
            return np.broadcast_to(level * np.eye(dim), (x.shape[0], dim, dim))

    lip = abs(a) + 2 * abs(kappa) + abs(sigma1)
    return CoefficientSet(
        drift, diffusion, dim, lip, abs(a) + abs(kappa) + abs(sigma0) + abs(sigma1), "general",
        name="sine_interaction",
        params={"a": a, "kappa": kappa, "sigma0": sigma0, "sigma1": sigma1},
    )


def power_moment_coefficients(beta: float, dim: int = 1) -> CoefficientSet:
    """``b(x, mu) = int |y|^beta dmu(y)`` in every component, ``sigma = 0``."""

    def drift(t, x, mu):
        if isinstance(mu, MeanSummary):
            raise ConfigurationError("power-moment drift needs an empirical measure")
        val = np.mean(np.linalg.norm(mu.support, axis=1) ** beta)
        return np.full_like(x, val)

    return CoefficientSet(
        drift, np.zeros((dim, dim)), dim, 1.0, 1.0, "general",
        name="power_moment", params={"beta": beta},
    )


def zero_coefficients(dim: int = 1) -> CoefficientSet:
    return CoefficientSet(
        lambda t, x, mu: np.zeros_like(x), np.zeros((dim, dim)), dim, 0.0, 0.0, "none",
        affine_in_x=True, name="zero",
    )


def pure_noise_coefficients(dim: int = 1) -> CoefficientSet:
    return CoefficientSet(
        lambda t, x, mu: np.zeros_like(x), np.eye(dim), dim, 0.0, 1.0, "none",
        affine_in_x=True, name="pure_noise",
    )


def check_coefficient_contract(
    coeffs: CoefficientSet, rng: np.random.Generator, *, n_trials: int = 200,
    cloud: int = 16, beta: float = 1.0, t: float = 0.0, rtol: float = 1e-9,
) -> dict:
    """Probe the Lipschitz and growth bounds on random inputs.

    Returns the worst observed ratios; a contract holds when both are <= 1.
    """
    d = coeffs.dim
    worst_lip = worst_growth = 0.0
    for _ in range(n_trials):
        x, y = rng.standard_normal((2, 1, d)) * 3
        mu = EmpiricalMeasure(rng.standard_normal((cloud, d)) * 2)
        nu = EmpiricalMeasure(rng.standard_normal((cloud, d)) * 2 + rng.standard_normal(d))
        if coeffs.measure_dependence == "mean-only":
            mu_in, nu_in = MeanSummary(mu.mean()), MeanSummary(nu.mean())
        else:
            mu_in, nu_in = mu, nu
        bx, by = coeffs.drift(t, x, mu_in)[0], coeffs.drift(t, y, nu_in)[0]
        sx, sy = np.atleast_2d(coeffs.sigma(t, x, mu_in)), np.atleast_2d(coeffs.sigma(t, y, nu_in))
        sx, sy = sx.reshape(-1, d, d)[0], sy.reshape(-1, d, d)[0]
        lhs = np.linalg.norm(bx - by) + np.linalg.norm(sx - sy, 2)
        rhs = coeffs.lipschitz_constant * (np.linalg.norm(x - y) + w_beta(mu, nu, beta))
        if lhs > 0:
            worst_lip = max(worst_lip, lhs / (rhs * (1 + rtol)) if rhs > 0 else math.inf)
        size = np.linalg.norm(bx) + np.linalg.norm(sx, 2)
        bound = coeffs.growth_constant * (1 + np.linalg.norm(x) + moment_m_beta(mu, beta))
        if size > 0:
            worst_growth = max(worst_growth, size / (bound * (1 + rtol)) if bound > 0 else math.inf)
    return {"lipschitz_ratio": worst_lip, "growth_ratio": worst_growth}


# ---------------------------------------------------------------------------
# initial laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointMass:
    value: tuple
    beta: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "value", tuple(np.atleast_1d(np.asarray(self.value, float)).tolist()))

    @property
    def dim(self) -> int:
        return len(self.value)

    @property
    def mean(self) -> np.ndarray:
        return np.array(self.value)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.array(self.value)


@dataclass(frozen=True)
class Gaussian:
    mean_value: tuple
    std: float = 1.0
    beta: float = 2.0

    def __post_init__(self):
        object.__setattr__(
            self, "mean_value", tuple(np.atleast_1d(np.asarray(self.mean_value, float)).tolist())
        )

    @property
    def dim(self) -> int:
        return len(self.mean_value)

    @property
    def mean(self) -> np.ndarray:
        return np.array(self.mean_value)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(self.dim)


@dataclass(frozen=True)
class CenteredPareto:
    """Symmetric Pareto law: ``scale * (U^{-1/index} - 1)`` with a random sign per coordinate.

    Moments of order ``beta < index`` are finite.
    """

    index: float
    scale: float = 1.0
    dim: int = 1
    beta: float = 1.0

    def __post_init__(self):
        if self.index <= 0:
            raise ParameterError("Pareto index must be positive")
        if self.beta >= self.index:
            raise ParameterError("declared beta must be below the Pareto index")

    @property
    def mean(self) -> np.ndarray:
        return np.zeros(self.dim)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(self.dim)
        sign = np.where(rng.random(self.dim) < 0.5, -1.0, 1.0)
        return sign * self.scale * (u ** (-1.0 / self.index) - 1.0)


# ---------------------------------------------------------------------------
# ensemble state and stepping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleState:
    time: float
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        object.__setattr__(self, "positions", pos)
        _check_finite(pos, self.time)

    @property
    def measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.positions)


@dataclass(frozen=True)
class NoiseSlice:
    """Noise of ``n`` particles over one step."""

    dt: float
    small: np.ndarray
    compensator: np.ndarray | None = None
    big: np.ndarray | None = None


def _check_finite(x: np.ndarray, t: float):
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0])
        raise BlowUpError(bad, t)


def _euler_step(coeffs, t, dt, x, mu, small, comp, big, mu_jump, has_big=True):
    """One explicit step; ``mu_jump(x_pre)`` supplies the measure for the jump part.

    Overflow is not warned about: it is reported as :class:`BlowUpError`.
    """
    noise = small if comp is None else small + comp
    with np.errstate(over="ignore", invalid="ignore"):
        sig = coeffs.sigma(t, x, mu)
        x_new = x + coeffs.drift(t, x, mu) * dt + _apply(sig, noise)
        if has_big and big is not None:
            t1 = t + dt
            if coeffs.constant_diffusion:
                x_new = x_new + _apply(coeffs.diffusion, big)
            elif np.all(np.isfinite(x_new)):
                x_new = x_new + _apply(coeffs.sigma(t1, x_new, mu_jump(x_new)), big)
    _check_finite(x_new, t + dt)
    return x_new


def step_particle_system(state: EnsembleState, coeffs: CoefficientSet, noise: NoiseSlice) -> EnsembleState:
    """Advance every particle over one grid interval using the start-of-step empirical measure."""
    x = state.positions
    if noise.small.shape != x.shape:
        raise ConfigurationError("noise slice does not match the ensemble shape")
    x_new = _euler_step(
        coeffs, state.time, noise.dt, x, EmpiricalMeasure(x), noise.small, noise.compensator,
        noise.big, EmpiricalMeasure, has_big=noise.big is not None and bool(np.any(noise.big)),
    )
    return EnsembleState(state.time + noise.dt, x_new)


@dataclass(frozen=True)
class PathEnsemble:
    """Positions of ``N`` particles at every grid node, shape ``(K + 1, N, d)``.

    ``coupling`` (optional) holds ``|X^{i,N}_t - X^{i,inf}_t|`` at every node.
    """

    grid: TimeGrid
    positions: np.ndarray
    coupling: np.ndarray | None = None

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    @property
    def states(self) -> list[EnsembleState]:
        return [EnsembleState(float(t), p) for t, p in zip(self.grid.nodes, self.positions)]

    @property
    def running_sup(self) -> np.ndarray:
        """Per particle ``max_k |X_{t_k}|``."""
        return np.linalg.norm(self.positions, axis=2).max(axis=0)

    @property
    def coupling_sup(self) -> np.ndarray | None:
        return None if self.coupling is None else self.coupling.max(axis=0)

    def flow(self) -> MeasureFlow:
        return MeasureFlow(self.grid, "empirical", self.positions)

    def node_moments(self, beta: float) -> np.ndarray:
        """``M_beta`` of the empirical measure at each node."""
        return np.array([moment_m_beta(p, beta) for p in self.positions])

    def summary_rows(self, beta: float = 1.0):
        """Rows ``(t, mean..., M_beta, max running sup)`` for CSV output."""
        moments = self.node_moments(beta)
        running = np.maximum.accumulate(np.linalg.norm(self.positions, axis=2).max(axis=1))
        for k, t in enumerate(self.grid.nodes):
            yield [float(t), *self.positions[k].mean(axis=0).tolist(), float(moments[k]), float(running[k])]


def run_particle_system(coeffs: CoefficientSet, noise: EnsembleNoise, xi: np.ndarray) -> np.ndarray:
    """Positions ``(K + 1, N, d)`` of the interacting system driven by ``noise``."""
    grid = noise.grid
    x = np.array(xi, dtype=float).reshape(noise.n_particles, -1)
    _check_finite(x, 0.0)
    out = np.empty((grid.n_steps + 1,) + x.shape)
    out[0] = x
    big = noise.big_dense()
    has_big = big.any(axis=(0, 2))
    for k, (t, h) in enumerate(zip(grid.nodes[:-1], grid.steps)):
        x = _euler_step(
            coeffs, float(t), float(h), x, EmpiricalMeasure(x) if coeffs.measure_dependence != "none" else None,
            noise.small[:, k], noise.compensator[k], big[:, k], EmpiricalMeasure, bool(has_big[k]),
        )
        out[k + 1] = x
    return out


def run_limit_copies(coeffs: CoefficientSet, noise: EnsembleNoise, xi: np.ndarray, flow: MeasureFlow) -> np.ndarray:
    """Positions of independent copies whose coefficients read the frozen ``flow``."""
    grid = noise.grid
    if flow.grid != grid:
        raise ConfigurationError("limit flow and noise use different grids")
    if flow.kind == "mean" and coeffs.measure_dependence == "general":
        raise ConfigurationError("general coefficients need an empirical limit flow")
    x = np.array(xi, dtype=float).reshape(noise.n_particles, -1)
    _check_finite(x, 0.0)
    out = np.empty((grid.n_steps + 1,) + x.shape)
    out[0] = x
    big = noise.big_dense()
    has_big = big.any(axis=(0, 2))
    for k, (t, h) in enumerate(zip(grid.nodes[:-1], grid.steps)):
        nxt = flow.at(k + 1)
        x = _euler_step(
            coeffs, float(t), float(h), x, flow.at(k), noise.small[:, k], noise.compensator[k],
            big[:, k], lambda _x, m=nxt: m, bool(has_big[k]),
        )
        out[k + 1] = x
    return out


def draw_initial_and_noise(model, grid, xi_law, master, n, *, replication=0, purpose=PURPOSE_PARTICLE):
    """Initial conditions and noise for ``n`` particles from their own streams."""
    if xi_law.dim != model.dim:
        raise ConfigurationError("initial law and noise have different dimensions")
    return realize_ensemble(
        model, grid, master, n, replication=replication, purpose=purpose, pre_draw=xi_law.sample
    )


def simulate_particle_system(
    N: int, coeffs: CoefficientSet, model: LevyModel, grid: TimeGrid, xi_law, seed: int,
    *, replication: int = 0, jump_adapted: bool = False, truncation: float = math.inf,
) -> PathEnsemble:
    """Simulate the ``N``-particle system.  Deterministic in ``(seed, replication)``.

    With ``jump_adapted=True`` the grid is refined with every big-jump time of
    every particle, so jumps act exactly at their own time (costly for large N).
    """
    if N < 1:
        raise ParameterError("N must be >= 1")
    if coeffs.dim != model.dim:
        raise ConfigurationError("coefficients and noise have different dimensions")
    if jump_adapted:
        grid = _jump_adapted_grid(model, grid, xi_law, seed, N, replication)
    xi, noise = draw_initial_and_noise(model, grid, xi_law, seed, N, replication=replication)
    noise = noise.truncated(truncation)
    return PathEnsemble(grid, run_particle_system(coeffs, noise, xi))


def _jump_adapted_grid(model, grid, xi_law, seed, N, replication):
    from .levy_noise import SeedLineage, _draw_big_jumps

    times = []
    for i in range(N):
        rng = SeedLineage(seed, i, replication).generator()
        xi_law.sample(rng)
        t, _ = _draw_big_jumps(model, grid.horizon, rng)
        times.append(t)
    return grid.refine(np.concatenate(times)) if times else grid


def simulate_coupled_limit_copies(
    N: int, coeffs: CoefficientSet, limit_flow: MeasureFlow, model: LevyModel, grid: TimeGrid,
    xi_law, seed: int, *, replication: int = 0, particle_paths: PathEnsemble | None = None,
    truncation: float = math.inf,
) -> PathEnsemble:
    """i.i.d. copies of the limit equation sharing ``xi^i`` and ``Z^i`` with the particle run.

    When ``particle_paths`` is given the pathwise coupling differences are stored.
    """
    if limit_flow.grid != grid:
        raise ConfigurationError("limit flow is not aligned with the grid")
    xi, noise = draw_initial_and_noise(model, grid, xi_law, seed, N, replication=replication)
    noise = noise.truncated(truncation)
    pos = run_limit_copies(coeffs, noise, xi, limit_flow)
    coupling = None
    if particle_paths is not None:
        if particle_paths.grid != grid or particle_paths.positions.shape != pos.shape:
            raise ConfigurationError("particle paths do not match the coupled copies")
        coupling = np.linalg.norm(particle_paths.positions - pos, axis=2)
    return PathEnsemble(grid, pos, coupling)


# ---------------------------------------------------------------------------
# deterministic mean flows
# ---------------------------------------------------------------------------


def stable_ou_mean_flow(A, A_prime, mean0, grid: TimeGrid) -> MeasureFlow:
    """``m(t) = exp((A + A') t) m_0`` on the grid (exact mean of the limit equation)."""
    m0 = np.atleast_1d(np.asarray(mean0, dtype=float))
    d = m0.size
    M = _matrix(A, d) + _matrix(A_prime, d)
    data = np.array([expm(M * t) @ m0 for t in grid.nodes])
    return MeasureFlow(grid, "mean", data)


def discrete_mean_flow(coeffs: CoefficientSet, model: LevyModel, mean0, grid: TimeGrid,
                       truncation: float = math.inf) -> MeasureFlow:
    """Exact mean of the Euler-discretised limit chain.

    Valid for drifts affine in ``x`` with mean-only dependence and a constant
    diffusion: ``m_{k+1} = m_k + h (b(t_k, m_k, m_k) + B kappa)`` with
    ``kappa`` the mean big-jump rate ``int_{1<=|z|<R} z dnu`` minus its
    compensation for truncated noise (which cancels it).
    """
    if not (coeffs.affine_in_x and coeffs.constant_diffusion):
        raise ConfigurationError("closed mean recursion needs affine drift and constant diffusion")
    if coeffs.measure_dependence == "general":
        raise ConfigurationError("closed mean recursion needs mean-only dependence")
    m = np.atleast_1d(np.asarray(mean0, dtype=float)).copy()
    kappa = np.zeros(m.size) if math.isfinite(truncation) else model.mean_vector(INNER_RADIUS, math.inf)
    jump_drift = coeffs.diffusion @ kappa
    data = [m.copy()]
    for t, h in zip(grid.nodes[:-1], grid.steps):
        m = m + h * (coeffs.drift(float(t), m[None, :], MeanSummary(m))[0] + jump_drift)
        data.append(m.copy())
    return MeasureFlow(grid, "mean", np.array(data))
