"""Picard iteration on measure flows.

``phi`` freezes a flow ``(mu_t)``, simulates ``M`` independent paths of the
resulting ordinary SDE and returns their empirical marginals.  The solution of
the McKean-Vlasov equation is the fixed point of ``phi``; iterating it from the
constant flow of the initial law gives a constructive solver.

Distances between successive iterates carry Monte Carlo noise.  The noise
floor is the distance between two independent ``M``-sample images of the same
flow; contraction is only claimed for distances above ``FLOOR_FACTOR`` times
that floor.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, ContractError, ConvergenceError, ParameterError
from .levy_noise import PURPOSE_PICARD, PURPOSE_PICARD_INIT, LevyModel, SeedLineage, TimeGrid, realize_ensemble
from .mean_field_engine import CoefficientSet, run_limit_copies
from .measure_metrics import MeasureFlow, convention, flow_distance_profile

FLOOR_FACTOR = 3.0

# replication indices reserved for the floor and consistency draws; iterations use 1, 2, ...
_FLOOR_REPLICATION = 1 << 40
_CONSISTENCY_REPLICATION = (1 << 40) + 1


@dataclass(frozen=True)
class PicardConfig:
    """Settings of the Picard solver.

    ``tol=None`` stops once a distance falls below ``FLOOR_FACTOR`` times the
    measured noise floor.  ``common_noise=True`` reuses one noise draw for every
    iteration (variance reduction; the floor is still measured with independent
    draws).
    """

    particles_M: int = 10_000
    max_iters: int = 10
    tol: float | None = None
    beta: float = 1.0
    seed: int = 0
    common_noise: bool = False

    def __post_init__(self):
        errors = []
        if self.particles_M < 2:
            errors.append("particles_M must be >= 2")
        if self.max_iters < 1:
            errors.append("max_iters must be >= 1")
        if self.tol is not None and not self.tol > 0:
            errors.append("tol must be positive")
        if not 0 < self.beta <= 2:
            errors.append("beta must lie in (0, 2]")
        if errors:
            raise ParameterError("; ".join(errors))


@dataclass(frozen=True)
class ContractionReport:
    """Distances ``delta_k`` between successive iterates and derived diagnostics.

    ``distances[k - 1]`` is ``flow_distance(phi^k mu, phi^{k-1} mu)``.
    """

    distances: tuple
    noise_floor: float = 0.0
    tol: float = 0.0
    converged: bool = False
    beta: float = 1.0
    profiles: tuple = field(default=(), repr=False)
    consistency_distance: float | None = None

    def __post_init__(self):
        d = tuple(float(x) for x in self.distances)
        if any(x < 0 or math.isnan(x) for x in d):
            raise ParameterError("distances must be nonnegative")
        object.__setattr__(self, "distances", d)

    @property
    def iterations(self) -> int:
        return len(self.distances)

    @property
    def ratios(self) -> tuple:
        d = self.distances
        return tuple(b / a if a > 0 else math.nan for a, b in zip(d, d[1:]))

    @property
    def threshold(self) -> float:
        return FLOOR_FACTOR * self.noise_floor

    def usable_ratios(self) -> list[float]:
        """Ratios whose numerator and denominator both exceed the threshold."""
        d, thr = self.distances, self.threshold
        return [b / a for a, b in zip(d, d[1:]) if a > thr and b > thr]

    @property
    def contractive_above_floor(self) -> bool:
        return all(r < 1 for r in self.usable_ratios())

    @property
    def consistent(self) -> bool | None:
        if self.consistency_distance is None:
            return None
        return self.consistency_distance < max(self.threshold, self.tol)

    def to_dict(self) -> dict:
        ratios = (None,) + self.ratios
        rows = [
            {"iteration": k + 1, "delta": dk, "ratio": None if r is None or math.isnan(r) else r}
            for k, (dk, r) in enumerate(zip(self.distances, ratios))
        ]
        usable = self.usable_ratios()
        return {
            "convention": convention(self.beta),
            "noise_floor": self.noise_floor,
            "floor_factor": FLOOR_FACTOR,
            "tol": self.tol,
            "converged": self.converged,
            "iterations": rows,
            "contraction_ratio": contraction_ratio(self) if self.iterations >= 3 else None,
            "usable_ratio_count": len(usable),
            "contractive_above_floor": self.contractive_above_floor,
            "consistency_distance": self.consistency_distance,
            "node_profiles": [list(map(float, p)) for p in self.profiles],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def contraction_ratio(report: ContractionReport) -> float:
    """Geometric mean of the successive ratios above the noise floor.

    Returns ``0.0`` (read as "contractive") when every distance after the
    first is already at the floor.
    """
    if report.iterations < 3:
        raise ContractError("contraction ratio needs at least 3 recorded iterations")
    usable = report.usable_ratios()
    if not usable:
        return 0.0
    if any(r == 0 for r in usable):
        return 0.0
    return math.exp(math.fsum(math.log(r) for r in usable) / len(usable))


# ---------------------------------------------------------------------------
# phi
# ---------------------------------------------------------------------------


def initial_flow(xi_law, grid: TimeGrid, config: PicardConfig) -> MeasureFlow:
    """Constant-in-time flow of ``M`` draws from the initial law."""
    pts = np.stack([
        np.atleast_1d(xi_law.sample(SeedLineage(config.seed, i, 0, PURPOSE_PICARD_INIT).generator()))
        for i in range(config.particles_M)
    ])
    return MeasureFlow.constant(grid, pts)


def apply_phi(
    flow: MeasureFlow, coeffs: CoefficientSet, model: LevyModel, grid: TimeGrid,
    config: PicardConfig, xi_law, *, replication: int = 1,
) -> MeasureFlow:
    """One application of ``phi``: ``M`` frozen-flow paths and their marginals.

    The output uses the representation of the input flow.  ``replication``
    selects the noise draw; distinct values give independent noise.
    """
    if flow.grid != grid:
        raise ConfigurationError("flow is not on the solver grid")
    if flow.kind == "mean" and coeffs.measure_dependence == "general":
        raise ConfigurationError("general coefficients need an empirical flow")
    xi, noise = realize_ensemble(
        model, grid, config.seed, config.particles_M,
        replication=replication, purpose=PURPOSE_PICARD, pre_draw=xi_law.sample,
    )
    paths = run_limit_copies(coeffs, noise, xi, flow)
    out = MeasureFlow(grid, "empirical", paths)
    return out.to_mean() if flow.kind == "mean" else out


def _distance(f: MeasureFlow, g: MeasureFlow, beta: float) -> tuple[float, np.ndarray]:
    prof = flow_distance_profile(f, g, beta)
    return float(prof.max()), prof


def estimate_noise_floor(
    flow: MeasureFlow, coeffs, model, grid, config: PicardConfig, xi_law, *, image: MeasureFlow | None = None,
) -> float:
    """Distance between two independent ``M``-sample images of ``flow``."""
    if image is None:
        image = apply_phi(flow, coeffs, model, grid, config, xi_law, replication=1)
    other = apply_phi(flow, coeffs, model, grid, config, xi_law, replication=_FLOOR_REPLICATION)
    return _distance(image, other, config.beta)[0]


def solve_fixed_point(
    coeffs: CoefficientSet, model: LevyModel, grid: TimeGrid, config: PicardConfig, xi_law,
    *, representation: str | None = None, check_consistency: bool = True,
) -> tuple[MeasureFlow, ContractionReport]:
    """Iterate ``phi`` from the constant flow of the initial law.

    ``representation`` is ``"empirical"`` or ``"mean"``; by default mean-only
    and interaction-free coefficients use mean flows.  Raises
    :class:`ConvergenceError` (carrying the report) when ``max_iters`` is
    exhausted before a distance drops to the tolerance.
    """
    if representation is None:
        representation = "empirical" if coeffs.measure_dependence == "general" else "mean"
    if representation == "mean" and coeffs.measure_dependence == "general":
        raise ConfigurationError("general coefficients need an empirical flow")
    if representation == "empirical" and coeffs.dim > 1:
        raise ConfigurationError("empirical flows are compared exactly only in dimension 1")
    flow = initial_flow(xi_law, grid, config)
    if representation == "mean":
        flow = flow.to_mean()

    current = apply_phi(flow, coeffs, model, grid, config, xi_law, replication=1)
    floor = estimate_noise_floor(flow, coeffs, model, grid, config, xi_law, image=current)
    tol = config.tol if config.tol is not None else (FLOOR_FACTOR * floor if floor > 0 else 1e-12)

    distances, profiles = [], []
    previous, converged = flow, False
    for k in range(1, config.max_iters + 1):
        if k > 1:
            rep = 1 if config.common_noise else k
            current = apply_phi(previous, coeffs, model, grid, config, xi_law, replication=rep)
        delta, prof = _distance(current, previous, config.beta)
        distances.append(delta)
        profiles.append(prof)
        previous = current
        if delta <= tol:
            converged = True
            break

    consistency = None
    if converged and check_consistency:
        again = apply_phi(previous, coeffs, model, grid, config, xi_law, replication=_CONSISTENCY_REPLICATION)
        consistency = _distance(again, previous, config.beta)[0]
    report = ContractionReport(
        tuple(distances), floor, tol, converged, config.beta, tuple(profiles), consistency
    )
    if not converged:
        raise ConvergenceError(
            f"no convergence within {config.max_iters} iterations "
            f"(last distance {distances[-1]:.4g}, tolerance {tol:.4g})",
            report,
        )
    return previous, report
