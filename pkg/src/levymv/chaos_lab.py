"""Monte Carlo experiments on propagation of chaos.

Every experiment couples the interacting particle system with i.i.d. copies
of the limit equation through shared initial data and noise, estimates the
errors

* ``E1(N) = sup_i E sup_t |X^{i,N}_t - X^{i,inf}_t|``,
* ``E2(N) = sup_t E W_1(mu^N_t, mu_t)``,

and fits their decay in ``N`` on log-log axes.  Expectations pool over
replications and particle index (the particles are exchangeable), so
``E1`` is the pooled mean of the per-particle path sup.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .exceptions import BlowUpError, ConfigurationError, ParameterError, UncoveredCaseError
from .levy_noise import (
    INNER_RADIUS,
    PURPOSE_MOMENT,
    PURPOSE_REFERENCE,
    IsotropicStable,
    LevyModel,
    SeedLineage,
    TimeGrid,
    realize_ensemble,
)
from .mean_field_engine import (
    CoefficientSet,
    PointMass,
    discrete_mean_flow,
    power_moment_coefficients,
    run_limit_copies,
    run_particle_system,
)
from .measure_metrics import MeasureFlow, w1_to_sorted_reference
from .picard_solver import PicardConfig, solve_fixed_point

#: Share of aborted replications above which an experiment fails.
MAX_BLOWUP_SHARE = 0.05


def theoretical_exponent(d: int, index: float, law: str) -> tuple[float, float]:
    """Rate exponent and log-correction power from the case table.

    ``law="thm2"``: ``index`` is the moment order ``beta`` in ``[1, 2]``.
    ``law="thm3"``: ``index`` is the stability index ``alpha`` in ``(1, 2)``.
    """
    if d < 1:
        raise ParameterError("dimension must be >= 1")
    if law == "thm2":
        if not 1 <= index <= 2:
            raise ParameterError("beta must lie in [1, 2]")
    elif law == "thm3":
        if not 1 < index < 2:
            raise ParameterError("alpha must lie in (1, 2)")
    else:
        raise ParameterError(f"unknown rate law {law!r}")
    if d >= 3:
        critical = d / (d - 1)
        if index == critical:
            raise UncoveredCaseError(f"beta = d/(d-1) = {critical:g} is not covered")
        if index > critical:
            return -1.0 / d, 0.0
    return 1.0 / index - 1.0, (1.0 / index if law == "thm3" else 0.0)


# ---------------------------------------------------------------------------
# plans and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentPlan:
    """One propagation-of-chaos experiment.

    ``index`` is ``beta`` for ``law="thm2"`` and ``alpha`` for ``law="thm3"``.
    ``limit`` selects how the limit flow is obtained: ``"mean"`` uses the exact
    mean recursion of the Euler chain (mean-only, affine coefficients),
    ``"picard"`` runs the Picard solver with ``picard_M`` paths.
    """

    name: str
    coeffs: CoefficientSet
    model: LevyModel
    xi_law: object
    grid: TimeGrid
    n_grid: tuple
    replications: int
    seed: int
    law: str
    index: float
    limit: str = "mean"
    picard_M: int = 0
    reference_factor: int = 16
    threads: int = 1
    tolerance: float = 0.15
    compute_e2: bool = True

    def __post_init__(self):
        errors = []
        ns = tuple(int(n) for n in self.n_grid)
        object.__setattr__(self, "n_grid", ns)
        if len(ns) < 4:
            errors.append("N-grid needs at least 4 values")
        if any(b <= a for a, b in zip(ns, ns[1:])) or ns[0] < 1:
            errors.append("N-grid must be strictly increasing positive integers")
        if self.replications < 50:
            errors.append("replications must be >= 50")
        if self.law not in ("thm2", "thm3"):
            errors.append("law must be thm2 or thm3")
        if self.limit not in ("mean", "picard"):
            errors.append("limit must be mean or picard")
        if self.coeffs.dim != self.model.dim or self.xi_law.dim != self.model.dim:
            errors.append("coefficients, noise and initial law must share one dimension")
        if self.threads < 1:
            errors.append("threads must be >= 1")
        if errors:
            raise ParameterError("; ".join(errors))

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def n_max(self) -> int:
        return self.n_grid[-1]


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    stderr: float
    raw_slope: float
    log_correction: float

    def to_dict(self):
        return dict(self.__dict__)


def fit_rate(x, err, log_correction: float = 0.0) -> RateFit:
    """Least-squares fit of ``ln err - c ln ln x`` against ``ln x``."""
    x, err = np.asarray(x, float), np.asarray(err, float)
    lx = np.log(x)
    ly = np.log(err)
    adj = ly - log_correction * np.log(lx) if log_correction else ly
    res = stats.linregress(lx, adj)
    raw = stats.linregress(lx, ly).slope
    return RateFit(float(res.slope), float(res.intercept), float(res.rvalue**2),
                   float(res.stderr), float(raw), float(log_correction))


@dataclass
class RateReport:
    """Per-level error estimates with standard errors and a fitted exponent."""

    name: str
    x_name: str
    levels: list
    e1: list
    e1_se: list
    e2: list = field(default_factory=list)
    e2_se: list = field(default_factory=list)
    e2_tilde: list = field(default_factory=list)
    e2_tilde_se: list = field(default_factory=list)
    target: float = math.nan
    log_correction: float = 0.0
    tolerance: float = 0.15
    fit: RateFit | None = None
    fit_e2: RateFit | None = None
    zero_error: bool = False
    replications_used: int = 0
    blowups: int = 0
    coupling_checks: int = 0
    coupling_violations: int = 0
    reference_size: int = 0
    notes: dict = field(default_factory=dict)

    @property
    def blowup_share(self) -> float:
        total = self.replications_used + self.blowups
        return self.blowups / total if total else 0.0

    @property
    def blowup_failed(self) -> bool:
        return self.blowup_share > MAX_BLOWUP_SHARE

    @property
    def exponent_ok(self) -> bool:
        if self.zero_error:
            return True
        return self.fit is not None and abs(self.fit.slope - self.target) <= self.tolerance

    def monotone_decay(self, n_se: float = 2.0) -> bool:
        """``E1`` non-increasing along the levels up to ``n_se`` standard errors."""
        e, se = self.e1, self.e1_se
        return all(b <= a + n_se * math.hypot(sa, sb) for a, b, sa, sb in zip(e, e[1:], se, se[1:]))

    def decomposition_ok(self, n_se: float = 2.0) -> bool | None:
        """``E2 <= E1 + E2_tilde`` up to ``n_se`` standard errors."""
        if not self.e2 or not self.e2_tilde:
            return None
        return all(
            e2 <= e1 + et + n_se * math.sqrt(s1**2 + s2**2 + st**2)
            for e1, e2, et, s1, s2, st in zip(self.e1, self.e2, self.e2_tilde, self.e1_se, self.e2_se, self.e2_tilde_se)
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow([self.x_name, "E1", "E1_se", "E2", "E2_se"])
        for k, lvl in enumerate(self.levels):
            row = [_fmt(lvl), _fmt(self.e1[k]), _fmt(self.e1_se[k])]
            if self.e2:
                row += [_fmt(self.e2[k]), _fmt(self.e2_se[k])]
            else:
                row += ["", ""]
            w.writerow(row)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "x_name": self.x_name,
            "levels": list(self.levels),
            "E1": list(self.e1),
            "E1_se": list(self.e1_se),
            "E2": list(self.e2),
            "E2_se": list(self.e2_se),
            "E2_tilde": list(self.e2_tilde),
            "E2_tilde_se": list(self.e2_tilde_se),
            "target_exponent": self.target,
            "log_correction": self.log_correction,
            "tolerance": self.tolerance,
            "fit": self.fit.to_dict() if self.fit else None,
            "fit_E2": self.fit_e2.to_dict() if self.fit_e2 else None,
            "exponent_ok": self.exponent_ok,
            "zero_error": self.zero_error,
            "replications_used": self.replications_used,
            "blowups": self.blowups,
            "blowup_failed": self.blowup_failed,
            "coupling_checks": self.coupling_checks,
            "coupling_violations": self.coupling_violations,
            "monotone_decay": self.monotone_decay(),
            "decomposition_ok": self.decomposition_ok(),
            "reference_size": self.reference_size,
            "notes": self.notes,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "inf" if math.isinf(v) else repr(v)


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else math.nan
    return m, se


def _ordered_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# propagation of chaos
# ---------------------------------------------------------------------------


def limit_flow_for(plan: ExperimentPlan) -> MeasureFlow:
    """Limit flow used by the frozen copies (see :class:`ExperimentPlan`)."""
    if plan.coeffs.measure_dependence == "none":
        # the copies never read the flow
        mean = np.broadcast_to(plan.xi_law.mean, (plan.grid.nodes.size, plan.dim))
        return MeasureFlow(plan.grid, "mean", mean)
    if plan.limit == "mean":
        return discrete_mean_flow(plan.coeffs, plan.model, plan.xi_law.mean, plan.grid)
    m = plan.picard_M or plan.reference_factor * plan.n_max
    cfg = PicardConfig(particles_M=m, max_iters=20, seed=plan.seed, beta=1.0)
    flow, _ = solve_fixed_point(plan.coeffs, plan.model, plan.grid, cfg, plan.xi_law)
    return flow


def reference_cloud(plan: ExperimentPlan, flow: MeasureFlow) -> np.ndarray:
    """Sorted positions of ``reference_factor * N_max`` limit copies at every node (d = 1)."""
    size = plan.reference_factor * plan.n_max
    xi, noise = realize_ensemble(
        plan.model, plan.grid, plan.seed, size, purpose=PURPOSE_REFERENCE, pre_draw=plan.xi_law.sample
    )
    return np.sort(run_limit_copies(plan.coeffs, noise, xi, flow)[:, :, 0], axis=1)


#: Each side rounds every difference once (relative error u) and sums exactly
#: (another u), so an exact-arithmetic tie can surface as ``lhs <= rhs (1 + 4u)``.
_ROUNDING_SLACK = 8 * np.finfo(float).eps / 2


def coupling_violations(particles: np.ndarray, copies: np.ndarray) -> int:
    """Nodes where ``W_1(mu^N, mu~^N) > mean_k |X^k - X~^k|`` (d = 1).

    Both sides use correctly rounded sums; only excesses beyond the rounding
    bound of the differences count.
    """
    bad = 0
    for x, y in zip(particles[:, :, 0], copies[:, :, 0]):
        lhs = math.fsum(np.abs(np.sort(x) - np.sort(y)))
        rhs = math.fsum(np.abs(x - y))
        bad += lhs > rhs * (1 + _ROUNDING_SLACK)
    return bad


def _poc_replication(plan: ExperimentPlan, flow: MeasureFlow, ref: np.ndarray | None, rep: int):
    try:
        xi, noise = realize_ensemble(
            plan.model, plan.grid, plan.seed, plan.n_max, replication=rep, pre_draw=plan.xi_law.sample
        )
        copies = run_limit_copies(plan.coeffs, noise, xi, flow)
        e1, e2, e2t, viol = [], [], [], 0
        for n in plan.n_grid:
            parts = run_particle_system(plan.coeffs, noise.subset(n), xi[:n])
            cop = copies[:, :n]
            diff = np.linalg.norm(parts - cop, axis=2)
            e1.append(float(np.mean(diff.max(axis=0))))
            if ref is not None:
                e2.append([w1_to_sorted_reference(p, r) for p, r in zip(parts[:, :, 0], ref)])
                e2t.append([w1_to_sorted_reference(c, r) for c, r in zip(cop[:, :, 0], ref)])
                viol += coupling_violations(parts, cop)
        return e1, e2, e2t, viol
    except BlowUpError:
        return None


def run_poc_experiment(plan: ExperimentPlan) -> RateReport:
    """Coupled particle / limit-copy runs for every ``N`` and the fitted rates."""
    target, logc = theoretical_exponent(plan.dim, plan.index, plan.law)
    flow = limit_flow_for(plan)
    use_e2 = plan.compute_e2 and plan.dim == 1
    ref = reference_cloud(plan, flow) if use_e2 else None

    results = _ordered_map(
        lambda r: _poc_replication(plan, flow, ref, r), range(plan.replications), plan.threads
    )
    ok = [r for r in results if r is not None]
    report = RateReport(plan.name, "N", list(plan.n_grid), [], [], target=target,
                        log_correction=logc, tolerance=plan.tolerance)
    report.blowups = len(results) - len(ok)
    report.replications_used = len(ok)
    if not ok:
        return report
    e1 = np.array([r[0] for r in ok])
    for k in range(len(plan.n_grid)):
        m, se = _mean_se(e1[:, k])
        report.e1.append(m)
        report.e1_se.append(se)
    if use_e2:
        e2 = np.array([r[1] for r in ok])      # (reps, n_levels, nodes)
        e2t = np.array([r[2] for r in ok])
        for arr, vals, ses in ((e2, report.e2, report.e2_se), (e2t, report.e2_tilde, report.e2_tilde_se)):
            node_means = arr.mean(axis=0)
            for k in range(len(plan.n_grid)):
                j = int(np.argmax(node_means[k]))
                m, se = _mean_se(arr[:, k, j])
                vals.append(m)
                ses.append(se)
        report.coupling_checks = len(ok) * len(plan.n_grid) * plan.grid.nodes.size
        report.coupling_violations = int(sum(r[3] for r in ok))
        report.reference_size = plan.reference_factor * plan.n_max
        report.fit_e2 = fit_rate(plan.n_grid, report.e2, 0.0)
    if max(report.e1) == 0.0:
        report.zero_error = True
    else:
        report.fit = fit_rate(plan.n_grid, report.e1, logc)
    return report


# ---------------------------------------------------------------------------
# truncation
# ---------------------------------------------------------------------------


def run_truncation_study(
    plan: ExperimentPlan, levels, *, n_particles: int | None = None, target: float | None = None,
    tolerance: float = 0.2,
) -> RateReport:
    """Error of the particle system when jumps with ``|z| >= R`` are removed.

    For each level ``R`` the truncated and untruncated systems share initial
    data and noise; the report holds ``sup_i E sup_t |X_R - X|`` (pooled over
    particles) and the slope of its log against ``ln R``, compared with
    ``1 - alpha`` for stable noise.
    """
    levels = [float(r) for r in levels]
    if any(r < INNER_RADIUS for r in levels):
        raise ParameterError("truncation levels must be >= 1")
    n = n_particles or plan.n_max
    if target is None:
        target = 1.0 - plan.model.alpha if isinstance(plan.model, IsotropicStable) else math.nan

    def one(rep):
        try:
            xi, noise = realize_ensemble(
                plan.model, plan.grid, plan.seed, n, replication=rep, pre_draw=plan.xi_law.sample
            )
            full = run_particle_system(plan.coeffs, noise, xi)
            out = []
            for lvl in levels:
                trunc = noise.truncated(lvl)
                if math.isinf(lvl) or trunc.jump_sizes.shape[0] == noise.jump_sizes.shape[0] and not trunc.compensator.any():
                    out.append(0.0)
                    continue
                part = run_particle_system(plan.coeffs, trunc, xi)
                out.append(float(np.mean(np.linalg.norm(part - full, axis=2).max(axis=0))))
            return out
        except BlowUpError:
            return None

    results = _ordered_map(one, range(plan.replications), plan.threads)
    ok = np.array([r for r in results if r is not None])
    report = RateReport(f"{plan.name}-truncation", "R", levels, [], [], target=target, tolerance=tolerance)
    report.blowups = len(results) - len(ok)
    report.replications_used = len(ok)
    report.notes["n_particles"] = n
    if not len(ok):
        return report
    for k in range(len(levels)):
        m, se = _mean_se(ok[:, k])
        report.e1.append(m)
        report.e1_se.append(se)
    finite = [(r, e) for r, e in zip(levels, report.e1) if math.isfinite(r) and e > 0]
    if not finite:
        report.zero_error = True
    elif len(finite) >= 2:
        report.fit = fit_rate([r for r, _ in finite], [e for _, e in finite], 0.0)
    return report


# ---------------------------------------------------------------------------
# truncated moment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentCurve:
    levels: tuple
    estimates: tuple
    std_errors: tuple
    alpha: float
    horizon: float
    samples: int
    slope: float
    intercept: float
    r_squared: float

    @property
    def ratios(self) -> tuple:
        """``estimate / ln N`` for the levels with ``N > 1``."""
        return tuple(e / math.log(n) for n, e in zip(self.levels, self.estimates) if n > 1)

    def to_dict(self):
        return {
            "N": list(self.levels), "estimate": list(self.estimates), "se": list(self.std_errors),
            "alpha": self.alpha, "T": self.horizon, "samples": self.samples,
            "slope_vs_lnN": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
            "ratio_to_lnN": list(self.ratios),
        }


def _endpoint_block(model: LevyModel, grid: TimeGrid, n: int, rng: np.random.Generator):
    """``n`` draws of the small-jump part of ``Z_T`` and of all big jumps.

    Returns ``(small (n, d), owner (J,), sizes (J, d))``.
    """
    from .levy_noise import _small_jump_plan

    d, K = model.dim, grid.n_steps
    eps, std, cum_rates, _ = _small_jump_plan(model, grid)
    small = rng.standard_normal((n, d)) * math.sqrt(float(np.sum(std**2)))
    counts = rng.poisson(cum_rates[-1], n)
    total = int(counts.sum())
    if total:
        owner = np.repeat(np.arange(n), counts)
        step = np.minimum(np.searchsorted(cum_rates, rng.random(total) * cum_rates[-1], side="right"), K - 1)
        jumps = model.sample_annulus(total, eps[step], INNER_RADIUS, rng)
        for j in range(d):
            small[:, j] += np.bincount(owner, weights=jumps[:, j], minlength=n)
    lam = model.mass(INNER_RADIUS, math.inf) * grid.horizon
    big_counts = rng.poisson(lam, n)
    owner = np.repeat(np.arange(n), big_counts)
    sizes = model.sample_annulus(int(big_counts.sum()), INNER_RADIUS, math.inf, rng)
    return small, owner, sizes


def truncated_moment_curve(
    alpha: float, levels, grid: TimeGrid, *, seed: int = 0, samples: int = 1_000_000,
    block: int = 50_000, dim: int = 1, threads: int = 1,
) -> MomentCurve:
    """Monte Carlo ``E |Z_{N,T}|^alpha`` for the stable noise truncated at each ``N``.

    All levels reuse the same draws: ``Z_{N,T}`` is the small-jump part plus the
    big jumps with ``|z| < N`` (the retained annulus is symmetric, so no
    compensator).  ``N = 1`` keeps the small-jump part only.
    """
    if not 1 < alpha < 2:
        raise ParameterError("alpha must lie in (1, 2)")
    levels = tuple(float(n) for n in levels)
    if any(n < INNER_RADIUS for n in levels):
        raise ParameterError("truncation levels must be >= 1")
    model = IsotropicStable(alpha, dim)
    n_blocks = -(-samples // block)

    def one(b):
        rng = SeedLineage(seed, b, 0, PURPOSE_MOMENT).generator()
        small, owner, sizes = _endpoint_block(model, grid, block, rng)
        norms = np.linalg.norm(sizes, axis=1)
        out = []
        for lvl in levels:
            keep = norms < lvl
            z = small.copy()
            for j in range(dim):
                z[:, j] += np.bincount(owner[keep], weights=sizes[keep, j], minlength=block)
            out.append(np.linalg.norm(z, axis=1) ** alpha)
        return np.array(out)

    blocks = _ordered_map(one, range(n_blocks), threads)
    allv = np.concatenate(blocks, axis=1)
    est = allv.mean(axis=1)
    se = allv.std(axis=1, ddof=1) / math.sqrt(allv.shape[1])
    lnn = np.log(np.array(levels))
    res = stats.linregress(lnn, est)
    return MomentCurve(levels, tuple(map(float, est)), tuple(map(float, se)), alpha, grid.horizon,
                       int(allv.shape[1]), float(res.slope), float(res.intercept), float(res.rvalue**2))


# ---------------------------------------------------------------------------
# non-uniqueness for beta < 1
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NonUniquenessResult:
    beta: float
    grid: TimeGrid
    zero_branch: np.ndarray
    positive_branch: np.ndarray
    zero_residual: float
    positive_residual: float
    tolerance: float
    closed_form_endpoint: float

    @property
    def passed(self) -> bool:
        return self.zero_residual <= self.tolerance and self.positive_residual <= self.tolerance

    def rows(self):
        for t, a, b in zip(self.grid.nodes, self.zero_branch, self.positive_branch):
            yield [float(t), float(a), float(b)]

    def to_dict(self):
        return {
            "beta": self.beta, "T": self.grid.horizon, "n_steps": self.grid.n_steps,
            "zero_endpoint": float(self.zero_branch[-1]),
            "positive_endpoint": float(self.positive_branch[-1]),
            "closed_form_endpoint": self.closed_form_endpoint,
            "zero_residual": self.zero_residual, "positive_residual": self.positive_residual,
            "tolerance": self.tolerance, "passed": self.passed,
        }


def branch_endpoint(beta: float, horizon: float) -> float:
    """Value at ``horizon`` of the positive solution ``((1 - beta) t)^{1/(1-beta)}``."""
    return ((1.0 - beta) * horizon) ** (1.0 / (1.0 - beta))


def mean_field_residual(values: np.ndarray, grid: TimeGrid, beta: float) -> float:
    """Max over steps of ``|dy/dt - trapezoid of (1/M) sum |y|^beta|``.

    ``values`` has shape ``(K + 1,)`` (one deterministic path) or ``(K + 1, M)``.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    f = np.mean(np.abs(v) ** beta, axis=1)
    slope = np.diff(v.mean(axis=1)) / grid.steps
    return float(np.max(np.abs(slope - 0.5 * (f[:-1] + f[1:]))))


def nonuniqueness_demo(
    beta: float, grid: TimeGrid, *, perturbation: float = 1e-12, particles: int = 64, seed: int = 0,
) -> NonUniquenessResult:
    """Two solutions of ``y' = int |x|^beta dmu`` with ``y(0) = 0``.

    The zero solution comes from the Picard solver started at ``delta_0``; the
    positive branch is integrated from ``y(0) = perturbation``.  Both are checked
    against the trapezoidal residual with tolerance ``h ** min(1, beta/(1-beta))``
    (``h`` the largest step): the right-hand side ``c t^{beta/(1-beta)}`` of the
    positive branch is only Hölder near ``t = 0`` when ``beta < 1/2``.
    """
    if not 0 < beta < 1:
        raise ParameterError("beta must lie in (0, 1)")
    coeffs = power_moment_coefficients(beta)
    model = IsotropicStable(1.5)
    cfg = PicardConfig(particles_M=particles, max_iters=5, seed=seed, beta=beta)
    flow, _ = solve_fixed_point(coeffs, model, grid, cfg, PointMass([0.0]),
                                representation="empirical", check_consistency=False)
    zero = flow.data[:, :, 0]

    sol = integrate.solve_ivp(
        lambda t, y: np.abs(y) ** beta, (0.0, grid.horizon), [perturbation],
        t_eval=grid.nodes, rtol=1e-11, atol=1e-14, method="DOP853",
    )
    pos = sol.y[0]
    tol = float(np.max(grid.steps)) ** min(1.0, beta / (1.0 - beta))
    return NonUniquenessResult(
        beta, grid, zero.mean(axis=1), pos, mean_field_residual(zero, grid, beta),
        mean_field_residual(pos, grid, beta), tol, branch_endpoint(beta, grid.horizon),
    )
