"""Simulation of Lévy-driven McKean-Vlasov equations and their particle systems."""
from __future__ import annotations

__version__ = "0.1.0"

from .exceptions import (
    BlowUpError,
    ConfigurationError,
    ContractError,
    ConvergenceError,
    LevyMVError,
    ParameterError,
    SizeError,
    UncoveredCaseError,
)
from .levy_noise import (
    CompoundPoisson,
    IsotropicStable,
    LevyModel,
    NoiseRealization,
    RadialDensity,
    SeedLineage,
    TimeGrid,
    beta_moment,
    realize_noise,
    sample_big_jumps,
    sample_stable_increment,
    synthesize_small_jump_increments,
    truncate_realization,
)
from .measure_metrics import (
    EmpiricalMeasure,
    MeasureFlow,
    flow_distance,
    moment_m_beta,
    w1_exact_1d,
    w_beta,
    w_beta_exact_matching,
)
from .mean_field_engine import (
    CenteredPareto,
    CoefficientSet,
    EnsembleState,
    Gaussian,
    PathEnsemble,
    PointMass,
    simulate_coupled_limit_copies,
    simulate_particle_system,
    stable_ou_coefficients,
    stable_ou_mean_flow,
    step_particle_system,
)
from .picard_solver import ContractionReport, PicardConfig, apply_phi, contraction_ratio, solve_fixed_point
from .chaos_lab import (
    ExperimentPlan,
    RateReport,
    nonuniqueness_demo,
    run_poc_experiment,
    run_truncation_study,
    theoretical_exponent,
    truncated_moment_curve,
)
