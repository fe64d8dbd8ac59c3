import json
import math

import numpy as np
import pytest

from levymv.exceptions import ConfigurationError, ContractError, ConvergenceError, ParameterError
from levymv.levy_noise import CompoundPoisson, IsotropicStable, TimeGrid
from levymv.mean_field_engine import (
    Gaussian,
    PointMass,
    discrete_mean_flow,
    sine_interaction_coefficients,
    stable_ou_coefficients,
    zero_coefficients,
)
from levymv.picard_solver import (
    FLOOR_FACTOR,
    ContractionReport,
    PicardConfig,
    apply_phi,
    contraction_ratio,
    initial_flow,
    solve_fixed_point,
)

CP = CompoundPoisson((((2.0,), 1.0), ((-2.0,), 1.0), ((0.5,), 2.0), ((-0.5,), 2.0)))


def test_report_ratios_and_geometric_mean():
    rep = ContractionReport((1.0, 0.5, 0.125, 0.01), noise_floor=0.01)
    assert rep.ratios == (0.5, 0.25, 0.08)
    # threshold 0.03: the last distance is at the floor
    assert rep.usable_ratios() == [0.5, 0.25]
    assert contraction_ratio(rep) == pytest.approx(math.sqrt(0.125))
    assert rep.contractive_above_floor


def test_report_edge_cases():
    with pytest.raises(ContractError):
        contraction_ratio(ContractionReport((1.0, 0.5)))
    assert contraction_ratio(ContractionReport((1.0, 0.01, 0.01), noise_floor=0.1)) == 0.0
    assert not ContractionReport((1.0, 2.0, 0.1)).contractive_above_floor
    with pytest.raises(ParameterError):
        ContractionReport((1.0, -0.1))
    assert ContractionReport((1.0,)).consistent is None


def test_config_validation():
    with pytest.raises(ParameterError, match="particles_M.*max_iters"):
        PicardConfig(particles_M=1, max_iters=0)
    with pytest.raises(ParameterError):
        PicardConfig(beta=3.0)
    with pytest.raises(ParameterError):
        PicardConfig(tol=0.0)


def test_stationary_flow_is_found_immediately():
    g = TimeGrid.uniform(1.0, 10)
    flow, rep = solve_fixed_point(zero_coefficients(), IsotropicStable(1.5), g, PicardConfig(particles_M=20), PointMass(2.0))
    assert rep.converged and rep.iterations == 1 and rep.distances == (0.0,)
    assert rep.noise_floor == 0.0 and rep.tol == 1e-12
    assert np.all(flow.data == 2.0)


def test_noise_free_linear_flow_reaches_the_euler_mean():
    # dX = 0.5 E[X] dt from 1: Picard iterates are partial sums of the discrete exponential
    coeffs = stable_ou_coefficients(0.0, 0.5, 0.0)
    g = TimeGrid.uniform(1.0, 50)
    cfg = PicardConfig(particles_M=4, max_iters=40)
    flow, rep = solve_fixed_point(coeffs, IsotropicStable(1.5), g, cfg, PointMass(1.0))
    assert rep.converged
    assert flow.data[-1, 0] == pytest.approx((1 + 0.5 / 50) ** 50, abs=1e-11)
    assert np.allclose(flow.data, discrete_mean_flow(coeffs, IsotropicStable(1.5), [1.0], g).data, atol=1e-11)
    d = rep.distances
    assert all(b < a for a, b in zip(d, d[1:]) if a > 1e-14)
    # first distance: 0.5 * t integrated against the constant flow, sup at the horizon
    assert d[0] == pytest.approx(0.5, rel=1e-12)
    assert contraction_ratio(rep) < 1


def test_convergence_failure_carries_the_report():
    coeffs = stable_ou_coefficients(0.0, 0.5, 0.0)
    cfg = PicardConfig(particles_M=4, max_iters=2)
    with pytest.raises(ConvergenceError) as info:
        solve_fixed_point(coeffs, IsotropicStable(1.5), TimeGrid.uniform(1.0, 10), cfg, PointMass(1.0))
    assert info.value.report.iterations == 2
    assert not info.value.report.converged


@pytest.fixture(scope="module")
def interaction_run():
    coeffs = sine_interaction_coefficients(1.0, 2.0, 1.0, 0.5)
    g = TimeGrid.uniform(0.5, 25)
    cfg = PicardConfig(particles_M=2000, max_iters=10, seed=5)
    return coeffs, g, cfg, solve_fixed_point(coeffs, CP, g, cfg, Gaussian((1.0,)))


def test_interacting_flow_contracts_down_to_the_floor(interaction_run):
    _, _, _, (flow, rep) = interaction_run
    assert rep.converged
    assert rep.noise_floor > 0 and rep.tol == pytest.approx(FLOOR_FACTOR * rep.noise_floor)
    assert rep.contractive_above_floor
    assert rep.consistent
    assert flow.kind == "empirical" and flow.data.shape == (26, 2000, 1)


def test_common_noise_iteration_contracts_geometrically(interaction_run):
    # with the noise frozen phi is a deterministic map of the flow; distances decay to zero
    coeffs, g, _, _ = interaction_run
    cfg = PicardConfig(particles_M=500, max_iters=40, tol=1e-9, seed=5, common_noise=True)
    _, rep = solve_fixed_point(coeffs, CP, g, cfg, Gaussian((1.0,)), check_consistency=False)
    assert rep.converged and rep.iterations >= 3
    assert all(r < 1 for r in rep.ratios)
    assert contraction_ratio(rep) < 0.5


def test_solver_is_reproducible(interaction_run):
    coeffs, g, cfg, (flow, rep) = interaction_run
    flow2, rep2 = solve_fixed_point(coeffs, CP, g, cfg, Gaussian((1.0,)))
    assert rep2.distances == rep.distances
    assert np.array_equal(flow2.data, flow.data)
    d = json.loads(rep.to_json())
    assert d["convention"] == "W_1:root"
    assert [r["delta"] for r in d["iterations"]] == list(rep.distances)
    assert d["iterations"][0]["ratio"] is None


def test_mean_representation_matches_discrete_mean():
    coeffs, model = stable_ou_coefficients(0.0, 1.0), IsotropicStable(1.5)
    g = TimeGrid.uniform(1.0, 20)
    cfg = PicardConfig(particles_M=4000, max_iters=15, seed=2)
    flow, rep = solve_fixed_point(coeffs, model, g, cfg, PointMass(1.0))
    exact = discrete_mean_flow(coeffs, model, [1.0], g)
    assert flow.kind == "mean"
    assert abs(flow.data[-1, 0] - exact.data[-1, 0]) <= FLOOR_FACTOR * rep.noise_floor + rep.distances[-1]


def test_phi_checks_alignment():
    g = TimeGrid.uniform(1.0, 5)
    cfg = PicardConfig(particles_M=5)
    f = initial_flow(PointMass(0.0), g, cfg)
    with pytest.raises(ConfigurationError):
        apply_phi(f, zero_coefficients(), IsotropicStable(1.5), TimeGrid.uniform(1.0, 6), cfg, PointMass(0.0))
    with pytest.raises(ConfigurationError):
        apply_phi(f.to_mean(), sine_interaction_coefficients(), IsotropicStable(1.5), g, cfg, PointMass(0.0))
    with pytest.raises(ConfigurationError):
        solve_fixed_point(sine_interaction_coefficients(dim=2), IsotropicStable(1.5, dim=2), g, cfg, PointMass((0.0, 0.0)))
    a = apply_phi(f, zero_coefficients(), IsotropicStable(1.5), g, cfg, PointMass(0.0), replication=1)
    assert a.kind == "empirical"
