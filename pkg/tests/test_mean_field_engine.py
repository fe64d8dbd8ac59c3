import math

import numpy as np
import pytest

from levymv.exceptions import BlowUpError, ConfigurationError, ParameterError
from levymv.levy_noise import CompoundPoisson, IsotropicStable, TimeGrid, realize_ensemble
from levymv.mean_field_engine import (
    CenteredPareto,
    CoefficientSet,
    EnsembleState,
    Gaussian,
    NoiseSlice,
    PointMass,
    check_coefficient_contract,
    discrete_mean_flow,
    power_moment_coefficients,
    pure_noise_coefficients,
    run_limit_copies,
    run_particle_system,
    simulate_coupled_limit_copies,
    simulate_particle_system,
    sine_interaction_coefficients,
    sine_mean_field_coefficients,
    stable_ou_coefficients,
    stable_ou_mean_flow,
    step_particle_system,
    zero_coefficients,
)
from levymv.measure_metrics import MeasureFlow

from .oracles import rk4


def test_single_step_by_hand():
    # b(x, mu) = -x + 0.5 mean(mu), B = 2; positions 0 and 2, mean 1
    coeffs = stable_ou_coefficients(-1.0, 0.5, 2.0)
    state = EnsembleState(0.0, [[0.0], [2.0]])
    noise = NoiseSlice(0.5, np.array([[0.1], [-0.2]]), np.array([0.05]), np.array([[0.0], [1.0]]))
    out = step_particle_system(state, coeffs, noise)
    # particle 0: 0 + 0.5*0.5 + 2*(0.15) = 0.55; particle 1: 2 + 0.5*(-1.5) + 2*(-0.15) + 2*1 = 2.95
    assert np.allclose(out.positions[:, 0], [0.55, 2.95])
    assert out.time == 0.5


def test_pure_noise_paths_are_initial_value_plus_noise():
    model, grid = IsotropicStable(1.5), TimeGrid.uniform(1.0, 40)
    xi, noise = realize_ensemble(model, grid, 3, 20, pre_draw=Gaussian((0.0,)).sample)
    pos = run_particle_system(pure_noise_coefficients(), noise, xi)
    z = np.concatenate([np.zeros((20, 1, 1)), np.cumsum(noise.small + noise.compensator[None] + noise.big_dense(), axis=1)], axis=1)
    assert np.allclose(pos, (xi[:, None, :] + z).transpose(1, 0, 2), atol=1e-12)
    still = run_particle_system(zero_coefficients(), noise, xi)
    assert np.array_equal(still[-1], xi.reshape(20, 1))


def test_measure_free_system_equals_its_limit_copies():
    coeffs = stable_ou_coefficients(-0.7, 0.0)
    assert coeffs.measure_dependence == "none"
    model, grid = CompoundPoisson((((1.0,), 1.0), ((-2.0,), 0.5))), TimeGrid.uniform(2.0, 30)
    xi, noise = realize_ensemble(model, grid, 4, 15, pre_draw=Gaussian((1.0,)).sample)
    flow = MeasureFlow(grid, "mean", np.zeros((31, 1)))
    assert np.array_equal(run_particle_system(coeffs, noise, xi), run_limit_copies(coeffs, noise, xi, flow))


def test_simulation_is_deterministic_in_seed_and_replication():
    coeffs, model, grid = sine_interaction_coefficients(kappa=1.0), IsotropicStable(1.5), TimeGrid.uniform(1.0, 20)
    a = simulate_particle_system(30, coeffs, model, grid, Gaussian((0.0,)), 8, replication=2)
    b = simulate_particle_system(30, coeffs, model, grid, Gaussian((0.0,)), 8, replication=2)
    c = simulate_particle_system(30, coeffs, model, grid, Gaussian((0.0,)), 8, replication=3)
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)


def test_limit_copies_do_not_depend_on_population_size():
    coeffs, model, grid = stable_ou_coefficients(-1.0, 0.5), IsotropicStable(1.5), TimeGrid.uniform(1.0, 25)
    flow = stable_ou_mean_flow(-1.0, 0.5, [1.0], grid)
    small = simulate_coupled_limit_copies(10, coeffs, flow, model, grid, PointMass(1.0), 9)
    large = simulate_coupled_limit_copies(50, coeffs, flow, model, grid, PointMass(1.0), 9)
    assert np.array_equal(small.positions, large.positions[:, :10])


def test_coupling_differences_are_recorded():
    coeffs, model, grid = stable_ou_coefficients(-1.0, 0.5), IsotropicStable(1.5), TimeGrid.uniform(1.0, 25)
    flow = discrete_mean_flow(coeffs, model, [1.0], grid)
    ps = simulate_particle_system(40, coeffs, model, grid, PointMass(1.0), 2)
    lc = simulate_coupled_limit_copies(40, coeffs, flow, model, grid, PointMass(1.0), 2, particle_paths=ps)
    assert np.allclose(lc.coupling, np.abs(ps.positions - lc.positions)[..., 0])
    assert lc.coupling_sup.shape == (40,)
    # the common noise cancels: differences stay far below the noise scale
    assert lc.coupling_sup.max() < 2.0


def test_empirical_mean_of_linear_system_tracks_discrete_mean_flow():
    # for affine, mean-only coefficients the empirical mean obeys the mean recursion plus averaged noise
    coeffs, model, grid = stable_ou_coefficients(-0.5, 0.8), CompoundPoisson((((1.0,), 1.0),)), TimeGrid.uniform(1.0, 20)
    flow = discrete_mean_flow(coeffs, model, [0.5], grid)
    finals = [simulate_particle_system(200, coeffs, model, grid, Gaussian((0.5,)), 5, replication=r).positions[-1].mean() for r in range(40)]
    se = np.std(finals, ddof=1) / math.sqrt(len(finals))
    assert abs(np.mean(finals) - flow.data[-1, 0]) < 4 * se


def test_discrete_mean_flow_converges_to_exponential():
    coeffs, model = stable_ou_coefficients(0.0, 0.5), IsotropicStable(1.5)
    errs = []
    for K in (50, 100, 200):
        g = TimeGrid.uniform(1.0, K)
        errs.append(abs(discrete_mean_flow(coeffs, model, [1.0], g).data[-1, 0] - math.exp(0.5)))
    assert stable_ou_mean_flow(0.0, 0.5, [1.0], TimeGrid.uniform(1.0, 3)).data[-1, 0] == pytest.approx(math.exp(0.5))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.05)


def test_sine_mean_field_mean_flow_matches_rk4_of_mean_ode():
    coeffs, model = sine_mean_field_coefficients(-1.0, 1.0), CompoundPoisson((((1.0,), 2.0), ((-1.0,), 2.0)))
    g = TimeGrid.uniform(1.0, 4000)
    m = discrete_mean_flow(coeffs, model, [0.5], g).data[-1, 0]
    # symmetric atoms: the mean solves m' = -m + sin(m)
    assert m == pytest.approx(rk4(lambda t, y: -y + math.sin(y), 0.5, 1.0), abs=1e-3)


def test_asymmetric_jumps_shift_the_mean_flow():
    model = CompoundPoisson((((2.0,), 1.0),))
    g = TimeGrid.uniform(1.0, 10)
    flow = discrete_mean_flow(zero_coefficients(), model, [0.0], g)
    assert np.allclose(flow.data[:, 0], 0.0)
    flow = discrete_mean_flow(pure_noise_coefficients(), model, [0.0], g)
    assert flow.data[-1, 0] == pytest.approx(2.0)
    assert discrete_mean_flow(pure_noise_coefficients(), model, [0.0], g, truncation=1.5).data[-1, 0] == 0.0


def test_closed_mean_recursion_refuses_general_coefficients():
    with pytest.raises(ConfigurationError):
        discrete_mean_flow(sine_interaction_coefficients(), IsotropicStable(1.5), [0.0], TimeGrid.uniform(1.0, 3))
    with pytest.raises(ConfigurationError):
        run_limit_copies(
            sine_interaction_coefficients(), realize_ensemble(IsotropicStable(1.5), TimeGrid.uniform(1.0, 3), 0, 2)[1],
            np.zeros((2, 1)), MeasureFlow(TimeGrid.uniform(1.0, 3), "mean", np.zeros((4, 1))),
        )


@pytest.mark.parametrize(
    "coeffs",
    [
        stable_ou_coefficients(-1.0, 0.5),
        stable_ou_coefficients([[0.0, 1.0], [-1.0, 0.0]], 0.3, dim=2),
        sine_mean_field_coefficients(-1.0, 2.0),
        sine_interaction_coefficients(1.0, 2.0, 1.0, 0.5),
        sine_interaction_coefficients(0.5, 1.0, 1.0, 0.0, dim=2),
        zero_coefficients(),
        pure_noise_coefficients(3),
    ],
    ids=lambda c: f"{c.name}-{c.dim}",
)
def test_builders_satisfy_their_declared_bounds(coeffs):
    ratios = check_coefficient_contract(coeffs, np.random.default_rng(0))
    assert ratios["lipschitz_ratio"] <= 1.0
    assert ratios["growth_ratio"] <= 1.0


def test_contract_probe_detects_a_false_lipschitz_claim():
    base = stable_ou_coefficients(-3.0, 0.0)
    liar = CoefficientSet(base.drift, base.diffusion, 1, 0.5, 10.0, "none")
    assert check_coefficient_contract(liar, np.random.default_rng(1))["lipschitz_ratio"] > 1.0


def test_blow_up_is_reported_with_particle_and_time():
    explosive = CoefficientSet(lambda t, x, mu: 1e200 * x**3, np.zeros((1, 1)), 1, 0.0, 0.0, "none")
    # first step lands near 1e199, the second overflows
    with np.errstate(over="ignore"), pytest.raises(BlowUpError) as info:
        simulate_particle_system(5, explosive, IsotropicStable(1.5), TimeGrid.uniform(1.0, 10), PointMass(1.0), 0)
    assert info.value.particle == 0
    assert info.value.time == pytest.approx(0.2)
    with pytest.raises(BlowUpError):
        EnsembleState(0.0, [[np.inf]])


def test_jump_adapted_grid_places_jumps_on_nodes():
    model, grid = CompoundPoisson((((1.0,), 3.0),)), TimeGrid.uniform(1.0, 4)
    ps = simulate_particle_system(3, pure_noise_coefficients(), model, grid, PointMass(0.0), 6, jump_adapted=True)
    assert ps.grid.n_steps > 4
    plain = simulate_particle_system(3, pure_noise_coefficients(), model, grid, PointMass(0.0), 6)
    # the jump count at the horizon does not depend on where jumps are placed
    assert np.array_equal(ps.positions[-1], plain.positions[-1])


def test_infinite_truncation_is_the_identity():
    coeffs, model, grid = stable_ou_coefficients(-1.0, 0.5), IsotropicStable(1.5), TimeGrid.uniform(1.0, 10)
    a = simulate_particle_system(20, coeffs, model, grid, PointMass(0.0), 3)
    b = simulate_particle_system(20, coeffs, model, grid, PointMass(0.0), 3, truncation=math.inf)
    c = simulate_particle_system(20, coeffs, model, grid, PointMass(0.0), 3, truncation=2.0)
    assert np.array_equal(a.positions, b.positions)
    assert np.abs(c.positions - a.positions).max() > 0


def test_summaries():
    ps = simulate_particle_system(10, stable_ou_coefficients(-1.0, 0.5), IsotropicStable(1.5), TimeGrid.uniform(1.0, 5), PointMass(1.0), 1)
    rows = list(ps.summary_rows(1.0))
    assert len(rows) == 6 and rows[0][:3] == [0.0, 1.0, 1.0]
    assert np.all(np.diff([r[-1] for r in rows]) >= 0)
    assert ps.running_sup.shape == (10,)
    assert len(ps.states) == 6


def test_initial_laws():
    rng = np.random.default_rng(0)
    assert np.array_equal(PointMass((1.0, 2.0)).sample(rng), [1.0, 2.0])
    g = np.array([Gaussian((1.0,), 2.0).sample(rng)[0] for _ in range(20_000)])
    assert abs(g.mean() - 1.0) < 0.06 and abs(g.std() - 2.0) < 0.06
    p = np.array([CenteredPareto(3.0).sample(rng)[0] for _ in range(20_000)])
    # |X| + 1 is Pareto(3): E|X| = 3/2 - 1
    assert abs(np.abs(p).mean() - 0.5) < 0.03
    with pytest.raises(ParameterError):
        CenteredPareto(1.0, beta=1.5)


def test_dimension_mismatches():
    with pytest.raises(ConfigurationError):
        simulate_particle_system(3, stable_ou_coefficients(-1, 0, dim=2), IsotropicStable(1.5), TimeGrid.uniform(1.0, 3), PointMass(0.0), 0)
    with pytest.raises(ParameterError):
        CoefficientSet(lambda t, x, mu: x, np.eye(2), 1, 1.0, 1.0)


def test_power_moment_drift_reads_the_empirical_measure():
    coeffs = power_moment_coefficients(0.5)
    state = EnsembleState(0.0, [[1.0], [4.0]])
    out = step_particle_system(state, coeffs, NoiseSlice(0.1, np.zeros((2, 1))))
    assert np.allclose(out.positions[:, 0], [1.15, 4.15])
