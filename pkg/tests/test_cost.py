import numpy as np
import pytest
from scipy.integrate import trapezoid

from picekit.benchmarks import LqgSpec, build_lqg, lqg_optimal_policy
from picekit.cost import CostSpec, coupled_cost, path_cost, weights
from picekit.errors import ConfigurationError, EstimationFailed
from picekit.policies import CallablePolicy, ZeroPolicy
from picekit.sde import DynamicsModel, TimeGrid, rollout


def test_uncontrolled_cost_has_no_control_parts(lqg):
    b = rollout(lqg.model, ZeroPolicy(), lqg.x0, lqg.grid, 30, seed=1)
    c = path_cost(b, lqg.cost)
    assert np.all(c.quadratic == 0.0) and np.all(c.cross == 0.0)
    V = 0.5 * 2.0 * b.states[:, :-1, 0] ** 2
    np.testing.assert_allclose(c.total, V.sum(axis=1) * lqg.grid.dt / lqg.cost.lam, rtol=1e-12)


def test_constant_control_closed_form(brownian):
    grid = TimeGrid(0.0, 0.01, 300)
    c = 0.7
    b = rollout(brownian, CallablePolicy(lambda t, x: np.full((x.shape[0], 1), c)), np.zeros(1), grid, 25, seed=2)
    costs = path_cost(b, CostSpec(R=np.eye(1), lam=1.0))
    W_T = b.noise[:, :, 0].sum(axis=1)
    np.testing.assert_allclose(costs.total, 0.5 * c * c * grid.T + c * W_T, rtol=1e-12, atol=1e-12)


def test_total_is_scaled_sum_of_parts(lqg, lqg_spec):
    b = rollout(lqg.model, lqg_optimal_policy(lqg_spec, 0.5), lqg.x0, lqg.grid, 10, seed=4)
    c = path_cost(b, lqg.cost)
    np.testing.assert_allclose(c.total, (c.terminal + c.state + c.quadratic + c.cross) / c.lam)


def _lqg_optimal_cost_std(dt, N=400):
    spec = LqgSpec(dt=dt)
    prob = build_lqg(spec)
    b = rollout(prob.model, lqg_optimal_policy(spec), prob.x0, prob.grid, N, seed=6)
    return path_cost(b, prob.cost).total.std(ddof=1)


def test_optimal_control_cost_variance_is_discretization_error():
    # Under u*, lam*S - J(0, x0) is the sum over steps of P (dW^2 - nu dt) / 2, whose
    # variance is dt/2 * int P^2 ds when R = 1.
    spec = LqgSpec()
    s = np.linspace(0.0, spec.T, 200_001)
    p2 = (np.sqrt(spec.Q * spec.R) * np.tanh(np.sqrt(spec.Q / spec.R) * (spec.T - s))) ** 2
    int_p2 = trapezoid(p2, s)
    coarse, fine = _lqg_optimal_cost_std(0.01), _lqg_optimal_cost_std(0.001)
    assert fine == pytest.approx(np.sqrt(0.001 * int_p2 / 2), rel=0.15)
    assert coarse / fine == pytest.approx(np.sqrt(10.0), rel=0.2)


def test_coupling_violation_rejected():
    model = DynamicsModel(1, 1, lambda t, x: x, np.ones((1, 1)), np.array([[0.1]]))
    CostSpec(R=np.eye(1), lam=0.1).check_coupling(model)
    with pytest.raises(ConfigurationError, match="lambda"):
        CostSpec(R=np.eye(1), lam=0.2).check_coupling(model)


def test_coupled_cost_derives_temperature():
    model = DynamicsModel(2, 2, lambda t, x: x, np.eye(2), 0.2 * np.eye(2))
    assert coupled_cost(model, 5.0 * np.eye(2)).lam == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        coupled_cost(model, np.diag([1.0, 2.0]))


def test_nonfinite_costs_are_flagged_not_fatal(brownian):
    grid = TimeGrid(0.0, 0.1, 5)
    b = rollout(brownian, ZeroPolicy(), np.zeros(1), grid, 6, seed=0)
    phi = lambda x: np.where(x[:, 0] > 0, np.inf, 0.0)  # noqa: E731
    c = path_cost(b, CostSpec(R=np.eye(1), lam=1.0, terminal_cost=phi))
    flagged = b.states[:, -1, 0] > 0
    assert c.n_flagged == flagged.sum()
    if flagged.sum() < flagged.size:
        w = weights(c.total).w
        assert np.all(w[flagged] == 0.0)


def test_uniform_weights():
    w, log_psi = weights(np.full(7, 3.2))
    np.testing.assert_allclose(w, 1 / 7)
    assert log_psi == pytest.approx(-3.2)


def test_two_point_weights():
    w, _ = weights(np.array([0.0, np.log(3.0)]))
    np.testing.assert_allclose(w, [0.75, 0.25], rtol=1e-15)


def test_log_normalizer_matches_direct_sum(lqg):
    # well-scaled instance: rescale the costs so exp(-S) is representable directly
    b = rollout(lqg.model, ZeroPolicy(), lqg.x0, lqg.grid, 10_000, seed=7)
    S = path_cost(b, lqg.cost).total / 100.0
    _, log_psi = weights(S)
    direct = np.mean(np.exp(-S))
    assert abs(np.exp(log_psi) - direct) <= 1e-12 * direct


def test_weights_handle_huge_costs():
    w, log_psi = weights(np.array([1e4, 1e4 + 1.0]))
    assert np.isfinite(log_psi) and w.sum() == pytest.approx(1.0)
    assert w[0] / w[1] == pytest.approx(np.e)


def test_all_nonfinite_fails():
    with pytest.raises(EstimationFailed):
        weights(np.array([np.inf, np.nan]))


def test_weights_are_on_simplex():
    rng = np.random.default_rng(0)
    for _ in range(20):
        w, _ = weights(rng.normal(0, 30, 50))
        assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-12
