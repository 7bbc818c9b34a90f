import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pendulum_ode
from picekit.benchmarks import pendulum_drift
from picekit.errors import ConfigurationError, RolloutDiverged
from picekit.policies import CallablePolicy, ZeroPolicy
from picekit.sde import DynamicsModel, TimeGrid, replay, rollout, sample_brownian


def test_grid_times_and_horizon():
    g = TimeGrid(0.5, 0.25, 4)
    assert g.T == 1.5
    np.testing.assert_allclose(g.times, [0.5, 0.75, 1.0, 1.25, 1.5])
    assert np.all(np.diff(g.times) > 0)
    assert g.index_of(1.0) == 2
    with pytest.raises(ConfigurationError):
        g.index_of(0.6)


@pytest.mark.parametrize("dt, M", [(0.0, 3), (-0.1, 3), (0.1, 0), (0.1, 2.5)])
def test_grid_rejects_bad_values(dt, M):
    with pytest.raises(ConfigurationError):
        TimeGrid(0.0, dt, M)


def test_from_horizon():
    g = TimeGrid.from_horizon(0.0, 5.0, 0.01)
    assert g.M == 500
    with pytest.raises(ConfigurationError):
        TimeGrid.from_horizon(0.0, 1.0, 0.3)


def test_pure_brownian_increments(brownian):
    grid = TimeGrid(0.0, 0.01, 50)
    b = rollout(brownian, ZeroPolicy(), np.zeros(1), grid, 20, seed=3)
    np.testing.assert_allclose(np.diff(b.states, axis=1), b.noise, rtol=0, atol=1e-14)
    assert np.all(b.states[:, 0] == 0.0)
    assert np.all(b.controls == 0.0)


def test_brownian_terminal_variance(brownian):
    grid = TimeGrid(0.0, 0.01, 500)
    b = rollout(brownian, ZeroPolicy(), np.zeros(1), grid, 10_000, seed=11)
    var = np.var(b.states[:, -1, 0] - b.states[:, 0, 0], ddof=1)
    assert abs(var - 5.0) < 0.05 * 5.0


def _solve_error(dt):
    nu = 1e-24
    model = DynamicsModel(2, 1, pendulum_drift, np.array([[0.0], [1.0]]), np.array([[nu]]))
    grid = TimeGrid.from_horizon(0.0, 2.0, dt)
    x0 = np.array([1.5 * np.pi + 0.3, 0.1])
    b = rollout(model, ZeroPolicy(), x0, grid, 1, seed=0)
    exact = pendulum_ode(x0, 2.0, grid.times)
    return np.abs(b.states[0] - exact).max()


def test_noiseless_pendulum_first_order_convergence():
    e1, e2 = _solve_error(0.01), _solve_error(0.005)
    assert e1 < 0.05
    assert 1.6 < e1 / e2 < 2.4


def test_replay_identity_is_exact(lqg, lqg_spec):
    from picekit.benchmarks import lqg_optimal_policy

    b = rollout(lqg.model, lqg_optimal_policy(lqg_spec), lqg.x0, lqg.grid, 700, seed=5)
    np.testing.assert_array_equal(replay(lqg.model, b), b.states)


def test_worker_count_does_not_change_output(lqg, lqg_spec):
    from picekit.benchmarks import lqg_optimal_policy

    pol = lqg_optimal_policy(lqg_spec)
    a = rollout(lqg.model, pol, lqg.x0, lqg.grid, 1200, seed=9, workers=1)
    b = rollout(lqg.model, pol, lqg.x0, lqg.grid, 1200, seed=9, workers=4)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.noise, b.noise)


def test_stream_depends_only_on_seed_and_index(brownian):
    grid = TimeGrid(0.0, 0.1, 10)
    small = rollout(brownian, ZeroPolicy(), np.zeros(1), grid, 5, seed=42)
    large = rollout(brownian, ZeroPolicy(), np.zeros(1), grid, 600, seed=42)
    np.testing.assert_array_equal(small.noise, large.noise[:5])
    other = rollout(brownian, ZeroPolicy(), np.zeros(1), grid, 5, seed=43)
    assert not np.array_equal(small.noise, other.noise)


def test_initial_sampler_uses_separate_stream(brownian):
    grid = TimeGrid(0.0, 0.1, 10)
    fixed = rollout(brownian, ZeroPolicy(), np.zeros(1), grid, 8, seed=1)
    sampled = rollout(brownian, ZeroPolicy(), lambda rng: rng.normal(size=1), grid, 8, seed=1)
    np.testing.assert_array_equal(fixed.noise, sampled.noise)
    assert sampled.x0 is None
    assert np.unique(sampled.states[:, 0, 0]).size == 8


def test_batch_is_read_only(brownian):
    b = rollout(brownian, ZeroPolicy(), np.zeros(1), TimeGrid(0.0, 0.1, 3), 2, seed=0)
    with pytest.raises(ValueError):
        b.states[0, 0, 0] = 1.0


def test_divergence_guard_reports_trajectory_and_step():
    model = DynamicsModel(1, 1, lambda t, x: 50.0 * x, np.ones((1, 1)), np.eye(1))
    grid = TimeGrid(0.0, 0.1, 100)
    with pytest.raises(RolloutDiverged) as info:
        rollout(model, ZeroPolicy(), np.ones(1), grid, 3, seed=0, bound=1e6)
    assert info.value.trajectory in (0, 1, 2)
    assert 0 <= info.value.step < 100


def test_nonfinite_control_aborts(brownian):
    def bad(t, x):
        return np.where(x[:, :1] > 0.2, np.nan, 0.0)

    with pytest.raises(RolloutDiverged, match="non-finite control"):
        rollout(brownian, CallablePolicy(bad), np.zeros(1), TimeGrid(0.0, 0.1, 200), 50, seed=2)


@pytest.mark.parametrize("nu", [[[0.0]], [[-1.0]], [[1.0, 2.0], [2.0, 1.0]]])
def test_non_positive_definite_noise_rejected(nu):
    m = np.asarray(nu).shape[0]
    with pytest.raises(ConfigurationError):
        DynamicsModel(m, m, lambda t, x: x, np.eye(m), nu)


def test_sample_brownian_mean():
    grid = TimeGrid(0.0, 0.01, 5)
    dw = sample_brownian(grid, 100_000, 1, np.eye(1), seed=4)
    se = np.sqrt(grid.dt / dw.shape[0])
    assert np.all(np.abs(dw.mean(axis=0)) < 4 * se)


def test_sample_brownian_covariance():
    grid = TimeGrid(0.0, 0.01, 2)
    a, b = 0.5, 2.0
    dw = sample_brownian(grid, 100_000, 2, np.diag([a, b]), seed=8)
    cov = np.cov(dw[:, 0].T)
    np.testing.assert_allclose(np.diag(cov), [a * grid.dt, b * grid.dt], rtol=0.05)
    assert abs(cov[0, 1]) < 0.05 * np.sqrt(a * b) * grid.dt


def test_sample_brownian_thread_invariant():
    grid = TimeGrid(0.0, 0.01, 7)
    nu = np.array([[1.0, 0.3], [0.3, 0.5]])
    a = sample_brownian(grid, 2000, 2, nu, seed=12, workers=1)
    b = sample_brownian(grid, 2000, 2, nu, seed=12, workers=3)
    np.testing.assert_array_equal(a, b)


def test_ito_isometry(brownian):
    grid = TimeGrid(0.0, 0.01, 100)
    b = rollout(brownian, ZeroPolicy(), np.zeros(1), grid, 100_000, seed=21)
    Y = b.states[:, :-1, 0]
    integral = (Y * b.noise[:, :, 0]).sum(axis=1)
    expected = (grid.dt * np.arange(grid.M) * grid.dt).sum()
    assert abs(np.mean(integral ** 2) - expected) < 0.05 * expected


@settings(max_examples=25, deadline=None)
@given(
    a=st.floats(-2, 2),
    g=st.floats(0.1, 3),
    k=st.floats(-2, 2),
    nu=st.floats(0.01, 2),
    seed=st.integers(0, 2**32),
)
def test_replay_identity_property(a, g, k, nu, seed):
    model = DynamicsModel(1, 1, lambda t, x: a * np.sin(x), np.array([[g]]), np.array([[nu]]))
    pol = CallablePolicy(lambda t, x: k * x + t)
    b = rollout(model, pol, np.array([0.3]), TimeGrid(0.0, 0.05, 20), 4, seed=seed)
    np.testing.assert_array_equal(replay(model, b), b.states)
    again = rollout(model, pol, np.array([0.3]), TimeGrid(0.0, 0.05, 20), 4, seed=seed)
    np.testing.assert_array_equal(again.states, b.states)
