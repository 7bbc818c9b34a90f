"""Benchmark problems: scalar LQG, noisy inverted pendulum, 2-neuron firing-rate model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad

from .cost import CostSpec
from .errors import ConfigurationError
from .policies import CallablePolicy, TabularGridPolicy
from .problem import ControlProblem
from .sde import DynamicsModel, TimeGrid

Array = np.ndarray

# -- linear quadratic Gaussian ---------------------------------------------------


@dataclass(frozen=True)
class LqgSpec:
    """``dX = u ds + dW``, ``E dW^2 = nu ds``, cost ``int R u^2/2 + Q x^2/2 ds``."""

    Q: float = 2.0
    R: float = 1.0
    nu: float = 0.1
    T: float = 5.0
    x0: float = 2.0
    dt: float = 0.01
    N: int = 50
    eta: float = 0.1

    def __post_init__(self):
        for name in ("Q", "R", "nu", "T", "dt", "N", "eta"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"LQG parameter {name} must be positive")

    @property
    def lam(self) -> float:
        return self.R * self.nu


def lqg_analytic_gain(Q: float, R: float, T: float, s) -> Array:
    """Riccati solution ``P(s) = sqrt(QR) tanh(sqrt(Q/R) (T - s))``; ``u* = -P x / R``."""
    return np.sqrt(Q * R) * np.tanh(np.sqrt(Q / R) * (T - np.asarray(s, dtype=float)))


def lqg_analytic_value(Q: float, R: float, nu: float, T: float, t: float, x: float) -> float:
    """Optimal cost-to-go ``P(t) x^2 / 2 + (nu/2) int_t^T P(s) ds``."""
    integral, _ = quad(lambda s: lqg_analytic_gain(Q, R, T, s), t, T, epsabs=1e-12, epsrel=1e-10)
    return float(0.5 * lqg_analytic_gain(Q, R, T, t) * x * x + 0.5 * nu * integral)


def build_lqg(spec: LqgSpec) -> ControlProblem:
    model = DynamicsModel(
        state_dim=1,
        control_dim=1,
        drift=lambda t, x: np.zeros_like(x),
        gain=np.ones((1, 1)),
        noise_cov=np.array([[spec.nu]]),
    )
    cost = CostSpec(
        R=np.array([[spec.R]]),
        lam=spec.lam,
        state_cost=lambda t, x: 0.5 * spec.Q * x[:, 0] ** 2,
    )
    grid = TimeGrid.from_horizon(0.0, spec.T, spec.dt)
    return ControlProblem(model, cost, grid, np.array([spec.x0]))


def lqg_optimal_policy(spec: LqgSpec, scale: float = 1.0) -> CallablePolicy:
    """Analytic optimal feedback ``-P(s) x / R`` (times ``scale``)."""

    def u(t, x):
        return -scale * lqg_analytic_gain(spec.Q, spec.R, spec.T, t) * x / spec.R

    return CallablePolicy(u, control_dim=1)


# -- inverted pendulum -----------------------------------------------------------


@dataclass(frozen=True)
class PendulumSpec:
    """Pendulum ``alpha'' = -cos(alpha) + u`` with noise on the angular velocity.

    State cost ``Q1/2 (sin x1 - 1)^2 + Q2/2 x2^2``; the grid controller covers
    ``[0, 2pi) x [-2, 2]`` with the angle wrapped.
    """

    Q1: float = 2.0
    Q2: float = 0.02
    R: float = 1.0
    nu: float = 0.3
    T: float = 5.0
    dt: float = 0.1
    N: int = 500
    eta: float = 0.4
    K1: int = 20
    K2: int = 40
    x1_range: tuple = (0.0, 2 * np.pi)
    x2_range: tuple = (-2.0, 2.0)
    start: tuple = (1.5 * np.pi, 0.0)
    jitter: float = 0.02

    def __post_init__(self):
        for name in ("Q1", "Q2", "R", "nu", "T", "dt", "N", "eta"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"pendulum parameter {name} must be positive")
        if self.K1 < 1 or self.K2 < 1:
            raise ConfigurationError("grid bin counts K1, K2 must be >= 1")
        if self.jitter < 0:
            raise ConfigurationError("jitter must be >= 0")


def pendulum_drift(t, x):
    return np.stack([x[:, 1], -np.cos(x[:, 0])], axis=1)


def pendulum_state_cost(spec: PendulumSpec):
    def V(t, x):
        return 0.5 * spec.Q1 * (np.sin(x[:, 0]) - 1.0) ** 2 + 0.5 * spec.Q2 * x[:, 1] ** 2

    return V


def pendulum_sampler(spec: PendulumSpec):
    """Start at ``start`` with the velocity jittered uniformly by ``+-jitter``."""
    x1, x2 = spec.start

    def sample(rng: np.random.Generator) -> Array:
        return np.array([x1, x2 + rng.uniform(-spec.jitter, spec.jitter)])

    return sample


def build_pendulum(spec: PendulumSpec) -> tuple[ControlProblem, TabularGridPolicy]:
    """Assemble the pendulum problem and a zero-initialized grid controller."""
    model = DynamicsModel(
        state_dim=2,
        control_dim=1,
        drift=pendulum_drift,
        gain=np.array([[0.0], [1.0]]),
        noise_cov=np.array([[spec.nu]]),
    )
    cost = CostSpec(R=np.array([[spec.R]]), lam=spec.R * spec.nu, state_cost=pendulum_state_cost(spec))
    grid = TimeGrid.from_horizon(0.0, spec.T, spec.dt)
    policy = TabularGridPolicy(
        lows=(spec.x1_range[0], spec.x2_range[0]),
        highs=(spec.x1_range[1], spec.x2_range[1]),
        bins=(spec.K1, spec.K2),
        periods={0: spec.x1_range[1] - spec.x1_range[0]},
    )
    return ControlProblem(model, cost, grid, pendulum_sampler(spec)), policy


def pendulum_upright(states: Array, angle_tol: float = 0.2, velocity_tol: float = 0.5) -> Array:
    """Mask of states with ``|sin x1 - 1| < angle_tol`` and ``|x2| < velocity_tol``."""
    return (np.abs(np.sin(states[..., 0]) - 1.0) < angle_tol) & (np.abs(states[..., 1]) < velocity_tol)


# -- 2-neuron firing-rate model ---------------------------------------------------


@dataclass(frozen=True)
class NeuralNetSpec:
    """``dx = (-x + phi(J x + theta_b)) dt + dW`` with ``E dW dW' = sigma_dyn2 I dt``.

    ``phi`` is ``tanh`` (or the identity for the linear-Gaussian variant).
    Observations ``y_i ~ N(x_1(t_i), sigma_obs^2)``.
    """

    J: Array
    theta_b: Array
    obs_times: Array
    obs_values: Array
    sigma_dyn2: float = 0.2
    sigma_obs: float = 0.2
    T: float = 1.0
    dt: float = 0.01
    link: str = "tanh"
    observed: int = 0
    truth: Optional[Array] = field(default=None, compare=False)

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ConfigurationError("coupling J must be square")
        if not np.allclose(J, -J.T, atol=1e-12):
            raise ConfigurationError("coupling J must be antisymmetric")
        if self.sigma_dyn2 <= 0 or self.sigma_obs <= 0:
            raise ConfigurationError("noise levels must be positive")
        if self.link not in ("tanh", "identity"):
            raise ConfigurationError(f"unknown link {self.link!r}")
        if len(self.obs_times) != len(self.obs_values):
            raise ConfigurationError("observation times and values differ in length")
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "theta_b", np.asarray(self.theta_b, dtype=float))
        object.__setattr__(self, "obs_times", np.asarray(self.obs_times, dtype=float))
        object.__setattr__(self, "obs_values", np.asarray(self.obs_values, dtype=float))

    @property
    def n(self) -> int:
        return self.J.shape[0]


def neural_net_drift(J: Array, theta_b: Array, link: str = "tanh"):
    phi = np.tanh if link == "tanh" else (lambda a: a)

    def f(t, x):
        return -x + phi(x @ J.T + theta_b)

    return f


def random_coupling(rng: np.random.Generator, n: int = 2, J_std: float = 25.0, theta_std: float = 0.75):
    """Antisymmetric coupling with N(0, J_std^2) entries and N(0, theta_std^2) biases."""
    upper = np.triu(rng.normal(0.0, J_std, (n, n)), k=1)
    return upper - upper.T, rng.normal(0.0, theta_std, n)


def make_neural_net_spec(
    seed: int,
    n_obs: int = 12,
    J_std: float = 25.0,
    theta_std: float = 0.75,
    sigma_dyn2: float = 0.2,
    sigma_obs: float = 0.2,
    T: float = 1.0,
    dt: float = 0.01,
    link: str = "tanh",
    J: Optional[Array] = None,
    theta_b: Optional[Array] = None,
) -> NeuralNetSpec:
    """Draw a random model and ``n_obs`` noisy observations of neuron 1 from one ground-truth run.

    Observation times are ``i * T / n_obs`` for ``i = 1..n_obs``; the
    ground-truth path starts from the ``N(0, sigma_dyn2 I)`` prior.
    """
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0x5EED], dtype=np.uint64)))
    J_rand, th_rand = random_coupling(rng, 2, J_std, theta_std)
    J = J_rand if J is None else np.asarray(J, dtype=float)
    theta_b = th_rand if theta_b is None else np.asarray(theta_b, dtype=float)
    grid = TimeGrid.from_horizon(0.0, T, dt)
    f = neural_net_drift(J, theta_b, link)
    x = rng.normal(0.0, np.sqrt(sigma_dyn2), (1, J.shape[0]))
    path = [x[0]]
    for t in grid.times[:-1]:
        x = x + f(t, x) * dt + rng.normal(0.0, np.sqrt(sigma_dyn2 * dt), x.shape)
        path.append(x[0])
    path = np.array(path)
    obs_times = T * np.arange(1, n_obs + 1) / n_obs
    idx = np.rint(obs_times / dt).astype(int)
    values = path[idx, 0] + rng.normal(0.0, sigma_obs, n_obs)
    return NeuralNetSpec(
        J=J, theta_b=theta_b, obs_times=obs_times, obs_values=values, sigma_dyn2=sigma_dyn2,
        sigma_obs=sigma_obs, T=T, dt=dt, link=link, truth=path,
    )


@dataclass(frozen=True)
class ObservationCost:
    """Gaussian observation log-likelihood expressed as state cost.

    An observation at time ``t_i`` is snapped to the nearest grid index and
    contributes ``(y_i - x(t_i))^2 / (2 sigma_obs^2)``: as a point mass
    ``1/dt`` times that in the running cost, or in the terminal cost when it
    falls on the final grid time.
    """

    grid: TimeGrid
    times: Array
    values: Array
    sigma_obs: float
    observed: int = 0

    @property
    def indices(self) -> Array:
        return np.rint((self.times - self.grid.t0) / self.grid.dt).astype(int)

    def contribution(self, k: int, x: Array) -> Array:
        r = self.values[k] - x[:, self.observed]
        return 0.5 * r * r / self.sigma_obs ** 2

    def state_cost(self, t: float, x: Array) -> Array:
        j = self.grid.index_of(t)
        out = np.zeros(x.shape[0])
        for k in np.flatnonzero(self.indices == j):
            out += self.contribution(k, x) / self.grid.dt
        return out

    def terminal_cost(self, x: Array) -> Array:
        out = np.zeros(x.shape[0])
        for k in np.flatnonzero(self.indices == self.grid.M):
            out += self.contribution(k, x)
        return out


def prior_sampler(n: int, var: float):
    sd = np.sqrt(var)

    def sample(rng: np.random.Generator) -> Array:
        return rng.normal(0.0, sd, n)

    return sample


def build_neural_net(spec: NeuralNetSpec) -> tuple[ControlProblem, ObservationCost]:
    """Posterior-inference problem with ``lambda = 1`` and ``R = nu^-1``.

    With this choice ``exp(-S)`` is exactly the observation likelihood times
    the Girsanov ratio, so the weighted paths target the smoothing posterior.
    """
    n = spec.n
    grid = TimeGrid.from_horizon(0.0, spec.T, spec.dt)
    idx = np.rint(spec.obs_times / spec.dt)
    if np.any(idx < 0) or np.any(idx > grid.M):
        raise ConfigurationError("observation times must lie inside [0, T]")
    model = DynamicsModel(
        state_dim=n,
        control_dim=n,
        drift=neural_net_drift(spec.J, spec.theta_b, spec.link),
        gain=np.eye(n),
        noise_cov=spec.sigma_dyn2 * np.eye(n),
    )
    obs = ObservationCost(grid, spec.obs_times, spec.obs_values, spec.sigma_obs, spec.observed)
    cost = CostSpec(
        R=np.eye(n) / spec.sigma_dyn2,
        lam=1.0,
        state_cost=obs.state_cost,
        terminal_cost=obs.terminal_cost,
    )
    return ControlProblem(model, cost, grid, prior_sampler(n, spec.sigma_dyn2)), obs
