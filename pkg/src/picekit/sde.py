"""Euler-Maruyama simulation of control-affine diffusions.

The controlled dynamics are

    dX = f(s, X) ds + g(s, X) (u(s, X) ds + dW),    E[dW dW'] = nu ds

integrated on a uniform grid with the control evaluated at the left endpoint
(Ito convention).  Every rollout stores the sampled noise increments and the
applied controls so that downstream estimators (path costs, Girsanov weights,
PICE gradients) can be computed exactly from the stored batch.

Random numbers come from counter-based Philox streams keyed by
``(seed, trajectory index)``, so a batch is a pure function of its inputs no
matter how trajectories are scheduled over worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import ConfigurationError, RolloutDiverged

Array = np.ndarray
InitialState = Union[Array, Callable[[np.random.Generator], Array]]

# Trajectories are integrated in fixed-size blocks; the block layout never
# depends on the worker count, which keeps outputs bit-identical.
BLOCK_SIZE = 512
DEFAULT_BOUND = 1e6
_INIT_STREAM = 1 << 63


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``s_j = t0 + j*dt`` for ``j = 0..M``."""

    t0: float
    dt: float
    M: int

    def __post_init__(self):
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ConfigurationError(f"time step dt must be positive, got {self.dt}")
        if int(self.M) != self.M or self.M < 1:
            raise ConfigurationError(f"step count M must be a positive integer, got {self.M}")
        object.__setattr__(self, "M", int(self.M))

    @classmethod
    def from_horizon(cls, t0: float, T: float, dt: float) -> "TimeGrid":
        """Grid covering ``[t0, T]`` with step ``dt`` (``T - t0`` must be a multiple of dt)."""
        if not dt > 0:
            raise ConfigurationError(f"time step dt must be positive, got {dt}")
        steps = (T - t0) / dt
        M = int(round(steps))
        if M < 1 or abs(steps - M) > 1e-6 * max(1.0, steps):
            raise ConfigurationError(f"horizon {T - t0} is not a positive multiple of dt={dt}")
        return cls(float(t0), float(dt), M)

    @property
    def T(self) -> float:
        return self.t0 + self.M * self.dt

    @property
    def times(self) -> Array:
        return self.t0 + self.dt * np.arange(self.M + 1)

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid point."""
        j = (t - self.t0) / self.dt
        k = int(round(j))
        if abs(j - k) > 1e-6 or k < 0 or k > self.M:
            raise ConfigurationError(f"time {t} is not on the grid")
        return k


def _as_matrix_fn(g):
    if callable(g):
        return g
    mat = np.atleast_2d(np.asarray(g, dtype=float))
    return lambda t, x: mat


@dataclass(frozen=True)
class DynamicsModel:
    """Control-affine SDE ``dX = f dt + g (u dt + dW)`` with ``E dW dW' = nu dt``.

    ``drift(t, X)`` maps a batch of states ``(B, n)`` to ``(B, n)``.  ``gain`` is
    either a constant ``(n, m)`` matrix or a callable returning ``(n, m)`` or
    ``(B, n, m)``.
    """

    state_dim: int
    control_dim: int
    drift: Callable[[float, Array], Array]
    gain: Union[Array, Callable[[float, Array], Array]]
    noise_cov: Array
    _gain_fn: Callable = field(init=False, repr=False, compare=False)
    _noise_chol: Array = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nu = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        m = self.control_dim
        if nu.shape != (m, m):
            raise ConfigurationError(f"noise covariance must be {m}x{m}, got {nu.shape}")
        if not np.allclose(nu, nu.T, rtol=1e-12, atol=0.0):
            raise ConfigurationError("noise covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(nu)
        except np.linalg.LinAlgError:
            raise ConfigurationError("noise covariance must be positive definite") from None
        object.__setattr__(self, "noise_cov", nu)
        object.__setattr__(self, "_noise_chol", chol)
        object.__setattr__(self, "_gain_fn", _as_matrix_fn(self.gain))

    def gain_at(self, t: float, x: Array) -> Array:
        return self._gain_fn(t, x)

    @property
    def noise_chol(self) -> Array:
        return self._noise_chol


@dataclass(frozen=True)
class TrajectoryBatch:
    """Immutable record of ``N`` rollouts on a common grid.

    Attributes:
        grid: the time grid.
        states: ``(N, M+1, n)`` state paths.
        noise: ``(N, M, m)`` Brownian increments ``dW``.
        controls: ``(N, M, m)`` controls applied at the left endpoint of each step.
        seed: seed the batch was drawn with.
        x0: the fixed initial state, or ``None`` if initial states were sampled.
    """

    grid: TimeGrid
    states: Array
    noise: Array
    controls: Array
    seed: int
    x0: Optional[Array] = None

    def __post_init__(self):
        for arr in (self.states, self.noise, self.controls):
            arr.flags.writeable = False

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    @property
    def control_dim(self) -> int:
        return self.noise.shape[2]


def euler_step(model: DynamicsModel, t: float, dt: float, x: Array, u: Array, dw: Array) -> Array:
    """One Euler-Maruyama step for a block of states (shared by rollout and replay)."""
    f = model.drift(t, x)
    g = model.gain_at(t, x)
    kick = u * dt + dw
    if g.ndim == 2:
        gk = (g[None, :, :] * kick[:, None, :]).sum(axis=-1)
    else:
        gk = (g * kick[:, None, :]).sum(axis=-1)
    return x + f * dt + gk


def _stream(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def _standard_normals(seed: int, start: int, stop: int, M: int, m: int) -> Array:
    z = np.empty((stop - start, M, m))
    for k, i in enumerate(range(start, stop)):
        z[k] = _stream(seed, i).standard_normal((M, m))
    return z


def sample_brownian(grid: TimeGrid, N: int, m: int, nu, seed: int, workers: int = 1) -> Array:
    """Draw ``(N, M, m)`` Gaussian increments with covariance ``nu * dt``.

    The increments of trajectory ``i`` depend only on ``(seed, i)``.
    """
    nu = np.atleast_2d(np.asarray(nu, dtype=float))
    if nu.shape != (m, m):
        raise ConfigurationError(f"noise covariance must be {m}x{m}, got {nu.shape}")
    try:
        chol = np.linalg.cholesky(nu)
    except np.linalg.LinAlgError:
        raise ConfigurationError("noise covariance must be positive definite") from None
    blocks = _blocks(N)

    def draw(block):
        z = _standard_normals(seed, block[0], block[1], grid.M, m)
        return _correlate(z, chol, grid.dt)

    return np.concatenate(list(_map(draw, blocks, workers)), axis=0)


def _correlate(z: Array, chol: Array, dt: float) -> Array:
    # dW = sqrt(dt) L z, written as an elementwise product-sum for row-wise determinism
    return np.sqrt(dt) * (z[..., None, :] * chol).sum(axis=-1)


def _blocks(N: int):
    return [(a, min(a + BLOCK_SIZE, N)) for a in range(0, N, BLOCK_SIZE)]


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _initial_states(x0: InitialState, seed: int, start: int, stop: int, n: int) -> Array:
    if callable(x0):
        out = np.empty((stop - start, n))
        for k, i in enumerate(range(start, stop)):
            out[k] = np.asarray(x0(_stream(seed, _INIT_STREAM | i)), dtype=float).reshape(n)
        return out
    return np.broadcast_to(np.asarray(x0, dtype=float).reshape(n), (stop - start, n)).copy()


def rollout(
    model: DynamicsModel,
    policy,
    x0: InitialState,
    grid: TimeGrid,
    N: int,
    seed: int,
    workers: int = 1,
    bound: float = DEFAULT_BOUND,
) -> TrajectoryBatch:
    """Simulate ``N`` controlled trajectories with Euler-Maruyama.

    Args:
        model: the controlled dynamics.
        policy: object with ``evaluate(t, X) -> (B, m)``.
        x0: fixed initial state ``(n,)`` or a sampler ``rng -> (n,)``; the
            sampler receives a stream keyed by ``(seed, i)`` distinct from
            the noise stream.
        grid: time grid.
        N: number of trajectories.
        seed: non-negative integer seed.
        workers: number of threads; does not change the result.
        bound: abort if any state component exceeds this in magnitude.

    Returns:
        The trajectory batch.

    Raises:
        RolloutDiverged: non-finite drift, gain or control, or a state beyond ``bound``.
    """
    if N < 1:
        raise ConfigurationError(f"need at least one trajectory, got N={N}")
    if seed < 0:
        raise ConfigurationError(f"seed must be non-negative, got {seed}")
    n, m, M, dt = model.state_dim, model.control_dim, grid.M, grid.dt
    times = grid.times
    chol = model.noise_chol

    def simulate(block):
        start, stop = block
        dw = _correlate(_standard_normals(seed, start, stop, M, m), chol, dt)
        xs = np.empty((stop - start, M + 1, n))
        us = np.empty((stop - start, M, m))
        x = _initial_states(x0, seed, start, stop, n)
        xs[:, 0] = x
        for j in range(M):
            u = np.asarray(policy.evaluate(times[j], x), dtype=float).reshape(stop - start, m)
            _check(u, start, j, "non-finite control")
            x = euler_step(model, times[j], dt, x, u, dw[:, j])
            _check(x, start, j, "non-finite drift or gain")
            over = np.abs(x) > bound
            if over.any():
                i = int(np.argwhere(over.any(axis=1))[0, 0])
                raise RolloutDiverged(start + i, j, f"|state| exceeded bound {bound:g}")
            us[:, j] = u
            xs[:, j + 1] = x
        return xs, dw, us

    parts = _map(simulate, _blocks(N), workers)
    fixed = None if callable(x0) else np.asarray(x0, dtype=float).reshape(n).copy()
    return TrajectoryBatch(
        grid=grid,
        states=np.concatenate([p[0] for p in parts]),
        noise=np.concatenate([p[1] for p in parts]),
        controls=np.concatenate([p[2] for p in parts]),
        seed=int(seed),
        x0=fixed,
    )


def _check(arr: Array, offset: int, step: int, reason: str):
    bad = ~np.isfinite(arr)
    if bad.any():
        i = int(np.argwhere(bad.reshape(arr.shape[0], -1).any(axis=1))[0, 0])
        raise RolloutDiverged(offset + i, step, reason)


def replay(model: DynamicsModel, batch: TrajectoryBatch) -> Array:
    """Re-integrate a batch from its stored initial states, controls and noise."""
    xs = np.empty_like(batch.states)
    times, dt = batch.grid.times, batch.grid.dt
    for start, stop in _blocks(batch.N):
        x = batch.states[start:stop, 0].copy()
        xs[start:stop, 0] = x
        for j in range(batch.grid.M):
            x = euler_step(model, times[j], dt, x, batch.controls[start:stop, j], batch.noise[start:stop, j])
            xs[start:stop, j + 1] = x
    return xs
