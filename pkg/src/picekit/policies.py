"""Parametrized state-feedback controllers ``u(t, x | theta)``.

All policies evaluate on a batch of states ``(B, n)`` (a single ``(n,)`` state
is also accepted) and expose ``param_jacobian`` / ``vjp`` so that PICE can form
gradients.  Parameters live in a flat vector ``theta``; policies are immutable
and ``with_params`` returns an updated copy.
"""

from __future__ import annotations

from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .sde import TimeGrid

Array = np.ndarray


def constant_basis(x: Array) -> Array:
    """The single basis function ``h(x) = 1``."""
    return np.ones((x.shape[0], 1))


def affine_basis(x: Array) -> Array:
    """Basis ``{1, x_1, ..., x_n}``."""
    return np.concatenate([np.ones((x.shape[0], 1)), x], axis=1)


def _batch(x) -> tuple[Array, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


class Policy:
    """Base contract for controllers."""

    control_dim: int

    @property
    def theta(self) -> Array:
        return np.zeros(0)

    @property
    def n_params(self) -> int:
        return self.theta.size

    def evaluate(self, t: float, x) -> Array:
        raise NotImplementedError

    def param_jacobian(self, t: float, x) -> Array:
        """Sensitivities ``du/dtheta`` of shape ``(B, P, m)`` (``(P, m)`` for one state)."""
        xb, single = _batch(x)
        jac = np.zeros((xb.shape[0], 0, self.control_dim))
        return jac[0] if single else jac

    def vjp(self, t: float, x, v: Array) -> Array:
        """``sum_b J_b @ v_b`` for a batch of cotangents ``v`` of shape ``(B, m)``."""
        jac = self.param_jacobian(t, _batch(x)[0])
        return np.einsum("bpm,bm->p", jac, np.asarray(v, dtype=float))

    def with_params(self, theta: Array) -> "Policy":
        if np.size(theta):
            raise ConfigurationError(f"{type(self).__name__} has no parameters")
        return self

    def to_dict(self) -> dict:
        return {"type": type(self).__name__, "theta": []}

    __call__ = evaluate


class ZeroPolicy(Policy):
    """``u = 0`` everywhere."""

    def __init__(self, control_dim: int = 1):
        self.control_dim = control_dim

    def evaluate(self, t, x):
        xb, single = _batch(x)
        u = np.zeros((xb.shape[0], self.control_dim))
        return u[0] if single else u


class CallablePolicy(Policy):
    """Wraps a fixed feedback law ``fn(t, X) -> (B, m)`` (no learnable parameters)."""

    def __init__(self, fn: Callable[[float, Array], Array], control_dim: int = 1):
        self.fn = fn
        self.control_dim = control_dim

    def evaluate(self, t, x):
        xb, single = _batch(x)
        u = np.asarray(self.fn(t, xb), dtype=float).reshape(xb.shape[0], self.control_dim)
        return u[0] if single else u


class LinearPolicy(Policy):
    """Policy linear in its parameters: ``u(t, x) = sum_k h_k(x) coef[t][k, :]``.

    ``coef`` has shape ``(K, m)`` for a static policy or ``(M, K, m)`` for a
    time-indexed one (which then needs ``grid``).  Subclasses provide
    ``features(x) -> (B, K)``.
    """

    def __init__(self, coef: Array, grid: Optional[TimeGrid] = None):
        coef = np.array(coef, dtype=float)
        if coef.ndim == 3:
            if grid is None:
                raise ConfigurationError("time-indexed coefficients need a time grid")
            if coef.shape[0] != grid.M:
                raise ConfigurationError(f"need {grid.M} coefficient slices, got {coef.shape[0]}")
        elif coef.ndim != 2:
            raise ConfigurationError(f"coefficients must be (K, m) or (M, K, m), got {coef.shape}")
        coef.flags.writeable = False
        self.coef = coef
        self.grid = grid
        self.control_dim = coef.shape[-1]

    @property
    def time_indexed(self) -> bool:
        return self.coef.ndim == 3

    @property
    def n_features(self) -> int:
        return self.coef.shape[-2]

    @property
    def theta(self) -> Array:
        return self.coef.ravel().copy()

    @property
    def n_params(self) -> int:
        return self.coef.size

    def features(self, x: Array) -> Array:
        raise NotImplementedError

    def slice_index(self, t: float) -> int:
        j = self.grid.index_of(t)
        if j >= self.grid.M:
            raise ConfigurationError(f"no control configured at time {t} (grid end)")
        return j

    def coef_at(self, t: float) -> Array:
        return self.coef[self.slice_index(t)] if self.time_indexed else self.coef

    def evaluate(self, t, x):
        xb, single = _batch(x)
        c = self.coef_at(t)
        h = self.features(xb)
        u = (h[:, :, None] * c[None, :, :]).sum(axis=1)
        return u[0] if single else u

    def param_jacobian(self, t, x):
        xb, single = _batch(x)
        B, K, m = xb.shape[0], self.n_features, self.control_dim
        h = self.features(xb)
        local = np.zeros((B, K, m, m))
        for i in range(m):
            local[:, :, i, i] = h
        if self.time_indexed:
            jac = np.zeros((B,) + self.coef.shape + (m,))
            jac[:, self.slice_index(t)] = local
        else:
            jac = local
        jac = jac.reshape(B, self.n_params, m)
        return jac[0] if single else jac

    def vjp(self, t, x, v):
        xb, _ = _batch(x)
        local = self.features(xb).T @ np.asarray(v, dtype=float).reshape(xb.shape[0], self.control_dim)
        if not self.time_indexed:
            return local.ravel()
        out = np.zeros(self.coef.shape)
        out[self.slice_index(t)] = local
        return out.ravel()

    def with_coef(self, coef: Array) -> "LinearPolicy":
        raise NotImplementedError

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise ConfigurationError(f"expected {self.n_params} parameters, got {theta.size}")
        return self.with_coef(theta.reshape(self.coef.shape))

    def to_dict(self):
        return {"type": type(self).__name__, "theta": self.coef.tolist()}


class LinearBasisPolicy(LinearPolicy):
    """``u(s, x) = sum_k theta_{[s]k} h_k(x)`` for a user-supplied basis ``x -> (B, K)``."""

    def __init__(self, basis: Callable[[Array], Array], coef: Array, grid: Optional[TimeGrid] = None):
        super().__init__(coef, grid)
        self.basis = basis

    @classmethod
    def zeros(cls, basis, n_features: int, control_dim: int = 1, grid: Optional[TimeGrid] = None):
        shape = (n_features, control_dim) if grid is None else (grid.M, n_features, control_dim)
        return cls(basis, np.zeros(shape), grid)

    def features(self, x):
        return np.asarray(self.basis(x), dtype=float)

    def with_coef(self, coef):
        return LinearBasisPolicy(self.basis, coef, self.grid)


class AffineFeedbackPolicy(LinearPolicy):
    """Time-varying affine feedback ``u(t_j, x) = A_j x + b_j``.

    Stored as a time-indexed linear policy over the basis ``{1, x_1..x_n}``:
    ``coef[j, 0] = b_j`` and ``coef[j, 1:] = A_j.T``.
    """

    def __init__(self, grid: TimeGrid, A: Array, b: Array):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if A.ndim != 3 or b.shape != (A.shape[0], A.shape[1]):
            raise ConfigurationError(f"A must be (M, m, n) and b (M, m); got {A.shape} and {b.shape}")
        coef = np.concatenate([b[:, None, :], A.transpose(0, 2, 1)], axis=1)
        super().__init__(coef, grid)

    @classmethod
    def zeros(cls, grid: TimeGrid, state_dim: int, control_dim: int):
        return cls(grid, np.zeros((grid.M, control_dim, state_dim)), np.zeros((grid.M, control_dim)))

    @property
    def A(self) -> Array:
        return self.coef[:, 1:, :].transpose(0, 2, 1)

    @property
    def b(self) -> Array:
        return self.coef[:, 0, :]

    def features(self, x):
        return affine_basis(x)

    def with_coef(self, coef):
        return AffineFeedbackPolicy(self.grid, coef[:, 1:, :].transpose(0, 2, 1), coef[:, 0, :])

    def to_dict(self):
        return {"type": type(self).__name__, "A": self.A.tolist(), "b": self.b.tolist()}


class TabularGridPolicy(LinearPolicy):
    """Time-independent piecewise-constant control on a box grid.

    Cell ``k_i = floor((x_i - lo_i) / dx_i)`` per dimension, clamped to
    ``[0, K_i - 1]`` so states outside the box use the nearest edge cell.
    Dimensions listed in ``periods`` are wrapped into ``[lo, lo + period)``
    before binning.
    """

    def __init__(
        self,
        lows: Sequence[float],
        highs: Sequence[float],
        bins: Sequence[int],
        coef: Optional[Array] = None,
        periods: Optional[Mapping[int, float]] = None,
        control_dim: int = 1,
    ):
        self.lows = np.asarray(lows, dtype=float)
        self.highs = np.asarray(highs, dtype=float)
        self.bins = tuple(int(k) for k in bins)
        if not (self.lows.shape == self.highs.shape == (len(self.bins),)):
            raise ConfigurationError("lows, highs and bins must have one entry per state dimension")
        if np.any(self.highs <= self.lows) or min(self.bins) < 1:
            raise ConfigurationError("grid box must be non-empty with at least one bin per dimension")
        self.periods = dict(periods or {})
        self.widths = (self.highs - self.lows) / np.asarray(self.bins)
        n_cells = int(np.prod(self.bins))
        if coef is None:
            coef = np.zeros((n_cells, control_dim))
        coef = np.asarray(coef, dtype=float).reshape(n_cells, -1)
        super().__init__(coef)

    def cells(self, x) -> Array:
        """Flat cell index of each state in the batch."""
        xb, _ = _batch(x)
        xb = xb.copy()
        for d, period in self.periods.items():
            xb[:, d] = self.lows[d] + np.mod(xb[:, d] - self.lows[d], period)
        k = np.floor((xb - self.lows) / self.widths).astype(np.int64)
        k = np.clip(k, 0, np.asarray(self.bins) - 1)
        return np.ravel_multi_index(tuple(k.T), self.bins)

    def features(self, x):
        idx = self.cells(x)
        h = np.zeros((idx.size, self.n_features))
        h[np.arange(idx.size), idx] = 1.0
        return h

    def evaluate(self, t, x):
        xb, single = _batch(x)
        u = self.coef[self.cells(xb)]
        return u[0] if single else u

    def vjp(self, t, x, v):
        xb, _ = _batch(x)
        v = np.asarray(v, dtype=float).reshape(xb.shape[0], self.control_dim)
        idx = self.cells(xb)
        out = np.zeros(self.coef.shape)
        for i in range(self.control_dim):
            out[:, i] = np.bincount(idx, weights=v[:, i], minlength=self.n_features)
        return out.ravel()

    def table(self) -> Array:
        """Control table reshaped to ``bins + (m,)``."""
        return self.coef.reshape(self.bins + (self.control_dim,))

    def with_coef(self, coef):
        return TabularGridPolicy(self.lows, self.highs, self.bins, coef, self.periods, self.control_dim)

    def to_dict(self):
        return {
            "type": type(self).__name__,
            "lows": self.lows.tolist(),
            "highs": self.highs.tolist(),
            "bins": list(self.bins),
            "theta": self.table().tolist(),
        }
