"""Path costs with the Girsanov cross term, and importance weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import ConfigurationError, EstimationFailed
from .sde import DynamicsModel, TrajectoryBatch

logger = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class CostSpec:
    """Running cost ``V(t, X)``, terminal cost ``Phi(X)``, control weight ``R`` and temperature ``lam``.

    ``state_cost`` and ``terminal_cost`` are vectorized over a batch of states
    ``(B, n) -> (B,)``; ``None`` means identically zero.
    """

    R: Array
    lam: float
    state_cost: Optional[Callable[[float, Array], Array]] = None
    terminal_cost: Optional[Callable[[Array], Array]] = None

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape[0] != R.shape[1] or not np.allclose(R, R.T):
            raise ConfigurationError("control weight R must be a symmetric square matrix")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ConfigurationError("control weight R must be positive definite")
        if not self.lam > 0:
            raise ConfigurationError(f"temperature lambda must be positive, got {self.lam}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "lam", float(self.lam))

    def check_coupling(self, model: DynamicsModel, rtol: float = 1e-10):
        """Raise unless ``lam * I == R @ nu`` to relative tolerance ``rtol``."""
        Rnu = self.R @ model.noise_cov
        target = self.lam * np.eye(Rnu.shape[0])
        if Rnu.shape != target.shape or np.abs(Rnu - target).max() > rtol * self.lam:
            raise ConfigurationError(
                f"lambda*I must equal R*nu: lambda={self.lam}, R*nu={Rnu.tolist()}"
            )


def coupled_cost(model: DynamicsModel, R, state_cost=None, terminal_cost=None) -> CostSpec:
    """CostSpec whose temperature is derived from ``R @ nu`` (must be a multiple of I)."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Rnu = R @ model.noise_cov
    lam = float(Rnu[0, 0])
    spec = CostSpec(R=R, lam=lam, state_cost=state_cost, terminal_cost=terminal_cost)
    spec.check_coupling(model)
    return spec


@dataclass(frozen=True)
class PathCosts:
    """Per-trajectory cost parts (unscaled) and the temperature.

    ``total = (terminal + state + quadratic + cross) / lam``; trajectories with
    a non-finite total are flagged and receive zero weight.
    """

    terminal: Array
    state: Array
    quadratic: Array
    cross: Array
    lam: float

    @property
    def total(self) -> Array:
        return (self.terminal + self.state + self.quadratic + self.cross) / self.lam

    @property
    def finite(self) -> Array:
        return np.isfinite(self.total)

    @property
    def n_flagged(self) -> int:
        return int((~self.finite).sum())


def path_cost(batch: TrajectoryBatch, spec: CostSpec) -> PathCosts:
    """Evaluate ``S_i`` for every trajectory from the stored states, controls and noise."""
    N, M, m = batch.noise.shape
    if spec.R.shape != (m, m):
        raise ConfigurationError(f"R is {spec.R.shape}, batch control dimension is {m}")
    dt = batch.grid.dt
    times = batch.grid.times
    with np.errstate(all="ignore"):
        if spec.state_cost is None:
            state = np.zeros(N)
        else:
            V = np.empty((N, M))
            for j in range(M):
                V[:, j] = spec.state_cost(times[j], batch.states[:, j])
            state = V.sum(axis=1) * dt
        if spec.terminal_cost is None:
            terminal = np.zeros(N)
        else:
            terminal = np.asarray(spec.terminal_cost(batch.states[:, M]), dtype=float).reshape(N)
        u = batch.controls
        uR = (u[..., :, None] * spec.R).sum(axis=-2)
        quadratic = 0.5 * (uR * u).sum(axis=-1).sum(axis=1) * dt
        cross = (uR * batch.noise).sum(axis=-1).sum(axis=1)
    costs = PathCosts(terminal, state, quadratic, cross, spec.lam)
    if costs.n_flagged:
        logger.warning("%d of %d trajectories have non-finite cost and get zero weight", costs.n_flagged, N)
    return costs


class Weights(NamedTuple):
    """Normalized importance weights and ``log(mean(exp(-S)))``."""

    w: Array
    log_psi: float


def weights(S: Array) -> Weights:
    """Normalized weights ``exp(-S_i) / sum_k exp(-S_k)`` computed with a min-shift.

    Non-finite costs get weight zero but still count in the ``1/N`` of the
    log-normalizer.
    """
    S = np.asarray(S, dtype=float)
    finite = np.isfinite(S)
    if not finite.any():
        raise EstimationFailed("all path costs are non-finite")
    c = S[finite].min()
    e = np.zeros_like(S)
    e[finite] = np.exp(-(S[finite] - c))
    total = e.sum()
    return Weights(e / total, float(-c + np.log(total / S.size)))
