"""Monte Carlo estimates of psi, the cost-to-go J and the optimal control at the rollout origin."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .cost import PathCosts, weights
from .errors import ConfigurationError, EstimationFailed
from .sde import TrajectoryBatch

Array = np.ndarray


@dataclass(frozen=True)
class PiEstimate:
    log_psi: float
    J_hat: float
    u_star_hat: Optional[Array]
    ess: float
    stderr_logpsi: float

    @property
    def psi_hat(self) -> float:
        return float(np.exp(self.log_psi))


def entropic_ess(w: Array) -> float:
    """Scaled weight entropy ``-sum w log w / log N`` (1 for uniform, 0 for a single atom)."""
    w = np.asarray(w, dtype=float)
    N = w.size
    if N < 2:
        raise ConfigurationError("entropic sample size needs at least two weights")
    nz = w[w > 0]
    return float(-(nz * np.log(nz)).sum() / np.log(N))


def _logpsi_stderr(w: Array) -> float:
    # delta method: sd(mean e^-S) / mean(e^-S), with w_i proportional to e^-S_i
    N = w.size
    rel_var = N * np.sum(w * w) - 1.0
    return float(np.sqrt(max(rel_var, 0.0) * N / (N - 1) / N))


def estimate_psi(batch: TrajectoryBatch, costs: PathCosts) -> tuple[float, float]:
    """``log psi_hat`` and its delta-method standard error."""
    S = costs.total
    if np.isfinite(S).sum() < 2:
        raise EstimationFailed("need at least two finite-cost trajectories")
    w, log_psi = weights(S)
    return log_psi, _logpsi_stderr(w)


def estimate_u_star(batch: TrajectoryBatch, costs: PathCosts, policy, eps_steps: int = 1) -> Array:
    """``u(t0, x0) + sum_i w_i W_i(t0 + eps) / eps`` with ``eps = eps_steps * dt``."""
    if batch.x0 is None:
        raise ConfigurationError("the optimal-control estimate needs a fixed initial state")
    if not 1 <= eps_steps <= batch.grid.M:
        raise ConfigurationError(f"eps_steps must be in [1, {batch.grid.M}], got {eps_steps}")
    if np.isfinite(costs.total).sum() < 2:
        raise EstimationFailed("need at least two finite-cost trajectories")
    w, _ = weights(costs.total)
    eps = eps_steps * batch.grid.dt
    W = batch.noise[:, :eps_steps].sum(axis=1)
    correction = (w[:, None] * W).sum(axis=0) / eps
    return policy.evaluate(batch.grid.t0, batch.x0) + correction


def estimate(batch: TrajectoryBatch, costs: PathCosts, policy=None, eps_steps: int = 1) -> PiEstimate:
    """All estimates at once; ``u_star_hat`` is ``None`` without a policy or a fixed start."""
    log_psi, stderr = estimate_psi(batch, costs)
    w, _ = weights(costs.total)
    u_star = None
    if policy is not None and batch.x0 is not None:
        u_star = estimate_u_star(batch, costs, policy, eps_steps)
    return PiEstimate(
        log_psi=log_psi,
        J_hat=-costs.lam * log_psi,
        u_star_hat=u_star,
        ess=entropic_ess(w),
        stderr_logpsi=stderr,
    )


@dataclass(frozen=True)
class Residual:
    mean: float
    var: float
    stderr: float


def lemma1_residual(batch: TrajectoryBatch, costs: PathCosts, psi_fn: Callable[[float, Array], float]) -> Residual:
    """Statistics of ``exp(-S_i) - psi(t0, x0)`` for a known ``psi``.

    The residual is a stochastic integral with zero mean for any sampling
    control and vanishes pathwise when sampling with the optimal control.
    """
    if batch.x0 is None:
        raise ConfigurationError("residual check needs a fixed initial state")
    r = np.exp(-costs.total) - psi_fn(batch.grid.t0, batch.x0)
    var = float(r.var(ddof=1)) if r.size > 1 else 0.0
    return Residual(float(r.mean()), var, float(np.sqrt(var / r.size)))
