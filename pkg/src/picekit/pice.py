"""Path Integral Cross Entropy (PICE) learning of feedback controllers.

PICE minimizes ``KL(p* || p_theta)`` between the optimally controlled path
distribution and the one induced by a parametrized controller, using
importance-weighted rollouts from the current controller (adaptive
importance sampling).  Policies that are linear in their parameters can be
updated by solving the stationarity conditions in closed form; any
parametrization can be updated by gradient steps.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cost import PathCosts, weights
from .errors import ConfigurationError, EstimationFailed, IllConditioned, PicekitError
from .estimators import entropic_ess, estimate_psi
from .policies import LinearPolicy, Policy
from .problem import ControlProblem
from .sde import TrajectoryBatch

logger = logging.getLogger(__name__)

Array = np.ndarray

MODES = ("closed_form_timedep", "closed_form_static", "gradient_timedep", "gradient_static")


class NonFiniteGradient(EstimationFailed):
    pass


@dataclass(frozen=True)
class PiceConfig:
    eta: float = 0.1
    iterations: int = 100
    N: int = 100
    ridge: Optional[float] = None
    seed: int = 0
    mode: str = "gradient_static"
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown PICE mode {self.mode!r}; expected one of {MODES}")
        if not self.eta > 0:
            raise ConfigurationError(f"learning rate eta must be positive, got {self.eta}")
        if self.N < 2:
            raise ConfigurationError(f"need N >= 2 trajectories per iteration, got {self.N}")
        if self.iterations < 0:
            raise ConfigurationError(f"iterations must be >= 0, got {self.iterations}")
        if self.ridge is not None and self.ridge < 0:
            raise ConfigurationError(f"ridge must be >= 0, got {self.ridge}")


def iteration_seed(seed: int, iteration: int) -> int:
    """Independent 64-bit rollout seed for one learning iteration."""
    return int(np.random.SeedSequence([int(seed), int(iteration)]).generate_state(1, np.uint64)[0])


# -- KL objective and its gradient ------------------------------------------------


def _controls(policy: Policy, batch: TrajectoryBatch) -> Array:
    times = batch.grid.times
    return np.stack([policy.evaluate(times[j], batch.states[:, j]) for j in range(batch.grid.M)], axis=1)


def kl_objective(batch: TrajectoryBatch, w: Array, policy: Policy) -> float:
    """Sampled cross-entropy objective for ``policy`` on a frozen weighted batch.

    ``sum_i w_i sum_j [ |u_hat|^2 dt / 2 - u_hat . (u dt + dW) ]`` where ``u`` are
    the stored sampling controls; equals ``KL(p* || p_hat)`` up to a constant.
    """
    dt = batch.grid.dt
    uh = _controls(policy, batch)
    per_path = (0.5 * (uh * uh).sum(-1) * dt - (uh * (batch.controls * dt + batch.noise)).sum(-1)).sum(1)
    return float(np.dot(w, per_path))


def kl_gradient(batch: TrajectoryBatch, w: Array, policy: Policy, timedep: bool = False) -> Array:
    """Gradient of :func:`kl_objective` with respect to the policy parameters.

    With ``timedep`` the gradient is divided by ``dt``, giving the per-time-slice
    gradient ``<(u_hat - u - dW/ds) du_hat/dtheta_s>``.
    """
    dt = batch.grid.dt
    times = batch.grid.times
    grad = np.zeros(policy.n_params)
    for j in range(batch.grid.M):
        x = batch.states[:, j]
        uh = policy.evaluate(times[j], x)
        v = w[:, None] * ((uh - batch.controls[:, j]) * dt - batch.noise[:, j])
        grad += policy.vjp(times[j], x, v)
    return grad / dt if timedep else grad


def gradient_step(
    batch: TrajectoryBatch, costs: PathCosts, policy: Policy, eta: float, timedep: bool = False
) -> tuple[Policy, Array]:
    """One PICE gradient update ``theta <- theta - eta * dKL/dtheta``.

    The batch must have been sampled with ``policy`` itself, in which case the
    ``u_hat - u`` term vanishes and the update direction is the weighted Ito
    integral ``<sum_j du_hat/dtheta' dW_j>`` (divided by ``dt`` per slice in the
    time-dependent case).

    Raises:
        NonFiniteGradient: the gradient has non-finite entries; ``policy`` is unchanged.
    """
    w, _ = weights(costs.total)
    grad = kl_gradient(batch, w, policy, timedep)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("non-finite PICE gradient")
    return policy.with_params(policy.theta - eta * grad), grad


# -- closed-form updates for linearly parametrized policies -----------------------


def _ridge_solve(G: Array, r: Array, ridge: Optional[float], where: str, time_index=None) -> Array:
    K = G.shape[0]
    rho = 1e-8 * np.trace(G) / K if ridge is None else ridge
    A = G + rho * np.eye(K)
    if rho == 0 and np.linalg.cond(A) > 1e12:
        raise IllConditioned(f"singular moment matrix {where}", time_index)
    try:
        return np.linalg.solve(A, r)
    except np.linalg.LinAlgError:
        raise IllConditioned(f"singular moment matrix {where}", time_index) from None


def _check_linear(policy, timedep: bool):
    if not isinstance(policy, LinearPolicy):
        raise ConfigurationError("closed-form solves need a policy that is linear in its parameters")
    if policy.time_indexed != timedep:
        kind = "time-indexed" if timedep else "static"
        raise ConfigurationError(f"closed-form solve expects {kind} coefficients")


def solve_closed_form_timedep(
    batch: TrajectoryBatch, costs: PathCosts, policy: LinearPolicy, ridge: Optional[float] = None
) -> LinearPolicy:
    """Per-slice solve ``(theta_s - theta0_s) <h h'> = <(dW_s/ds) h'>``.

    ``policy`` holds ``theta0``.  If the batch was not sampled with ``policy``
    the mismatch ``u - u_hat0`` is added to the right-hand side, which keeps
    the solution equal to the stationary point of the KL objective.

    Raises:
        IllConditioned: a slice's moment matrix is singular and ``ridge == 0``.
    """
    _check_linear(policy, timedep=True)
    w, _ = weights(costs.total)
    times, dt = batch.grid.times, batch.grid.dt
    coef = policy.coef.copy()
    for j in range(batch.grid.M):
        x = batch.states[:, j]
        h = policy.features(x)
        drive = batch.noise[:, j] / dt + batch.controls[:, j] - policy.evaluate(times[j], x)
        wh = w[:, None] * h
        G = h.T @ wh
        r = wh.T @ drive
        coef[j] += _ridge_solve(G, r, ridge, f"at time slice {j}", j)
    return policy.with_coef(coef)


def solve_closed_form_static(
    batch: TrajectoryBatch, costs: PathCosts, policy: LinearPolicy, ridge: Optional[float] = None
) -> LinearPolicy:
    """Single solve ``(theta - theta0) <sum_j h h' dt> = <sum_j h dW'>``."""
    _check_linear(policy, timedep=False)
    w, _ = weights(costs.total)
    times, dt = batch.grid.times, batch.grid.dt
    K = policy.n_features
    G = np.zeros((K, K))
    r = np.zeros((K, policy.control_dim))
    for j in range(batch.grid.M):
        x = batch.states[:, j]
        h = policy.features(x)
        drive = batch.noise[:, j] + (batch.controls[:, j] - policy.evaluate(times[j], x)) * dt
        wh = w[:, None] * h
        G += (h.T @ wh) * dt
        r += wh.T @ drive
    return policy.with_coef(policy.coef + _ridge_solve(G, r, ridge, "(static)"))


# -- adaptive loop -----------------------------------------------------------------


@dataclass
class TraceRow:
    iteration: int
    J_hat: float
    ess: float
    log_psi: float
    stderr_logpsi: float
    theta: Array
    grad_norm: float
    seconds: float


@dataclass
class PiceTrace:
    rows: list = field(default_factory=list)
    n_params: Optional[int] = None

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> Array:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def thetas(self) -> Array:
        return np.array([r.theta for r in self.rows])

    def to_csv(self, path, record_time: bool = False):
        """Write ``iter, J_hat, ess, theta_0.., grad_norm, seconds`` with 17 significant digits.

        Wall-clock seconds are left empty unless ``record_time`` so that
        identical runs produce identical files.
        """
        P = len(self.rows[0].theta) if self.rows else (self.n_params or 0)
        header = ["iter", "J_hat", "ess"] + [f"theta_{k}" for k in range(P)] + ["grad_norm", "seconds"]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(header)
            for r in self.rows:
                out.writerow(
                    [r.iteration, fmt(r.J_hat), fmt(r.ess)]
                    + [fmt(v) for v in r.theta]
                    + [fmt(r.grad_norm), fmt(r.seconds) if record_time else ""]
                )


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


@dataclass
class PiceResult:
    trace: PiceTrace
    policy: Policy


def run_adaptive(
    problem: ControlProblem,
    policy: Policy,
    config: PiceConfig,
    checkpoint: Optional[str] = None,
    callback: Optional[Callable[[TraceRow], None]] = None,
) -> PiceResult:
    """Iterate rollout -> weights -> update for ``config.iterations`` steps.

    Each iteration samples fresh trajectories with the current policy and a
    seed derived from ``(config.seed, iteration)``.  A non-finite gradient
    skips the update and keeps the parameters; other errors propagate with
    ``iteration`` set on the exception.
    """
    trace = PiceTrace(n_params=policy.n_params)
    timedep = config.mode.endswith("timedep")
    closed_form = config.mode.startswith("closed_form")
    if closed_form:
        _check_linear(policy, timedep)
    start = time.perf_counter()
    for it in range(config.iterations):
        try:
            batch, costs = problem.sample(policy, config.N, iteration_seed(config.seed, it), config.workers)
            w, log_psi = weights(costs.total)
            _, stderr = estimate_psi(batch, costs)
            theta = policy.theta
            grad_norm = float("nan")
            if closed_form:
                solve = solve_closed_form_timedep if timedep else solve_closed_form_static
                policy = solve(batch, costs, policy, config.ridge)
            else:
                try:
                    policy, grad = gradient_step(batch, costs, policy, config.eta, timedep)
                    grad_norm = float(np.linalg.norm(grad))
                except NonFiniteGradient:
                    logger.warning("iteration %d: non-finite gradient, parameters kept", it)
        except PicekitError as err:
            err.iteration = it
            logger.error("PICE iteration %d failed: %s", it, err)
            raise
        row = TraceRow(
            iteration=it,
            J_hat=-costs.lam * log_psi,
            ess=entropic_ess(w),
            log_psi=log_psi,
            stderr_logpsi=stderr,
            theta=theta,
            grad_norm=grad_norm,
            seconds=time.perf_counter() - start,
        )
        trace.rows.append(row)
        if callback is not None:
            callback(row)
    if checkpoint is not None:
        save_policy(policy, checkpoint)
    return PiceResult(trace, policy)


def save_policy(policy: Policy, path: str):
    with open(path, "w") as fh:
        json.dump(policy.to_dict(), fh)
        fh.write("\n")
