"""Posterior smoothing in latent diffusion models by adaptive controlled importance sampling.

Observation log-likelihoods play the role of state costs, so the optimally
controlled path distribution is the smoothing posterior.  A time-varying
affine proposal ``u = A(t) x + b(t)`` (or an open-loop ``u = b(t)``) is refitted
after every round of weighted rollouts with the per-slice closed-form solve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from scipy.optimize import brentq

from .cost import PathCosts, weights
from .estimators import entropic_ess, estimate_psi
from .pice import fmt, iteration_seed, solve_closed_form_timedep
from .policies import AffineFeedbackPolicy, LinearBasisPolicy, LinearPolicy, constant_basis
from .problem import ControlProblem
from .sde import TrajectoryBatch

Array = np.ndarray


@dataclass
class SmootherResult:
    """Weighted posterior marginals from the final round plus the iteration trace.

    ``mean_stderr`` is the importance-sampling standard error of ``mean``.
    ``A`` is ``None`` for open-loop runs.
    """

    times: Array
    mean: Array
    std: Array
    mean_stderr: Array
    ess: float
    log_psi: float
    stderr_logpsi: float
    ess_trace: list = field(default_factory=list)
    log_psi_trace: list = field(default_factory=list)
    b: Optional[Array] = None
    A: Optional[Array] = None
    beta_trace: list = field(default_factory=list)


def fit_proposal(batch: TrajectoryBatch, costs: PathCosts, policy: LinearPolicy, ridge=None) -> LinearPolicy:
    """Refit a time-indexed linear proposal (affine or open-loop) from a weighted batch."""
    return solve_closed_form_timedep(batch, costs, policy, ridge)


def kish_ess(w: Array) -> float:
    """Relative Kish effective sample size ``1 / (N sum w^2)``."""
    return float(1.0 / (w.size * np.sum(w * w)))


def tempering_exponent(S: Array, target: float) -> float:
    """Largest ``beta`` in ``(0, 1]`` whose weights ``~ exp(-beta S)`` keep Kish ESS >= ``target``."""
    if kish_ess(weights(S).w) >= target:
        return 1.0
    finite = np.isfinite(S)
    S = np.where(finite, S, np.inf)
    return float(brentq(lambda b: kish_ess(weights(b * S).w) - target, 1e-12, 1.0, xtol=1e-8))


def _scaled(costs: PathCosts, beta: float) -> PathCosts:
    if beta == 1.0:
        return costs
    return PathCosts(
        costs.terminal * beta, costs.state * beta, costs.quadratic * beta, costs.cross * beta, costs.lam
    )


def weighted_marginals(batch: TrajectoryBatch, w: Array) -> tuple[Array, Array, Array]:
    """Per-time weighted mean, population std and delta-method stderr of the mean."""
    X = batch.states
    mean = np.einsum("i,itn->tn", w, X)
    dev = X - mean[None]
    var = np.einsum("i,itn->tn", w, dev * dev)
    stderr = np.sqrt(np.einsum("i,itn->tn", w * w, dev * dev))
    return mean, np.sqrt(np.maximum(var, 0.0)), stderr


def _initial_proposal(problem: ControlProblem, feedback: bool) -> LinearPolicy:
    grid, n, m = problem.grid, problem.model.state_dim, problem.model.control_dim
    if feedback:
        return AffineFeedbackPolicy.zeros(grid, n, m)
    return LinearBasisPolicy.zeros(constant_basis, 1, m, grid)


def run_smoother(
    problem: ControlProblem,
    iterations: int,
    N: int,
    seed: int,
    feedback: bool = True,
    ridge: Optional[float] = None,
    workers: int = 1,
    temper: Optional[float] = 0.5,
) -> SmootherResult:
    """Adaptive importance sampling of the smoothing posterior.

    Each of ``iterations`` rounds samples ``N`` paths under the current
    proposal, weights them and refits the proposal.  Marginals, ESS and
    ``log psi`` (the log marginal likelihood up to the observation-model
    constant) come from the last round's weighted sample, always with the
    untempered weights.

    Args:
        temper: if set, the proposal *fit* uses flattened weights
            ``exp(-beta S)`` with ``beta`` the largest value keeping the Kish
            ESS at or above this fraction.  Early rounds from an
            uninformed proposal otherwise concentrate on a handful of paths
            and the per-slice regressions become unstable.  ``None`` fits
            with the exact weights.
    """
    if iterations < 1:
        raise ValueError("the smoother needs at least one iteration")
    policy = _initial_proposal(problem, feedback)
    if temper is not None and not 0.0 < temper < 1.0:
        raise ValueError(f"temper must lie in (0, 1), got {temper}")
    ess_trace, logpsi_trace, beta_trace = [], [], []
    for it in range(iterations):
        batch, costs = problem.sample(policy, N, iteration_seed(seed, it), workers)
        w, log_psi = weights(costs.total)
        ess_trace.append(entropic_ess(w))
        logpsi_trace.append(log_psi)
        beta = 1.0 if temper is None else tempering_exponent(costs.total, temper)
        beta_trace.append(beta)
        last = (batch, costs, w, policy)
        policy = fit_proposal(batch, _scaled(costs, beta), policy, ridge)
    batch, costs, w, sampler = last
    mean, std, stderr = weighted_marginals(batch, w)
    _, se_logpsi = estimate_psi(batch, costs)
    if feedback:
        A, b = sampler.A, sampler.b
    else:
        A, b = None, sampler.coef[:, 0, :]
    return SmootherResult(
        times=batch.grid.times,
        mean=mean,
        std=std,
        mean_stderr=stderr,
        ess=ess_trace[-1],
        log_psi=logpsi_trace[-1],
        stderr_logpsi=se_logpsi,
        ess_trace=ess_trace,
        log_psi_trace=logpsi_trace,
        b=b,
        A=A,
        beta_trace=beta_trace,
    )


def run_open_loop_baseline(problem: ControlProblem, iterations: int, N: int, seed: int, **kw) -> SmootherResult:
    """Same as :func:`run_smoother` with the proposal restricted to ``u = b(t)``."""
    return run_smoother(problem, iterations, N, seed, feedback=False, **kw)


# -- file formats ----------------------------------------------------------------


def write_marginals(result: SmootherResult, path):
    n = result.mean.shape[1]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["time"] + [f"mean_{i + 1}" for i in range(n)] + [f"std_{i + 1}" for i in range(n)])
        for t, mu, sd in zip(result.times, result.mean, result.std):
            out.writerow([fmt(t)] + [fmt(v) for v in mu] + [fmt(v) for v in sd])


def write_controller(result: SmootherResult, path):
    """Rows ``time, A entries (row-major), b entries`` for each control slice."""
    m = result.b.shape[1]
    A = result.A
    n = A.shape[2] if A is not None else 0
    header = ["time"] + [f"A_{i + 1}{k + 1}" for i in range(m) for k in range(n)] + [f"b_{i + 1}" for i in range(m)]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for j, t in enumerate(result.times[:-1]):
            a = A[j].ravel() if A is not None else []
            out.writerow([fmt(t)] + [fmt(v) for v in a] + [fmt(v) for v in result.b[j]])


def read_observations(path) -> tuple[Array, Array]:
    """Read ``(time, value)`` rows; a non-numeric first row is treated as a header."""
    times, values = [], []
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.reader(fh)):
            if not row or not "".join(row).strip():
                continue
            try:
                t, v = float(row[0]), float(row[1])
            except ValueError:
                if k == 0:
                    continue
                raise
            times.append(t)
            values.append(v)
    return np.array(times), np.array(values)
