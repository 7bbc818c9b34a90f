"""Command-line experiment runner.

    picekit run <config> [--set section.key=value]... [--seed n] [--workers n] [--out dir]
    picekit validate <config>

Exit codes: 0 success, 1 configuration error, 2 estimation or runtime
failure, 3 diverged rollout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .benchmarks import (
    LqgSpec,
    NeuralNetSpec,
    PendulumSpec,
    build_lqg,
    build_neural_net,
    build_pendulum,
    make_neural_net_spec,
    pendulum_upright,
)
from .errors import ConfigurationError, PicekitError, RolloutDiverged
from .pice import PiceConfig, fmt, run_adaptive, save_policy
from .policies import LinearBasisPolicy, affine_basis
from .smoother import read_observations, run_smoother, write_controller, write_marginals

logger = logging.getLogger("picekit")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DIVERGED = 0, 1, 2, 3


def _default_workers() -> int:
    raw = os.environ.get("PICEKIT_WORKERS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"PICEKIT_WORKERS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"PICEKIT_WORKERS must be a positive integer, got {raw!r}")
    return n


def _pice_config(cfg: dict, workers: int) -> PiceConfig:
    pc = cfg["pice"]
    return PiceConfig(
        eta=pc["eta"], iterations=pc["iterations"], N=pc["N"], ridge=pc["ridge"],
        seed=cfg["seed"], mode=pc["mode"], workers=workers,
    )


def _run_lqg(cfg: dict, out: Path, workers: int) -> dict:
    p, t = cfg["problem"], cfg["time"]
    spec = LqgSpec(Q=p["Q"], R=p["R"], nu=p["nu"], T=t["T"], x0=p["x0"], dt=t["dt"])
    problem = build_lqg(spec)
    timedep = cfg["pice"]["mode"].endswith("timedep")
    policy = LinearBasisPolicy.zeros(affine_basis, 2, 1, problem.grid if timedep else None)
    res = run_adaptive(problem, policy, _pice_config(cfg, workers), checkpoint=out / "policy.json")
    res.trace.to_csv(out / "trace.csv", record_time=cfg["output"]["record_time"])
    return _pice_summary(res)


def _run_pendulum(cfg: dict, out: Path, workers: int) -> dict:
    p, t, pc = cfg["problem"], cfg["time"], cfg["pice"]
    spec = PendulumSpec(
        Q1=p["Q1"], Q2=p["Q2"], R=p["R"], nu=p["nu"], T=t["T"], dt=t["dt"], N=pc["N"], eta=pc["eta"],
        K1=p["K1"], K2=p["K2"], jitter=p["jitter"],
    )
    problem, policy = build_pendulum(spec)
    res = run_adaptive(problem, policy, _pice_config(cfg, workers), checkpoint=out / "policy.json")
    res.trace.to_csv(out / "trace.csv", record_time=cfg["output"]["record_time"])
    summary = _pice_summary(res)
    if p["evaluate"] > 0:
        eval_seed = cfg["seed"] + 1_000_003
        batch, _ = problem.sample(res.policy, p["evaluate"], eval_seed, workers)
        summary["upright_fraction"] = float(pendulum_upright(batch.states[:, -1]).mean())
    return summary


def _pice_summary(res) -> dict:
    rows = res.trace.rows
    return {
        "theta": res.policy.theta.tolist(),
        "J_hat": rows[-1].J_hat if rows else None,
        "ess": rows[-1].ess if rows else None,
        "iterations": len(rows),
    }


def _smoother_spec(cfg: dict) -> NeuralNetSpec:
    p, t = cfg["problem"], cfg["time"]
    kw = dict(
        J_std=p["J_std"], theta_std=p["theta_std"], sigma_dyn2=p["sigma_dyn2"], sigma_obs=p["sigma_obs"],
        T=t["T"], dt=t["dt"], link=p["link"],
        J=None if p["J"] is None else np.array(p["J"], dtype=float),
        theta_b=None if p["theta_b"] is None else np.array(p["theta_b"], dtype=float),
    )
    spec = make_neural_net_spec(p["model_seed"], n_obs=p["n_obs"], **kw)
    if p["observations"] is not None:
        try:
            times, values = read_observations(p["observations"])
        except (OSError, ValueError, IndexError) as err:
            raise ConfigurationError(f"problem.observations: cannot read {p['observations']}: {err}") from None
        spec = NeuralNetSpec(
            J=spec.J, theta_b=spec.theta_b, obs_times=times, obs_values=values, sigma_dyn2=spec.sigma_dyn2,
            sigma_obs=spec.sigma_obs, T=spec.T, dt=spec.dt, link=spec.link,
        )
    return spec


def _run_smoother(cfg: dict, out: Path, workers: int) -> dict:
    s = cfg["smoother"]
    problem, _ = build_neural_net(_smoother_spec(cfg))
    res = run_smoother(
        problem, s["iterations"], s["N"], cfg["seed"], feedback=s["feedback"], ridge=s["ridge"],
        workers=workers, temper=s["temper"],
    )
    with open(out / "trace.csv", "w", newline="") as fh:
        fh.write("iter,ess,log_psi,beta\n")
        for k, (e, lp, b) in enumerate(zip(res.ess_trace, res.log_psi_trace, res.beta_trace)):
            fh.write(f"{k},{fmt(e)},{fmt(lp)},{fmt(b)}\n")
    write_marginals(res, out / "marginals.csv")
    write_controller(res, out / "controller.csv")
    return {"ess": res.ess, "log_psi": res.log_psi, "stderr_logpsi": res.stderr_logpsi, "iterations": len(res.ess_trace)}


RUNNERS = {"lqg": _run_lqg, "pendulum": _run_pendulum, "smoother": _run_smoother}


def cmd_run(args) -> int:
    try:
        cfg = cfgmod.load(args.config, args.set or [], args.seed)
        workers = args.workers if args.workers is not None else _default_workers()
        if workers < 1:
            raise ConfigurationError("--workers must be a positive integer")
    except ConfigurationError as err:
        for line in getattr(err, "problems", [str(err)]):
            print(f"error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    out = cfgmod.output_dir(cfg, args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = RUNNERS[cfg["experiment"]](cfg, out, workers)
    except ConfigurationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except RolloutDiverged as err:
        print(f"error: rollout diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (PicekitError, ArithmeticError, OSError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    result = {"version": __version__, "seed": cfg["seed"], **summary, "config": cfg}
    with open(out / "result.json", "w", newline="\n") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out / 'result.json'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        raw_cfg = cfgmod.load(args.config)
    except cfgmod.ConfigError as err:
        for line in err.problems:
            print(f"error: {line}")
        return EXIT_CONFIG
    print(cfgmod.coupling_report(raw_cfg)[1])
    print("OK")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="picekit", description="Path integral control experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a TOML config")
    run.add_argument("config", help="path to the TOML config")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value (section.key=value)")
    run.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    run.add_argument("--workers", type=int, default=None, help="rollout threads (default: $PICEKIT_WORKERS or 1)")
    run.add_argument("--out", default=None, help="output directory (default: output.dir)")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
