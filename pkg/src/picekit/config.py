"""Experiment configuration: TOML loading, defaults, overrides and validation.

A config file names one experiment (``lqg``, ``pendulum`` or ``smoother``)
and may override any of its defaults.  Unknown sections or keys are errors.
After loading, every default is materialized so the resolved config can be
echoed verbatim into result files.
"""

from __future__ import annotations

import copy
import sys
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .errors import ConfigurationError
from .pice import MODES

EXPERIMENTS = ("lqg", "pendulum", "smoother")

_COMMON = {
    "experiment": None,
    "seed": 0,
    "output": {"dir": "out", "record_time": False},
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "lqg": {
        "time": {"dt": 0.01, "T": 5.0},
        "problem": {"Q": 2.0, "R": 1.0, "nu": 0.1, "x0": 2.0, "lam": None},
        "pice": {"mode": "gradient_static", "eta": 0.1, "iterations": 500, "N": 50, "ridge": None},
    },
    "pendulum": {
        "time": {"dt": 0.1, "T": 5.0},
        "problem": {
            "Q1": 2.0, "Q2": 0.02, "R": 1.0, "nu": 0.3, "lam": None,
            "K1": 20, "K2": 40, "jitter": 0.02, "evaluate": 200,
        },
        "pice": {"mode": "gradient_static", "eta": 0.4, "iterations": 1000, "N": 500, "ridge": None},
    },
    "smoother": {
        "time": {"dt": 0.01, "T": 1.0},
        "problem": {
            "model_seed": 0, "J": None, "theta_b": None, "J_std": 25.0, "theta_std": 0.75,
            "sigma_dyn2": 0.2, "sigma_obs": 0.2, "n_obs": 12, "link": "tanh", "observations": None,
        },
        "smoother": {"iterations": 22, "N": 6000, "feedback": True, "temper": 0.5, "ridge": None},
    },
}

# keys that may legitimately be absent (None) after resolution
_OPTIONAL = {"lam", "ridge", "J", "theta_b", "observations", "temper"}


class ConfigError(ConfigurationError):
    """Schema violations; ``problems`` lists one message per offending key."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def defaults_for(experiment: str) -> dict:
    cfg = copy.deepcopy(_COMMON)
    cfg["experiment"] = experiment
    cfg.update(copy.deepcopy(DEFAULTS[experiment]))
    return cfg


def load(path, overrides: list[str] = (), seed: int | None = None) -> dict:
    """Read, override and resolve a config file.

    Raises:
        ConfigError: unreadable file, unknown keys, or invalid values.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError([f"{path}: {err}"]) from None
    for item in overrides:
        apply_override(raw, item)
    if seed is not None:
        raw["seed"] = seed
    cfg = resolve(raw)
    problems = check(cfg)
    if not problems:
        ok, message = coupling_report(cfg)
        if not ok:
            problems.append(message)
    if problems:
        raise ConfigError(problems)
    if cfg["experiment"] != "smoother" and cfg["problem"]["lam"] is None:
        cfg["problem"]["lam"] = cfg["problem"]["R"] * cfg["problem"]["nu"]
    return cfg


def parse_value(text: str):
    """Interpret an override value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw: dict, item: str):
    """Apply ``section.key=value`` (or ``key=value`` for top-level keys) in place."""
    if "=" not in item:
        raise ConfigError([f"override {item!r} is not of the form key=value"])
    dotted, text = item.split("=", 1)
    parts = dotted.strip().split(".")
    if not all(parts) or len(parts) > 2:
        raise ConfigError([f"override key {dotted!r} must be 'section.key' or 'key'"])
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError([f"{p} is not a section"])
    node[parts[-1]] = parse_value(text.strip())


def resolve(raw: dict) -> dict:
    """Merge ``raw`` over the experiment defaults, rejecting unknown keys."""
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError([f"experiment: must be one of {list(EXPERIMENTS)}, got {exp!r}"])
    cfg = defaults_for(exp)
    problems = []
    for key, value in raw.items():
        if key not in cfg:
            problems.append(f"{key}: unknown key")
        elif isinstance(cfg[key], dict):
            if not isinstance(value, dict):
                problems.append(f"{key}: must be a section")
                continue
            for sub, v in value.items():
                if sub not in cfg[key]:
                    problems.append(f"{key}.{sub}: unknown key")
                else:
                    cfg[key][sub] = v
        else:
            cfg[key] = value
    if problems:
        raise ConfigError(problems)
    return cfg


def _number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def check(cfg: dict) -> list[str]:
    """Schema and consistency checks; returns one message per violation."""
    out = []

    def need(key, ok, msg):
        if not ok:
            out.append(f"{key}: {msg}")

    need("seed", _int(cfg["seed"]) and cfg["seed"] >= 0, "must be a non-negative integer")
    need("output.dir", isinstance(cfg["output"]["dir"], str), "must be a string")
    need("output.record_time", isinstance(cfg["output"]["record_time"], bool), "must be true or false")
    t = cfg["time"]
    for k in ("dt", "T"):
        need(f"time.{k}", _number(t[k]) and t[k] > 0, "must be a positive number")
    if not out and _number(t["dt"]) and _number(t["T"]):
        steps = t["T"] / t["dt"]
        need("time.T", abs(steps - round(steps)) <= 1e-6 * max(1.0, steps), "must be a multiple of time.dt")

    p = cfg["problem"]
    for k, v in p.items():
        if v is None:
            need(f"problem.{k}", k in _OPTIONAL, "is required")
    exp = cfg["experiment"]
    if exp in ("lqg", "pendulum"):
        positive = ("Q", "R", "nu") if exp == "lqg" else ("Q1", "Q2", "R", "nu")
        for k in positive:
            need(f"problem.{k}", _number(p[k]) and p[k] > 0, "must be a positive number")
        if exp == "lqg":
            need("problem.x0", _number(p["x0"]), "must be a number")
        else:
            for k in ("K1", "K2"):
                need(f"problem.{k}", _int(p[k]) and p[k] >= 1, "must be a positive integer")
            need("problem.jitter", _number(p["jitter"]) and p["jitter"] >= 0, "must be a non-negative number")
            need("problem.evaluate", _int(p["evaluate"]) and p["evaluate"] >= 0, "must be a non-negative integer")
        if p["lam"] is not None:
            need("problem.lam", _number(p["lam"]) and p["lam"] > 0, "must be a positive number")
        pc = cfg["pice"]
        need("pice.mode", pc["mode"] in MODES, f"must be one of {list(MODES)}")
        need("pice.eta", _number(pc["eta"]) and pc["eta"] > 0, "must be a positive number")
        need("pice.iterations", _int(pc["iterations"]) and pc["iterations"] >= 0, "must be a non-negative integer")
        need("pice.N", _int(pc["N"]) and pc["N"] >= 2, "must be an integer >= 2")
        if pc["ridge"] is not None:
            need("pice.ridge", _number(pc["ridge"]) and pc["ridge"] >= 0, "must be a non-negative number")
        if exp == "pendulum":
            need("pice.mode", pc["mode"] != "closed_form_timedep" and pc["mode"] != "gradient_timedep",
                 "the pendulum grid controller is static")
    else:
        for k in ("sigma_dyn2", "sigma_obs", "J_std", "theta_std"):
            need(f"problem.{k}", _number(p[k]) and p[k] > 0, "must be a positive number")
        need("problem.model_seed", _int(p["model_seed"]) and p["model_seed"] >= 0, "must be a non-negative integer")
        need("problem.n_obs", _int(p["n_obs"]) and p["n_obs"] >= 0, "must be a non-negative integer")
        need("problem.link", p["link"] in ("tanh", "identity"), "must be 'tanh' or 'identity'")
        if p["observations"] is not None:
            need("problem.observations", isinstance(p["observations"], str), "must be a path to a CSV file")
        for k in ("J", "theta_b"):
            if p[k] is not None:
                need(f"problem.{k}", isinstance(p[k], list), "must be an array")
        s = cfg["smoother"]
        need("smoother.iterations", _int(s["iterations"]) and s["iterations"] >= 1, "must be a positive integer")
        need("smoother.N", _int(s["N"]) and s["N"] >= 2, "must be an integer >= 2")
        need("smoother.feedback", isinstance(s["feedback"], bool), "must be true or false")
        if s["temper"] is not None:
            need("smoother.temper", _number(s["temper"]) and 0 < s["temper"] < 1, "must lie in (0, 1)")
        if s["ridge"] is not None:
            need("smoother.ridge", _number(s["ridge"]) and s["ridge"] >= 0, "must be a non-negative number")
    return out


def coupling_report(cfg: dict) -> tuple[bool, str]:
    """Check ``lambda = R nu`` for the control benchmarks (the smoother fixes lambda = 1)."""
    p = cfg["problem"]
    if cfg["experiment"] == "smoother":
        return True, "lambda coupling: OK (lambda = 1, R = 1/sigma_dyn2)"
    implied = p["R"] * p["nu"]
    if p["lam"] is None:
        return True, f"lambda coupling: OK (lambda = R*nu = {implied:g})"
    if abs(p["lam"] - implied) > 1e-10 * max(1.0, abs(implied)):
        return False, f"problem.lam: lambda coupling violated: lambda = {p['lam']:g} but R*nu = {implied:g}"
    return True, f"lambda coupling: OK (lambda = {p['lam']:g})"


def output_dir(cfg: dict, override: str | None = None) -> Path:
    return Path(override if override is not None else cfg["output"]["dir"])
