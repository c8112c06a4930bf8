"""JSON experiment configuration: parsing, defaults and object builders.

A config is one JSON document with sections ``problem``, ``path``,
``scheduler``, ``engine`` and ``output``; the ``sweep``, ``shift``,
``validate``, ``bounds`` and ``stein`` sections are read only by the
subcommands that need them. ``DEFAULTS`` is the single source for every
default and also feeds the generated reference page.
"""

from __future__ import annotations

import copy
import itertools
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from .core import ProjectionSet, UsageError
from .datagen import KINDS, ProblemSpec
from .engine import ExperimentConfig
from .paths import (
    OraclePath,
    ShiftTrace,
    bursty_gamma,
    constant_path,
    downsample_path,
    hold_path,
    path_from_csv,
    realize_path,
    smooth_gamma,
    spiral_path,
)
from .schedulers import (
    Alg1Schedule,
    ConstantSchedule,
    ConvexSchedule,
    InverseTimeSchedule,
    NonconvexSchedule,
    Schedule,
)


class ConfigError(UsageError):
    """Config file missing, unparsable, or inconsistent."""


# (default, description) per key; ``None`` means "derived, see description"
DEFAULTS: Dict[str, Dict[str, Tuple[Any, str]]] = {
    "problem": {
        "kind": ("linear", f"one of {', '.join(KINDS)}"),
        "noise_sigma": (0.1, "label noise (linear, logistic) or gradient-noise scale (non-convex)"),
        "lambda": (0.0, "ripple weight of the non-convex family"),
    },
    "path": {
        "kind": ("spiral", "spiral | constant | csv | shift"),
        "d": (2, "dimension (spiral, shift)"),
        "T": (1000, "number of oracle points before hold/downsample"),
        "a": (1.0, "spiral: radius parameter at t=1 (radius is r^3)"),
        "b": (-1.0, "spiral: radius parameter at t=T"),
        "k": (1, "spiral: base angular frequency"),
        "point": (None, "constant: the oracle model (default: e_1)"),
        "file": (None, "csv: path to a t,coord_1..coord_d file"),
        "gamma": (None, "shift: {kind: smooth, alpha} or {kind: bursty, episode_len, s}"),
        "start": (None, "shift: first oracle point (default: e_1)"),
        "seed": (0, "shift: seed of the random step directions"),
        "hold": (1, "repeat every point this many times"),
        "downsample": (1, "piecewise-constant downsampling factor"),
    },
    "scheduler": {
        "kind": ("constant", "constant | inverse_time | alg1 | convex | nonconvex"),
        "eta": (0.01, "constant: step size"),
        "c0": (0.1, "inverse_time: eta_t = c0 / (1 + c1 t)"),
        "c1": (0.01, "inverse_time"),
        "epsilon": (0.1, "alg1: step-size cap"),
        "kappa": (1e-3, "alg1: Euler step of the inner ODE"),
        "v0": (None, "alg1: initial second moment (default: revealed |theta_1 - theta*_1|^2, else 1)"),
        "sigma": (None, "gradient-noise scale (default: see problem-specific defaults)"),
        "L": (None, "smoothness (default: the problem's constant)"),
        "D_max": (None, "convex: diameter bound (default: ball diameter)"),
        "estimate_sigma": (False, "convex/nonconvex: use the previous batch's noise estimate"),
        "loss_init": (1.0, "nonconvex: loss estimate used before any data"),
    },
    "engine": {
        "T": (None, "horizon (default: path length)"),
        "batch_size": (1, "int or per-step list"),
        "seed": (0, "data seed (overridden by --seed)"),
        "radius": (10.0, "projection ball radius"),
        "center": (None, "projection ball center (default: origin)"),
        "theta0": (None, "initial model (default: origin)"),
        "n_validation": (4096, "Monte Carlo sample size for logistic regret"),
        "gamma_mode": ("revealed", "revealed | ema"),
        "beta": (0.9, "EMA weight of the drift-based shift estimate"),
    },
    "output": {
        "dir": ("out", "artifact directory (overridden by --out)"),
    },
    "sweep": {
        "grid": ({}, "dotted key -> list of values; cartesian product"),
        "points": ([], "explicit list of {dotted key: value} overrides (used instead of grid)"),
        "seeds": ([0], "seeds run at every grid point"),
    },
    "shift": {
        "kind": ("bursty", "emit-schedule input: bursty | smooth | zero"),
        "T": (200, "length of the shift trace"),
        "episode_len": (40, "bursty"),
        "s": (1.0, "bursty jump size"),
        "alpha": (1.0, "smooth: gamma_t = t^-alpha"),
        "d": (None, "dimension seen by the schedule (default: path d)"),
        "v0": (1.0, "initial second moment handed to the schedule"),
    },
    "validate": {
        "d": (2, "validate-ode: dimension"),
        "epsilon": (0.01, "validate-ode: step-size scale"),
        "batch_size": (1, "validate-ode"),
        "sigma": (1.0, "validate-ode: label noise"),
        "zeta": (1.0, "validate-ode: constant adjustment factor"),
        "horizon": (1.0, "validate-ode: tau range"),
        "theta0": (None, "validate-ode: default origin"),
        "theta_star": (None, "validate-ode: default e_1"),
        "replicas": (10000, "validate-ode: ensemble size (overridden by --replicas)"),
        "dtau": (1e-3, "validate-ode: Euler step"),
        "tolerance": (0.10, "validate-ode: max relative deviation"),
    },
    "bounds": {
        "L": (None, "smoothness (default: problem constant)"),
        "mu": (None, "strong convexity for the lower bound (default: 1 for linear, else skipped)"),
        "sigma": (None, "gradient-noise scale in the bounds (default: scheduler default)"),
        "D_max": (None, "diameter bound (default: ball diameter)"),
        "seeds": (100, "number of seeds (overridden by --replicas)"),
        "slack_se": (2.0, "standard errors of slack in pass/fail"),
    },
    "stein": {
        "d": (3, "dimension"),
        "n": (1_000_000, "Monte Carlo draws (overridden by --replicas)"),
        "tolerance": (0.02, "max entry deviation"),
    },
}


def load_config(src) -> Dict[str, Any]:
    p = Path(src)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: top level must be an object")
    check_sections(cfg)
    return cfg


def check_sections(cfg: Dict[str, Any]) -> None:
    for name, body in cfg.items():
        if name not in DEFAULTS:
            raise ConfigError(f"unknown section {name!r}; expected one of {sorted(DEFAULTS)}")
        if not isinstance(body, dict):
            raise ConfigError(f"section {name!r} must be an object")
        unknown = set(body) - set(DEFAULTS[name])
        if unknown:
            raise ConfigError(f"unknown key(s) in {name!r}: {sorted(unknown)}")


def section(cfg: Dict[str, Any], name: str) -> Dict[str, Any]:
    """Section ``name`` with defaults filled in."""
    out = {k: copy.deepcopy(v[0]) for k, v in DEFAULTS[name].items()}
    out.update(cfg.get(name, {}))
    return out


def set_dotted(cfg: Dict[str, Any], key: str, value: Any) -> Dict[str, Any]:
    """Copy of ``cfg`` with ``section.key`` set to ``value``."""
    try:
        sec, name = key.split(".")
    except ValueError:
        raise ConfigError(f"override key must look like 'section.key', got {key!r}") from None
    out = copy.deepcopy(cfg)
    out.setdefault(sec, {})[name] = value
    check_sections(out)
    return out


# ---------------------------------------------------------------------------
# builders


def build_problem(cfg) -> ProblemSpec:
    p = section(cfg, "problem")
    return ProblemSpec(kind=p["kind"], noise_sigma=float(p["noise_sigma"]),
                       nonconvex_lambda=float(p["lambda"]))


def _unit(d: int) -> np.ndarray:
    e = np.zeros(d)
    e[0] = 1.0
    return e


def build_shift(sh: Dict[str, Any], T: int) -> ShiftTrace:
    kind = sh.get("kind", "smooth")
    if kind == "bursty":
        return bursty_gamma(int(sh.get("episode_len", 40)), float(sh.get("s", 1.0)), T)
    if kind == "smooth":
        return smooth_gamma(float(sh.get("alpha", 1.0)), T)
    if kind == "zero":
        return ShiftTrace(np.zeros(T))
    raise ConfigError(f"unknown shift kind {kind!r}")


def build_path(cfg) -> OraclePath:
    p = section(cfg, "path")
    kind, d, T = p["kind"], int(p["d"]), int(p["T"])
    if kind == "spiral":
        path = spiral_path(d, T, float(p["a"]), float(p["b"]), int(p["k"]))
    elif kind == "constant":
        pt = _unit(d) if p["point"] is None else p["point"]
        path = constant_path(pt, T)
    elif kind == "csv":
        if not p["file"]:
            raise ConfigError("path.kind 'csv' needs path.file")
        path = path_from_csv(p["file"])
    elif kind == "shift":
        if p["gamma"] is None:
            raise ConfigError("path.kind 'shift' needs path.gamma")
        start = _unit(d) if p["start"] is None else p["start"]
        g = build_shift(p["gamma"], T).gammas[: T - 1]
        path = realize_path(g, d, start, np.random.default_rng(int(p["seed"])))
    else:
        raise ConfigError(f"unknown path kind {kind!r}")
    if int(p["downsample"]) > 1:
        path = downsample_path(path, int(p["downsample"]))
    if int(p["hold"]) > 1:
        path = hold_path(path, int(p["hold"]))
    return path


def build_ball(cfg, d: int) -> ProjectionSet:
    e = section(cfg, "engine")
    return ProjectionSet.ball(d, float(e["radius"]), e["center"])


def default_sigma(problem: ProblemSpec, d: int) -> float:
    """Gradient-noise scale used when the config leaves sigma unset.

    Linear: the noise floor at the oracle model, sqrt(d) * label noise.
    Logistic: sqrt(d)/2. Non-convex: the configured noise scale itself.
    """
    if problem.kind == "linear":
        return max(problem.noise_sigma * math.sqrt(d), 1e-6)
    if problem.kind == "logistic":
        return math.sqrt(d) / 2.0
    return max(problem.noise_sigma, 1e-6)


def build_scheduler(cfg, d: Optional[int] = None, ball: Optional[ProjectionSet] = None) -> Schedule:
    s = section(cfg, "scheduler")
    problem = build_problem(cfg)
    kind = s["kind"]
    sigma = s["sigma"]
    if sigma is None and d is not None:
        sigma = default_sigma(problem, d)
    L = float(s["L"]) if s["L"] is not None else problem.smoothness
    if kind == "constant":
        return ConstantSchedule(float(s["eta"]))
    if kind == "inverse_time":
        return InverseTimeSchedule(float(s["c0"]), float(s["c1"]))
    if sigma is None:
        raise ConfigError(f"scheduler {kind!r} needs sigma (or a known dimension)")
    if kind == "alg1":
        v0 = None if s["v0"] is None else float(s["v0"])
        return Alg1Schedule(float(s["epsilon"]), float(sigma), kappa=float(s["kappa"]), d=d, v0=v0)
    if kind == "convex":
        D_max = s["D_max"]
        if D_max is None:
            if ball is None:
                raise ConfigError("convex scheduler needs D_max (or a projection ball)")
            D_max = ball.diameter
        return ConvexSchedule(float(sigma), L, float(D_max), estimate_sigma=bool(s["estimate_sigma"]))
    if kind == "nonconvex":
        return NonconvexSchedule(float(sigma), L, loss_init=float(s["loss_init"]),
                                 estimate_sigma=bool(s["estimate_sigma"]))
    raise ConfigError(f"unknown scheduler kind {kind!r}")


def build_experiment(cfg, seed: Optional[int] = None) -> Tuple[ExperimentConfig, Schedule]:
    path = build_path(cfg)
    e = section(cfg, "engine")
    ball = build_ball(cfg, path.dim)
    exp = ExperimentConfig(
        problem=build_problem(cfg), path=path, ball=ball,
        T=None if e["T"] is None else int(e["T"]),
        batch_size=e["batch_size"],
        theta0=e["theta0"],
        seed=int(e["seed"] if seed is None else seed),
        n_validation=int(e["n_validation"]),
        gamma_mode=e["gamma_mode"], beta=float(e["beta"]),
    )
    return exp, build_scheduler(cfg, path.dim, ball)


def sweep_points(cfg) -> List[Dict[str, Any]]:
    sw = section(cfg, "sweep")
    if sw["points"]:
        return [dict(p) for p in sw["points"]]
    grid = sw["grid"]
    if not grid:
        raise ConfigError("sweep needs a nonempty sweep.grid or sweep.points")
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def reference_markdown() -> str:
    """Generated reference page listing every config key and default."""
    lines = ["# Configuration reference", "",
             "Generated by `lrshift reference`. Every key is optional.", ""]
    for name, keys in DEFAULTS.items():
        lines += [f"## `{name}`", "", "| key | default | meaning |", "|---|---|---|"]
        for k, (default, desc) in keys.items():
            shown = "derived" if default is None else json.dumps(default)
            lines.append(f"| `{k}` | `{shown}` | {desc} |")
        lines.append("")
    return "\n".join(lines)
