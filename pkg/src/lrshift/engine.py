"""Projected mini-batch SGD under a moving oracle path."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .core import (
    DivergenceError,
    ModelVector,
    ProjectionSet,
    RunTrace,
    StepRecord,
    UsageError,
    as_vector,
    ledger_append,
    project_ball,
)
from .datagen import Batch, Problem, ProblemSpec, nonconvex_loss_and_grad
from .paths import OraclePath
from .schedulers import Observation, Schedule, ema_gamma

TRACE_SCHEMA = "lrshift-trace/1"
TRACE_COLUMNS = ("t", "eta", "batch_size", "dist", "gamma", "gamma_hat",
                 "regret", "cum_regret", "loss_est")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one online run.

    ``batch_size`` is an int or a per-step sequence. ``gamma_mode`` selects
    what the schedule sees as the shift: ``"revealed"`` passes the true
    previous-step shift, ``"ema"`` the moving average of iterate drifts.
    """

    problem: ProblemSpec
    path: OraclePath
    ball: ProjectionSet
    T: Optional[int] = None
    batch_size: Union[int, Sequence[int]] = 1
    theta0: Optional[ModelVector] = None
    seed: int = 0
    n_validation: int = 4096
    gamma_mode: str = "revealed"
    beta: float = 0.9

    def __post_init__(self):
        if self.T is None:
            self.T = self.path.horizon
        if self.T < 1:
            raise UsageError("T must be >= 1")
        if self.path.dim != self.ball.dim:
            raise UsageError("path and projection ball dimensions differ")
        self.theta0 = np.zeros(self.d) if self.theta0 is None else as_vector(self.theta0, self.d)
        if self.gamma_mode not in ("revealed", "ema"):
            raise UsageError(f"gamma_mode must be 'revealed' or 'ema', got {self.gamma_mode!r}")
        if not 0 < self.beta < 1:
            raise UsageError("beta must lie in (0, 1)")
        if self.n_validation < 1:
            raise UsageError("n_validation must be >= 1")
        if not isinstance(self.batch_size, (int, np.integer)):
            bs = [int(b) for b in self.batch_size]
            if len(bs) < self.T:
                raise UsageError("batch-size schedule shorter than the horizon")
            self.batch_size = bs
        if min(self.batch_sizes()) < 1:
            raise UsageError("batch sizes must be >= 1")

    @property
    def d(self) -> int:
        return self.path.dim

    def batch_sizes(self) -> List[int]:
        if isinstance(self.batch_size, (int, np.integer)):
            return [int(self.batch_size)] * self.T
        return list(self.batch_size[: self.T])

    def describe(self) -> Dict[str, object]:
        bs = self.batch_size if isinstance(self.batch_size, (int, np.integer)) else list(self.batch_size)
        return {
            "problem": {"kind": self.problem.kind, "noise_sigma": self.problem.noise_sigma,
                        "nonconvex_lambda": self.problem.nonconvex_lambda},
            "d": self.d, "T": self.T, "batch_size": bs,
            "ball": {"center": self.ball.center.tolist(), "radius": self.ball.radius},
            "theta0": self.theta0.tolist(), "seed": self.seed,
            "n_validation": self.n_validation, "gamma_mode": self.gamma_mode, "beta": self.beta,
        }


# ---------------------------------------------------------------------------
# single-step pieces


def sgd_step(theta: ModelVector, batch: Batch, eta: float, problem: Problem,
             ball: ProjectionSet) -> ModelVector:
    """theta' = Proj(theta - eta * mean per-sample gradient)."""
    if eta < 0:
        raise UsageError("eta must be nonnegative")
    g = problem.mean_grad(theta, batch)
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient")
    return project_ball(theta - eta * g, ball)


def regret_linear_exact(theta: ModelVector, theta_star: ModelVector) -> float:
    if theta.shape != theta_star.shape:
        raise UsageError("dimension mismatch")
    diff = theta - theta_star
    return 0.5 * float(diff @ diff)


def regret_mc(theta: ModelVector, theta_star: ModelVector, problem: Problem,
              n_val: int, rng) -> float:
    """Paired-sample Monte Carlo estimate of l_t(theta) - l_t(theta*)."""
    if n_val < 1:
        raise UsageError("n_val must be >= 1")
    batch = problem.sample(theta_star, n_val, rng)
    return float(np.mean(problem.losses(theta, batch) - problem.losses(theta_star, batch)))


def regret_gradnorm(theta: ModelVector, theta_star: ModelVector, lam: float) -> float:
    _, g = nonconvex_loss_and_grad(theta, theta_star, lam)
    return float(g @ g)


def estimate_sigma(grads: np.ndarray) -> Optional[float]:
    """sqrt of the unbiased sample variance of per-sample gradients (summed over
    coordinates); ``None`` for a single sample."""
    grads = np.atleast_2d(grads)
    B = grads.shape[0]
    if B < 2:
        return None
    dev = grads - grads.mean(axis=0)
    return math.sqrt(float(np.sum(dev * dev)) / (B - 1))


# ---------------------------------------------------------------------------
# the online loop


def run_online(config: ExperimentConfig, scheduler: Schedule, *,
               rng_for_step: Optional[Callable[[int], np.random.Generator]] = None) -> RunTrace:
    """Play the online protocol for ``config.T`` steps.

    At step t the schedule is queried first, with history through t-1 only;
    then the batch from P_t is drawn, the step recorded and the update
    applied. ``rng_for_step`` overrides the per-step data generator (used to
    check causality); by default one seeded stream feeds all steps.
    """
    problem = Problem(config.problem)
    kind = problem.kind
    path, ball = config.path, config.ball
    data_seq, val_seq = np.random.SeedSequence(config.seed).spawn(2)
    data_rng = np.random.default_rng(data_seq)
    val_rng = np.random.default_rng(val_seq)
    batch_sizes = config.batch_sizes()
    revealed = config.gamma_mode == "revealed"

    theta = config.theta0.copy()
    if not ball.contains(theta):
        theta = project_ball(theta, ball)
    hint = float(np.sum((theta - path.at(1)) ** 2)) if revealed else None
    scheduler.reset(config.d, hint)

    T = config.T
    pts = path.points
    H = path.horizon
    # oracle model at steps 1..T+1 (held past the horizon) and the shifts between them
    stars = pts[np.minimum(np.arange(T + 1), H - 1)]
    if kind == "nonconvex_synthetic":
        gammas = [problem.shift(stars[i], stars[i + 1], ball) for i in range(T)]
    else:
        gammas = np.sqrt(np.sum(np.diff(stars, axis=0) ** 2, axis=1)).tolist()
    want_loss = scheduler.uses_loss
    want_sigma = scheduler.uses_sigma_hat

    trace = RunTrace()
    gamma_prev = 0.0
    gamma_hat = 0.0
    loss_prev: Optional[float] = None
    sigma_prev: Optional[float] = None

    for t in range(1, T + 1):
        star = stars[t - 1]
        star_next = stars[t]
        B = batch_sizes[t - 1]

        obs = Observation(t=t, batch_size=B, gamma=gamma_prev if revealed else gamma_hat,
                          loss=loss_prev, sigma_hat=sigma_prev)
        eta = scheduler(obs)
        if not math.isfinite(eta):
            raise DivergenceError(f"step {t}: schedule returned non-finite eta {eta}")
        if eta < 0:
            raise DivergenceError(f"step {t}: schedule returned negative eta {eta}")

        rng = data_rng if rng_for_step is None else rng_for_step(t)
        batch = problem.sample(star, B, rng)
        if want_sigma and B >= 2:
            grads = problem.grads(theta, batch)
            g = grads.sum(axis=0) / B
            sigma_prev = estimate_sigma(grads)
        else:
            g = problem.mean_grad(theta, batch)
        if not math.isfinite(float(g.sum())):
            raise DivergenceError(f"step {t}: non-finite gradient")
        loss_est = float(problem.losses(theta, batch).sum()) / B

        diff = theta - star
        dist = math.sqrt(float(diff @ diff))
        if kind == "linear":
            regret = 0.5 * dist * dist
        elif kind == "logistic":
            regret = regret_mc(theta, star, problem, config.n_validation, val_rng)
        else:
            regret = regret_gradnorm(theta, star, problem.lam)
        if not (math.isfinite(regret) and math.isfinite(dist)):
            raise DivergenceError(f"step {t}: regret is no longer finite")
        gamma = gammas[t - 1]

        raw = theta - eta * g
        if not math.isfinite(float(raw.sum())):
            raise DivergenceError(f"step {t}: non-finite iterate")
        new = project_ball(raw, ball)
        projected = new is not raw
        inner = float((star - star_next) @ (new - star))

        ledger_append(trace, StepRecord(
            t=t, eta=eta, batch_size=B, dist=dist, gamma=gamma, regret=regret,
            inner_shift=inner, loss_est=loss_est,
            gamma_hat=gamma_hat, projected=projected,
        ))

        step = new - theta
        gamma_hat = ema_gamma(gamma_hat, math.sqrt(float(step @ step)), config.beta)
        if want_loss:
            loss_prev = float(problem.losses(new, batch).sum()) / B
        gamma_prev = gamma
        theta = new

    trace.final_dist = float(np.linalg.norm(theta - stars[T]))
    trace.final_theta = theta
    return trace


def _run_seed(args):
    config, scheduler_factory, seed = args
    cfg = ExperimentConfig(**{**config.__dict__, "seed": seed})
    start = time.perf_counter()
    trace = run_online(cfg, scheduler_factory())
    return seed, trace, (time.perf_counter() - start) * 1e3


def run_many(config: ExperimentConfig, scheduler_factory: Callable[[], Schedule],
             seeds: Iterable[int], jobs: int = 1) -> Dict[int, RunTrace]:
    """Independent runs over ``seeds``; results keyed by seed."""
    tasks = [(config, scheduler_factory, int(s)) for s in seeds]
    if jobs <= 1:
        results = [_run_seed(a) for a in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed, tasks))
    return {seed: trace for seed, trace, _ in results}


# ---------------------------------------------------------------------------
# serialisation


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def trace_to_csv(trace: RunTrace, dest: Union[str, Path, None] = None) -> str:
    """Write the trace as CSV (with a schema comment line); returns the text."""
    buf = io.StringIO()
    buf.write(f"# {TRACE_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for rec, cum in zip(trace.records, trace.cum_regret):
        w.writerow([_fmt(rec.t), _fmt(rec.eta), _fmt(rec.batch_size), _fmt(rec.dist),
                    _fmt(rec.gamma), _fmt(rec.gamma_hat), _fmt(rec.regret), _fmt(cum),
                    _fmt(rec.loss_est)])
    text = buf.getvalue()
    if dest is not None:
        Path(dest).write_text(text)
    return text


def read_trace_csv(src: Union[str, Path]) -> Dict[str, np.ndarray]:
    lines = [ln for ln in Path(src).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}


def scheduler_stats(trace: RunTrace) -> Dict[str, float]:
    eta = trace.column("eta")
    if eta.size == 0:
        return {}
    return {"eta_mean": float(eta.mean()), "eta_min": float(eta.min()),
            "eta_max": float(eta.max()), "eta_final": float(eta[-1]),
            "projections": int(sum(r.projected for r in trace.records))}


def summarize(trace: RunTrace, config: ExperimentConfig, scheduler: Schedule,
              runtime_ms: float, config_echo: Optional[dict] = None) -> Dict[str, object]:
    echo = config_echo if config_echo is not None else {
        "experiment": config.describe(), "scheduler": scheduler.describe()}
    return {
        "config": echo,
        "seed": config.seed,
        "total_regret": trace.total_regret,
        "steps": len(trace),
        "runtime_ms": runtime_ms,
        "scheduler_stats": scheduler_stats(trace),
    }


def write_summary(summary: Dict[str, object], dest: Union[str, Path]) -> None:
    Path(dest).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
