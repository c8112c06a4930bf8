"""Monte Carlo ensemble of linear-regression SGD trajectories.

Replicas are simulated in fixed-size chunks, each with its own child seed,
and merged with the pairwise mean/variance update, so the result does not
depend on how many workers run the chunks.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from ..core import UsageError, as_vector
from .moments import MomentTrace


@dataclass
class EnsembleConfig:
    """Linear problem with a constant oracle model (or an oracle path of
    drift vectors ``oracle_steps`` indexed by SGD step).

    Step ``t`` (0-based) uses ``eta = epsilon * zeta(epsilon * t)``.
    """

    d: int = 2
    epsilon: float = 0.01
    horizon: float = 1.0
    batch_size: int = 1
    sigma: float = 1.0
    zeta: Union[float, Callable[[float], float]] = 1.0
    theta0: Optional[np.ndarray] = None
    theta_star: Optional[np.ndarray] = None
    oracle_steps: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise UsageError("epsilon must be positive")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.sigma < 0:
            raise UsageError("sigma must be nonnegative")
        self.theta0 = np.zeros(self.d) if self.theta0 is None else as_vector(self.theta0, self.d)
        if self.theta_star is None:
            self.theta_star = np.zeros(self.d)
            self.theta_star[0] = 1.0
        else:
            self.theta_star = as_vector(self.theta_star, self.d)
        if self.oracle_steps is not None:
            self.oracle_steps = np.asarray(self.oracle_steps, dtype=np.float64).reshape(-1, self.d)
            if self.oracle_steps.shape[0] < self.n_steps:
                raise UsageError("oracle_steps shorter than the number of SGD steps")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.epsilon))

    @property
    def nu(self) -> float:
        return self.batch_size / self.epsilon

    def zeta_at(self, tau: float) -> float:
        return self.zeta(tau) if callable(self.zeta) else float(self.zeta)


def _simulate_chunk(cfg: EnsembleConfig, n: int, seed) -> Tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (count, sum of u, mean of |u|^2, M2 of |u|^2) per grid point."""
    rng = np.random.default_rng(seed)
    d, B, steps = cfg.d, cfg.batch_size, cfg.n_steps
    u = np.tile(cfg.theta0 - cfg.theta_star, (n, 1))
    m_sum = np.empty((steps + 1, d))
    v_mean = np.empty(steps + 1)
    v_m2 = np.empty(steps + 1)

    def record(i):
        sq = np.einsum("ij,ij->i", u, u)
        m_sum[i] = u.sum(axis=0)
        v_mean[i] = sq.mean()
        v_m2[i] = np.sum((sq - v_mean[i]) ** 2)

    record(0)
    for t in range(steps):
        eta = cfg.epsilon * cfg.zeta_at(cfg.epsilon * t)
        X = rng.standard_normal((n, B, d))
        resid = np.einsum("rbd,rd->rb", X, u)
        if cfg.sigma > 0:
            resid -= cfg.sigma * rng.standard_normal((n, B))
        g = np.einsum("rb,rbd->rd", resid, X) / B
        u = u - eta * g
        if cfg.oracle_steps is not None:
            u = u - cfg.oracle_steps[t]
        record(t + 1)
    return n, m_sum, v_mean, v_m2


def _merge(acc, part):
    # Chan et al. pairwise update for mean and sum of squared deviations
    if acc is None:
        return part
    na, ma, va, Ma = acc
    nb, mb, vb, Mb = part
    n = na + nb
    delta = vb - va
    return n, ma + mb, va + delta * nb / n, Ma + Mb + delta * delta * na * nb / n


def ensemble_moments(cfg: EnsembleConfig, n_replicas: int, *, seed: int = 0,
                     chunk: int = 2500, jobs: int = 1) -> MomentTrace:
    """Empirical mean of theta_t - theta*_t and of its squared norm on tau = eps t."""
    if n_replicas < 2:
        raise UsageError("need at least two replicas")
    sizes: List[int] = [chunk] * (n_replicas // chunk)
    if n_replicas % chunk:
        sizes.append(n_replicas % chunk)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    if jobs > 1 and len(sizes) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_simulate_chunk, [cfg] * len(sizes), sizes, seeds))
    else:
        parts = [_simulate_chunk(cfg, n, s) for n, s in zip(sizes, seeds)]
    acc = None
    for p in parts:
        acc = _merge(acc, p)
    n, m_sum, v_mean, v_m2 = acc
    taus = cfg.epsilon * np.arange(cfg.n_steps + 1)
    v_se = np.sqrt(v_m2 / (n - 1) / n)
    return MomentTrace(taus, m_sum / n, v_mean, v_se)


def ode_for(cfg: EnsembleConfig, dtau: Optional[float] = None) -> MomentTrace:
    """Moment-ODE solution matched to ``cfg`` and sampled on the ensemble grid."""
    from .moments import integrate_moments

    dtau = cfg.epsilon / 100 if dtau is None else dtau
    yp = None
    if cfg.oracle_steps is not None:
        steps = cfg.oracle_steps
        # Y' as a rate per unit tau, piecewise constant over each SGD step
        yp = lambda tau: steps[min(int(tau / cfg.epsilon), steps.shape[0] - 1)] / cfg.epsilon
    fine = integrate_moments(cfg.zeta_at, cfg.nu, yp, cfg.theta0 - cfg.theta_star,
                             float(np.sum((cfg.theta0 - cfg.theta_star) ** 2)),
                             dtau, cfg.horizon, cfg.sigma)
    taus = cfg.epsilon * np.arange(cfg.n_steps + 1)
    m = np.column_stack([np.interp(taus, fine.taus, fine.m[:, j]) for j in range(cfg.d)])
    return MomentTrace(taus, m, fine.v_at(taus))


def max_relative_deviation(emp: MomentTrace, ode: MomentTrace, floor: float = 1e-12) -> float:
    """max over the grid of |v_emp - v_ode| / v_ode (0 when both vanish)."""
    if emp.taus.shape != ode.taus.shape or not np.allclose(emp.taus, ode.taus):
        raise UsageError("traces are on different grids")
    num = np.abs(emp.v - ode.v)
    den = np.maximum(np.abs(ode.v), floor)
    rel = np.where(num <= floor, 0.0, num / den)
    return float(rel.max())
