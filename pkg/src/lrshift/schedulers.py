"""Learning-rate schedules.

The pure transition functions (``alg1_step``, ``convex_thresholds``,
``convex_step``, ``nonconvex_step``, ``ema_gamma``, ...) hold the math; the
``*Schedule`` classes wrap them with per-run state so the engine can drive
them. A schedule only ever sees an :class:`Observation`, which carries the
history available before step ``t`` plus the current batch size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .core import UsageError


@dataclass(frozen=True)
class Observation:
    """What a schedule may use when choosing eta_t.

    ``gamma`` is the previous-step shift (revealed mode) or the moving-average
    estimate; ``loss`` is an estimate of the current expected loss built from
    the previous batch only; ``sigma_hat`` is a gradient-noise estimate from the
    previous batch (``None`` when unavailable).
    """

    t: int
    batch_size: int
    gamma: float = 0.0
    loss: Optional[float] = None
    sigma_hat: Optional[float] = None


@dataclass(frozen=True)
class ScheduleParams:
    epsilon: float = 0.1
    kappa: float = 1e-3
    d: int = 1
    sigma: float = 1.0
    L: float = 1.0
    mu: float = 1.0
    D_max: float = 1.0
    beta: float = 0.9
    v0: float = 1.0

    def __post_init__(self):
        if not 0 < self.kappa <= 1:
            raise UsageError(f"kappa must lie in (0, 1], got {self.kappa}")
        if not 0 < self.beta < 1:
            raise UsageError(f"beta must lie in (0, 1), got {self.beta}")


@dataclass(frozen=True)
class ScheduleState:
    params: ScheduleParams
    v: float = 0.0
    eta_prev: float = 0.0
    gamma_hat: float = 0.0

    def __post_init__(self):
        if self.v < 0 or self.eta_prev < 0 or self.gamma_hat < 0:
            raise UsageError("schedule state entries must be nonnegative")


# ---------------------------------------------------------------------------
# linear regression (ODE-driven) schedule


def optimal_zeta(v: float, nu: float, d: int, sigma: float) -> float:
    """Optimal adjustment factor min{1, nu v / ((d+1) v + sigma^2 d)}."""
    if not nu > 0:
        raise UsageError("nu must be positive")
    if v < 0:
        raise UsageError("v must be nonnegative")
    if v == 0:
        return 0.0
    return min(1.0, nu * v / ((d + 1) * v + sigma * sigma * d))


def _capped_rate(v: float, B: int, d: int, s2d: float, eps: float) -> float:
    if v <= 0.0:
        return 0.0
    return min(v * B / ((d + 1) * v + s2d), eps)


def alg1_step(state: ScheduleState, B_t: int, gamma_prev: float) -> Tuple[float, ScheduleState]:
    """One outer iteration of the forward-Euler schedule for linear regression.

    Runs ``ceil(1/kappa)`` Euler sub-steps of the upper-bound ODE for the
    second moment, holding ``gamma_prev`` fixed, then emits the capped rate.
    """
    if B_t < 1:
        raise UsageError("batch size must be >= 1")
    if gamma_prev < 0:
        raise UsageError("gamma must be nonnegative")
    p = state.params
    eps, kappa, d = p.epsilon, p.kappa, p.d
    s2d = p.sigma * p.sigma * d
    d1B = (d + 1) / B_t
    noiseB = s2d / B_t
    shift = 2.0 * kappa * gamma_prev
    v = state.v
    for _ in range(math.ceil(1.0 / kappa - 1e-12)):
        r = _capped_rate(v, B_t, d, s2d, eps)
        v = v + kappa * (d1B * r * r - 2.0 * r) * v + kappa * noiseB * r * r + shift * math.sqrt(v)
        if v < 0.0:
            v = 0.0
    eta = _capped_rate(v, B_t, d, s2d, eps)
    return eta, replace(state, v=v, eta_prev=eta)


def noshift_closed_form(v0: float, a: float, b: float, tau: float) -> Tuple[float, float, float]:
    """Closed-form second moment of the no-shift ODE at time ``tau``.

    Returns ``(v, tau_star, C)``: up to ``tau_star`` the full step is taken and
    ``v`` decays exponentially; afterwards ``a ln(1/v) + b/v = tau + C``.
    """
    if a >= 1:
        raise UsageError("closed form only covers a < 1")
    if not (a > 0 and b > 0 and v0 > 0):
        raise UsageError("need a > 0, b > 0 and v0 > 0")
    arg = (1 - a) * (v0 * (2 - a) / b - 1)
    tau_star = max(math.log(arg) / (2 - a), 0.0) if arg > 0 else 0.0
    C = a * math.log((1 - a) / b) + 1 - a - tau_star
    if tau <= tau_star:
        vinf = b / (2 - a)
        return (v0 - vinf) * math.exp(-(2 - a) * tau) + vinf, tau_star, C
    # v0 below the switching level: the implicit branch starts at v0 itself
    if tau_star == 0.0 and v0 < b / (1 - a):
        C = a * math.log(1 / v0) + b / v0
    target = tau + C
    hi = min(b / (1 - a), v0) if tau_star == 0.0 else b / (1 - a)

    def f(v):
        return a * math.log(1 / v) + b / v - target

    if f(hi) >= 0:
        return hi, tau_star, C
    lo = hi
    while f(lo) < 0:
        lo *= 0.5
    return brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500), tau_star, C


# ---------------------------------------------------------------------------
# convex threshold schedule


def _stable_root(b: float, L: float, c: float) -> float:
    # (1/c) (sqrt(b^2 L^2 + 2 c b) - b L) rewritten without cancellation
    if b <= 0.0:
        return 0.0
    return 2.0 * b / (math.sqrt(b * b * L * L + 2.0 * c * b) + b * L)


def convex_thresholds(
    gamma: float, B: int, sigma: float, L: float, D_max: float
) -> Tuple[float, float]:
    """Lower/upper thresholds bracketing the optimal convex step size."""
    if B < 1:
        raise UsageError("batch size must be >= 1")
    if not sigma > 0:
        raise UsageError("sigma must be positive (use an estimate or a floor for noiseless data)")
    if not (L > 0 and D_max > 0):
        raise UsageError("L and D_max must be positive")
    if gamma < 0:
        raise UsageError("gamma must be nonnegative")
    c = 2.0 * sigma * sigma / B
    b1 = gamma * gamma + 2.0 * D_max * gamma
    b2 = (gamma + D_max) ** 2
    return _stable_root(b1, L, c), _stable_root(b2, L, c)


def convex_step(eta_prev: float, tau1: float, tau2: float) -> float:
    if not 0 <= tau1 <= tau2:
        raise UsageError("need 0 <= tau1 <= tau2")
    return min(max(eta_prev, tau1), tau2)


# ---------------------------------------------------------------------------
# non-convex schedule


def nonconvex_step(gamma: float, loss_est: float, B: int, sigma: float, L: float) -> float:
    """Minimiser of the per-step non-convex bound; always in [0, 1/L]."""
    if gamma < 0 or loss_est < 0:
        raise UsageError("gamma and loss_est must be nonnegative")
    if not sigma > 0:
        raise UsageError("sigma must be positive")
    if not L > 0:
        raise UsageError("L must be positive")
    b = L * (gamma + loss_est)
    if b <= 0.0:
        return 0.0
    c = sigma * sigma / B
    return 2.0 * b / (L * (math.sqrt(b * b + 2.0 * c * b) + b))


def ema_gamma(gamma_hat_prev: float, drift: float, beta: float) -> float:
    if not 0 < beta < 1:
        raise UsageError("beta must lie in (0, 1)")
    if drift < 0:
        raise UsageError("drift must be nonnegative")
    return beta * gamma_hat_prev + (1.0 - beta) * drift


# ---------------------------------------------------------------------------
# stateful wrappers used by the engine


class Schedule:
    """Base class: ``reset`` at the start of a run, then call once per step."""

    name = "schedule"

    # whether the schedule reads the previous-batch loss / sigma estimate
    uses_loss = False
    uses_sigma_hat = False

    def reset(self, d: int, v0_hint: Optional[float] = None) -> None:
        pass

    def __call__(self, obs: Observation) -> float:
        raise NotImplementedError

    @property
    def info(self) -> Dict[str, float]:
        """Internal quantities behind the most recent step size."""
        return {}

    def describe(self) -> Dict[str, object]:
        return {"kind": self.name}


class ConstantSchedule(Schedule):
    name = "constant"

    def __init__(self, eta: float):
        if not eta > 0:
            raise UsageError("constant step size must be positive")
        self.eta = float(eta)

    def __call__(self, obs):
        return self.eta

    def describe(self):
        return {"kind": self.name, "eta": self.eta}


class InverseTimeSchedule(Schedule):
    """eta_t = c0 / (1 + c1 t)."""

    name = "inverse_time"

    def __init__(self, c0: float, c1: float):
        if not c0 > 0 or c1 < 0:
            raise UsageError("need c0 > 0 and c1 >= 0")
        self.c0, self.c1 = float(c0), float(c1)

    def __call__(self, obs):
        return self.c0 / (1.0 + self.c1 * obs.t)

    def describe(self):
        return {"kind": self.name, "c0": self.c0, "c1": self.c1}


class Alg1Schedule(Schedule):
    """ODE-driven schedule for online least squares.

    ``v0=None`` starts from the engine's hint (squared initial distance when
    the path is revealed) and otherwise from 1.0.
    """

    name = "alg1"

    def __init__(self, epsilon: float, sigma: float, kappa: float = 1e-3,
                 d: Optional[int] = None, v0: Optional[float] = None):
        if not epsilon > 0:
            raise UsageError("epsilon must be positive")
        if sigma < 0:
            raise UsageError("sigma must be nonnegative")
        self.epsilon, self.sigma, self.kappa = float(epsilon), float(sigma), float(kappa)
        self.d, self.v0 = d, v0
        self.state: Optional[ScheduleState] = None

    def reset(self, d, v0_hint=None):
        v0 = self.v0 if self.v0 is not None else (v0_hint if v0_hint is not None else 1.0)
        params = ScheduleParams(epsilon=self.epsilon, kappa=self.kappa,
                                d=self.d or d, sigma=self.sigma, v0=v0)
        self.state = ScheduleState(params, v=v0)

    def __call__(self, obs):
        if self.state is None:
            raise UsageError("reset() must be called before the first step")
        eta, self.state = alg1_step(self.state, obs.batch_size, obs.gamma)
        return eta

    @property
    def info(self):
        return {"v": self.state.v} if self.state else {}

    def describe(self):
        return {"kind": self.name, "epsilon": self.epsilon, "sigma": self.sigma,
                "kappa": self.kappa, "v0": self.v0}


class ConvexSchedule(Schedule):
    """Threshold schedule: clamp the previous rate into [tau1, tau2].

    Before the first step the previous rate is taken to be the upper
    threshold at zero shift. With ``estimate_sigma`` the previous batch's
    gradient-noise estimate replaces ``sigma`` whenever it is available.
    """

    name = "convex"

    def __init__(self, sigma: float, L: float, D_max: float,
                 estimate_sigma: bool = False, sigma_floor: float = 1e-6):
        self.sigma, self.L, self.D_max = float(sigma), float(L), float(D_max)
        self.estimate_sigma = self.uses_sigma_hat = estimate_sigma
        self.sigma_floor = float(sigma_floor)
        self.eta_prev: Optional[float] = None
        self._info: Dict[str, float] = {}

    def _sigma(self, obs):
        s = self.sigma
        if self.estimate_sigma and obs.sigma_hat is not None:
            s = obs.sigma_hat
        return max(s, self.sigma_floor)

    def reset(self, d, v0_hint=None):
        self.eta_prev = None
        self._info = {}

    def __call__(self, obs):
        sigma = self._sigma(obs)
        if self.eta_prev is None:
            self.eta_prev = convex_thresholds(0.0, obs.batch_size, sigma, self.L, self.D_max)[1]
        tau1, tau2 = convex_thresholds(obs.gamma, obs.batch_size, sigma, self.L, self.D_max)
        eta = convex_step(self.eta_prev, tau1, tau2)
        self.eta_prev = eta
        self._info = {"tau1": tau1, "tau2": tau2}
        return eta

    @property
    def info(self):
        return dict(self._info)

    def describe(self):
        return {"kind": self.name, "sigma": self.sigma, "L": self.L, "D_max": self.D_max,
                "estimate_sigma": self.estimate_sigma}


class NonconvexSchedule(Schedule):
    """Closed-form non-convex schedule.

    Uses the previous-batch loss estimate; ``loss_init`` stands in before any
    data has been seen. Negative estimates are clipped to zero.
    """

    name = "nonconvex"
    uses_loss = True

    def __init__(self, sigma: float, L: float, loss_init: float = 1.0,
                 estimate_sigma: bool = False, sigma_floor: float = 1e-6):
        self.sigma, self.L, self.loss_init = float(sigma), float(L), float(loss_init)
        self.estimate_sigma = self.uses_sigma_hat = estimate_sigma
        self.sigma_floor = float(sigma_floor)

    def __call__(self, obs):
        loss = self.loss_init if obs.loss is None else max(obs.loss, 0.0)
        sigma = self.sigma
        if self.estimate_sigma and obs.sigma_hat is not None:
            sigma = obs.sigma_hat
        return nonconvex_step(obs.gamma, loss, obs.batch_size, max(sigma, self.sigma_floor), self.L)

    def describe(self):
        return {"kind": self.name, "sigma": self.sigma, "L": self.L, "loss_init": self.loss_init}


def emit_schedule(
    schedule: Schedule,
    gammas: Sequence[float],
    batch_size,
    d: int,
    v0_hint: Optional[float] = None,
    losses: Optional[Sequence[float]] = None,
) -> List[Dict[str, float]]:
    """Drive ``schedule`` with a shift trace directly, without SGD.

    ``gammas[t-1]`` is the shift value consumed at step ``t``. ``batch_size``
    is an int or a per-step sequence.
    """
    schedule.reset(d, v0_hint)
    rows = []
    for t, g in enumerate(gammas, start=1):
        B = batch_size if isinstance(batch_size, (int, np.integer)) else int(batch_size[t - 1])
        loss = None if losses is None else float(losses[t - 1])
        eta = schedule(Observation(t=t, batch_size=int(B), gamma=float(g), loss=loss))
        row = {"t": t, "eta": eta, "gamma": float(g)}
        row.update(schedule.info)
        rows.append(row)
    return rows
