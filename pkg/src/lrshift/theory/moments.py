"""Forward-Euler integration of the first/second moment ODEs and the
upper-bound (v-tilde) ODE that drives the step-size policy."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from ..core import UsageError, as_vector
from ..schedulers import optimal_zeta

log = logging.getLogger(__name__)

MOMENT_SCHEMA = "lrshift-moments/1"
# |v| below this after an Euler step is treated as round-off and clamped to 0
NEG_TOL = 1e-12

ScalarFn = Union[float, Callable[[float], float]]


def _as_fn(f) -> Callable[[float], float]:
    if callable(f):
        return f
    c = float(f)
    return lambda tau: c


def _guard(v: float, tau: float) -> float:
    if v >= 0.0:
        return v
    if v > -NEG_TOL:
        log.warning("second moment went negative (%.3g) at tau=%.6g; clamped to 0", v, tau)
        return 0.0
    raise UsageError(f"second moment went negative ({v:.3g}) at tau={tau:.6g}; reduce the step size")


@dataclass
class MomentTrace:
    """Mean ``m`` (shape (n, d)) and second moment ``v`` on the grid ``taus``.

    ``v_se`` holds standard errors when the trace comes from an ensemble.
    """

    taus: np.ndarray
    m: np.ndarray
    v: np.ndarray
    v_se: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(np.diff(self.taus) <= 0):
            raise UsageError("time grid must be strictly increasing")
        if np.any(self.v < 0):
            raise UsageError("second moment must be nonnegative")

    def v_at(self, taus) -> np.ndarray:
        return np.interp(taus, self.taus, self.v)

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO()
        buf.write(f"# {MOMENT_SCHEMA}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "m_norm", "v"] + (["v_se"] if self.v_se is not None else []))
        mn = np.linalg.norm(self.m, axis=1)
        for i, tau in enumerate(self.taus):
            row = [repr(float(tau)), repr(float(mn[i])), repr(float(self.v[i]))]
            if self.v_se is not None:
                row.append(repr(float(self.v_se[i])))
            w.writerow(row)
        text = buf.getvalue()
        if dest is not None:
            Path(dest).write_text(text)
        return text


def _grid(dtau: float, T: float) -> int:
    if not dtau > 0:
        raise UsageError("dtau must be positive")
    if T < 0:
        raise UsageError("T must be nonnegative")
    return int(round(T / dtau))


def integrate_moments(zeta_fn: ScalarFn, nu_fn: ScalarFn, yprime_fn, m0, v0: float,
                      dtau: float, T: float, sigma: float) -> MomentTrace:
    """Euler solution of

        m' = -zeta m - Y'
        v' = ((d+1) zeta^2 / nu - 2 zeta) v + zeta^2 sigma^2 d / nu - 2 m.Y'

    ``zeta_fn`` and ``nu_fn`` are callables of tau or constants; ``yprime_fn``
    is a callable returning the oracle drift vector, a constant vector, or
    ``None`` for a static oracle.
    """
    m = as_vector(m0).copy()
    d = m.shape[0]
    if v0 < 0:
        raise UsageError("v0 must be nonnegative")
    n = _grid(dtau, T)
    zeta, nu = _as_fn(zeta_fn), _as_fn(nu_fn)
    if yprime_fn is None:
        yp = lambda tau: None
    elif callable(yprime_fn):
        yp = yprime_fn
    else:
        const = as_vector(yprime_fn, d)
        yp = lambda tau: const
    s2d = sigma * sigma * d

    taus = dtau * np.arange(n + 1)
    ms = np.empty((n + 1, d))
    vs = np.empty(n + 1)
    v = float(v0)
    ms[0], vs[0] = m, v
    for i in range(n):
        tau = taus[i]
        z, nv = zeta(tau), nu(tau)
        if not nv > 0:
            raise UsageError(f"nu must be positive, got {nv} at tau={tau}")
        y = yp(tau)
        dv = ((d + 1) * z * z / nv - 2.0 * z) * v + z * z * s2d / nv
        dm = -z * m
        if y is not None:
            dv -= 2.0 * float(m @ y)
            dm = dm - y
        m = m + dtau * dm
        v = _guard(v + dtau * dv, taus[i + 1])
        ms[i + 1], vs[i + 1] = m, v
    return MomentTrace(taus, ms, vs)


@dataclass
class VTildeTrace:
    taus: np.ndarray
    v: np.ndarray
    zeta: np.ndarray


def integrate_vtilde(nu_fn: ScalarFn, ynorm_fn: ScalarFn, v0: float, kappa: float,
                     T: float, d: int, sigma: float) -> VTildeTrace:
    """Euler solution of the upper-bound ODE under the greedy policy

        v' = ((d+1) zeta^2 / nu - 2 zeta) v + zeta^2 sigma^2 d / nu + 2 |Y'| sqrt(v)

    with ``zeta = optimal_zeta(v)`` re-evaluated at every step.
    """
    if v0 < 0:
        raise UsageError("v0 must be nonnegative")
    if not kappa > 0:
        raise UsageError("kappa must be positive")
    n = _grid(kappa, T)
    nu, yn = _as_fn(nu_fn), _as_fn(ynorm_fn)
    const = not callable(nu_fn) and not callable(ynorm_fn)
    s2d = sigma * sigma * d
    vs = np.empty(n + 1)
    zs = np.empty(n + 1)
    v = float(v0)
    nv, y = nu(0.0), yn(0.0)
    for i in range(n):
        if not const:
            tau = i * kappa
            nv, y = nu(tau), yn(tau)
        if not nv > 0:
            raise UsageError("nu must be positive")
        z = 0.0 if v <= 0.0 else min(1.0, nv * v / ((d + 1) * v + s2d))
        vs[i], zs[i] = v, z
        dv = ((d + 1) * z * z / nv - 2.0 * z) * v + z * z * s2d / nv + 2.0 * y * math.sqrt(v)
        v = _guard(v + kappa * dv, (i + 1) * kappa)
    vs[n] = v
    zs[n] = optimal_zeta(v, nu(n * kappa), d, sigma)
    return VTildeTrace(kappa * np.arange(n + 1), vs, zs)
