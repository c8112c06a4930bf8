"""Regret-bound accumulators evaluated on a recorded run.

Each bound is a sum of per-step increments; ``BoundLedger`` keeps the
increments so running values can be plotted next to the realised regret.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, NamedTuple, Optional

import numpy as np

from ..core import ATOL, RunTrace, UsageError

log = logging.getLogger(__name__)

BOUND_SCHEMA = "lrshift-bounds/1"


class ConvexUpper(NamedTuple):
    oracle: float
    observable: float


def _cols(trace: RunTrace):
    eta = trace.column("eta")
    B = trace.column("batch_size")
    gamma = trace.column("gamma")
    return eta, B, gamma


def _check_rate(eta: np.ndarray, limit: float, what: str) -> None:
    bad = np.flatnonzero(eta > limit * (1 + ATOL))
    if bad.size:
        log.warning("%d step(s) exceed %s (first at t=%d, eta=%.4g)",
                    bad.size, what, bad[0] + 1, eta[bad[0]])


def _positive(a: np.ndarray, name: str) -> np.ndarray:
    bad = np.flatnonzero(~(a > 0))
    if bad.size:
        raise UsageError(f"{name} must be positive; t={bad[0] + 1} gives {a[bad[0]]:.4g}")
    return a


def a_coeff(eta, L: float) -> np.ndarray:
    """a_t = 2 eta_t - L eta_t^2."""
    eta = np.asarray(eta, dtype=np.float64)
    return 2.0 * eta - L * eta * eta


def a_prime_coeff(eta, L: float, mu: float) -> np.ndarray:
    """a'_t = 2 (eta_t + (L/mu) eta_t - L eta_t^2)."""
    eta = np.asarray(eta, dtype=np.float64)
    return 2.0 * (eta + (L / mu) * eta - L * eta * eta)


def _oracle_terms(trace: RunTrace, a: np.ndarray, sigma: float) -> np.ndarray:
    eta, B, gamma = _cols(trace)
    D = trace.column("dist")
    Dn = trace.dists_next()
    inner = trace.column("inner_shift")
    return (D * D - Dn * Dn + sigma * sigma * eta * eta / B + gamma * gamma + 2.0 * inner) / a


def convex_upper_increments(trace: RunTrace, L: float, sigma: float, D_max: float):
    """Per-step increments of the oracle and observable convex upper bounds."""
    if len(trace) == 0:
        return np.zeros(0), np.zeros(0)
    eta, B, gamma = _cols(trace)
    _check_rate(eta, 1.0 / L, "1/L")
    a = _positive(a_coeff(eta, L), "a_t = 2 eta - L eta^2")
    oracle = _oracle_terms(trace, a, sigma)
    inv = 1.0 / a
    head = np.empty_like(inv)
    head[0] = inv[0]
    head[1:] = np.maximum(inv[1:] - inv[:-1], 0.0)
    observable = D_max * D_max * head + (
        sigma * sigma * eta * eta / B + gamma * gamma + 2.0 * D_max * gamma) * inv
    return oracle, observable


def bound_upper_convex(trace: RunTrace, L: float, sigma: float, D_max: float) -> ConvexUpper:
    oracle, observable = convex_upper_increments(trace, L, sigma, D_max)
    return ConvexUpper(float(oracle.sum()), float(observable.sum()))


def convex_lower_increments(trace: RunTrace, L: float, mu: float, sigma: float) -> np.ndarray:
    if len(trace) == 0:
        return np.zeros(0)
    if not (mu > 0 and L >= mu):
        raise UsageError("need 0 < mu <= L")
    eta = trace.column("eta")
    _check_rate(eta, 1.0 / mu, "1/mu")
    a = _positive(a_prime_coeff(eta, L, mu), "a'_t")
    return _oracle_terms(trace, a, sigma)


def bound_lower_convex(trace: RunTrace, L: float, mu: float, sigma: float) -> float:
    return float(convex_lower_increments(trace, L, mu, sigma).sum())


def nonconvex_upper_increments(trace: RunTrace, L: float, sigma: float) -> np.ndarray:
    if len(trace) == 0:
        return np.zeros(0)
    eta, B, gamma = _cols(trace)
    _check_rate(eta, 1.0 / L, "1/L")
    a = _positive(a_coeff(eta, L), "a_t = 2 eta - L eta^2")
    inv = 1.0 / a
    loss = trace.column("loss_est")
    weight = inv.copy()
    weight[1:] -= inv[:-1]
    return 2.0 * loss * weight + (L * sigma * sigma * eta * eta / B + 2.0 * gamma) * inv


def bound_upper_nonconvex(trace: RunTrace, L: float, sigma: float) -> float:
    return float(nonconvex_upper_increments(trace, L, sigma).sum())


@dataclass
class BoundLedger:
    """Per-step bound increments (``None`` for bounds not evaluated)."""

    t: np.ndarray
    regret: np.ndarray
    upper_convex: Optional[np.ndarray] = None
    upper_convex_observable: Optional[np.ndarray] = None
    lower_convex: Optional[np.ndarray] = None
    upper_nonconvex: Optional[np.ndarray] = None

    def columns(self) -> Dict[str, np.ndarray]:
        cols = {"t": self.t, "regret": self.regret}
        for name in ("upper_convex", "upper_convex_observable", "lower_convex", "upper_nonconvex"):
            inc = getattr(self, name)
            if inc is not None:
                cols[name] = inc
        return cols

    def totals(self) -> Dict[str, float]:
        return {k: float(v.sum()) for k, v in self.columns().items() if k != "t"}

    def running(self, name: str) -> np.ndarray:
        return np.cumsum(self.columns()[name])

    def to_csv(self, dest=None) -> str:
        cols = self.columns()
        names = list(cols)
        buf = io.StringIO()
        buf.write(f"# {BOUND_SCHEMA}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names + [f"cum_{n}" for n in names[1:]])
        cums = [np.cumsum(cols[n]) for n in names[1:]]
        for i in range(self.t.shape[0]):
            w.writerow([str(int(self.t[i]))] + [repr(float(cols[n][i])) for n in names[1:]]
                       + [repr(float(c[i])) for c in cums])
        text = buf.getvalue()
        if dest is not None:
            Path(dest).write_text(text)
        return text


def bound_ledger(trace: RunTrace, L: float, sigma: float, *, D_max: Optional[float] = None,
                 mu: Optional[float] = None, nonconvex: bool = False) -> BoundLedger:
    """Evaluate every applicable bound on ``trace``."""
    led = BoundLedger(t=trace.column("t"), regret=trace.column("regret"))
    if nonconvex:
        led.upper_nonconvex = nonconvex_upper_increments(trace, L, sigma)
        return led
    if D_max is not None:
        led.upper_convex, led.upper_convex_observable = convex_upper_increments(
            trace, L, sigma, D_max)
    if mu is not None:
        led.lower_convex = convex_lower_increments(trace, L, mu, sigma)
    return led
