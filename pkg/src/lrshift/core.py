"""Shared types: projection ball, per-step records and the regret ledger."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterator, List, Optional

import numpy as np

# Model weights are plain float64 1-D arrays throughout the package.
ModelVector = np.ndarray

ATOL = 1e-9


class UsageError(ValueError):
    """Raised when an operation is called outside its contract."""


class DivergenceError(FloatingPointError):
    """Raised when an iterate, gradient or step size stops being finite."""


def as_vector(x, d: Optional[int] = None) -> ModelVector:
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if d is not None and v.shape[0] != d:
        raise UsageError(f"expected dimension {d}, got {v.shape[0]}")
    return v


@dataclass(frozen=True)
class ProjectionSet:
    """Euclidean ball ``{x : ||x - center|| <= radius}``."""

    center: ModelVector
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_vector(self.center))
        if not self.radius > 0:
            raise UsageError(f"radius must be positive, got {self.radius}")

    @classmethod
    def ball(cls, d: int, radius: float, center=None) -> "ProjectionSet":
        c = np.zeros(d) if center is None else as_vector(center, d)
        return cls(c, float(radius))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def contains(self, x: ModelVector, tol: float = ATOL) -> bool:
        return float(np.linalg.norm(x - self.center)) <= self.radius + tol


def project_ball(x: ModelVector, ball: ProjectionSet) -> ModelVector:
    """Project ``x`` onto the ball; points already inside are returned as-is."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != ball.center.shape:
        raise UsageError(
            f"dimension mismatch: point has shape {x.shape}, ball center {ball.center.shape}"
        )
    diff = x - ball.center
    r = float(np.sqrt(diff @ diff))
    if not np.isfinite(r):
        # squared norm overflowed; rescale before taking the norm
        m = float(np.max(np.abs(diff)))
        r = m * float(np.linalg.norm(diff / m)) if np.isfinite(m) else m
    if r <= ball.radius:
        return x
    return ball.center + (ball.radius / r) * diff


@dataclass(frozen=True)
class StepRecord:
    """Telemetry for one online step.

    ``dist`` is the distance to the oracle model before the update, ``gamma``
    the true shift to the next oracle model (or its upper bound for the
    non-convex problem) and ``inner_shift`` is
    ``<theta*_t - theta*_{t+1}, theta_{t+1} - theta*_t>``.
    """

    t: int
    eta: float
    batch_size: int
    dist: float
    gamma: float
    regret: float
    inner_shift: float = 0.0
    loss_est: float = 0.0
    gamma_hat: float = 0.0
    projected: bool = False

    def __post_init__(self):
        if self.t < 1:
            raise UsageError("step index starts at 1")
        if not self.eta >= 0:
            raise UsageError(f"eta must be nonnegative, got {self.eta}")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.dist < 0 or self.gamma < 0:
            raise UsageError("dist and gamma must be nonnegative")


RECORD_FIELDS = tuple(f.name for f in fields(StepRecord))


@dataclass
class RunTrace:
    """Sequence of step records plus the running regret sum.

    ``final_dist`` is ``||theta_{T+1} - theta*_{T+1}||`` (the oracle path is
    held at its last point past the horizon); the bound accumulators need it.
    """

    records: List[StepRecord] = field(default_factory=list)
    cum_regret: List[float] = field(default_factory=list)
    final_dist: float = 0.0
    final_theta: Optional[ModelVector] = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[StepRecord]:
        return iter(self.records)

    def __getitem__(self, i) -> StepRecord:
        return self.records[i]

    @property
    def total_regret(self) -> float:
        return self.cum_regret[-1] if self.cum_regret else 0.0

    def column(self, name: str) -> np.ndarray:
        if name == "cum_regret":
            return np.asarray(self.cum_regret, dtype=np.float64)
        if name not in RECORD_FIELDS:
            raise KeyError(name)
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def dists_next(self) -> np.ndarray:
        """``D_{t+1}`` for t = 1..T."""
        d = self.column("dist")
        return np.append(d[1:], self.final_dist)


def ledger_append(trace: RunTrace, rec: StepRecord) -> RunTrace:
    """Append ``rec`` to ``trace`` in place and return the trace."""
    expected = len(trace.records) + 1
    if rec.t != expected:
        raise UsageError(f"out-of-order record: expected t={expected}, got t={rec.t}")
    trace.records.append(rec)
    trace.cum_regret.append(trace.total_regret + rec.regret)
    return trace
