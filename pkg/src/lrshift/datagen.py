"""Per-step batch samplers and per-sample losses for the three problem families.

* ``linear``: x ~ N(0, I), y = <x, theta*> + eps, squared loss.
* ``logistic``: x ~ N(0, I), y = sigmoid(<x, theta*> + eps) (soft labels),
  binary cross-entropy.
* ``nonconvex_synthetic``: expected loss
  ``0.5 ||theta - c||^2 + lam * sum_i (1 - cos(2 pi (theta_i - c_i)))`` around the
  oracle model ``c``; a sample ``z = (c, xi)`` with ``xi ~ N(0, sigma^2/d I)``
  adds the linear term ``<xi, theta - c>``, so per-sample gradients are the
  exact gradient plus isotropic noise of total variance ``sigma^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, log_expit

from .core import ModelVector, ProjectionSet, UsageError

KINDS = ("linear", "logistic", "nonconvex_synthetic")
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Batch:
    covariates: np.ndarray
    responses: np.ndarray
    # oracle model the batch was drawn around (non-convex family only)
    anchor: Optional[ModelVector] = None

    @property
    def size(self) -> int:
        return self.covariates.shape[0]


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "linear"
    noise_sigma: float = 0.1
    nonconvex_lambda: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        if self.noise_sigma < 0:
            raise UsageError("noise_sigma must be nonnegative")
        if self.nonconvex_lambda < 0:
            raise UsageError("nonconvex_lambda must be nonnegative")

    @property
    def smoothness(self) -> float:
        """Smoothness constant L of the expected loss."""
        if self.kind == "linear":
            return 1.0
        if self.kind == "logistic":
            return 0.25
        return 1.0 + 4.0 * math.pi**2 * self.nonconvex_lambda


def _check_batch_size(B: int) -> None:
    if B < 1:
        raise UsageError(f"batch size must be >= 1, got {B}")


def sample_linear_batch(theta_star: ModelVector, B: int, sigma: float, rng) -> Batch:
    _check_batch_size(B)
    X = rng.standard_normal((B, theta_star.shape[0]))
    y = X @ theta_star
    if sigma > 0:
        y = y + sigma * rng.standard_normal(B)
    return Batch(X, y)


def sample_logistic_batch(theta_star: ModelVector, B: int, sigma: float, rng) -> Batch:
    _check_batch_size(B)
    X = rng.standard_normal((B, theta_star.shape[0]))
    z = X @ theta_star
    if sigma > 0:
        z = z + sigma * rng.standard_normal(B)
    return Batch(X, expit(z))


def sample_nonconvex_batch(theta_star: ModelVector, B: int, sigma: float, rng) -> Batch:
    _check_batch_size(B)
    d = theta_star.shape[0]
    xi = (sigma / math.sqrt(d)) * rng.standard_normal((B, d))
    return Batch(xi, np.zeros(B), anchor=np.array(theta_star, dtype=np.float64))


def nonconvex_loss_and_grad(
    theta: ModelVector, theta_star: ModelVector, lam: float
) -> Tuple[float, ModelVector]:
    """Exact expected loss and gradient of the synthetic non-convex family."""
    if theta.shape != theta_star.shape:
        raise UsageError("dimension mismatch between theta and theta_star")
    if lam < 0:
        raise UsageError("lambda must be nonnegative")
    diff = theta - theta_star
    phase = TWO_PI * diff
    loss = 0.5 * float(diff @ diff) + lam * float(np.sum(1.0 - np.cos(phase)))
    grad = diff + lam * TWO_PI * np.sin(phase)
    return loss, grad


def nonconvex_gamma_bound(
    theta_star_t: ModelVector,
    theta_star_next: ModelVector,
    lam: float,
    ball: ProjectionSet,
) -> float:
    """Upper bound on sup over the ball of |l_t(theta) - l_{t+1}(theta)|."""
    a, b = theta_star_t, theta_star_next
    step = float(np.linalg.norm(a - b))
    if step == 0.0:
        return 0.0
    r_eff = ball.radius + float(np.linalg.norm(ball.center))
    quad = 2.0 * r_eff * step + 0.5 * abs(float(a @ a) - float(b @ b))
    ripple = TWO_PI * lam * math.sqrt(a.shape[0]) * step
    return quad + ripple


class Problem:
    """Sampler plus per-sample loss/gradient for one problem family."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.kind = spec.kind
        self.sigma = spec.noise_sigma
        self.lam = spec.nonconvex_lambda
        self._sampler = {
            "linear": sample_linear_batch,
            "logistic": sample_logistic_batch,
            "nonconvex_synthetic": sample_nonconvex_batch,
        }[spec.kind]

    @property
    def smoothness(self) -> float:
        return self.spec.smoothness

    def sample(self, theta_star: ModelVector, B: int, rng) -> Batch:
        return self._sampler(theta_star, B, self.sigma, rng)

    def losses(self, theta: ModelVector, batch: Batch) -> np.ndarray:
        """Per-sample losses l(theta, z_k)."""
        X, y = batch.covariates, batch.responses
        if self.kind == "linear":
            r = y - X @ theta
            return 0.5 * r * r
        if self.kind == "logistic":
            z = X @ theta
            return -(y * log_expit(z) + (1.0 - y) * log_expit(-z))
        loss, _ = nonconvex_loss_and_grad(theta, batch.anchor, self.lam)
        return loss + X @ (theta - batch.anchor)

    def grads(self, theta: ModelVector, batch: Batch) -> np.ndarray:
        """Per-sample gradients as a (B, d) array."""
        X, y = batch.covariates, batch.responses
        if self.kind == "linear":
            return -(y - X @ theta)[:, None] * X
        if self.kind == "logistic":
            return (expit(X @ theta) - y)[:, None] * X
        _, g = nonconvex_loss_and_grad(theta, batch.anchor, self.lam)
        return g[None, :] + X

    def mean_grad(self, theta: ModelVector, batch: Batch) -> ModelVector:
        X, y = batch.covariates, batch.responses
        if self.kind == "linear":
            return -(X.T @ (y - X @ theta)) / X.shape[0]
        if self.kind == "logistic":
            return (X.T @ (expit(X @ theta) - y)) / X.shape[0]
        _, g = nonconvex_loss_and_grad(theta, batch.anchor, self.lam)
        return g + X.mean(axis=0)

    def shift(self, a: ModelVector, b: ModelVector, ball: ProjectionSet) -> float:
        """Shift magnitude between consecutive oracle models."""
        if self.kind == "nonconvex_synthetic":
            return nonconvex_gamma_bound(a, b, self.lam, ball)
        return float(np.linalg.norm(a - b))


def make_problem(spec: ProblemSpec) -> Problem:
    return Problem(spec)
