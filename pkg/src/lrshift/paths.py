"""Oracle model sequences and shift-magnitude sequences."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .core import ModelVector, UsageError, as_vector


@dataclass(frozen=True)
class OraclePath:
    """Comparator sequence theta*_1..theta*_T stored as a (T, d) array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise UsageError("an oracle path needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise UsageError("oracle path contains non-finite entries")
        object.__setattr__(self, "points", pts)

    @property
    def horizon(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.horizon

    def at(self, t: int) -> ModelVector:
        """theta*_t with 1-based ``t``; indices past the horizon hold the last point."""
        return self.points[min(max(t, 1), self.horizon) - 1]


@dataclass(frozen=True)
class ShiftTrace:
    """Shift magnitudes gamma_1, gamma_2, ... (nonnegative)."""

    gammas: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gammas, dtype=np.float64).reshape(-1)
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            raise UsageError("shift magnitudes must be finite and nonnegative")
        object.__setattr__(self, "gammas", g)

    def __len__(self) -> int:
        return self.gammas.shape[0]

    def __getitem__(self, i):
        return self.gammas[i]


def spiral_path(d: int, T: int, a: float, b: float, k: int) -> OraclePath:
    """Spiral whose coordinate pairs rotate at frequencies 1, 2, ..., d/2.

    Coordinate ``i`` (1-based) at step ``t`` is ``r(t)^3 cos(ceil(i/2) 2 k pi alpha(t))``
    for odd ``i`` and the matching ``sin`` for even ``i``; ``r`` runs linearly
    from ``a`` to ``b`` and ``alpha`` from 0 to 1 over the T steps.
    """
    if d < 2 or d % 2:
        raise UsageError(f"spiral paths need an even dimension, got d={d}")
    if T < 2:
        raise UsageError("spiral paths need T >= 2")
    if k < 1:
        raise UsageError("base frequency k must be a positive integer")
    r3 = np.linspace(a, b, T) ** 3
    alpha = np.linspace(0.0, 1.0, T)
    freq = np.arange(1, d // 2 + 1)
    angle = 2.0 * k * math.pi * np.outer(alpha, freq)
    pts = np.empty((T, d))
    pts[:, 0::2] = r3[:, None] * np.cos(angle)
    pts[:, 1::2] = r3[:, None] * np.sin(angle)
    return OraclePath(pts)


def downsample_path(path: OraclePath, l: int) -> OraclePath:
    """Piecewise-constant version: step t takes the point at ceil(t/l)*l (clamped to T)."""
    if l < 1:
        raise UsageError("downsampling factor must be >= 1")
    T = path.horizon
    t = np.arange(1, T + 1)
    src = np.minimum(-(-t // l) * l, T)
    return OraclePath(path.points[src - 1])


def hold_path(path: OraclePath, hold: int) -> OraclePath:
    """Repeat every point ``hold`` times (jumps every ``hold`` steps)."""
    if hold < 1:
        raise UsageError("hold must be >= 1")
    return OraclePath(np.repeat(path.points, hold, axis=0))


def constant_path(point, T: int) -> OraclePath:
    p = as_vector(point)
    return OraclePath(np.tile(p, (T, 1)))


def bursty_gamma(episode_len: int, s: float, T: int) -> ShiftTrace:
    """``s`` at the first step of every episode, zero elsewhere (T entries)."""
    if episode_len < 1:
        raise UsageError("episode_len must be >= 1")
    if s < 0:
        raise UsageError("jump size must be nonnegative")
    g = np.zeros(T)
    g[::episode_len] = s
    return ShiftTrace(g)


def smooth_gamma(alpha: float, T: int) -> ShiftTrace:
    """gamma_t = t^-alpha for t = 1..T."""
    if not alpha > 0:
        raise UsageError("alpha must be positive")
    t = np.arange(1, T + 1, dtype=np.float64)
    return ShiftTrace(t ** -alpha)


def realize_path(
    gammas: Union[ShiftTrace, np.ndarray],
    d: int,
    start,
    rng: np.random.Generator,
) -> OraclePath:
    """Random-direction walk whose consecutive step lengths equal ``gammas``.

    Returns ``len(gammas) + 1`` points beginning at ``start``.
    """
    if d < 1:
        raise UsageError("d must be >= 1")
    g = gammas.gammas if isinstance(gammas, ShiftTrace) else ShiftTrace(gammas).gammas
    start = as_vector(start, d)
    dirs = rng.standard_normal((g.shape[0], d))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    # a zero draw has probability zero; guard anyway
    norms[norms == 0] = 1.0
    steps = dirs / norms * g[:, None]
    pts = np.vstack([start, start + np.cumsum(steps, axis=0)])
    return OraclePath(pts)


def gamma_of_path(path: OraclePath) -> ShiftTrace:
    """Consecutive distances ||theta*_t - theta*_{t+1}|| (empty for a single point)."""
    return ShiftTrace(np.linalg.norm(np.diff(path.points, axis=0), axis=1))


def path_to_csv(path: OraclePath, dest: Union[str, Path]) -> None:
    d = path.dim
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"coord_{i}" for i in range(1, d + 1)])
        for t, row in enumerate(path.points, start=1):
            w.writerow([t] + [repr(float(v)) for v in row])


def path_from_csv(src: Union[str, Path]) -> OraclePath:
    with open(src, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    if header[0] != "t":
        raise UsageError(f"{src}: first column must be 't'")
    return OraclePath(np.array([[float(v) for v in r[1:]] for r in body]))
