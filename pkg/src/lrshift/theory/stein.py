"""Monte Carlo check of the Gaussian fourth-moment identity

    E[(x x^T - I) u u^T (x x^T - I)] = |u|^2 I + u u^T,   x ~ N(0, I).
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from ..core import UsageError, as_vector


def stein_analytic(u) -> np.ndarray:
    u = as_vector(u)
    return float(u @ u) * np.eye(u.shape[0]) + np.outer(u, u)


def stein_check(u, n: int, rng, chunk: int = 200_000) -> Tuple[np.ndarray, np.ndarray, float]:
    """(empirical matrix, analytic matrix, max absolute entry deviation)."""
    if n < 1:
        raise UsageError("n must be >= 1")
    u = as_vector(u)
    d = u.shape[0]
    acc = np.zeros((d, d))
    done = 0
    while done < n:
        k = min(chunk, n - done)
        X = rng.standard_normal((k, d))
        # (x x^T - I) u = x (x.u) - u
        w = X * (X @ u)[:, None] - u
        acc += w.T @ w
        done += k
    emp = acc / n
    ana = stein_analytic(u)
    return emp, ana, float(np.max(np.abs(emp - ana)))
