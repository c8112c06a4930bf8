"""Moment ODEs, regret-bound accumulators and Monte Carlo checks."""

from .bounds import (
    BoundLedger,
    ConvexUpper,
    bound_ledger,
    bound_lower_convex,
    bound_upper_convex,
    bound_upper_nonconvex,
)
from .ensemble import EnsembleConfig, ensemble_moments, max_relative_deviation, ode_for
from .moments import MomentTrace, VTildeTrace, integrate_moments, integrate_vtilde
from .stein import stein_analytic, stein_check
