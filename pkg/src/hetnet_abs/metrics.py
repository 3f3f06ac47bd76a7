"""Evaluation quantities: rate CDFs, edge throughput, gains, tier load and trial aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .association import PHASES, AssociationReport
from .scenario import TIERS, Deployment


@dataclass
class TrialResult:
    """Everything recorded for one scheme on one drop."""

    scheme: str
    rates: np.ndarray
    z: float
    utility: float
    load: dict = field(default_factory=dict)  # (tier, phase) -> share of users
    fractional_normal: int = 0
    fractional_blank: int = 0
    dual_service_users: int = 0


def rate_cdf(rates, grid) -> np.ndarray:
    """Empirical CDF ``P(R <= g)`` of the rates at each grid point."""
    r = np.sort(np.asarray(rates, dtype=float).ravel())
    if r.size == 0:
        raise ValueError("rate_cdf needs at least one rate")
    return np.searchsorted(r, np.asarray(grid, dtype=float), side="right") / r.size


def percentile_throughput(rates, p: float) -> float:
    """Mean rate of the worst ``ceil(p * N)`` users."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    r = np.sort(np.asarray(rates, dtype=float).ravel())
    if r.size == 0:
        raise ValueError("percentile_throughput needs at least one rate")
    # guard p * N landing a hair above an integer, e.g. 0.3 * 10
    k = max(1, math.ceil(p * r.size - 1e-9))
    return float(r[:k].mean())


def edge_gain(t_a: float, t_n: float) -> float:
    """Relative throughput gain ``(T_a - T_n) / T_n``."""
    if not t_n > 0:
        raise ValueError(f"reference throughput must be positive, got {t_n}")
    return (t_a - t_n) / t_n


def load_share(report: AssociationReport, deployment) -> dict:
    """Fraction of users served by each tier in each phase.

    A user split over several BSs in a phase is counted fractionally, in
    proportion to its share on each of them. Users not served in a phase
    contribute nothing, so each phase sums to at most 1.

    ``deployment`` is a :class:`Deployment` or a per-BS sequence of tier names.
    """
    tiers = deployment.tier_names() if isinstance(deployment, Deployment) else list(deployment)
    tiers = np.asarray(tiers)
    n_u = report.n_users
    out = {}
    for phase, mat in zip(PHASES, (report.allocation.x, report.allocation.y)):
        share = np.where(np.asarray(mat) > report.epsilon, mat, 0.0)
        total = share.sum(axis=1, keepdims=True)
        mass = np.divide(share, total, out=np.zeros_like(share), where=total > 0)
        for tier in TIERS:
            out[(tier, phase)] = float(mass[:, tiers == tier].sum() / n_u) if n_u else 0.0
    return out


def mean_stderr(values) -> tuple[float, float]:
    """Sample mean and its standard error (nan error for a single sample)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))
