"""Ensemble statistics that discriminate the epistemic process from the SDE.

The discriminating triple: variance-scaling exponent (t^2 vs t), increment
correlation (1 vs 0), and quadratic-variation behavior under mesh refinement
(vanishing vs constant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateVariance,
    InsufficientPaths,
    UnsupportedDimension,
)
from .integrate import PathEnsemble

__all__ = [
    "MarginalSummary",
    "ScalingFit",
    "QuadraticVariationResult",
    "KsResult",
    "marginal_summary",
    "variance_scaling_fit",
    "increment_dependence",
    "quadratic_variation",
    "marginal_law_distance",
    "KS_CRITICAL",
]

# Asymptotic one-sample KS critical coefficients c(alpha): reject if
# D_N >= c / sqrt(N).  Valid for N >= 1000.
KS_CRITICAL = {0.10: 1.224, 0.05: 1.358, 0.01: 1.628}


@dataclass(frozen=True)
class MarginalSummary:
    time_index: int
    time: float
    mean: np.ndarray
    variance: np.ndarray  # unbiased, per dimension
    quantile_band: tuple  # (lower, upper) n-vectors
    level: float
    num_paths: int


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    intercept: float
    r_squared: float
    fit_range: tuple


@dataclass(frozen=True)
class QuadraticVariationResult:
    per_path: np.ndarray
    mean: float
    std: float


@dataclass(frozen=True)
class KsResult:
    statistic: float
    critical_value: float
    passed: bool
    num_samples: int
    alpha: float


def _require_scalar(ensemble: PathEnsemble) -> np.ndarray:
    if ensemble.state_dim != 1:
        raise UnsupportedDimension("statistic requires scalar state (n = 1)")
    return ensemble.states[:, :, 0]


def marginal_summary(
    ensemble: PathEnsemble, time_index: int, level: float = 0.95
) -> MarginalSummary:
    """Cross-path mean, unbiased variance, and empirical quantile band."""
    n_paths = ensemble.num_paths
    if n_paths < 2:
        raise InsufficientPaths("marginal summary needs at least 2 paths")
    slab = ensemble.states[:, time_index, :]  # (N, n)
    mean = slab.mean(axis=0)
    var = slab.var(axis=0, ddof=1)
    lo_q, hi_q = (1.0 - level) / 2.0, (1.0 + level) / 2.0
    lower = np.quantile(slab, lo_q, axis=0)
    upper = np.quantile(slab, hi_q, axis=0)
    return MarginalSummary(
        time_index=time_index,
        time=float(ensemble.grid.times()[time_index]),
        mean=mean,
        variance=var,
        quantile_band=(lower, upper),
        level=level,
        num_paths=n_paths,
    )


def variance_scaling_fit(ensemble: PathEnsemble, t_min: float) -> ScalingFit:
    """Least-squares slope of log Var[x(t)] against log t for t >= t_min.

    Slope ~2 flags the epistemic (theta-drawn-once) process, ~1 the Brownian
    reformulation.
    """
    x = _require_scalar(ensemble)
    times = ensemble.grid.times()
    mask = times >= max(t_min, np.finfo(float).tiny)
    if mask.sum() < 5:
        raise DegenerateVariance("need at least 5 grid points with t >= t_min")
    var = x[:, mask].var(axis=0, ddof=1)
    if np.any(var <= 0):
        raise DegenerateVariance("zero ensemble variance inside the fit range")
    log_t = np.log(times[mask])
    log_v = np.log(var)
    slope, intercept = np.polyfit(log_t, log_v, 1)
    pred = slope * log_t + intercept
    ss_res = float(np.sum((log_v - pred) ** 2))
    ss_tot = float(np.sum((log_v - log_v.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(
        exponent=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        fit_range=(float(times[mask][0]), float(times[mask][-1])),
    )


def increment_dependence(
    ensemble: PathEnsemble, t1_index: int, t2_index: int
) -> float:
    """Pearson correlation between x(t1) - x(0) and x(t2) - x(t1)."""
    if not 0 < t1_index < t2_index:
        raise UnsupportedDimension("need 0 < t1_index < t2_index")
    if ensemble.num_paths < 100:
        raise InsufficientPaths("increment dependence needs N >= 100")
    x = _require_scalar(ensemble)
    a = x[:, t1_index] - x[:, 0]
    b = x[:, t2_index] - x[:, t1_index]
    if a.std(ddof=1) == 0 or b.std(ddof=1) == 0:
        raise DegenerateVariance("an increment has zero variance")
    return float(np.corrcoef(a, b)[0, 1])


def quadratic_variation(ensemble: PathEnsemble) -> QuadraticVariationResult:
    """Per-path sum of squared consecutive differences.

    Vanishes as dt -> 0 for smooth (epistemic) paths; converges to the
    horizon length for standard Brownian paths.
    """
    if ensemble.grid.num_steps < 2:
        raise UnsupportedDimension("quadratic variation needs num_steps >= 2")
    x = _require_scalar(ensemble)
    qv = np.sum(np.diff(x, axis=1) ** 2, axis=1)
    return QuadraticVariationResult(
        per_path=qv, mean=float(qv.mean()), std=float(qv.std(ddof=1))
    )


def marginal_law_distance(
    ensemble: PathEnsemble, time_index: int, law, alpha: float = 0.01
) -> KsResult:
    """One-sample Kolmogorov-Smirnov distance to an analytic marginal law.

    Pass iff D_N < c(alpha) / sqrt(N), asymptotic critical value (N >= 1000).
    """
    x = _require_scalar(ensemble)[:, time_index]
    n = x.shape[0]
    if n < 1000:
        raise InsufficientPaths("KS test requires N >= 1000 for the asymptotic value")
    if alpha not in KS_CRITICAL:
        raise UnsupportedDimension(f"alpha must be one of {sorted(KS_CRITICAL)}")
    xs = np.sort(x)
    cdf = np.asarray(law.cdf(xs), dtype=np.float64)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - cdf)
    d_minus = np.max(cdf - (i - 1) / n)
    stat = float(max(d_plus, d_minus))
    crit = KS_CRITICAL[alpha] / np.sqrt(n)
    return KsResult(
        statistic=stat,
        critical_value=float(crit),
        passed=stat < crit,
        num_samples=n,
        alpha=alpha,
    )
