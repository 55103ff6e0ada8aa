"""Joint chance-constraint estimation and empirical stability classification.

Turns the non-equivalence of the two uncertainty semantics into verdicts: a
safe box, a horizon, and a failure tolerance delta yield Satisfied /
Violated / Inconclusive per semantics, via exact binomial intervals on the
Monte Carlo violation count.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr
from scipy.stats import beta as beta_dist

from .analytic import brownian_sup_abs_cdf
from .errors import (
    DimensionMismatch,
    HorizonMismatch,
    UnsupportedDimension,
    ZeroInitialState,
)
from .integrate import (
    PathEnsemble,
    SdeScheme,
    TimeGrid,
    integrate_parametric,
    integrate_sde,
    iterate_discrete,
)
from .systems import SystemKind, catalog_lookup

__all__ = [
    "ConstraintSpec",
    "Verdict",
    "ChanceEstimate",
    "StabilityReport",
    "CrossSemanticsReport",
    "clopper_pearson",
    "estimate_joint_chance",
    "estimate_joint_chance_monte_carlo",
    "classify_stability",
    "cross_semantics_report",
]


@dataclass(frozen=True)
class ConstraintSpec:
    """Axis-aligned safe box, horizon, and tolerable failure probability."""

    safe_box: tuple  # ((lo, hi), ...) per state dimension
    horizon: float
    delta: float

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.safe_box)
        object.__setattr__(self, "safe_box", box)
        for lo, hi in box:
            if not lo < hi:
                raise DimensionMismatch("safe box needs lower < upper per dimension")
        if not 0.0 < self.delta < 1.0:
            raise DimensionMismatch("delta must lie in (0, 1)")
        if self.horizon <= 0:
            raise DimensionMismatch("horizon must be positive")


class Verdict(str, enum.Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class ChanceEstimate:
    point_estimate: float
    confidence_interval: tuple
    confidence: float
    num_paths: int
    num_violations: int
    delta: float
    verdict: Verdict


@dataclass(frozen=True)
class StabilityReport:
    semantics: str
    empirical_growth_rates: np.ndarray
    fraction_diverging: float
    growth_threshold: float
    num_paths: int
    analytic_prediction: Optional[float] = None


def clopper_pearson(successes: int, trials: int, confidence: float = 0.95):
    """Exact two-sided binomial interval for a success probability."""
    if not 0 <= successes <= trials or trials < 1:
        raise DimensionMismatch("need 0 <= successes <= trials, trials >= 1")
    alpha = 1.0 - confidence
    lo = 0.0 if successes == 0 else float(
        beta_dist.ppf(alpha / 2.0, successes, trials - successes + 1)
    )
    hi = 1.0 if successes == trials else float(
        beta_dist.ppf(1.0 - alpha / 2.0, successes + 1, trials - successes)
    )
    return lo, hi


def _verdict(ci_lo: float, ci_hi: float, delta: float) -> Verdict:
    target = 1.0 - delta
    if ci_lo >= target:
        return Verdict.SATISFIED
    if ci_hi < target:
        return Verdict.VIOLATED
    return Verdict.INCONCLUSIVE


def _violations_in_box(states: np.ndarray, box, num_indices: int) -> np.ndarray:
    """Per-path flag: path leaves the box (or goes non-finite) on the grid."""
    sl = states[:, :num_indices, :]
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    inside = (sl >= lo) & (sl <= hi) & np.isfinite(sl)
    return ~inside.all(axis=(1, 2))


def _estimate_from_counts(violations, trials, spec, confidence) -> ChanceEstimate:
    stays = trials - violations
    point = stays / trials
    ci = clopper_pearson(stays, trials, confidence)
    return ChanceEstimate(
        point_estimate=point,
        confidence_interval=ci,
        confidence=confidence,
        num_paths=trials,
        num_violations=violations,
        delta=spec.delta,
        verdict=_verdict(ci[0], ci[1], spec.delta),
    )


def estimate_joint_chance(
    ensemble: PathEnsemble, spec: ConstraintSpec, confidence: float = 0.95
) -> ChanceEstimate:
    """Grid-sampled surrogate for P(x(t) in box for all t in [0, T]).

    A path violates iff any grid state up to the horizon exits the box.  For
    SDE ensembles this misses boundary crossings between grid points, an
    O(sqrt(dt)) upward bias on the stay probability.
    """
    grid = ensemble.grid
    if spec.horizon > grid.t_end + 1e-9 * max(1.0, grid.t_end):
        raise HorizonMismatch("constraint horizon exceeds the ensemble grid")
    if len(spec.safe_box) != ensemble.state_dim:
        raise DimensionMismatch("safe box dimension differs from state dimension")
    x0 = ensemble.states[:, 0, :]
    lo = np.array([b[0] for b in spec.safe_box])
    hi = np.array([b[1] for b in spec.safe_box])
    if not ((x0 >= lo) & (x0 <= hi)).all():
        warnings.warn("initial state outside the safe box: constraint is vacuous")
    num_indices = int(np.sum(grid.times() <= spec.horizon + 1e-12 * max(1.0, spec.horizon)))
    bad = _violations_in_box(ensemble.states, spec.safe_box, num_indices)
    return _estimate_from_counts(int(bad.sum()), ensemble.num_paths, spec, confidence)


def estimate_joint_chance_monte_carlo(
    system,
    grid: TimeGrid,
    num_paths: int,
    master_seed: int,
    spec: ConstraintSpec,
    confidence: float = 0.95,
    scheme: SdeScheme = SdeScheme.EULER_MARUYAMA,
    chunk_size: int = 1000,
) -> ChanceEstimate:
    """Streaming variant for grids too fine to hold N full paths in memory.

    Integrates path chunks with their global path indices (so results match a
    monolithic run bitwise) and keeps only the violation count.
    """
    num_indices = int(np.sum(grid.times() <= spec.horizon + 1e-12 * max(1.0, spec.horizon)))
    if grid.t_end + 1e-9 < spec.horizon:
        raise HorizonMismatch("constraint horizon exceeds the grid")
    violations = 0
    for lo_idx in range(0, num_paths, chunk_size):
        count = min(chunk_size, num_paths - lo_idx)
        if system.kind is SystemKind.PARAMETRIC_ODE:
            ens = integrate_parametric(
                system, grid, count, master_seed, first_path_index=lo_idx
            )
        elif system.kind is SystemKind.ITO_SDE:
            ens = integrate_sde(
                system, grid, count, master_seed, scheme=scheme, first_path_index=lo_idx
            )
        else:
            raise DimensionMismatch("streaming estimator supports continuous kinds only")
        bad = _violations_in_box(ens.states, spec.safe_box, num_indices)
        violations += int(bad.sum())
    return _estimate_from_counts(violations, num_paths, spec, confidence)


def classify_stability(
    ensemble: PathEnsemble,
    growth_threshold: float = 0.0,
    analytic_prediction: Optional[float] = None,
    semantics: str = "",
) -> StabilityReport:
    """Empirical per-path growth rates (1/T) log |x(T) / x0|.

    Non-finite endpoints count as diverging; the threshold boundary itself is
    a measure-zero event for the catalog systems.
    """
    if ensemble.state_dim != 1:
        raise UnsupportedDimension("stability classification is scalar-only")
    x0 = ensemble.states[:, 0, 0]
    if np.any(x0 == 0.0):
        raise ZeroInitialState("growth rates undefined for x0 = 0")
    x_T = ensemble.states[:, -1, 0]
    T = ensemble.grid.t_end - ensemble.grid.t_start
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.log(np.abs(x_T / x0)) / T
    diverging = np.where(np.isfinite(x_T), rates > growth_threshold, True)
    return StabilityReport(
        semantics=semantics or ensemble.kind.value,
        empirical_growth_rates=rates,
        fraction_diverging=float(diverging.mean()),
        growth_threshold=growth_threshold,
        num_paths=ensemble.num_paths,
        analytic_prediction=analytic_prediction,
    )


@dataclass(frozen=True)
class CrossSemanticsReport:
    benchmark: str
    chance: dict  # semantics -> ChanceEstimate
    stability: dict  # semantics -> StabilityReport
    chance_verdicts_agree: bool
    num_paths: int
    dt: float
    master_seed: int

    def to_json_dict(self) -> dict:
        rows = []
        for sem, est in self.chance.items():
            rows.append(
                {
                    "benchmark": self.benchmark,
                    "semantics": sem,
                    "N": est.num_paths,
                    "dt": self.dt,
                    "point_estimate": est.point_estimate,
                    "ci": list(est.confidence_interval),
                    "delta": est.delta,
                    "verdict": est.verdict.value,
                }
            )
        stab = {
            sem: {
                "fraction_diverging": rep.fraction_diverging,
                "analytic_prediction": rep.analytic_prediction,
            }
            for sem, rep in self.stability.items()
        }
        return {
            "benchmark": self.benchmark,
            "chance": rows,
            "stability": stab,
            "chance_verdicts_agree": self.chance_verdicts_agree,
            "master_seed": self.master_seed,
        }

    def to_text_table(self) -> str:
        lines = [
            f"benchmark: {self.benchmark}   N={self.num_paths}  dt={self.dt!r}  "
            f"seed={self.master_seed}",
            f"{'semantics':<12} {'stay prob':>10} {'ci_lo':>9} {'ci_hi':>9} "
            f"{'verdict':>13} {'frac_diverging':>15}",
        ]
        for sem, est in self.chance.items():
            frac = self.stability[sem].fraction_diverging
            lines.append(
                f"{sem:<12} {est.point_estimate:>10.5f} "
                f"{est.confidence_interval[0]:>9.5f} {est.confidence_interval[1]:>9.5f} "
                f"{est.verdict.value:>13} {frac:>15.5f}"
            )
        lines.append(
            "chance verdicts "
            + ("AGREE" if self.chance_verdicts_agree else "DISAGREE")
        )
        return "\n".join(lines)


def _feedback_divergence_prob(theta_bar: float, k: float, T: float, sde: bool) -> float:
    if sde:
        # rate = (theta_bar + k - 1/2) + W(T)/T
        return float(ndtr((theta_bar + k - 0.5) * math.sqrt(T)))
    # rate sign is sign(theta + k), theta ~ N(theta_bar, 1)
    return float(1.0 - ndtr(-(k + theta_bar)))


def _scalar_drift_chance_oracle(box, horizon: float, sde: bool) -> Optional[float]:
    (lo, hi), = box
    if sde:
        if abs(lo + hi) < 1e-12:  # symmetric box: reflection series applies
            return brownian_sup_abs_cdf(hi, horizon)
        return None
    # monotone paths from 0: stay iff theta * T stays in the box
    return float(ndtr(hi / horizon) - ndtr(lo / horizon))


def cross_semantics_report(
    catalog_name: str,
    spec: ConstraintSpec,
    num_paths: int,
    num_steps: int,
    master_seed: int,
    theta_bar: float = 0.0,
    gain: Optional[float] = None,
    scheme: SdeScheme = SdeScheme.EULER_MARUYAMA,
    confidence: float = 0.95,
    growth_threshold: float = 0.0,
    workers: int = 1,
) -> CrossSemanticsReport:
    """Run both semantics with matched grid and seed; tabulate verdicts."""
    entry = catalog_lookup(catalog_name, theta_bar=theta_bar, gain=gain)
    discrete = entry.epistemic.kind is SystemKind.DISCRETE_MULTIPLICATIVE
    if discrete:
        epi = iterate_discrete(entry.epistemic, num_steps, num_paths, master_seed, workers)
        ale = iterate_discrete(entry.aleatoric, num_steps, num_paths, master_seed, workers)
        grid = epi.grid
    else:
        grid = TimeGrid(t_end=spec.horizon, num_steps=num_steps)
        epi = integrate_parametric(entry.epistemic, grid, num_paths, master_seed, workers)
        ale = integrate_sde(
            entry.aleatoric, grid, num_paths, master_seed, scheme=scheme, workers=workers
        )

    chance = {
        "parametric": estimate_joint_chance(epi, spec, confidence),
        "sde": estimate_joint_chance(ale, spec, confidence),
    }
    predictions = {"parametric": None, "sde": None}
    if catalog_name == "scalar-drift":
        predictions["parametric"] = _scalar_drift_chance_oracle(
            spec.safe_box, spec.horizon, sde=False
        )
        predictions["sde"] = _scalar_drift_chance_oracle(
            spec.safe_box, spec.horizon, sde=True
        )
    if catalog_name == "linear-feedback":
        k = float(entry.epistemic.policy.gain[0, 0])
        predictions["parametric"] = _feedback_divergence_prob(
            theta_bar, k, grid.t_end, sde=False
        )
        predictions["sde"] = _feedback_divergence_prob(theta_bar, k, grid.t_end, sde=True)

    can_rate = not np.any(epi.states[:, 0, 0] == 0.0)
    stability = {}
    for sem, ens in (("parametric", epi), ("sde", ale)):
        if can_rate:
            stability[sem] = classify_stability(
                ens,
                growth_threshold,
                analytic_prediction=predictions[sem]
                if catalog_name == "linear-feedback"
                else None,
                semantics=sem,
            )
        else:
            stability[sem] = StabilityReport(
                semantics=sem,
                empirical_growth_rates=np.array([]),
                fraction_diverging=float("nan"),
                growth_threshold=growth_threshold,
                num_paths=num_paths,
            )
    return CrossSemanticsReport(
        benchmark=catalog_name,
        chance=chance,
        stability=stability,
        chance_verdicts_agree=(
            chance["parametric"].verdict is chance["sde"].verdict
        ),
        num_paths=num_paths,
        dt=grid.dt,
        master_seed=master_seed,
    )
