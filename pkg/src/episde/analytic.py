"""Closed-form oracles for the solvable benchmark processes.

These are the ground truth that every simulated statistic is tested against:
marginal laws of the pure-drift pair, pathwise and log-domain laws of the
linear-feedback pair, discrete-time moment recursions, and the reflection
series for the running maximum of Brownian motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DimensionMismatch, UndefinedLaw

__all__ = [
    "GaussianLaw",
    "SignedLogNormalLaw",
    "norm_cdf",
    "norm_quantile",
    "gaussian_moment",
    "oracle_scalar_drift_parametric",
    "oracle_scalar_drift_sde",
    "oracle_feedback_parametric",
    "oracle_feedback_sde",
    "oracle_discrete_moments",
    "confidence_band",
    "stay_prob_scalar_drift_parametric",
    "brownian_sup_abs_cdf",
]


def norm_cdf(x):
    """Standard normal CDF (vectorized)."""
    return ndtr(x)


# Wichura's rational approximation for the standard normal quantile,
# |error| < 1e-9 over (0, 1); verified against the erf identity in tests.
_A = (
    3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
    1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
    3.3430575583588128105e4, 2.5090809287301226727e3,
)
_B = (
    1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
    2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
    5.2264952788528545610e3,
)
_C = (
    1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
    3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
    2.27238449892691845833e-2, 7.74545014278341407640e-4,
)
_D = (
    1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
    1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
    1.05075007164441684324e-9,
)
_E = (
    6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
    2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
    2.71155556874348757815e-5, 2.01033439929228813265e-7,
)
_F = (
    1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
    7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
    2.04426310338993978564e-15,
)


def _poly(coeffs, r):
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * r + c
    return acc


def norm_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < p < 1.0:
        if p == 0.0:
            return -math.inf
        if p == 1.0:
            return math.inf
        raise ValueError("p must lie in [0, 1]")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        val = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        val = _poly(_E, r) / _poly(_F, r)
    return -val if q < 0 else val


@dataclass(frozen=True)
class GaussianLaw:
    """Marginal law N(mean, variance) at a fixed time."""

    mean: float
    variance: float
    time: float = 0.0

    def __post_init__(self):
        if self.variance < 0:
            raise DimensionMismatch("Gaussian variance must be >= 0")

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.variance == 0.0:
            return (x >= self.mean).astype(np.float64)
        return ndtr((x - self.mean) / math.sqrt(self.variance))


@dataclass(frozen=True)
class SignedLogNormalLaw:
    """Law of sign * scale_factor * exp(Z) with Z ~ N(location, scale^2).

    This is the sign-preserving log-domain law of the linear-feedback
    solutions; quantile bands are computed in the log domain and then
    exponentiated.
    """

    location: float
    scale: float
    sign: float
    scale_factor: float

    def __post_init__(self):
        if self.scale < 0:
            raise DimensionMismatch("log-domain scale must be >= 0")
        if self.scale_factor <= 0 or self.sign not in (-1.0, 1.0):
            raise DimensionMismatch("scale_factor must be > 0 and sign in {-1, +1}")

    def cdf(self, x):
        arr = np.asarray(x, dtype=np.float64)
        scalar = arr.ndim == 0
        xv = np.atleast_1d(arr)
        if self.scale == 0.0:
            point = self.sign * self.scale_factor * math.exp(self.location)
            out = (xv >= point).astype(np.float64)
        elif self.sign > 0:
            out = np.zeros_like(xv)
            pos = xv > 0
            out[pos] = ndtr(
                (np.log(xv[pos] / self.scale_factor) - self.location) / self.scale
            )
        else:
            # X = -Y with Y a positive lognormal: P(X <= x) = P(Y >= -x)
            out = np.ones_like(xv)
            neg = xv < 0
            out[neg] = 1.0 - ndtr(
                (np.log(-xv[neg] / self.scale_factor) - self.location) / self.scale
            )
        return float(out[0]) if scalar else out


def oracle_scalar_drift_parametric(t: float, theta: float | None = None):
    """Pure-drift epistemic solution: x(t) = theta * t, marginally N(0, t^2)."""
    if t < 0:
        raise DimensionMismatch("t must be >= 0")
    if theta is not None:
        return theta * t
    return GaussianLaw(mean=0.0, variance=t * t, time=t)


def oracle_scalar_drift_sde(t: float) -> GaussianLaw:
    """Brownian reformulation: x(t) = W(t) ~ N(0, t)."""
    if t < 0:
        raise DimensionMismatch("t must be >= 0")
    return GaussianLaw(mean=0.0, variance=t, time=t)


def oracle_feedback_parametric(
    t: float, x0: float, theta_bar: float, k: float, theta: float | None = None
):
    """Closed-loop epistemic solution x0 * exp((theta + k) t).

    Without ``theta``: the sign-preserving log-domain law with
    log(x/x0) ~ N((theta_bar + k) t, t^2).
    """
    if t < 0:
        raise DimensionMismatch("t must be >= 0")
    if theta is not None:
        return x0 * math.exp((theta + k) * t)
    if x0 == 0.0:
        raise UndefinedLaw("log-domain law undefined for x0 = 0")
    return SignedLogNormalLaw(
        location=(theta_bar + k) * t,
        scale=float(t),
        sign=math.copysign(1.0, x0),
        scale_factor=abs(x0),
    )


def oracle_feedback_sde(
    t: float, x0: float, theta_bar: float, k: float, brownian_value: float | None = None
):
    """Geometric Brownian motion x0 * exp((theta_bar + k - 1/2) t + W(t)).

    Without ``brownian_value``: log(x/x0) ~ N((theta_bar + k - 1/2) t, t).
    """
    if t < 0:
        raise DimensionMismatch("t must be >= 0")
    if brownian_value is not None:
        return x0 * math.exp((theta_bar + k - 0.5) * t + brownian_value)
    if x0 == 0.0:
        raise UndefinedLaw("log-domain law undefined for x0 = 0")
    return SignedLogNormalLaw(
        location=(theta_bar + k - 0.5) * t,
        scale=math.sqrt(t),
        sign=math.copysign(1.0, x0),
        scale_factor=abs(x0),
    )


def gaussian_moment(order: int, theta_bar: float) -> float:
    """E[theta^r] for theta ~ N(theta_bar, 1) via m_r = tb m_{r-1} + (r-1) m_{r-2}."""
    if order < 0:
        raise DimensionMismatch("order must be >= 0")
    m_prev, m = 1.0, theta_bar  # m_0, m_1
    if order == 0:
        return m_prev
    for r in range(2, order + 1):
        m_prev, m = m, theta_bar * m + (r - 1) * m_prev
    return m


def oracle_discrete_moments(kind: str, theta_bar: float, x0: float, t: int):
    """Exact (mean, variance) of x_t for the discrete pair with unit noise.

    ``kind`` is "multiplicative" (x_{t+1} = theta x_t, theta ~ N(tb, 1) drawn
    once) or "additive" (x_{t+1} = tb x_t + w_t, w_t i.i.d. N(0, 1)).
    """
    if t < 0:
        raise DimensionMismatch("t must be >= 0")
    if kind == "multiplicative":
        m_t = gaussian_moment(t, theta_bar)
        m_2t = gaussian_moment(2 * t, theta_bar)
        return x0 * m_t, x0 * x0 * (m_2t - m_t * m_t)
    if kind == "additive":
        mean = theta_bar**t * x0
        var = sum(theta_bar ** (2 * i) for i in range(t))
        return mean, float(var)
    raise DimensionMismatch("kind must be 'multiplicative' or 'additive'")


def confidence_band(law, level: float):
    """Equal-tailed interval of the law at the given coverage level."""
    if not 0.0 < level < 1.0:
        raise DimensionMismatch("level must be in (0, 1)")
    z = norm_quantile((1.0 + level) / 2.0)
    if isinstance(law, GaussianLaw):
        half = z * math.sqrt(law.variance)
        return law.mean - half, law.mean + half
    if isinstance(law, SignedLogNormalLaw):
        lo = law.sign * law.scale_factor * math.exp(law.location - z * law.scale)
        hi = law.sign * law.scale_factor * math.exp(law.location + z * law.scale)
        return (hi, lo) if law.sign < 0 else (lo, hi)
    raise DimensionMismatch(f"unsupported law type {type(law).__name__}")


def stay_prob_scalar_drift_parametric(level: float, horizon: float) -> float:
    """P(|x(t)| <= level for all t <= T) for x(t) = theta t, theta ~ N(0,1).

    Paths are monotone, so the sup is |theta| T and the joint probability is
    2 Phi(level / T) - 1.
    """
    return float(2.0 * ndtr(level / horizon) - 1.0)


def brownian_sup_abs_cdf(level: float, horizon: float, terms: int = 10) -> float:
    """P(sup_{[0,T]} |W(t)| <= level), truncated reflection series."""
    if level <= 0:
        return 0.0
    rt = math.sqrt(horizon)
    # need (2K+1) level / sqrt(T) deep into the Gaussian tail for convergence
    terms = max(terms, int(5.0 * rt / level) + 10)
    total = 0.0
    for k in range(-terms, terms + 1):
        total += (-1) ** k * (
            ndtr((2 * k + 1) * level / rt) - ndtr((2 * k - 1) * level / rt)
        )
    return float(total)
