"""Model catalog: Gaussian parameter priors, basis functions, feedback
policies, and the four benchmark systems with their aleatoric twins.

The epistemic model is ``xdot = phi(x, u) theta + G u`` with ``theta`` drawn
once per trajectory from ``N(theta_bar, Sigma)``.  Its (non-equivalent)
aleatoric twin replaces ``theta dt`` by ``theta_bar dt + B dW(t)`` where
``B B^T = Sigma``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite, UnknownBenchmark

__all__ = [
    "ParameterPrior",
    "BasisFunction",
    "FeedbackPolicy",
    "SystemKind",
    "SystemSpec",
    "BenchmarkCatalogEntry",
    "make_prior",
    "sample_parameters",
    "catalog_lookup",
    "catalog_names",
    "weight_space_gp_draw",
    "system_spec_to_json",
    "system_spec_from_json",
]

_CHOLESKY_RTOL = 1e-10


@dataclass(frozen=True)
class ParameterPrior:
    """Gaussian belief over the unknown parameter vector.

    ``cholesky_factor`` satisfies ``L L^T = covariance`` up to a 1e-10
    relative max-norm tolerance; construction goes through :func:`make_prior`.
    """

    mean: np.ndarray
    covariance: np.ndarray
    cholesky_factor: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def __post_init__(self):
        self.mean.setflags(write=False)
        self.covariance.setflags(write=False)
        self.cholesky_factor.setflags(write=False)


def make_prior(
    mean: Sequence[float] | np.ndarray,
    covariance: Sequence[Sequence[float]] | np.ndarray,
    allow_semidefinite: bool = False,
) -> ParameterPrior:
    """Build a :class:`ParameterPrior`, factorizing the covariance.

    The covariance is symmetrized as ``(S + S^T) / 2`` before factorization;
    inputs asymmetric beyond 1e-12 relative tolerance are rejected.  With
    ``allow_semidefinite`` a positive *semi*-definite matrix is accepted and
    factorized by eigendecomposition (needed for the zero-uncertainty limit);
    the default path is a plain Cholesky with explicit failure, no jitter.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(covariance, dtype=np.float64))
    p = mean.shape[0]
    if mean.ndim != 1 or p < 1:
        raise DimensionMismatch("mean must be a vector of length p >= 1")
    if cov.shape != (p, p):
        raise DimensionMismatch(
            f"covariance shape {cov.shape} incompatible with mean length {p}"
        )
    scale = np.max(np.abs(cov)) if cov.size else 0.0
    if scale > 0 and np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
        raise DimensionMismatch("covariance is not symmetric within 1e-12")
    cov = (cov + cov.T) / 2.0

    if allow_semidefinite:
        evals, evecs = np.linalg.eigh(cov)
        if np.any(evals < -1e-12 * max(scale, 1.0)):
            raise NotPositiveDefinite("covariance has a negative eigenvalue")
        factor = evecs * np.sqrt(np.clip(evals, 0.0, None))
    else:
        try:
            factor = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(
                "covariance is not positive definite (Cholesky pivot <= 0)"
            ) from exc
    return ParameterPrior(mean=mean, covariance=cov, cholesky_factor=factor)


def sample_parameters(prior: ParameterPrior, rng: np.random.Generator) -> np.ndarray:
    """One parameter draw ``theta = mean + L z`` with ``z ~ N(0, I)``."""
    z = rng.standard_normal(prior.dim)
    return prior.mean + prior.cholesky_factor @ z


class BasisTag(str, enum.Enum):
    CONSTANT = "constant"
    LINEAR_STATE = "linear_state"
    CUSTOM = "custom"


@dataclass(frozen=True)
class BasisFunction:
    """Feature map ``phi(x, u)`` returning an (n, p) matrix per point.

    ``evaluate`` is batched: inputs of shape (..., n) and (..., m) give
    (..., n, p).  ``diffusion_gradient``, when present, returns
    ``d phi / d x`` for scalar (n = p = 1) systems and enables Milstein.
    """

    tag: BasisTag
    state_dim: int
    param_dim: int
    _fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    diffusion_gradient: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def evaluate(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self._fn(np.asarray(x, dtype=np.float64), np.asarray(u, dtype=np.float64))

    def __call__(self, x, u):
        return self.evaluate(x, u)


def constant_basis() -> BasisFunction:
    """phi(x, u) = [1]; the scalar pure-drift model ``xdot = theta``."""

    def fn(x, u):
        return np.ones(x.shape[:-1] + (1, 1), dtype=np.float64)

    def grad(x, u):
        return np.zeros(x.shape[:-1] + (1, 1), dtype=np.float64)

    return BasisFunction(BasisTag.CONSTANT, 1, 1, fn, grad)


def linear_state_basis() -> BasisFunction:
    """phi(x, u) = [x]; the scalar multiplicative model ``xdot = theta x``."""

    def fn(x, u):
        return x[..., :, np.newaxis].copy()

    def grad(x, u):
        return np.ones(x.shape[:-1] + (1, 1), dtype=np.float64)

    return BasisFunction(BasisTag.LINEAR_STATE, 1, 1, fn, grad)


def custom_basis(
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    state_dim: int,
    param_dim: int,
    diffusion_gradient=None,
) -> BasisFunction:
    """Wrap a host-provided single-point callable ``(x, u) -> (n, p)``."""

    def batched(x, u):
        if x.ndim == 1:
            return np.asarray(fn(x, u), dtype=np.float64)
        flat_x = x.reshape(-1, x.shape[-1])
        flat_u = u.reshape(-1, u.shape[-1])
        out = np.stack(
            [np.asarray(fn(xi, ui), dtype=np.float64) for xi, ui in zip(flat_x, flat_u)]
        )
        return out.reshape(x.shape[:-1] + (state_dim, param_dim))

    return BasisFunction(BasisTag.CUSTOM, state_dim, param_dim, batched, diffusion_gradient)


class PolicyTag(str, enum.Enum):
    ZERO = "zero"
    LINEAR_GAIN = "linear_gain"


@dataclass(frozen=True)
class FeedbackPolicy:
    """State-feedback law u = pi(x): either zero or a linear gain ``K x``."""

    tag: PolicyTag
    input_dim: int
    gain: Optional[np.ndarray] = None  # (m, n) for LINEAR_GAIN

    @staticmethod
    def zero(input_dim: int = 1) -> "FeedbackPolicy":
        return FeedbackPolicy(PolicyTag.ZERO, input_dim)

    @staticmethod
    def linear(gain) -> "FeedbackPolicy":
        gain = np.atleast_2d(np.asarray(gain, dtype=np.float64))
        gain.setflags(write=False)
        return FeedbackPolicy(PolicyTag.LINEAR_GAIN, gain.shape[0], gain)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.tag is PolicyTag.ZERO:
            return np.zeros(x.shape[:-1] + (self.input_dim,), dtype=np.float64)
        return x @ self.gain.T


class SystemKind(str, enum.Enum):
    PARAMETRIC_ODE = "parametric_ode"
    ITO_SDE = "ito_sde"
    DISCRETE_MULTIPLICATIVE = "discrete_multiplicative"
    DISCRETE_ADDITIVE = "discrete_additive"


@dataclass(frozen=True)
class SystemSpec:
    """Tagged dynamical model.

    Continuous kinds evolve ``xdot = phi(x, u) theta + G u`` (parametric) or
    ``dx = (phi theta_bar + G u) dt + phi L dW`` (Ito).  ``input_matrix`` G is
    the known additive control channel; it is zero when the model has no
    direct input term.
    """

    kind: SystemKind
    basis: BasisFunction
    prior: ParameterPrior
    policy: FeedbackPolicy
    initial_state: np.ndarray
    state_dim: int
    input_dim: int
    param_dim: int
    input_matrix: np.ndarray = None  # (n, m)

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.initial_state, dtype=np.float64))
        object.__setattr__(self, "initial_state", x0)
        if x0.shape != (self.state_dim,):
            raise DimensionMismatch("initial_state length differs from state_dim")
        if self.prior.dim != self.param_dim:
            raise DimensionMismatch("prior dimension differs from param_dim")
        G = self.input_matrix
        G = np.zeros((self.state_dim, self.input_dim)) if G is None else np.atleast_2d(
            np.asarray(G, dtype=np.float64)
        )
        if G.shape != (self.state_dim, self.input_dim):
            raise DimensionMismatch("input_matrix must be (state_dim, input_dim)")
        G.setflags(write=False)
        x0.setflags(write=False)
        object.__setattr__(self, "input_matrix", G)
        u0 = self.policy(x0)
        if u0.shape != (self.input_dim,):
            raise DimensionMismatch("policy output length differs from input_dim")
        phi0 = self.basis.evaluate(x0, u0)
        if phi0.shape != (self.state_dim, self.param_dim):
            raise DimensionMismatch(
                f"basis output shape {phi0.shape} != (n, p) = "
                f"({self.state_dim}, {self.param_dim})"
            )

    def with_kind(self, kind: SystemKind) -> "SystemSpec":
        return SystemSpec(
            kind=kind,
            basis=self.basis,
            prior=self.prior,
            policy=self.policy,
            initial_state=self.initial_state,
            state_dim=self.state_dim,
            input_dim=self.input_dim,
            param_dim=self.param_dim,
            input_matrix=self.input_matrix,
        )


@dataclass(frozen=True)
class BenchmarkCatalogEntry:
    name: str
    epistemic: SystemSpec  # parameter drawn once per path
    aleatoric: SystemSpec  # Brownian / i.i.d.-disturbance twin
    analytic_oracle_id: Optional[str]

    @property
    def system_pair(self):
        return (self.epistemic, self.aleatoric)


def _scalar_drift_entry() -> BenchmarkCatalogEntry:
    prior = make_prior([0.0], [[1.0]])
    base = SystemSpec(
        kind=SystemKind.PARAMETRIC_ODE,
        basis=constant_basis(),
        prior=prior,
        policy=FeedbackPolicy.zero(1),
        initial_state=[0.0],
        state_dim=1,
        input_dim=1,
        param_dim=1,
    )
    return BenchmarkCatalogEntry(
        "scalar-drift", base, base.with_kind(SystemKind.ITO_SDE), "scalar-drift"
    )


def _linear_feedback_entry(theta_bar: float, gain: Optional[float]) -> BenchmarkCatalogEntry:
    k = -(theta_bar + 1.0) if gain is None else float(gain)
    prior = make_prior([theta_bar], [[1.0]])
    base = SystemSpec(
        kind=SystemKind.PARAMETRIC_ODE,
        basis=linear_state_basis(),
        prior=prior,
        policy=FeedbackPolicy.linear([[k]]),
        initial_state=[1.0],
        state_dim=1,
        input_dim=1,
        param_dim=1,
        input_matrix=[[1.0]],
    )
    return BenchmarkCatalogEntry(
        "linear-feedback", base, base.with_kind(SystemKind.ITO_SDE), "linear-feedback"
    )


def _discrete_entry(name: str, theta_bar: float, x0: float) -> BenchmarkCatalogEntry:
    prior = make_prior([theta_bar], [[1.0]])
    mult = SystemSpec(
        kind=SystemKind.DISCRETE_MULTIPLICATIVE,
        basis=linear_state_basis(),
        prior=prior,
        policy=FeedbackPolicy.zero(1),
        initial_state=[x0],
        state_dim=1,
        input_dim=1,
        param_dim=1,
    )
    add = mult.with_kind(SystemKind.DISCRETE_ADDITIVE)
    return BenchmarkCatalogEntry(name, mult, add, "discrete")


_CATALOG_NAMES = ("scalar-drift", "linear-feedback", "dt-multiplicative", "dt-additive")


def catalog_names() -> tuple:
    return _CATALOG_NAMES


def catalog_lookup(
    name: str,
    theta_bar: float = 0.0,
    gain: Optional[float] = None,
    x0: Optional[float] = None,
) -> BenchmarkCatalogEntry:
    """Fetch one of the four named benchmarks.

    ``theta_bar`` shifts the prior mean where the benchmark leaves it free
    (linear-feedback and the discrete pair); the linear-feedback gain
    defaults to ``-(theta_bar + 1)``.
    """
    if name == "scalar-drift":
        return _scalar_drift_entry()
    if name == "linear-feedback":
        return _linear_feedback_entry(theta_bar, gain)
    if name in ("dt-multiplicative", "dt-additive"):
        return _discrete_entry(name, theta_bar, 1.0 if x0 is None else x0)
    raise UnknownBenchmark(f"unknown benchmark {name!r}; choose from {_CATALOG_NAMES}")


def weight_space_gp_draw(
    basis: BasisFunction,
    prior: ParameterPrior,
    probe_points: Sequence[tuple],
    rng: np.random.Generator,
) -> list:
    """Draw theta once and evaluate ``f(x, u) = phi(x, u) theta`` at each probe.

    Across repeated draws the values have mean ``phi theta_bar`` and
    cross-covariance ``phi(x_i, u_i) Sigma phi(x_j, u_j)^T``.
    """
    if len(probe_points) == 0:
        raise DimensionMismatch("probe_points must be non-empty")
    theta = sample_parameters(prior, rng)
    out = []
    for x, u in probe_points:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        phi = basis.evaluate(x, u)
        if phi.shape[-1] != prior.dim:
            raise DimensionMismatch("basis param dimension differs from prior")
        out.append(phi @ theta)
    return out


# --- JSON round trip -------------------------------------------------------

def system_spec_to_json(spec: SystemSpec) -> str:
    if spec.basis.tag is BasisTag.CUSTOM:
        raise DimensionMismatch("custom basis functions are not serializable")
    doc = {
        "kind": spec.kind.value,
        "basis": spec.basis.tag.value,
        "prior": {
            "mean": spec.prior.mean.tolist(),
            "covariance": spec.prior.covariance.tolist(),
        },
        "policy": {"type": spec.policy.tag.value},
        "initial_state": spec.initial_state.tolist(),
        "dims": {
            "state": spec.state_dim,
            "input": spec.input_dim,
            "param": spec.param_dim,
        },
        "input_matrix": spec.input_matrix.tolist(),
    }
    if spec.policy.tag is PolicyTag.LINEAR_GAIN:
        doc["policy"]["gain"] = spec.policy.gain.tolist()
    return json.dumps(doc, indent=2)


def system_spec_from_json(text: str) -> SystemSpec:
    doc = json.loads(text)
    basis = {
        BasisTag.CONSTANT.value: constant_basis,
        BasisTag.LINEAR_STATE.value: linear_state_basis,
    }[doc["basis"]]()
    pol = doc["policy"]
    if pol["type"] == PolicyTag.ZERO.value:
        policy = FeedbackPolicy.zero(doc["dims"]["input"])
    else:
        policy = FeedbackPolicy.linear(pol["gain"])
    prior = make_prior(doc["prior"]["mean"], doc["prior"]["covariance"])
    return SystemSpec(
        kind=SystemKind(doc["kind"]),
        basis=basis,
        prior=prior,
        policy=policy,
        initial_state=doc["initial_state"],
        state_dim=doc["dims"]["state"],
        input_dim=doc["dims"]["input"],
        param_dim=doc["dims"]["param"],
        input_matrix=doc.get("input_matrix"),
    )
