"""Path-ensemble generation on a shared uniform time grid.

Each path owns a counter-based random stream derived purely from
``(master_seed, path_index)``, so ensembles are bitwise-reproducible for any
worker count.  The parametric semantics draws the parameter vector once per
path and integrates the resulting ODE with fixed-step RK4; the SDE semantics
integrates the Ito reformulation with Euler-Maruyama or Milstein; discrete
kinds iterate the multiplicative / additive maps.
"""

from __future__ import annotations

import enum
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    HorizonMismatch,
    MilsteinUnavailable,
    NonFiniteState,
    UnsupportedDimension,
)
from .systems import SystemKind, SystemSpec

__all__ = [
    "TimeGrid",
    "PathEnsemble",
    "SdeScheme",
    "derive_path_stream",
    "integrate_parametric",
    "integrate_parametric_given_parameters",
    "integrate_sde",
    "integrate_sde_given_increments",
    "iterate_discrete",
]

_MAGIC = b"EPISDE\x01\x00"
_VERSION = 1
_KIND_INDEX = {k: i for i, k in enumerate(SystemKind)}
_KIND_FROM_INDEX = {i: k for k, i in _KIND_INDEX.items()}

# Keeps transient per-chunk buffers (states + Brownian increments) bounded.
_MAX_CHUNK = 25_000


class SdeScheme(enum.Enum):
    EULER_MARUYAMA = "euler-maruyama"
    MILSTEIN = "milstein"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i * dt on [t_start, t_end]."""

    t_end: float
    num_steps: int
    t_start: float = 0.0

    def __post_init__(self):
        if self.num_steps < 1:
            raise DimensionMismatch("num_steps must be >= 1")
        if not self.t_end > self.t_start:
            raise DimensionMismatch("t_end must exceed t_start")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.num_steps

    def times(self) -> np.ndarray:
        # i * dt, not a running sum: keeps t_N = t_end within 1 ulp accumulation.
        return self.t_start + np.arange(self.num_steps + 1) * self.dt

    def index_at(self, t: float) -> int:
        """Nearest grid index for time t; raises if t is off-grid."""
        i = int(round((t - self.t_start) / self.dt))
        if i < 0 or i > self.num_steps or abs(self.t_start + i * self.dt - t) > 1e-9 * max(
            1.0, abs(t)
        ):
            raise HorizonMismatch(f"time {t} is not on the grid")
        return i


@dataclass
class PathEnsemble:
    """N sample paths with per-path seed provenance.

    ``states`` has shape (N, num_steps + 1, n).  ``sampled_parameters`` is the
    (N, p) array of per-path parameter draws for the parametric and
    multiplicative kinds, else None.  ``first_nonfinite[j]`` is the first time
    index at which path j left the finite range, or -1.
    """

    grid: TimeGrid
    states: np.ndarray
    sampled_parameters: Optional[np.ndarray]
    master_seed: int
    kind: SystemKind
    first_nonfinite: np.ndarray

    @property
    def num_paths(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    @property
    def divergent_paths(self) -> np.ndarray:
        return np.nonzero(self.first_nonfinite >= 0)[0]

    def to_binary(self, path) -> None:
        n_paths, n_times, n = self.states.shape
        header = _MAGIC + struct.pack("<II", _VERSION, 0)
        assert len(header) == 16
        meta = struct.pack(
            "<QQQQddII",
            self.master_seed % 2**64,
            n_paths,
            n_times,
            n,
            self.grid.t_start,
            self.grid.t_end,
            _KIND_INDEX[self.kind],
            0,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(meta)
            fh.write(np.ascontiguousarray(self.states, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "PathEnsemble":
        with open(path, "rb") as fh:
            header = fh.read(16)
            if header[:8] != _MAGIC:
                raise ValueError("not an episde ensemble file")
            meta = fh.read(struct.calcsize("<QQQQddII"))
            seed, n_paths, n_times, n, t0, t1, kind_i, _ = struct.unpack("<QQQQddII", meta)
            payload = np.frombuffer(fh.read(), dtype="<f8").reshape(n_paths, n_times, n)
        states = payload.astype(np.float64)
        grid = TimeGrid(t_end=t1, num_steps=n_times - 1, t_start=t0)
        return cls(
            grid=grid,
            states=states,
            sampled_parameters=None,
            master_seed=seed,
            kind=_KIND_FROM_INDEX[kind_i],
            first_nonfinite=_first_nonfinite(states),
        )

    def to_csv(self, path) -> None:
        """Long-form CSV `path_id,t,dim,x` (shortest round-trip floats)."""
        times = self.grid.times()
        with open(path, "w", newline="") as fh:
            fh.write("path_id,t,dim,x\n")
            for j in range(self.num_paths):
                for i, t in enumerate(times):
                    for d in range(self.state_dim):
                        fh.write(f"{j},{float(t)!r},{d},{float(self.states[j, i, d])!r}\n")


def derive_path_stream(master_seed: int, path_index: int) -> np.random.Generator:
    """Pure, platform-stable stream for one path (counter-based Philox)."""
    key = np.array([master_seed % 2**64, path_index % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _first_nonfinite(states: np.ndarray) -> np.ndarray:
    finite = np.isfinite(states).all(axis=2)
    bad = ~finite
    first = np.where(bad.any(axis=1), bad.argmax(axis=1), -1)
    return first.astype(np.int64)


def _drift(spec: SystemSpec, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Closed-loop drift phi(x, pi(x)) theta + G pi(x) for a path batch."""
    u = spec.policy(x)
    phi = spec.basis.evaluate(x, u)
    return np.einsum("knp,kp->kn", phi, theta) + u @ spec.input_matrix.T


def _flag_nonfinite(x, step_index, first_bad):
    fresh = ~np.isfinite(x).all(axis=1) & (first_bad < 0)
    if fresh.any():
        first_bad[fresh] = step_index
    return first_bad


def _chunks(num_paths: int, workers: int):
    per = max(1, min(_MAX_CHUNK, -(-num_paths // max(1, workers))))
    return [(lo, min(lo + per, num_paths)) for lo in range(0, num_paths, per)]


def _run_chunked(fn, num_paths, workers):
    spans = _chunks(num_paths, workers)
    if workers <= 1 or len(spans) == 1:
        for span in spans:
            fn(span)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fn, spans))


def integrate_parametric(
    spec: SystemSpec,
    grid: TimeGrid,
    num_paths: int,
    master_seed: int,
    workers: int = 1,
    first_path_index: int = 0,
) -> PathEnsemble:
    """Sample theta once per path and integrate the ODE with fixed-step RK4."""
    if spec.kind is not SystemKind.PARAMETRIC_ODE:
        raise DimensionMismatch("spec kind must be ParametricOde")
    if num_paths < 1:
        raise DimensionMismatch("num_paths must be >= 1")
    p = spec.param_dim
    thetas = np.empty((num_paths, p))
    for j in range(num_paths):
        rng = derive_path_stream(master_seed, first_path_index + j)
        z = rng.standard_normal(p)
        thetas[j] = spec.prior.mean + spec.prior.cholesky_factor @ z
    ens = integrate_parametric_given_parameters(spec, grid, thetas, workers=workers)
    ens.master_seed = master_seed
    return ens


def integrate_parametric_given_parameters(
    spec: SystemSpec,
    grid: TimeGrid,
    thetas: np.ndarray,
    workers: int = 1,
) -> PathEnsemble:
    """RK4 with caller-supplied per-path parameters (re-integration path)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    if thetas.shape[1] != spec.param_dim:
        raise DimensionMismatch("thetas second dimension must equal param_dim")
    num_paths = thetas.shape[0]
    n = spec.state_dim
    states = np.empty((num_paths, grid.num_steps + 1, n))
    first_bad = np.full(num_paths, -1, dtype=np.int64)
    dt = grid.dt

    def task(span):
        lo, hi = span
        th = thetas[lo:hi]
        x = np.broadcast_to(spec.initial_state, (hi - lo, n)).copy()
        states[lo:hi, 0] = x
        bad = np.full(hi - lo, -1, dtype=np.int64)
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(grid.num_steps):
                k1 = _drift(spec, x, th)
                k2 = _drift(spec, x + 0.5 * dt * k1, th)
                k3 = _drift(spec, x + 0.5 * dt * k2, th)
                k4 = _drift(spec, x + dt * k3, th)
                x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                states[lo:hi, i + 1] = x
                bad = _flag_nonfinite(x, i + 1, bad)
        first_bad[lo:hi] = bad

    _run_chunked(task, num_paths, workers)
    return PathEnsemble(
        grid=grid,
        states=states,
        sampled_parameters=thetas,
        master_seed=0,
        kind=SystemKind.PARAMETRIC_ODE,
        first_nonfinite=first_bad,
    )


def _kahan_step(x, comp, inc):
    """One compensated accumulation step; returns updated (x, comp)."""
    y = inc - comp
    t = x + y
    comp = (t - x) - y
    return t, comp


def _em_chunk(spec, grid, dW, states, first_bad, lo, hi, scheme):
    """Advance paths lo:hi given their Brownian increments (K, steps, p)."""
    n, p = spec.state_dim, spec.param_dim
    L = spec.prior.cholesky_factor
    theta_bar = spec.prior.mean
    dt = grid.dt
    milstein = scheme is SdeScheme.MILSTEIN
    if milstein:
        if spec.basis.diffusion_gradient is None:
            raise MilsteinUnavailable(
                "Milstein needs a diffusion-gradient provider on the basis"
            )
        if n != 1 or p != 1:
            raise MilsteinUnavailable("Milstein correction implemented for n = p = 1")
        Lsq = float(L[0, 0]) ** 2
    x = np.broadcast_to(spec.initial_state, (hi - lo, n)).copy()
    comp = np.zeros_like(x)
    states[lo:hi, 0] = x
    bad = np.full(hi - lo, -1, dtype=np.int64)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.num_steps):
            u = spec.policy(x)
            phi = spec.basis.evaluate(x, u)
            drift = phi @ theta_bar + u @ spec.input_matrix.T
            dwi = dW[:, i, :]
            diff = np.einsum("knp,pq,kq->kn", phi, L, dwi)
            inc = drift * dt + diff
            if milstein:
                dphi = spec.basis.diffusion_gradient(x, u)[:, 0, 0]
                b_bprime = phi[:, 0, 0] * dphi * Lsq
                inc = inc + (0.5 * b_bprime * (dwi[:, 0] ** 2 - dt))[:, np.newaxis]
            x, comp = _kahan_step(x, comp, inc)
            states[lo:hi, i + 1] = x
            bad = _flag_nonfinite(x, i + 1, bad)
    first_bad[lo:hi] = bad


def integrate_sde(
    spec: SystemSpec,
    grid: TimeGrid,
    num_paths: int,
    master_seed: int,
    scheme: SdeScheme = SdeScheme.EULER_MARUYAMA,
    workers: int = 1,
    first_path_index: int = 0,
) -> PathEnsemble:
    """Integrate the Ito SDE dx = (phi theta_bar + G u) dt + phi L dW."""
    if spec.kind is not SystemKind.ITO_SDE:
        raise DimensionMismatch("spec kind must be ItoSde")
    if num_paths < 1:
        raise DimensionMismatch("num_paths must be >= 1")
    n, p = spec.state_dim, spec.param_dim
    states = np.empty((num_paths, grid.num_steps + 1, n))
    first_bad = np.full(num_paths, -1, dtype=np.int64)
    sqrt_dt = np.sqrt(grid.dt)

    def task(span):
        lo, hi = span
        dW = np.empty((hi - lo, grid.num_steps, p))
        for j in range(lo, hi):
            rng = derive_path_stream(master_seed, first_path_index + j)
            dW[j - lo] = rng.standard_normal((grid.num_steps, p)) * sqrt_dt
        _em_chunk(spec, grid, dW, states, first_bad, lo, hi, scheme)

    _run_chunked(task, num_paths, workers)
    return PathEnsemble(
        grid=grid,
        states=states,
        sampled_parameters=None,
        master_seed=master_seed,
        kind=SystemKind.ITO_SDE,
        first_nonfinite=first_bad,
    )


def integrate_sde_given_increments(
    spec: SystemSpec,
    grid: TimeGrid,
    increments: np.ndarray,
    scheme: SdeScheme = SdeScheme.EULER_MARUYAMA,
) -> PathEnsemble:
    """Same scheme driven by caller-supplied Brownian increments (N, steps, p).

    Used for strong-convergence studies where grids at several resolutions
    must share one underlying Brownian path.
    """
    increments = np.asarray(increments, dtype=np.float64)
    if increments.shape[1:] != (grid.num_steps, spec.param_dim):
        raise DimensionMismatch("increments must have shape (N, num_steps, p)")
    num_paths = increments.shape[0]
    states = np.empty((num_paths, grid.num_steps + 1, spec.state_dim))
    first_bad = np.full(num_paths, -1, dtype=np.int64)
    _em_chunk(spec, grid, increments, states, first_bad, 0, num_paths, scheme)
    return PathEnsemble(
        grid=grid,
        states=states,
        sampled_parameters=None,
        master_seed=0,
        kind=SystemKind.ITO_SDE,
        first_nonfinite=first_bad,
    )


def iterate_discrete(
    spec: SystemSpec,
    num_steps: int,
    num_paths: int,
    master_seed: int,
    workers: int = 1,
    first_path_index: int = 0,
) -> PathEnsemble:
    """Iterate x_{t+1} = theta x_t (multiplicative, theta drawn once per path)
    or x_{t+1} = theta_bar x_t + w_t with i.i.d. w_t (additive)."""
    if spec.kind not in (SystemKind.DISCRETE_MULTIPLICATIVE, SystemKind.DISCRETE_ADDITIVE):
        raise DimensionMismatch("spec kind must be a discrete kind")
    if spec.state_dim != 1 or spec.param_dim != 1:
        raise UnsupportedDimension("discrete iteration is scalar-only (n = p = 1)")
    multiplicative = spec.kind is SystemKind.DISCRETE_MULTIPLICATIVE
    grid = TimeGrid(t_end=float(num_steps), num_steps=num_steps)
    states = np.empty((num_paths, num_steps + 1, 1))
    thetas = np.empty((num_paths, 1)) if multiplicative else None
    first_bad = np.full(num_paths, -1, dtype=np.int64)
    x0 = float(spec.initial_state[0])
    theta_bar = float(spec.prior.mean[0])
    scale = float(spec.prior.cholesky_factor[0, 0])

    def task(span):
        lo, hi = span
        K = hi - lo
        if multiplicative:
            th = np.empty(K)
            for j in range(lo, hi):
                rng = derive_path_stream(master_seed, first_path_index + j)
                th[j - lo] = theta_bar + scale * rng.standard_normal(1)[0]
            thetas[lo:hi, 0] = th
            w = None
        else:
            w = np.empty((K, num_steps))
            for j in range(lo, hi):
                rng = derive_path_stream(master_seed, first_path_index + j)
                w[j - lo] = scale * rng.standard_normal(num_steps)
        x = np.full(K, x0)
        states[lo:hi, 0, 0] = x
        bad = np.full(K, -1, dtype=np.int64)
        with np.errstate(over="ignore", invalid="ignore"):
            for t in range(num_steps):
                x = th * x if multiplicative else theta_bar * x + w[:, t]
                states[lo:hi, t + 1, 0] = x
                bad = _flag_nonfinite(x[:, np.newaxis], t + 1, bad)
        first_bad[lo:hi] = bad

    _run_chunked(task, num_paths, workers)
    return PathEnsemble(
        grid=grid,
        states=states,
        sampled_parameters=thetas,
        master_seed=master_seed,
        kind=spec.kind,
        first_nonfinite=first_bad,
    )


def raise_on_divergence(ensemble: PathEnsemble) -> None:
    """Raise NonFiniteState for the first divergent path, if any."""
    bad = ensemble.divergent_paths
    if bad.size:
        j = int(bad[0])
        raise NonFiniteState(j, int(ensemble.first_nonfinite[j]))
