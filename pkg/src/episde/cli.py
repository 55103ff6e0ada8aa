"""Command-line entry point.

Subcommands: simulate, figures, compare, stability, chance.  Every run is a
pure function of its configuration plus the master seed; outputs are
byte-identical across repeat runs and worker counts.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence (with
--fail-on-divergence), 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import analytic, stats
from .errors import EpisdeError, NonFiniteState
from .integrate import (
    PathEnsemble,
    SdeScheme,
    TimeGrid,
    integrate_parametric,
    integrate_sde,
    iterate_discrete,
)
from .safety import ConstraintSpec, cross_semantics_report
from .systems import (
    SystemKind,
    catalog_lookup,
    catalog_names,
    system_spec_from_json,
)

_DEFAULTS = {
    "benchmark": "scalar-drift",
    "semantics": "both",
    "paths": 10_000,
    "T": 3.0,
    "steps": 300,
    "seed": None,  # falls back to EPISDE_SEED, then 0
    "scheme": "euler-maruyama",
    "theta_bar": 0.0,
    "gain": None,
    "workers": 1,
    "level": 0.95,
    "t_min": None,  # defaults to 10 * dt
    "box": [-2.0, 2.0],
    "delta": 0.1,
    "confidence": 0.95,
    "highlight_paths": 7,
    "fail_on_divergence": False,
}


@dataclass
class RunConfig:
    command: str
    benchmark: str
    semantics: str
    paths: int
    T: float
    steps: int
    seed: int
    scheme: str
    theta_bar: float
    gain: Optional[float]
    workers: int
    level: float
    t_min: Optional[float]
    box: list
    delta: float
    confidence: float
    highlight_paths: int
    fail_on_divergence: bool
    paths_csv: Optional[str] = None
    bands_csv: Optional[str] = None
    report_json: Optional[str] = None
    ensemble_bin: Optional[str] = None

    def echo(self) -> dict:
        values = asdict(self)
        # execution detail: results are worker-invariant by construction
        values.pop("workers")
        return values


class ConfigError(Exception):
    pass


def _merge_config(args: argparse.Namespace) -> RunConfig:
    values = dict(_DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                file_values = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}")
        unknown = set(file_values) - set(values)
        if unknown:
            raise ConfigError(f"config: unknown keys {sorted(unknown)}")
        values.update(file_values)
    for key in values:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            values[key] = flag_val
    if values["seed"] is None:
        values["seed"] = int(os.environ.get("EPISDE_SEED", "0"))
    cfg = RunConfig(
        command=args.command,
        paths_csv=getattr(args, "paths_csv", None),
        bands_csv=getattr(args, "bands_csv", None),
        report_json=getattr(args, "report_json", None),
        ensemble_bin=getattr(args, "ensemble_bin", None),
        **values,
    )
    if cfg.steps < 1:
        raise ConfigError("steps: must be a positive integer")
    if cfg.paths < 1:
        raise ConfigError("paths: must be a positive integer")
    if cfg.T <= 0:
        raise ConfigError("T: must be positive")
    if not 0 < cfg.level < 1:
        raise ConfigError("level: must lie in (0, 1)")
    if not 0 < cfg.delta < 1:
        raise ConfigError("delta: must lie in (0, 1)")
    if cfg.semantics not in ("parametric", "sde", "both"):
        raise ConfigError("semantics: must be parametric, sde, or both")
    if len(cfg.box) != 2 or not cfg.box[0] < cfg.box[1]:
        raise ConfigError("box: expected LO HI with LO < HI")
    return cfg


def _scheme(cfg: RunConfig) -> SdeScheme:
    return SdeScheme(cfg.scheme)


def _load_pair(cfg: RunConfig):
    """Benchmark name -> (epistemic, aleatoric); a spec file yields one side."""
    if cfg.benchmark in catalog_names():
        entry = catalog_lookup(cfg.benchmark, theta_bar=cfg.theta_bar, gain=cfg.gain)
        return entry.epistemic, entry.aleatoric
    try:
        with open(cfg.benchmark) as fh:
            spec = system_spec_from_json(fh.read())
    except OSError as exc:
        raise ConfigError(f"benchmark: {exc}")
    if spec.kind in (SystemKind.PARAMETRIC_ODE, SystemKind.DISCRETE_MULTIPLICATIVE):
        return spec, None
    return None, spec


def _run_semantics(cfg: RunConfig, grid: TimeGrid):
    """Return {semantics: ensemble} per the requested side(s)."""
    epi, ale = _load_pair(cfg)
    out = {}
    if cfg.semantics in ("parametric", "both"):
        if epi is None:
            raise ConfigError("semantics: spec file does not define a parametric side")
        if epi.kind is SystemKind.DISCRETE_MULTIPLICATIVE:
            out["parametric"] = iterate_discrete(epi, cfg.steps, cfg.paths, cfg.seed, cfg.workers)
        else:
            out["parametric"] = integrate_parametric(
                epi, grid, cfg.paths, cfg.seed, workers=cfg.workers
            )
    if cfg.semantics in ("sde", "both"):
        if ale is None:
            raise ConfigError("semantics: spec file does not define an SDE side")
        if ale.kind is SystemKind.DISCRETE_ADDITIVE:
            out["sde"] = iterate_discrete(ale, cfg.steps, cfg.paths, cfg.seed, cfg.workers)
        else:
            out["sde"] = integrate_sde(
                ale, grid, cfg.paths, cfg.seed, scheme=_scheme(cfg), workers=cfg.workers
            )
    return out


def _check_divergence(cfg: RunConfig, ensembles: dict):
    for sem, ens in ensembles.items():
        bad = ens.divergent_paths
        if bad.size:
            print(
                f"warning: {sem}: {bad.size} path(s) diverged "
                f"(first: path {int(bad[0])})",
                file=sys.stderr,
            )
            if cfg.fail_on_divergence:
                raise NonFiniteState(int(bad[0]), int(ens.first_nonfinite[bad[0]]))


def _write_paths_csv(path, ensembles: dict, max_paths: Optional[int] = None):
    with open(path, "w", newline="") as fh:
        fh.write("semantics,path_id,t,dim,x\n")
        for sem in sorted(ensembles):
            ens = ensembles[sem]
            times = ens.grid.times()
            count = ens.num_paths if max_paths is None else min(max_paths, ens.num_paths)
            for j in range(count):
                for i, t in enumerate(times):
                    for d in range(ens.state_dim):
                        fh.write(
                            f"{sem},{j},{float(t)!r},{d},{float(ens.states[j, i, d])!r}\n"
                        )


def _analytic_band(cfg: RunConfig, semantics: str, t: float):
    if cfg.benchmark == "scalar-drift":
        law = (
            analytic.oracle_scalar_drift_parametric(t)
            if semantics == "parametric"
            else analytic.oracle_scalar_drift_sde(t)
        )
        return analytic.confidence_band(law, cfg.level)
    if cfg.benchmark == "linear-feedback":
        if t == 0.0:
            return 1.0, 1.0
        k = cfg.gain if cfg.gain is not None else -(cfg.theta_bar + 1.0)
        law = (
            analytic.oracle_feedback_parametric(t, 1.0, cfg.theta_bar, k)
            if semantics == "parametric"
            else analytic.oracle_feedback_sde(t, 1.0, cfg.theta_bar, k)
        )
        return analytic.confidence_band(law, cfg.level)
    return None


def _write_bands_csv(cfg: RunConfig, path, ensembles: dict):
    with open(path, "w", newline="") as fh:
        fh.write("t,semantics,source,lo,hi\n")
        for sem in sorted(ensembles):
            ens = ensembles[sem]
            times = ens.grid.times()
            for i, t in enumerate(times):
                summ = stats.marginal_summary(ens, i, cfg.level)
                lo, hi = summ.quantile_band
                fh.write(
                    f"{float(t)!r},{sem},empirical,{float(lo[0])!r},{float(hi[0])!r}\n"
                )
            for t in times:
                band = _analytic_band(cfg, sem, float(t))
                if band is not None:
                    fh.write(
                        f"{float(t)!r},{sem},analytic,{float(band[0])!r},{float(band[1])!r}\n"
                    )


def _summary_line(cfg: RunConfig, grid: TimeGrid, wall: float):
    print(
        f"episde {cfg.command}: N={cfg.paths} T={grid.t_end!r} dt={grid.dt!r} "
        f"seed={cfg.seed} wall={wall:.2f}s",
        file=sys.stderr,
    )


def cmd_simulate(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    grid = TimeGrid(t_end=cfg.T, num_steps=cfg.steps)
    ensembles = _run_semantics(cfg, grid)
    _check_divergence(cfg, ensembles)
    if cfg.paths_csv:
        _write_paths_csv(cfg.paths_csv, ensembles)
    if cfg.ensemble_bin:
        if len(ensembles) == 1:
            next(iter(ensembles.values())).to_binary(cfg.ensemble_bin)
        else:
            root, ext = os.path.splitext(cfg.ensemble_bin)
            for sem, ens in ensembles.items():
                ens.to_binary(f"{root}.{sem}{ext}")
    _summary_line(cfg, grid, time.perf_counter() - t0)
    return 0


def cmd_figures(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    grid = TimeGrid(t_end=cfg.T, num_steps=cfg.steps)
    ensembles = _run_semantics(cfg, grid)
    _check_divergence(cfg, ensembles)
    if cfg.paths_csv:
        _write_paths_csv(cfg.paths_csv, ensembles, max_paths=cfg.highlight_paths)
    if cfg.bands_csv:
        _write_bands_csv(cfg, cfg.bands_csv, ensembles)
    _summary_line(cfg, grid, time.perf_counter() - t0)
    return 0


def _discriminators(cfg: RunConfig, ensembles: dict, grid: TimeGrid) -> dict:
    report = {}
    t_min = cfg.t_min if cfg.t_min is not None else 10.0 * grid.dt
    i1 = max(1, grid.num_steps // 3)
    i2 = max(i1 + 1, (2 * grid.num_steps) // 3)
    for sem, ens in ensembles.items():
        entry = {}
        fit = stats.variance_scaling_fit(ens, t_min)
        entry["scaling_exponent"] = fit.exponent
        entry["scaling_r_squared"] = fit.r_squared
        entry["increment_correlation"] = stats.increment_dependence(ens, i1, i2)
        qv = stats.quadratic_variation(ens)
        entry["quadratic_variation_mean"] = qv.mean
        if cfg.benchmark == "scalar-drift":
            t_ks = float(grid.times()[i2])
            own = (
                analytic.oracle_scalar_drift_parametric(t_ks)
                if sem == "parametric"
                else analytic.oracle_scalar_drift_sde(t_ks)
            )
            swapped = (
                analytic.oracle_scalar_drift_sde(t_ks)
                if sem == "parametric"
                else analytic.oracle_scalar_drift_parametric(t_ks)
            )
            entry["ks_vs_own_law"] = asdict(stats.marginal_law_distance(ens, i2, own))
            entry["ks_vs_swapped_law"] = asdict(
                stats.marginal_law_distance(ens, i2, swapped)
            )
        report[sem] = entry
    return report


def _discrete_compare(cfg: RunConfig, ensembles: dict) -> dict:
    report = {}
    check_steps = [t for t in (1, 2, 3, 5) if t <= cfg.steps]
    for sem, ens in ensembles.items():
        kind = "multiplicative" if sem == "parametric" else "additive"
        rows = []
        for t in check_steps:
            mean, var = analytic.oracle_discrete_moments(
                kind, cfg.theta_bar, float(ens.states[0, 0, 0]), t
            )
            summ = stats.marginal_summary(ens, t, cfg.level)
            rows.append(
                {
                    "step": t,
                    "oracle_mean": mean,
                    "oracle_variance": var,
                    "ensemble_mean": float(summ.mean[0]),
                    "ensemble_variance": float(summ.variance[0]),
                }
            )
        report[sem] = rows
    return report


def cmd_compare(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    cfg.semantics = "both"
    discrete = cfg.benchmark in ("dt-multiplicative", "dt-additive")
    grid = TimeGrid(t_end=cfg.T, num_steps=cfg.steps)
    ensembles = _run_semantics(cfg, grid)
    _check_divergence(cfg, ensembles)
    if discrete:
        body = _discrete_compare(cfg, ensembles)
    else:
        body = _discriminators(cfg, ensembles, grid)
    report = {"config": cfg.echo(), "results": body}
    text = json.dumps(report, indent=2, default=_json_default)
    if cfg.report_json:
        with open(cfg.report_json, "w") as fh:
            fh.write(text + "\n")
    _print_compare_table(body, discrete)
    _summary_line(cfg, grid, time.perf_counter() - t0)
    return 0


def _print_compare_table(body: dict, discrete: bool):
    if discrete:
        print(f"{'semantics':<12} {'step':>4} {'mean':>10} {'oracle':>10} "
              f"{'variance':>12} {'oracle_var':>12}")
        for sem in sorted(body):
            for row in body[sem]:
                print(
                    f"{sem:<12} {row['step']:>4} {row['ensemble_mean']:>10.4f} "
                    f"{row['oracle_mean']:>10.4f} {row['ensemble_variance']:>12.4f} "
                    f"{row['oracle_variance']:>12.4f}"
                )
        return
    print(f"{'semantics':<12} {'alpha':>7} {'incr_corr':>10} {'mean_QV':>10} "
          f"{'KS_own':>7} {'KS_swap':>8}")
    for sem in sorted(body):
        entry = body[sem]
        ks_own = entry.get("ks_vs_own_law")
        ks_swap = entry.get("ks_vs_swapped_law")
        print(
            f"{sem:<12} {entry['scaling_exponent']:>7.3f} "
            f"{entry['increment_correlation']:>10.4f} "
            f"{entry['quadratic_variation_mean']:>10.5f} "
            f"{'pass' if ks_own and ks_own['passed'] else 'fail' if ks_own else '-':>7} "
            f"{'pass' if ks_swap and ks_swap['passed'] else 'fail' if ks_swap else '-':>8}"
        )


def cmd_stability(cfg: RunConfig) -> int:
    return _cmd_verdicts(cfg, want="stability")


def cmd_chance(cfg: RunConfig) -> int:
    return _cmd_verdicts(cfg, want="chance")


def _cmd_verdicts(cfg: RunConfig, want: str) -> int:
    t0 = time.perf_counter()
    cspec = ConstraintSpec(
        safe_box=((cfg.box[0], cfg.box[1]),), horizon=cfg.T, delta=cfg.delta
    )
    report = cross_semantics_report(
        cfg.benchmark,
        cspec,
        num_paths=cfg.paths,
        num_steps=cfg.steps,
        master_seed=cfg.seed,
        theta_bar=cfg.theta_bar,
        gain=cfg.gain,
        scheme=_scheme(cfg),
        confidence=cfg.confidence,
        workers=cfg.workers,
    )
    if cfg.report_json:
        with open(cfg.report_json, "w") as fh:
            json.dump(
                {"config": cfg.echo(), "report": report.to_json_dict()},
                fh,
                indent=2,
                default=_json_default,
            )
            fh.write("\n")
    print(report.to_text_table())
    grid = TimeGrid(t_end=cfg.T, num_steps=cfg.steps)
    _summary_line(cfg, grid, time.perf_counter() - t0)
    return 0


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--benchmark", help=f"catalog name {catalog_names()} or SystemSpec JSON path")
    p.add_argument("--semantics", choices=["parametric", "sde", "both"])
    p.add_argument("--paths", type=int, help="number of sample paths (default 10000)")
    p.add_argument("--T", type=float, help="time horizon (default 3.0)")
    p.add_argument("--steps", type=int, help="number of grid steps (default 300)")
    p.add_argument("--seed", type=int, help="master seed (default $EPISDE_SEED or 0)")
    p.add_argument("--scheme", choices=["euler-maruyama", "milstein"])
    p.add_argument("--theta-bar", dest="theta_bar", type=float,
                   help="prior mean for benchmarks that leave it free (default 0)")
    p.add_argument("--gain", type=float,
                   help="feedback gain override (default -(theta_bar + 1))")
    p.add_argument("--workers", type=int, help="worker threads (default 1)")
    p.add_argument("--level", type=float, help="band coverage level (default 0.95)")
    p.add_argument("--t-min", dest="t_min", type=float,
                   help="scaling-fit lower time cutoff (default 10*dt)")
    p.add_argument("--box", type=float, nargs=2, metavar=("LO", "HI"),
                   help="safe interval (default -2 2)")
    p.add_argument("--delta", type=float, help="tolerable failure probability (default 0.1)")
    p.add_argument("--confidence", type=float,
                   help="binomial interval confidence (default 0.95)")
    p.add_argument("--highlight-paths", dest="highlight_paths", type=int,
                   help="paths emitted by figures (default 7)")
    p.add_argument("--fail-on-divergence", dest="fail_on_divergence",
                   action="store_const", const=True, default=None,
                   help="exit 3 if any path goes non-finite")
    p.add_argument("--paths-csv", dest="paths_csv", help="write sample paths CSV")
    p.add_argument("--bands-csv", dest="bands_csv", help="write confidence-band CSV")
    p.add_argument("--report-json", dest="report_json", help="write JSON report")
    p.add_argument("--ensemble-bin", dest="ensemble_bin", help="write binary ensemble")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="episde",
        description="Random-parameter ODE ensembles vs. their Brownian SDE "
        "reformulation: simulation, oracles, and verdict tables.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "generate path ensembles and write raw outputs"),
        ("figures", "emit plot-ready sample paths and confidence bands"),
        ("compare", "run the discriminator suite on a benchmark pair"),
        ("stability", "classify per-path growth rates for both semantics"),
        ("chance", "estimate the joint chance constraint for both semantics"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "figures": cmd_figures,
    "compare": cmd_compare,
    "stability": cmd_stability,
    "chance": cmd_chance,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
    except ConfigError as exc:
        print(f"episde: config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"episde: config error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteState as exc:
        print(f"episde: divergence: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"episde: io error: {exc}", file=sys.stderr)
        return 4
    except EpisdeError as exc:
        print(f"episde: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
