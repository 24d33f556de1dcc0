"""Batch experiment driver.

Experiments are described by a small TOML config plus command-line
overrides; every run archives its resolved configuration next to its
outputs, so a result directory is self-describing and reruns are exact.
Outputs: report.json (machine), report.txt (aligned text), raw CSVs, and
for geometry runs an SVG. Numeric output is bit-identical for a fixed
(config, seed) pair regardless of worker count.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__, analysis
from .cluster import boundary_trace, export_geometry, grow_cluster
from .field import DriftField, calibrate_rho0
from .flow import EnsembleConfig, run_ensemble
from .measure import AttachmentMeasure, make_measure_arc, make_measure_fourier, make_measure_uniform
from .ode import DeterministicFlow, find_fixed_points
from .particle import SlitParticle

__all__ = ["ExperimentConfig", "parse_config", "run_experiment", "emit_report", "main"]

SUBCOMMANDS = ("selftest", "flow", "fluctuations", "window", "trajectory", "cluster", "calibrate")

DEFAULTS = dict(
    measure="cosine",
    amplitude=0.5,
    x0=0.3,
    t_max=3.0,
    t1=1.0,
    t2=3.0,
    runs=500,
    seed=2024,
    workers=os.cpu_count() or 1,
    snapshot_dt=0.02,
    override_horizon=False,
    epsilon=0.05,
    rho0_sweep=[1e-3, 1e-4, 1e-5, 1e-6],
    particles=400,
    resolution=4096,
    eps_offset=1e-4,
    svg=False,
    quiet=False,
    slope_tolerance=0.15,
)


@dataclass
class ExperimentConfig:
    subcommand: str
    values: dict = dc_field(default_factory=dict)
    outdir: Path = Path("ahlsim_out")

    def __getattr__(self, key):
        values = object.__getattribute__(self, "values")
        if key in values:
            return values[key]
        raise AttributeError(key)

    def get(self, key, default=None):
        return self.values.get(key, default)


def _fail(field_name: str, message: str) -> None:
    raise ValueError(f"config field {field_name!r}: {message}")


def parse_capacity_sweep(spec) -> list[float]:
    """Either an explicit list or 'hi:lo:decades' for a decade ladder."""
    if isinstance(spec, (list, tuple)):
        caps = [float(v) for v in spec]
    elif isinstance(spec, str):
        parts = spec.split(":")
        if len(parts) != 3 or parts[2] != "decades":
            _fail("capacities", f"bad sweep syntax {spec!r}, want 'hi:lo:decades'")
        hi, lo = float(parts[0]), float(parts[1])
        if not 0 < lo <= hi:
            _fail("capacities", "sweep bounds must satisfy 0 < lo <= hi")
        n = int(round(math.log10(hi / lo)))
        caps = [hi * 10.0**-k for k in range(n + 1)]
    else:
        _fail("capacities", f"unsupported type {type(spec).__name__}")
    for c in caps:
        if not (0.0 < c < 1.0) or not math.isfinite(c):
            _fail("capacities", f"capacity {c!r} outside (0, 1)")
    return caps


def build_measure(cfg: ExperimentConfig) -> AttachmentMeasure:
    kind = cfg.get("measure", "cosine")
    if kind == "uniform":
        return make_measure_uniform()
    if kind == "cosine":
        return make_measure_fourier([(1, float(cfg.get("amplitude", 0.5)), 0.0)])
    if kind == "fourier":
        coeffs = cfg.get("coeffs")
        if not coeffs:
            _fail("coeffs", "fourier measure needs a list of [k, a_k, b_k]")
        return make_measure_fourier([(int(k), float(a), float(b)) for k, a, b in coeffs])
    if kind == "arc":
        for key in ("lo", "hi", "smoothing"):
            if cfg.get(key) is None:
                _fail(key, "arc measure needs lo, hi and smoothing")
        return make_measure_arc(float(cfg.lo), float(cfg.hi), float(cfg.smoothing))
    _fail("measure", f"unknown measure kind {kind!r}")


def parse_config(
    argv: Optional[list[str]] = None, config_text: Optional[str] = None
) -> ExperimentConfig:
    """Resolve CLI flags plus optional TOML file into a validated config."""
    parser = argparse.ArgumentParser(prog="ahlsim", description=__doc__)
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", type=Path, help="TOML config file")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--capacity", type=float)
    parser.add_argument("--capacities", type=str, help="sweep, e.g. 1e-3:1e-6:decades")
    parser.add_argument("--measure", choices=("cosine", "uniform", "fourier", "arc"))
    parser.add_argument("--amplitude", type=float)
    parser.add_argument("--x0", type=float)
    parser.add_argument("--t-max", dest="t_max", type=float)
    parser.add_argument("--t0", type=float)
    parser.add_argument("--runs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--particles", type=int)
    parser.add_argument("--resolution", type=int)
    parser.add_argument("--svg", action="store_true", default=None)
    parser.add_argument("--quiet", action="store_true", default=None)
    parser.add_argument("--override-horizon", dest="override_horizon", action="store_true", default=None)
    args = parser.parse_args(argv)

    values: dict = dict(DEFAULTS)
    if config_text is not None:
        values.update(tomllib.loads(config_text))
    elif args.config is not None:
        values.update(tomllib.loads(args.config.read_text()))
    for key, val in vars(args).items():
        if key in ("subcommand", "config", "out") or val is None:
            continue
        values[key] = val

    outdir = args.out or values.get("outdir") or os.environ.get("AHLSIM_OUTDIR") or "ahlsim_out"
    cfg = ExperimentConfig(subcommand=args.subcommand, values=values, outdir=Path(outdir))
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    v = cfg.values
    if "capacity" in v:
        c = float(v["capacity"])
        if not (0.0 < c < 1.0) or not math.isfinite(c):
            _fail("capacity", f"must lie in (0, 1), got {c!r}")
    if "capacities" in v:
        v["capacities"] = parse_capacity_sweep(v["capacities"])
    if int(v.get("runs", 1)) <= 0:
        _fail("runs", "must be positive")
    if int(v.get("workers", 1)) <= 0:
        _fail("workers", "must be positive")
    if cfg.subcommand == "window":
        caps = v.get("capacities")
        if caps is None or len(caps) < 2:
            _fail("capacities", "window experiment needs a capacity sweep")
    if cfg.subcommand in ("flow", "fluctuations", "trajectory", "cluster"):
        if "capacity" not in v and "capacities" not in v:
            _fail("capacity", f"{cfg.subcommand} needs a capacity")
    build_measure(cfg)  # validates measure fields


def echo_config(cfg: ExperimentConfig, path: Path) -> None:
    """Archive the resolved config as TOML that parse_config reads back."""
    lines = [f'subcommand = "{cfg.subcommand}"  # informational']
    for key in sorted(cfg.values):
        val = cfg.values[key]
        if isinstance(val, bool):
            rendered = "true" if val else "false"
        elif isinstance(val, (int, float)):
            rendered = repr(val)
        elif isinstance(val, str):
            rendered = f'"{val}"'
        elif isinstance(val, (list, tuple)):
            rendered = json.dumps([list(x) if isinstance(x, (list, tuple)) else x for x in val])
        else:
            continue
        if key == "subcommand":
            continue
        lines.append(f"{key} = {rendered}")
    lines.append(f'outdir = "{cfg.outdir}"')
    path.write_text("\n".join(lines) + "\n")


def emit_report(reports: list[analysis.ExperimentReport], outdir: Path) -> bool:
    """Write report.json and report.txt; returns overall pass."""
    outdir.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": {
            "ahlsim": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "reports": [r.to_dict() for r in reports],
        "passed": all(r.passed for r in reports),
    }
    (outdir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    text = "\n\n".join(r.to_text() for r in reports)
    verdict = "ALL CHECKS PASSED" if payload["passed"] else "SOME CHECKS FAILED"
    (outdir / "report.txt").write_text(text + f"\n\n{verdict}\n")
    return payload["passed"]


def _progress(quiet: bool):
    if quiet:
        return None
    state = {"done": 0}

    def tick(_i: int, total: int) -> None:
        state["done"] += 1
        if state["done"] % 25 == 0 or state["done"] == total:
            print(f"\r  {state['done']}/{total} runs", end="", file=sys.stderr, flush=True)
            if state["done"] == total:
                print(file=sys.stderr)

    return tick


def _calibrated_field(cfg: ExperimentConfig, measure: AttachmentMeasure) -> DriftField:
    f = DriftField(measure)
    cache = cfg.get("rho0_cache")
    cache_path = Path(cache) if cache else cfg.outdir / "rho0_cache.json"
    calibrate_rho0(cfg.rho0_sweep, field=f, cache_path=cache_path)
    return f


def run_experiment(cfg: ExperimentConfig) -> list[analysis.ExperimentReport]:
    """Dispatch one subcommand; writes artifacts into cfg.outdir."""
    cfg.outdir.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, cfg.outdir / "resolved_config.toml")
    measure = build_measure(cfg)
    quiet = bool(cfg.get("quiet", False))
    workers = int(cfg.workers)
    reports: list[analysis.ExperimentReport] = []

    if cfg.subcommand == "calibrate":
        f = _calibrated_field(cfg, measure)
        rep = analysis.ExperimentReport(
            name="rho0_calibration",
            parameters={"sweep": list(cfg.rho0_sweep)},
            statistics={"rho0": f.rho0, "uncertainty": f.rho0_uncertainty},
        )
        rep.add_check(
            "relative_uncertainty", f.rho0_uncertainty / f.rho0, "< 0.02",
            f.rho0_uncertainty < 0.02 * f.rho0,
        )
        reports.append(rep)

    elif cfg.subcommand == "flow":
        f = DriftField(measure)
        fl = DeterministicFlow(f)
        for c in cfg.get("capacities") or [cfg.capacity]:
            rep = analysis.ode_tracking_error(
                f, fl, c, float(cfg.x0), float(cfg.t_max), int(cfg.runs),
                base_seed=int(cfg.seed), override_horizon=bool(cfg.override_horizon),
                workers=workers,
            )
            reports.append(rep)

    elif cfg.subcommand == "fluctuations":
        f = _calibrated_field(cfg, measure)
        fl = DeterministicFlow(f)
        c = float(cfg.capacity)
        t0, t1, t2 = float(cfg.get("t0", 3.0)), float(cfg.t1), float(cfg.t2)
        ens_cfg = EnsembleConfig(
            capacity=c, measure=measure, x0=float(cfg.x0), t_max=max(t0, t2),
            n_runs=int(cfg.runs), base_seed=int(cfg.seed),
            snapshot_times=[t1, t2, t0], workers=workers,
        )
        ens = run_ensemble(ens_cfg, progress=_progress(quiet))
        z = analysis.pulled_back_samples(ens, fl, t0)
        theory = analysis.theoretical_variance(fl, f, float(cfg.x0), t0)
        var_rep = analysis.ExperimentReport(
            name="fluctuation_variance",
            parameters={"c": c, "t0": t0, "x0": float(cfg.x0)},
            statistics={
                "empirical_variance": float(np.var(z, ddof=1)),
                "theoretical_variance": theory.value,
                "bootstrap_se": analysis.bootstrap_se(z, lambda s: np.var(s, ddof=1)),
            },
            ensemble_size=int(cfg.runs),
            base_seed=int(cfg.seed),
        )
        se = var_rep.statistics["bootstrap_se"]
        diff = abs(var_rep.statistics["empirical_variance"] - theory.value)
        var_rep.add_check("variance_matches_theory", diff, f"< 3 SE = {3 * se:.3e}", diff < 3 * se)
        reports.append(var_rep)
        reports.append(analysis.test_normality(z, theory.value))
        reports.append(analysis.increment_covariance(ens, fl, t1, t2))
        with open(cfg.outdir / "fluctuations.csv", "w") as fh:
            fh.write("run_id,z_tilde\n")
            for i, zi in enumerate(z):
                fh.write(f"{i},{float(zi)!r}\n")

    elif cfg.subcommand == "window":
        f = _calibrated_field(cfg, measure)
        fl = DeterministicFlow(f)
        fp = next(p for p in find_fixed_points(fl) if p.is_unstable)
        window_reports = []
        for c in cfg.capacities:
            if not quiet:
                print(f"window: capacity {c}", file=sys.stderr)
            rep = analysis.window_experiment(
                f, c, fp, int(cfg.runs), base_seed=int(cfg.seed), workers=workers
            )
            window_reports.append(rep)
        slope = analysis.window_slope_fit(window_reports, fp)
        reports.extend(window_reports)
        reports.append(slope)
        reports.append(analysis.departure_symmetry(window_reports[-1]))
        with open(cfg.outdir / "departures.csv", "w") as fh:
            fh.write("capacity,run_id,departure_t,side\n")
            for rep in window_reports:
                for i, (t, s) in enumerate(
                    zip(rep.statistics["times"], rep.statistics["sides"])
                ):
                    fh.write(f"{rep.parameters['c']!r},{i},{t!r},{s}\n")

    elif cfg.subcommand == "trajectory":
        f = _calibrated_field(cfg, measure)
        fl = DeterministicFlow(f)
        fps = find_fixed_points(fl)
        fp = next(p for p in fps if p.is_unstable)
        stable = [p.location for p in fps if not p.is_unstable]
        anchors = cfg.get("t0_sensitivity") or [cfg.get("t0", 4.0)]
        for c in cfg.get("capacities") or [cfg.capacity]:
            for t0 in anchors:
                rep = analysis.envelope_experiment(
                    f, fl, c, fp, t0=float(t0), n_runs=int(cfg.runs),
                    base_seed=int(cfg.seed), snapshot_dt=float(cfg.snapshot_dt),
                    stable_locations=stable, workers=workers,
                )
                reports.append(rep)
                with open(cfg.outdir / f"envelope_c{c:g}_t0{t0:g}.csv", "w") as fh:
                    fh.write("run_id,sup_error,terminal_x\n")
                    sups = rep.statistics["sup_errors"]
                    terms = rep.statistics["terminal_x"]
                    for i, (s, t) in enumerate(zip(sups, terms)):
                        fh.write(f"{i},{s!r},{t!r}\n")

    elif cfg.subcommand == "cluster":
        c = float(cfg.capacity)
        n = int(cfg.particles)
        state = grow_cluster(measure, c, n, seed=int(cfg.seed))
        poly = boundary_trace(state, int(cfg.resolution), eps=float(cfg.eps_offset))
        csv_path = cfg.outdir / "cluster.csv"
        svg_path = cfg.outdir / "cluster.svg" if cfg.get("svg") else None
        export_geometry(poly, csv_path, svg_path=svg_path)
        from .cluster import compose_cluster

        R = 1e6
        ratio = abs(compose_cluster(state, R) / R)
        rep = analysis.ExperimentReport(
            name="cluster_geometry",
            parameters={"c": c, "particles": n, "resolution": int(cfg.resolution)},
            statistics={
                "total_capacity": state.total_capacity,
                "conformal_radius_ratio": ratio,
                "max_radius": float(np.max(np.abs(poly))),
            },
            base_seed=int(cfg.seed),
        )
        err = abs(ratio - math.exp(state.total_capacity))
        rep.add_check("capacity_additivity", err, "< 1e-4", err < 1e-4)
        reports.append(rep)

    elif cfg.subcommand == "selftest":
        reports.extend(_selftest(cfg, measure, workers))

    emit_report(reports, cfg.outdir)
    return reports


def _selftest(cfg: ExperimentConfig, measure: AttachmentMeasure, workers: int) -> list:
    """Fast end-to-end invariant suite; minutes, not hours."""
    from .particle import boundary_angle_gamma, gamma_tilde, slit_map_inverse

    reports = []
    rep = analysis.ExperimentReport(name="particle_invariants", parameters={}, statistics={})
    p = SlitParticle.from_capacity(1e-3)
    rng = np.random.default_rng(0)
    xs = rng.uniform(0, 0.5, 200)
    xs = xs[xs > 0]
    g = boundary_angle_gamma(p, xs)
    inv = slit_map_inverse(p, (1 + 1e-6) * np.exp(2j * np.pi * xs))
    err = float(np.max(np.abs(inv - np.exp(2j * np.pi * g))))
    rep.add_check("inverse_map_consistency", err, "< 1e-5", err < 1e-5)
    grid = np.linspace(-0.5, 0.5, 10**5 + 1)[1:]
    sup = float(np.max(np.abs(gamma_tilde(p, grid))))
    rep.add_check("sup_gamma_tilde", sup, f"<= {0.7 * math.sqrt(1e-3):.4e}", sup <= 0.7 * math.sqrt(1e-3))
    reports.append(rep)

    rep = analysis.ExperimentReport(name="drift_oracle", parameters={}, statistics={})
    exact = DriftField(measure, b_mode="fourier_exact") if measure.fourier is not None else None
    quad = DriftField(measure, b_mode="quadrature")
    grid = np.linspace(0, 1, 512, endpoint=False)
    if exact is not None:
        dev = float(np.max(np.abs(exact.b(grid) - quad.b(grid))))
        rep.add_check("drift_mode_agreement", dev, "< 1e-8", dev < 1e-8)
    mean_b = abs(float(np.mean(quad.b(grid))))
    rep.add_check("drift_zero_mean", mean_b, "< 1e-9", mean_b < 1e-9)
    reports.append(rep)

    f = _calibrated_field(cfg, measure)
    fl = DeterministicFlow(f)
    rep = analysis.ExperimentReport(
        name="flow_oracles", parameters={},
        statistics={"rho0": f.rho0, "rho0_uncertainty": f.rho0_uncertainty},
    )
    if fl.integrator == "closed_form_cosine":
        fl_rk = DeterministicFlow(f, integrator="rk_adaptive")
        rng = np.random.default_rng(1)
        dev = max(
            abs(fl.flow_psi(x, t) - fl_rk.flow_psi(x, t))
            for x, t in zip(rng.uniform(0, 1, 20), rng.uniform(0, 8, 20))
        )
        rep.add_check("integrator_agreement", dev, "< 1e-9", dev < 1e-9)
    x_t = fl.flow_psi(0.3, 2.0)
    inv = fl.flow_inverse(x_t, 2.0)
    rep.add_check("inverse_flow", abs(inv - 0.3), "< 1e-9", abs(inv - 0.3) < 1e-9)
    reports.append(rep)

    rep = analysis.ode_tracking_error(
        f, fl, 1e-3, float(cfg.x0), 0.5, 200, base_seed=int(cfg.seed), workers=workers
    )
    rep.add_check(
        "tracking_median", rep.statistics["sup_error_median"], "< 0.05",
        rep.statistics["sup_error_median"] < 0.05,
    )
    reports.append(rep)

    ens_cfg = EnsembleConfig(
        capacity=1e-3, measure=measure, x0=0.0, t_max=2.0, n_runs=600,
        base_seed=int(cfg.seed), snapshot_times=[2.0], workers=workers,
    )
    ens = run_ensemble(ens_cfg)
    z = analysis.pulled_back_samples(ens, fl, 2.0)
    theory = analysis.theoretical_variance(fl, f, 0.0, 2.0)
    rep = analysis.test_normality(z, theory.value)
    reports.append(rep)

    a = run_ensemble(ens_cfg)
    dev = float(max(np.max(np.abs(x.snaps_x - y.snaps_x)) for x, y in zip(ens.trajectories, a.trajectories)))
    det = analysis.ExperimentReport(name="determinism", parameters={}, statistics={})
    det.add_check("bitwise_reproducible", dev, "== 0", dev == 0.0)
    reports.append(det)
    return reports


def main(argv: Optional[list[str]] = None) -> int:
    try:
        cfg = parse_config(argv)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    reports = run_experiment(cfg)
    ok = all(r.passed for r in reports)
    failures = [c.name for r in reports for c in r.checks if not c.passed]
    if failures:
        print(json.dumps({"failed_checks": failures}), file=sys.stderr)
    if not bool(cfg.get("quiet", False)):
        print(f"report written to {cfg.outdir}", file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
