"""Command line: run scenarios, verification suites, metric checks and reports.

Exit codes: 0 ok, 1 usage or configuration error (or a verification residual
over its threshold), 2 numerical abort (degeneracy guard or blowup).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("membrane")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
DEFAULT_OUT = "membrane_runs"


# -- verification suites ---------------------------------------------------------


@dataclass
class Check:
    name: str
    value: float
    threshold: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.threshold)

    def line(self) -> str:
        return f"{'ok  ' if self.ok else 'FAIL'}  {self.name:48s} {self.value:12.4e}  <= {self.threshold:.1e}"


def verify_frames(count: int = 100, seed: int = 7) -> list[Check]:
    """Frame matrices, commutators of the frame fields, and the frame Minkowski form."""
    from .fields import cone_points, standard_corpus
    from .frames import SpacetimePoint, commutator_residuals, frame_matrices, frame_minkowski
    from .jets import Jet

    rng = np.random.default_rng(seed)
    t, x = cone_points(count, rng)
    inv_res, disp_res = 0.0, 0.0
    for k in range(count):
        p = SpacetimePoint(float(t[k]), [float(v[k]) for v in x])
        fm = frame_matrices(p)
        prod = fm.phi @ fm.psi
        ulp = np.spacing(np.maximum(np.abs(prod), 1.0))
        inv_res = max(inv_res, float(np.max(np.abs(prod - np.eye(3)) / ulp)))
        st2 = (p.t**2 - sum(v * v for v in p.x)) / p.t**2
        xt = np.array(p.x) / p.t
        expect = np.zeros((3, 3))
        expect[0, 0] = st2
        expect[0, 1:] = expect[1:, 0] = xt
        expect[1:, 1:] = -np.eye(2)
        disp_res = max(disp_res, float(np.max(np.abs(frame_minkowski(p, "display").upper - expect))))
    comm = 0.0
    t2, x2 = cone_points(2000, rng)
    coords = Jet.coordinates([t2] + x2, 3)
    for f in standard_corpus():
        u = f.jet(t2, x2, 3)
        res = commutator_residuals(u, coords)
        scale = max(1.0, float(np.max(np.abs(u.value))))
        comm = max(comm, max(float(np.max(np.abs(v))) for v in res.values()) / scale)
    return [
        Check("Phi Psi = I (ulps per entry)", inv_res, 1.0),
        Check("frame commutators on analytic fields", comm, 1e-10),
        Check("frame Minkowski display form", disp_res, 1e-14),
    ]


def verify_nullform(points: int = 10_000, seed: int = 20240501) -> list[Check]:
    """Cartesian versus frame form of the cubic null form, and the bound groups."""
    from .fields import cone_points, standard_corpus
    from .jets import Jet
    from .nullforms import DerivativeBundle, cubic_flat_cartesian, cubic_flat_frame, double_null_bound

    rng = np.random.default_rng(seed)
    worst, worst_ratio = 0.0, 0.0
    for f in standard_corpus():
        t, x = cone_points(points, rng)
        d = DerivativeBundle.from_jet(f.jet(t, x, 2), Jet.coordinates([t] + x, 2))
        a, b = cubic_flat_cartesian(d), cubic_flat_frame(d)
        # pointwise, floored at 1e-6 of the field's largest monomial sum so
        # points where the field underflows do not divide rounding by ~0
        scale = _cubic_scale(d)
        scale = np.maximum(scale, 1e-6 * float(np.max(scale)))
        worst = max(worst, float(np.max(np.abs(a - b) / scale)))
        nb = double_null_bound(d)
        worst_ratio = max(worst_ratio, float(np.max(nb.ratio)) / nb.constant)
    return [
        Check("cubic form: Cartesian vs frame (relative)", worst, 1e-9),
        Check("cubic form / (C * bound groups)", worst_ratio, 1.0),
    ]


def _cubic_scale(d):
    """Sum of absolute values of the Cartesian monomials, the natural scale of the cubic form."""
    n1 = d.n + 1
    g1 = sum(np.abs(v) for v in d.cart1)
    g2 = sum(np.abs(d.cart2[a][b]) for a in range(n1) for b in range(n1))
    return g1 * g1 * g2


def verify_metric(metric=None, s_range=(5.0, 200.0), count: int = 40, max_order: int = 2) -> tuple[list[Check], object]:
    """Decay validation of a metric along rays of several speeds."""
    from .metrics import MetricConfig, ray_points, validate_decay

    metric = metric or MetricConfig(kind="perturbed", delta=0.05, gamma=0.5)
    s_vals = np.geomspace(*s_range, count)
    ts, xs = [], [[], []]
    for speed in (0.0, 0.3, 0.6, 0.9):
        t, x = ray_points(s_vals, speed, 2)
        keep = np.abs(x[0]) < t - 1.0
        ts.append(t[keep])
        xs[0].append(x[0][keep])
        xs[1].append(x[1][keep])
    t = np.concatenate(ts)
    x = [np.concatenate(v) for v in xs]
    rep = validate_decay(metric, t, x, max_order=max_order)
    limit = rep.delta * (1 + rep.tolerance)
    return [Check(f"metric decay ratio (delta = {rep.delta:g})", rep.worst["ratio"], limit)], rep


def metric_growth_exponent(rep) -> float:
    """Log-log slope in ``s`` of the worst ratio per s (all orders, both index positions)."""
    both = np.maximum(rep.ratios_upper, rep.ratios_lower).max(axis=1)
    s = rep.s
    order = np.argsort(s)
    s, both = s[order], both[order]
    us = np.unique(np.round(s, 9))
    best = np.array([both[np.isclose(s, v)].max() for v in us])
    keep = best > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(us[keep]), np.log(best[keep]), 1)[0])


def mms_errors(mode: str, points: int, n: int = 2, epsilon: float = 0.3, accuracy: int = 4, metric=None) -> float:
    """Max-norm error against the manufactured Gaussian on a small periodic-free box."""
    from .solver.config import ScenarioConfig
    from .solver.grid import Stepper, exact_solution, initial_data

    kw = {} if metric is None else {"metric": metric}
    cfg = ScenarioConfig(
        n=n, mode="cartesian", nonlinearity=mode, epsilon=epsilon, B=2.0, points=points, half_width=5.0,
        mms="gaussian", t_end=4.0, zero_outside_cone=False, accuracy=accuracy, **kw,
    )
    state = initial_data(cfg)
    stepper = Stepper(cfg)
    nsteps = int(round((cfg.final_time - cfg.t0) / cfg.dt))
    for _ in range(nsteps):
        stepper.step(state)
    i = state.interior
    c = state.coords(i)
    shape = state.phi[i].shape
    pts = [np.broadcast_to(v, shape) for v in c]
    exact = exact_solution(cfg).jet(np.full(shape, state.t), pts, 0).value
    return float(np.max(np.abs(state.phi[i] - exact)))


def verify_mms(points=(33, 65), modes=("linear", "flat-null-only", "full"), metric=None) -> list[Check]:
    out = []
    for mode in modes:
        errs = [mms_errors(mode, p, metric=metric) for p in points]
        h = [10.0 / (p - 1) for p in points]
        order = math.log(errs[0] / errs[1]) / math.log(h[0] / h[1])
        out.append(Check(f"MMS order deficit, {mode} (1.8 - order)", 1.8 - order, 0.0))
    return out


SUITES = {
    "frames": verify_frames,
    "nullform": verify_nullform,
    "metric": lambda: verify_metric()[0],
    "mms": verify_mms,
}


# -- bundles -----------------------------------------------------------------------


def output_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get("MEMBRANE_OUT") or DEFAULT_OUT)


def _resolution(cfg, which: str):
    from dataclasses import replace

    if which == "coarse":
        pts = cfg.points // 2 if cfg.mode == "radial" else (cfg.points - 1) // 2 + 1
        return replace(cfg, points=pts)
    return cfg


def run_bundle(cfg, out_dir: Path, name: str = "run", twin: bool = False, threads: int = 1, progress: bool = False) -> int:
    """Run a scenario and write a self-describing bundle; returns the exit code."""
    from .diagnostics import RunSeries, resolution_sensitivity, standard_verdicts, write_verdicts
    from .hyperboloid import evolve, write_records_csv, write_records_json

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.cfg").write_text(cfg.to_ini())
    last = [time.perf_counter()]

    def tick(state):
        if progress and time.perf_counter() - last[0] > 10:
            last[0] = time.perf_counter()
            log.info("t = %.4g (final %.4g), steps %d", state.t, cfg.final_time, state.steps)

    res = evolve(cfg, progress=tick)
    write_records_csv(res.records, out_dir / "records.csv")
    write_records_json(res.records, out_dir / "records.json")
    perturbed = not cfg.metric.is_flat
    verdicts = []
    if res.records:
        series = RunSeries(res.records, cfg.digest(), cfg.s0, {"points": cfg.points, "h": cfg.h})
        verdicts = standard_verdicts(series, perturbed)
        if twin:
            coarse_cfg = _resolution(cfg, "coarse")
            cres = evolve(coarse_cfg)
            if cres.records:
                cv = standard_verdicts(RunSeries(cres.records, coarse_cfg.digest(), cfg.s0), perturbed)
                for v, c in zip(verdicts, cv):
                    v.sensitivity = resolution_sensitivity(c, v)
    write_verdicts(verdicts, out_dir / "verdicts.json")
    prov = {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "threads": threads,
        "wall_seconds": res.wall,
        "steps": res.steps,
        "final_t": res.state.t,
        "grid": {"mode": cfg.mode, "points": cfg.points, "h": cfg.h, "dt": cfg.dt, "accuracy": cfg.accuracy},
        "guard_max": res.guard_max,
        "config_hash": cfg.digest(),
        "complete": res.error is None,
        "error": None if res.error is None else f"{type(res.error).__name__}: {res.error}",
        "last_s": res.records[-1].s if res.records else None,
    }
    (out_dir / "provenance.json").write_text(json.dumps(prov, indent=1))
    for v in verdicts:
        print(v.line())
    if res.error is not None:
        print(f"run aborted: {res.error}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# -- report -------------------------------------------------------------------------

GNUPLOT_ENERGY = """set datafile separator ','
set logscale xy
set xlabel 's'
set ylabel 'energy'
set key autotitle columnhead
set terminal pngcairo size 900,600
set output 'energy.png'
plot for [c in "{cols}"] '{csv}' using (column('s')):(column(c)) with linespoints title c
"""

GNUPLOT_OBS = """set datafile separator ','
set logscale xy
set xlabel 's'
set ylabel 'weighted sup'
set terminal pngcairo size 900,600
set output 'decay.png'
plot for [c in "{cols}"] '{csv}' using (column('s')):(column(c)) with linespoints title c
"""

GNUPLOT_RESID = """set datafile separator ','
set logscale y
set xlabel 's'
set ylabel 'residual'
set terminal pngcairo size 900,600
set output 'residuals.png'
plot '{csv}' using (column('s')):(column('residual')) with linespoints title 'energy identity', \\
     '{csv}' using (column('s')):(column('frame_identity_I0')) with linespoints title 'frame identity'
"""


def write_report(bundle: Path) -> int:
    from .diagnostics import RunSeries, equivalence_ratio, foliation_comparison, read_verdicts, standard_verdicts
    from .hyperboloid import read_records_csv

    csv_path = bundle / "records.csv"
    if not csv_path.exists():
        print(f"error: {csv_path} not found", file=sys.stderr)
        return EXIT_CONFIG
    rows = read_records_csv(csv_path)
    prov = json.loads((bundle / "provenance.json").read_text()) if (bundle / "provenance.json").exists() else {}
    series = RunSeries.from_rows(rows, s0=rows[0]["s"] - 1.0 if rows else 3.0)
    if (bundle / "verdicts.json").exists():
        verdicts = read_verdicts(bundle / "verdicts.json")
    else:
        verdicts = standard_verdicts(series) if rows else []
    dev, where = equivalence_ratio(series) if rows else (0.0, float("nan"))
    lines = ["# Run report", ""]
    lines.append(f"Bundle: `{bundle}`")
    if prov:
        g = prov.get("grid", {})
        lines.append(f"Grid: {g.get('mode')} with {g.get('points')} points, h = {g.get('h', float('nan')):.4g}; wall {prov.get('wall_seconds', 0):.1f} s")
    lines.append("")
    lines.append("Energies are tracked to order m_diag (default 2); the analytic bound is stated for much higher orders, which are out of reach at desk scale.")
    lines.append("")
    if prov and not prov.get("complete", True):
        lines.append(f"**Truncated run**: {prov.get('error')}. Last stable slice s = {prov.get('last_s')}.")
        lines.append("")
    lines.append("| claim | tested statement | status | statistic |")
    lines.append("|---|---|---|---|")
    for v in verdicts:
        stats = ", ".join(f"{k} = {v2:.4g}" if isinstance(v2, float) else f"{k} = {v2}" for k, v2 in v.statistic.items())
        lines.append(f"| {v.claim} | {v.anchor} | {v.status} | {stats} |")
    lines.append("")
    lines.append(f"Max |Et/E - 1| = {dev:.3e} at s = {where:.4g}")
    contrast = None
    if rows and any(r.E_flat for r in series.records):
        contrast = foliation_comparison(series)
        lines.append(
            f"Foliation contrast (m = {contrast.m}): hyperboloidal slope {contrast.hyperboloidal_slope:.3f}, "
            f"constant-t slope {contrast.constant_t_slope:.3f}"
        )
    (bundle / "report.md").write_text("\n".join(lines) + "\n")
    plots = bundle / "plots"
    plots.mkdir(exist_ok=True)
    e_cols = " ".join(k for k in rows[0] if k.startswith("E") and k[1:].isdigit()) if rows else ""
    o_cols = " ".join(k for k in rows[0] if k.endswith("_J0")) if rows else ""
    rel = os.path.relpath(csv_path, plots)
    (plots / "energy.gp").write_text(GNUPLOT_ENERGY.format(cols=e_cols, csv=rel))
    (plots / "decay.gp").write_text(GNUPLOT_OBS.format(cols=o_cols, csv=rel))
    (plots / "residuals.gp").write_text(GNUPLOT_RESID.format(csv=rel))
    summary = {
        "bundle": str(bundle),
        "complete": prov.get("complete", True),
        "last_s": prov.get("last_s"),
        "verdicts": [v.to_dict() for v in verdicts],
        "equivalence": {"max_deviation": dev, "s": where},
        "foliation": None if contrast is None else contrast.__dict__,
    }
    (bundle / "report.json").write_text(json.dumps(summary, indent=1, default=float))
    print("\n".join(lines))
    return EXIT_OK


def compare_bundles(a: Path, b: Path) -> int:
    from .diagnostics import RunSeries, foliation_comparison
    from .hyperboloid import read_records_csv

    out = []
    for d in (a, b):
        p = d / "records.csv"
        if not p.exists():
            print(f"error: {p} not found", file=sys.stderr)
            return EXIT_CONFIG
        rows = read_records_csv(p)
        series = RunSeries.from_rows(rows)
        row = {"bundle": str(d), "s_last": series.s[-1] if rows else float("nan")}
        for m in range(len(series.records[0].E)):
            E = series.energy(m)
            row[f"E{m}_growth"] = float(np.max(E) / E[0]) if E[0] > 0 else 0.0
        try:
            fc = foliation_comparison(series)
            row["hyperboloidal_slope"] = fc.hyperboloidal_slope
            row["constant_t_slope"] = fc.constant_t_slope
        except ValueError:
            pass
        out.append(row)
    keys = [k for k in out[0] if k != "bundle"]
    print("| quantity | " + " | ".join(r["bundle"] for r in out) + " |")
    print("|---|" + "---|" * len(out))
    for k in keys:
        print(f"| {k} | " + " | ".join(f"{r.get(k, float('nan')):.4g}" for r in out) + " |")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="membrane", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="worker threads for numerical kernels")
    p.add_argument("--out", help="output directory (default $MEMBRANE_OUT or ./membrane_runs)")
    p.add_argument("--resolution", choices=("coarse", "fine"), default="fine")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", help="evolve a scenario and write a run bundle")
    sim.add_argument("config")
    sim.add_argument("--twin", action="store_true", help="also run the coarse twin and mark resolution sensitivity")
    ver = sub.add_parser("verify", help="run a verification suite")
    ver.add_argument("suite", choices=sorted(SUITES))
    ver.add_argument("--config", help="scenario config whose metric is checked (metric suite)")
    chk = sub.add_parser("check-metric", help="validate a config's metric decay")
    chk.add_argument("config")
    rep = sub.add_parser("report", help="summary, plot scripts and JSON for a bundle")
    rep.add_argument("bundle")
    cmp_ = sub.add_parser("compare", help="compare two bundles")
    cmp_.add_argument("a")
    cmp_.add_argument("b")
    return p


def _set_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    _set_threads(args.threads)
    from .solver.config import ConfigError, load_config

    try:
        if args.command == "simulate":
            cfg = _resolution(load_config(args.config), args.resolution)
            cfg.validate()
            out = output_root(args.out) / (Path(args.config).stem + ("_coarse" if args.resolution == "coarse" else ""))
            return run_bundle(cfg, out, twin=args.twin, threads=args.threads, progress=args.verbose)
        if args.command == "verify":
            if args.suite == "metric" and args.config:
                checks, rep = verify_metric(load_config(args.config).metric)
                print(rep.summary())
            else:
                checks = SUITES[args.suite]()
            for c in checks:
                print(c.line())
            return EXIT_OK if all(c.ok for c in checks) else EXIT_CONFIG
        if args.command == "check-metric":
            cfg = load_config(args.config)
            checks, rep = verify_metric(cfg.metric)
            print(rep.summary())
            print(f"growth exponent of the worst ratio in s: {metric_growth_exponent(rep):.3f}")
            return EXIT_OK if rep.passed else EXIT_CONFIG
        if args.command == "report":
            return write_report(Path(args.bundle))
        if args.command == "compare":
            return compare_bundles(Path(args.a), Path(args.b))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
