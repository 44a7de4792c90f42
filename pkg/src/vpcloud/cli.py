"""Command-line entry points: simulate, verify, fit, plot.

Exit-status policy: asserted checks gate the process (nonzero on failure);
monitored-ratio checks only print a warning.  The VPCLOUD_OUT environment
variable sets the default output root.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import artifacts, diagnostics, verify
from .config import CHECK_NAMES, MONITORED_CHECKS, ConfigError, RunConfig, from_ini
from .core import SimulationError, sample_initial
from .dynamics import BlowUpError, run


def _load_config(path: str) -> RunConfig:
    try:
        return from_ini(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")


def _out_root(cfg: RunConfig, override: str | None) -> Path:
    if override:
        return Path(override)
    root = os.environ.get("VPCLOUD_OUT", ".")
    return Path(root) / cfg.outdir


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        sampler = cfg.sampler
        cfg = replace(cfg, seed=args.seed, sampler=sampler, source_text=None)
    return cfg


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    out = _out_root(cfg, args.out)
    base = out / cfg.basename
    try:
        result = run(cfg, threads=args.threads)
    except BlowUpError as exc:
        if exc.partial is not None and exc.partial.records:
            artifacts.write_series_csv(base.with_suffix(".partial.csv"), exc.partial)
            print(f"aborted: {exc}; partial series flushed to {base}.partial.csv")
        else:
            print(f"aborted: {exc}")
        return 1
    csv_path = artifacts.write_series_csv(f"{base}_series.csv", result)
    snap_path = artifacts.write_snapshot(f"{base}_final.snap", result.final_ensemble())
    summary_path = artifacts.write_run_summary(f"{base}_summary.json", result)
    print(f"wrote {csv_path}")
    print(f"wrote {snap_path}")
    print(f"wrote {summary_path}")
    return 0


def _verify_one(name: str, cfg: RunConfig, result, ens, out: Path, threads: int):
    """Run one named check; returns (passed, monitored, payload)."""
    if name == "virial":
        if result is None or result.schedule.mode != "fixed":
            raise SimulationError("virial check rejected: fixed-dt required")
        rep = verify.check_virial_identity(result, threads=threads)
        ok = rep.drift_rel <= 1e-3
        return ok, False, rep
    if name == "interpolation":
        rng = np.random.default_rng(cfg.seed + 1)
        reports = []
        ok = True
        for _ in range(200):
            ell = rng.uniform(0.5, 6.0)
            p = rng.uniform(0.0, ell)
            q = rng.uniform(0.0, 4.0)
            if p + q == 0.0:
                q = 1.0
            rep = verify.check_moment_interpolation(ens, ell, p, q)
            ok &= rep.passed
            reports.append(rep)
        worst = max(reports, key=lambda r: r.ratio)
        return ok, False, {"cases": len(reports), "worst": worst}
    if name == "lrho":
        rep = verify.check_density_interpolation(result, k=2.0)
        return rep.passed, True, rep
    if name == "em":
        rep = verify.check_field_moment_bound(result, k=cfg.n_order)
        return rep.passed, True, rep
    if name == "le":
        n_use = min(ens.n, 256)
        reports = [
            verify.check_gradient_inverse_laplacian(
                ens.x[:n_use], ens.w[:n_use], 1.0, math.inf
            ),
            verify.check_gradient_inverse_laplacian(
                ens.x[:n_use], ens.w[:n_use], 2.0, 2.0 * cfg.d
            ),
        ]
        return all(r.passed for r in reports), False, reports
    if name == "l2":
        rep = verify.check_l2_field_decay(result, cfg.fit_window)
        return rep.exponent_ok and rep.m2_bounded, False, rep
    if name == "small-data":
        rep = verify.small_data_experiment(cfg, threads=threads)
        return rep.passed, False, replace(rep, result=None)
    if name == "bootstrap":
        rep = verify.decay_bootstrap_report(result, cfg.fit_window)
        return rep.passed, False, rep
    if name == "scattering":
        lo, hi = cfg.fit_window
        rep = verify.scattering_report(result, (lo / 2, hi / 2))
        return rep.passed, False, rep
    if name == "profiles":
        series = verify.profile_residual_series(result, threads=threads)
        tail = 4 if len(series.times) >= 4 else len(series.times)
        fr, dr = series.field_residual, series.density_residual
        dec = bool(
            np.all(np.diff(fr[-tail:]) < 0) and np.all(np.diff(dr[-tail:]) < 0)
        )
        fit = diagnostics.fit_rate(series.times, fr, cfg.fit_window, cfg.alpha)
        ok = dec and fit.exponent <= -(cfg.d - 1) / cfg.d + 0.4
        payload = {
            "times": series.times,
            "field_residual": fr,
            "density_residual": dr,
            "current_residual": series.current_residual,
            "strictly_decreasing_tail": dec,
            "field_fit": fit,
        }
        return ok, False, payload
    raise SimulationError(f"unknown check {name!r}")


def cmd_verify(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    out = _out_root(cfg, args.out)
    checks = tuple(c.strip() for c in args.checks.split(",")) if args.checks else cfg.checks
    if not checks:
        print("no checks selected (set [checks] selection or pass --checks)")
        return 2
    for c in checks:
        if c not in CHECK_NAMES:
            print(f"unknown check {c!r}; known: {', '.join(CHECK_NAMES)}")
            return 2
    needs_run = {"virial", "lrho", "em", "l2", "bootstrap", "scattering", "profiles"}
    result = None
    if needs_run & set(checks):
        result = run(cfg, threads=args.threads)
    ens = sample_initial(cfg.sampler, cfg.seed)
    failed_asserted = False
    for name in checks:
        try:
            ok, monitored, payload = _verify_one(name, cfg, result, ens, out, args.threads)
        except SimulationError as exc:
            print(f"[FAIL] {name}: {exc}")
            failed_asserted = True
            continue
        artifacts.write_report_json(out / f"{cfg.basename}_{name}.json", name, payload, cfg)
        if ok:
            print(f"[PASS] {name}")
        elif monitored:
            print(f"[WARN] {name}: monitored ratio out of range (does not gate exit)")
        else:
            print(f"[FAIL] {name}")
            failed_asserted = True
    return 1 if failed_asserted else 0


def cmd_fit(args) -> int:
    cfg, cols = artifacts.read_series_csv(args.csv)
    col = args.columns
    if col not in cols:
        print(f"column {col!r} not in {sorted(cols)}")
        return 2
    alpha = cfg.alpha if cfg is not None else 0.0
    window = tuple(args.window) if args.window else (float(cols["t"][0]), float(cols["t"][-1]))
    try:
        fit = diagnostics.fit_rate(cols["t"], cols[col], window, alpha)
    except ValueError as exc:
        print(f"fit rejected: {exc}")
        return 1
    print(
        f"{col}: exponent = {fit.exponent:.6g}  intercept = {fit.log_intercept:.6g}  "
        f"R^2 = {fit.r_squared:.6g}  (n = {fit.n_samples}, window = {fit.window})"
    )
    out = Path(args.out) if args.out else Path(args.csv).parent
    artifacts.write_report_json(out / f"fit_{col}.json", "rate_fit", fit, cfg)
    return 0


def cmd_plot(args) -> int:
    cfg, cols = artifacts.read_series_csv(args.csv)
    names = [c.strip() for c in args.columns.split(",") if c.strip()]
    if not names:
        print("empty column selection")
        return 2
    for c in names:
        if c not in cols:
            print(f"column {c!r} not in {sorted(cols)}")
            return 2
    alpha = cfg.alpha if cfg is not None else 0.0
    guides = tuple(float(g) for g in args.guides.split(",")) if args.guides else ()
    out = Path(args.out) if args.out else Path(args.csv).parent
    out.mkdir(parents=True, exist_ok=True)
    for c in names:
        svg = artifacts.svg_loglog(
            cols["t"],
            {c: cols[c]},
            alpha,
            guides=guides,
            title=c,
            config_text=cfg.canonical_text() if cfg else None,
        )
        path = out / f"{Path(args.csv).stem}_{c}.svg"
        path.write_text(svg)
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="vpcloud", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a trajectory and write artifacts")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--threads", type=int, default=1)
    sim.set_defaults(fn=cmd_simulate)

    ver = sub.add_parser("verify", help="run selected verification checks")
    ver.add_argument("--config", required=True)
    ver.add_argument("--out", default=None)
    ver.add_argument("--seed", type=int, default=None)
    ver.add_argument("--threads", type=int, default=1)
    ver.add_argument("--checks", default=None, help="comma-separated check names")
    ver.set_defaults(fn=cmd_verify)

    fit = sub.add_parser("fit", help="fit a power-law exponent to a CSV column")
    fit.add_argument("csv")
    fit.add_argument("--columns", required=True, help="column name")
    fit.add_argument("--window", type=float, nargs=2, default=None)
    fit.add_argument("--out", default=None)
    fit.set_defaults(fn=cmd_fit)

    plo = sub.add_parser("plot", help="log-log SVG plots of CSV columns")
    plo.add_argument("csv")
    plo.add_argument("--columns", required=True)
    plo.add_argument("--guides", default=None, help="comma-separated guide slopes")
    plo.add_argument("--out", default=None)
    plo.set_defaults(fn=cmd_plot)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
