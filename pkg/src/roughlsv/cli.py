"""
Command-line front end.

    roughlsv [--config PATH] [--out DIR] [--seed INT] [--workers INT] COMMAND

Commands: price, greeks, convergence, roughcheck, bench.  Every run writes the
resolved configuration to ``<out>/config.resolved`` and CSV files with 17
significant digits.  Exit status: 0 success, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .mc_engine import (
    convergence_study,
    full_mc_samples,
    greeks_fd,
    partial_mc_samples,
    pde_setup,
    variance_ratios,
    PriceReport,
)
from .rough_core import (
    RoughPathError,
    bracket_from_levels,
    chen_defect,
    coarsen,
    degeometrify,
    geometrify,
    DiscreteRoughPath,
    LiftedPath,
)
from .rpde_solver import solve_rpde_batch
from .vol_models import BLOCK, VolSimulationError, integrate_vol, sample_rng, simulate_block

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _setup(cfg, workers):
    model = cfgmod.build_model(cfg)
    vol = cfgmod.build_vol(cfg)
    payoff = cfgmod.build_payoff(cfg)
    rc = cfgmod.run_config(cfg, workers)
    return model, vol, payoff, rc


def _strike(cfg):
    return float(cfg["payoff.strike"])


def _with_x0(cfg):
    xs = cfgmod.x_grid(cfg)
    x0 = float(cfg["sim.x0"])
    if not np.any(np.isclose(xs, x0, rtol=0, atol=1e-12)):
        xs = np.sort(np.append(xs, x0))
    return xs


def cmd_price(cfg, out, workers):
    model, vol, payoff, rc = _setup(cfg, workers)
    xs = _with_x0(cfg)
    i0 = int(np.argmin(np.abs(xs - rc.x0)))
    method = cfg["sim.method"]
    parts = []
    t0 = time.perf_counter()
    if method in ("both", "full"):
        rep = PriceReport(xs, full_mc_samples(model, payoff, vol, rc, xs))
        parts.append(("full", rep))
    if method in ("both", "partial"):
        vals, _ = partial_mc_samples(model, payoff, vol, rc, xs, _strike(cfg))
        parts.append(("partial", PriceReport(xs, vals)))
    wall = time.perf_counter() - t0
    summary = []
    for name, rep in parts:
        write_csv(os.path.join(out, f"prices_{name}.csv"), ["x", "mean", "stderr", "m_samples"],
                  [(x, m, s, rep.m_samples) for x, m, s in zip(rep.x, rep.mean, rep.stderr)])
        summary.append(f"{name}={rep.mean[i0]:.10g} stderr={rep.stderr[i0]:.3g}")
    print(f"price x0={rc.x0:g} " + " ".join(summary) + f" wall={wall:.2f}s")
    return EXIT_OK


def cmd_greeks(cfg, out, workers):
    model, vol, payoff, rc = _setup(cfg, workers)
    xs = cfgmod.x_grid(cfg)
    _, sgrid, _ = pde_setup(model, vol, rc, _strike(cfg))
    reports = {}
    method = cfg["sim.method"]
    if method in ("both", "full"):
        reports["full"] = greeks_fd(lambda z: full_mc_samples(model, payoff, vol, rc, z), xs, rc.h)
    if method in ("both", "partial"):
        reports["partial"] = greeks_fd(
            lambda z: partial_mc_samples(model, payoff, vol, rc, z, _strike(cfg))[0],
            xs, rc.h, sgrid.dx)
    for name, g in reports.items():
        write_csv(os.path.join(out, f"greeks_{name}.csv"),
                  ["x", "delta_h", "gamma_h", "sigma_delta", "sigma_gamma"],
                  zip(g.x, g.delta_h, g.gamma_h, g.sigma_delta, g.sigma_gamma))
        if g.note:
            print(f"{name}: {g.note}")
    if len(reports) == 2:
        vr = variance_ratios(reports["full"], reports["partial"])
        write_csv(os.path.join(out, "variance.csv"),
                  ["x", "sigma_mc_price", "sigma_rpde_price", "sigma_mc_delta",
                   "sigma_rpde_delta", "sigma_mc_gamma", "sigma_rpde_gamma"],
                  zip(vr.x, vr.sigma_mc_price, vr.sigma_rpde_price, vr.sigma_mc_delta,
                      vr.sigma_rpde_delta, vr.sigma_mc_gamma, vr.sigma_rpde_gamma))
        write_csv(os.path.join(out, "variance_ratios.csv"), ["quantity", "ratio", "infinite"],
                  [(k, getattr(vr, f"ratio_{k}"), str(vr.infinite[k]).lower())
                   for k in ("price", "delta", "gamma")])
        print(f"variance ratios price={vr.ratio_price:.4g} delta={vr.ratio_delta:.4g} "
              f"gamma={vr.ratio_gamma:.4g}")
    return EXIT_OK


def cmd_convergence(cfg, out, workers):
    model, vol, payoff, rc = _setup(cfg, workers)
    schemes = list(cfg["convergence.schemes"])
    rows = convergence_study(model, payoff, vol, rc, cfg["convergence.n_spaces"], schemes,
                             _strike(cfg))
    cols = ["n_space"] + [f"eps_{s}" for s in schemes]
    write_csv(os.path.join(out, "errors.csv"), cols, [[r[c] for c in cols] for r in rows])
    for r in rows:
        print(" ".join(f"{c}={r[c]:.6g}" if c != "n_space" else f"{c}={r[c]}" for c in cols))
    return EXIT_OK


def rough_checks(lifts, n_triples, seed):
    """(max relative Chen defect, max bracket identity residual, number of
    entries changed by a geometrification round trip) over lifted paths."""
    rng = sample_rng(seed, 0, 99)
    chen = 0.0
    brk = 0.0
    changed = 0
    for lp in lifts:
        rp = lp.rp
        n = len(rp.grid)
        scale = 1.0 + float(np.max(np.abs(rp.yy0)))
        for s, u, t in np.sort(rng.integers(0, n, size=(n_triples, 3)), axis=1):
            chen = max(chen, chen_defect(rp, int(s), int(u), int(t)) / scale)
        qv = np.concatenate(([0.0], np.cumsum(np.diff(rp.y) ** 2)))
        try:
            bl = bracket_from_levels(rp).bracket
            brk = max(brk, float(np.max(np.abs(bl - qv)) / max(1.0, float(np.max(qv)))))
        except RoughPathError:
            brk = float("inf")
        back = degeometrify(geometrify(lp), lp.br).yy0
        changed += int(np.count_nonzero(back != rp.yy0))
    return chen, brk, changed


def cmd_roughcheck(cfg, out, workers):
    _, vol, _, rc = _setup(cfg, workers)
    fine = rc.fine_grid
    n = int(cfg["roughcheck.n_samples"])
    lifts = []
    for b in range(-(-n // BLOCK)):
        lifts.extend(integrate_vol(s) for s in simulate_block(vol, fine, rc.seed, b, rc.v_cap))
    lifts = lifts[:n]
    if cfg["roughcheck.fault_injection"]:
        lp = lifts[0]
        yy0 = lp.rp.yy0.copy()
        yy0[len(yy0) // 2] += 1e-3 * (1.0 + abs(yy0[len(yy0) // 2]))
        lifts[0] = LiftedPath(DiscreteRoughPath(lp.grid, lp.rp.y, yy0), lp.br)
    lifts[0].to_csv(os.path.join(out, "lift_sample0.csv"))
    chen, brk, changed = rough_checks(lifts, int(cfg["roughcheck.n_triples"]), rc.seed)
    ok_chen = chen <= 1e-12
    ok_brk = brk <= 1e-12
    ok_geo = changed == 0
    write_csv(os.path.join(out, "roughcheck.csv"), ["check", "value", "tolerance", "pass"],
              [("chen_defect_rel", chen, 1e-12, str(ok_chen).lower()),
               ("bracket_identity_residual", brk, 1e-12, str(ok_brk).lower()),
               ("geometrify_roundtrip_changed", changed, 0, str(ok_geo).lower())])
    print(f"chen_defect_max={chen:.3e} bracket_identity_residual={brk:.3e} "
          f"geometrify_roundtrip={'exact' if ok_geo else 'FAILED'} ({changed} entries changed)")
    return EXIT_OK if (ok_chen and ok_brk and ok_geo) else EXIT_NUMERIC


def cmd_bench(cfg, out, workers):
    model, vol, payoff, rc = _setup(cfg, workers)
    tgrid, sgrid, bnd = pde_setup(model, vol, rc, _strike(cfg))
    fine = rc.fine_grid
    rows = []
    t0 = time.perf_counter()
    samples = simulate_block(vol, fine, rc.seed, 0, rc.v_cap)
    t1 = time.perf_counter()
    lifts = [integrate_vol(s) for s in samples]
    t2 = time.perf_counter()
    drivers = [coarsen(lp, tgrid) for lp in lifts]
    t3 = time.perf_counter()
    solve_rpde_batch(model, payoff, drivers, sgrid, rc.scheme, bnd, rc.stencil)
    t4 = time.perf_counter()
    for name, a, b in (("simulate", t0, t1), ("lift", t1, t2), ("coarsen", t2, t3), ("solve", t3, t4)):
        rows.append((name, BLOCK, b - a, (b - a) / BLOCK))
    write_csv(os.path.join(out, "bench.csv"), ["stage", "samples", "seconds", "seconds_per_sample"], rows)
    for r in rows:
        print(f"{r[0]:<9} {r[2]:.4f}s ({r[3] * 1e3:.2f} ms/sample)")
    return EXIT_OK


COMMANDS = {
    "price": cmd_price,
    "greeks": cmd_greeks,
    "convergence": cmd_convergence,
    "roughcheck": cmd_roughcheck,
    "bench": cmd_bench,
}


def build_parser():
    p = argparse.ArgumentParser(prog="roughlsv", description="Rough-path LSV pricing engine")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, help="root seed (overrides RVP_SEED and sim.seed)")
    p.add_argument("--workers", type=int, default=None, help="worker threads (default: CPU count)")
    p.add_argument("command", choices=sorted(COMMANDS))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.config:
            cfg = cfgmod.load(args.config, args.seed)
        else:
            cfg = cfgmod.resolve({}, args.seed)
        workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        out = args.out or cfg["output.dir"]
        cfg["output.dir"] = out
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "config.resolved"), "w") as fh:
            fh.write(cfgmod.dump(cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, out, workers)
    except (ArithmeticError, VolSimulationError, RoughPathError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
