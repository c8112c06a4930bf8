"""Command-line runner: ``lrshift <subcommand> --config cfg.json --out DIR``.

Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 validation
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .config import (
    ConfigError,
    build_experiment,
    build_path,
    build_problem,
    build_scheduler,
    build_shift,
    default_sigma,
    load_config,
    reference_markdown,
    section,
    set_dotted,
    sweep_points,
)
from .core import DivergenceError, UsageError
from .engine import run_online, scheduler_stats, summarize, trace_to_csv, write_summary
from .schedulers import emit_schedule
from .theory import (
    EnsembleConfig,
    bound_ledger,
    ensemble_moments,
    max_relative_deviation,
    ode_for,
    stein_check,
)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_VALIDATION = 0, 2, 3, 4
SCHEMA = "lrshift/1"

log = logging.getLogger("lrshift")


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or section(cfg, "output")["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj, dest: Path) -> None:
    dest.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_rows(rows: List[Dict[str, Any]], dest: Path, schema: str) -> None:
    cols: List[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(dest, "w", newline="") as fh:
        fh.write(f"# {schema}\n")
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _mean_se(x) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args, cfg) -> int:
    exp, sched = build_experiment(cfg, args.seed)
    out = _out_dir(args, cfg)
    start = time.perf_counter()
    trace = run_online(exp, sched)
    ms = (time.perf_counter() - start) * 1e3
    trace_to_csv(trace, out / "trace.csv")
    write_summary(summarize(trace, exp, sched, ms, config_echo=cfg), out / "summary.json")
    print(f"steps={len(trace)} total_regret={trace.total_regret:.6g} -> {out}")
    return EXIT_OK


def _sweep_child(task):
    idx, point, seed, cfg, out = task
    row: Dict[str, Any] = {"point": idx, **point, "seed": seed}
    try:
        exp, sched = build_experiment(set_dotted_all(cfg, point), seed)
        start = time.perf_counter()
        trace = run_online(exp, sched)
        row["runtime_ms"] = (time.perf_counter() - start) * 1e3
    except DivergenceError as e:
        return {**row, "status": f"diverged: {e}"}
    except UsageError as e:
        return {**row, "status": f"config error: {e}"}
    trace_to_csv(trace, out / "traces" / f"p{idx}_s{seed}.csv")
    stats = scheduler_stats(trace)
    return {**row, "total_regret": trace.total_regret, "eta_mean": stats["eta_mean"],
            "runtime_ms": row["runtime_ms"], "status": "ok"}


def set_dotted_all(cfg, point: Dict[str, Any]):
    for k, v in point.items():
        cfg = set_dotted(cfg, k, v)
    return cfg


def cmd_sweep(args, cfg) -> int:
    points = sweep_points(cfg)
    seeds = section(cfg, "sweep")["seeds"]
    if args.seed is not None:
        seeds = [args.seed]
    if args.replicas is not None:
        seeds = list(range(args.replicas))
    # fail fast on points that cannot even be built
    for p in points:
        build_experiment(set_dotted_all(cfg, p), 0)
    out = _out_dir(args, cfg)
    (out / "traces").mkdir(exist_ok=True)
    tasks = [(i, p, s, cfg, out) for i, p in enumerate(points) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_child, tasks))
    else:
        rows = [_sweep_child(t) for t in tasks]
    _write_rows(rows, out / "sweep.csv", f"{SCHEMA} sweep")

    summary = []
    for i, p in enumerate(points):
        ok = [r for r in rows if r["point"] == i and r["status"] == "ok"]
        if not ok:
            continue
        m, se = _mean_se([r["total_regret"] for r in ok])
        summary.append({"point": i, **p, "seeds": len(ok), "mean_regret": m, "se_regret": se,
                        "eta_mean": float(np.mean([r["eta_mean"] for r in ok]))})
    summary.sort(key=lambda r: r["mean_regret"])
    for rank, r in enumerate(summary, start=1):
        r["rank"] = rank
    _write_rows(summary, out / "sweep_summary.csv", f"{SCHEMA} sweep-summary")
    for r in summary:
        print(f"rank {r['rank']}: point {r['point']} mean_regret={r['mean_regret']:.6g} (se {r['se_regret']:.3g})")

    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        for r in failed:
            print(f"point {r['point']} seed {r['seed']}: {r['status']}", file=sys.stderr)
        if any(r["status"].startswith("diverged") for r in failed):
            return EXIT_DIVERGENCE
        return EXIT_CONFIG
    return EXIT_OK


def cmd_validate_ode(args, cfg) -> int:
    v = section(cfg, "validate")
    ens = EnsembleConfig(d=int(v["d"]), epsilon=float(v["epsilon"]), horizon=float(v["horizon"]),
                         batch_size=int(v["batch_size"]), sigma=float(v["sigma"]),
                         zeta=float(v["zeta"]), theta0=v["theta0"], theta_star=v["theta_star"])
    n = int(args.replicas if args.replicas is not None else v["replicas"])
    seed = 0 if args.seed is None else args.seed
    emp = ensemble_moments(ens, n, seed=seed, jobs=args.jobs)
    ode = ode_for(ens, dtau=min(float(v["dtau"]), ens.epsilon))
    dev = max_relative_deviation(emp, ode)
    ok = dev <= float(v["tolerance"])
    out = _out_dir(args, cfg)
    emp.to_csv(out / "moments_ensemble.csv")
    ode.to_csv(out / "moments_ode.csv")
    _dump({"epsilon": ens.epsilon, "replicas": n, "seed": seed, "max_rel_dev": dev,
           "tolerance": float(v["tolerance"]), "pass": ok}, out / "report.json")
    print(f"max relative deviation {dev:.4g} (tolerance {float(v['tolerance']):g}): "
          f"{'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_validate_bounds(args, cfg) -> int:
    b = section(cfg, "bounds")
    problem = build_problem(cfg)
    d = build_path(cfg).dim
    L = float(b["L"]) if b["L"] is not None else problem.smoothness
    sigma = float(b["sigma"]) if b["sigma"] is not None else default_sigma(problem, d)
    mu = b["mu"]
    if mu is None and problem.kind == "linear":
        mu = 1.0
    n_seeds = int(args.replicas if args.replicas is not None else b["seeds"])
    base = 0 if args.seed is None else args.seed
    nonconvex = problem.kind == "nonconvex_synthetic"
    regret, totals = [], {}
    out = _out_dir(args, cfg)
    for s in range(base, base + n_seeds):
        exp, sched = build_experiment(cfg, s)
        trace = run_online(exp, sched)
        D_max = float(b["D_max"]) if b["D_max"] is not None else exp.ball.diameter
        led = bound_ledger(trace, L, sigma, D_max=None if nonconvex else D_max,
                           mu=None if nonconvex else mu, nonconvex=nonconvex)
        if s == base:
            led.to_csv(out / "bounds.csv")
        regret.append(trace.total_regret)
        for k, v in led.totals().items():
            if k != "regret":
                totals.setdefault(k, []).append(v)
    slack = float(b["slack_se"])
    r_mean, r_se = _mean_se(regret)
    report: Dict[str, Any] = {"seeds": n_seeds, "regret": {"mean": r_mean, "se": r_se}, "checks": {}}
    ok = True
    for k, vals in totals.items():
        m, se = _mean_se(vals)
        report[k] = {"mean": m, "se": se}
        tol = slack * math.hypot(se, r_se)
        if k.startswith("upper"):
            passed = r_mean <= m + tol
        elif k.startswith("lower"):
            passed = m <= r_mean + tol
        else:
            continue
        report["checks"][k] = passed
        ok &= passed
        print(f"{k}: {m:.6g} vs regret {r_mean:.6g}: {'pass' if passed else 'FAIL'}")
    report["pass"] = ok
    _dump(report, out / "bounds_report.json")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_stein(args, cfg) -> int:
    st = section(cfg, "stein")
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    u = rng.standard_normal(int(st["d"]))
    u /= np.linalg.norm(u)
    n = int(args.replicas if args.replicas is not None else st["n"])
    emp, ana, dev = stein_check(u, n, rng)
    ok = dev <= float(st["tolerance"])
    out = _out_dir(args, cfg)
    _dump({"u": u.tolist(), "n": n, "empirical": emp.tolist(), "analytic": ana.tolist(),
           "max_abs_dev": dev, "tolerance": float(st["tolerance"]), "pass": ok}, out / "stein.json")
    print(f"max entry deviation {dev:.4g}: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_emit_schedule(args, cfg) -> int:
    sh = section(cfg, "shift")
    d = int(sh["d"]) if sh["d"] is not None else int(section(cfg, "path")["d"])
    gammas = build_shift(sh, int(sh["T"])).gammas
    sched = build_scheduler(cfg, d)
    batch = section(cfg, "engine")["batch_size"]
    rows = emit_schedule(sched, gammas, batch, d, v0_hint=float(sh["v0"]))
    out = _out_dir(args, cfg)
    _write_rows(rows, out / "schedule.csv", f"{SCHEMA} schedule")
    print(f"{len(rows)} steps, eta in [{min(r['eta'] for r in rows):.4g}, "
          f"{max(r['eta'] for r in rows):.4g}] -> {out / 'schedule.csv'}")
    return EXIT_OK


def cmd_reference(args, cfg) -> int:
    text = reference_markdown()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


COMMANDS = {
    "run": (cmd_run, "single online run: trace.csv + summary.json"),
    "sweep": (cmd_sweep, "grid of runs over config overrides and seeds"),
    "validate-ode": (cmd_validate_ode, "ensemble second moment vs moment ODE"),
    "validate-bounds": (cmd_validate_bounds, "seed-averaged regret vs bound accumulators"),
    "stein": (cmd_stein, "Monte Carlo check of the Gaussian fourth-moment identity"),
    "emit-schedule": (cmd_emit_schedule, "step-size trace driven by a shift trace, no SGD"),
    "reference": (cmd_reference, "print the config reference page"),
}
NEEDS_CONFIG = {"run", "sweep", "validate-bounds", "emit-schedule"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lrshift", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--out", help="output directory (reference: output file)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--replicas", type=int, help="replicas / seeds / draws override")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn, _ = COMMANDS[args.command]
    try:
        if args.config is not None:
            cfg = load_config(args.config)
        elif args.command in NEEDS_CONFIG:
            raise ConfigError(f"{args.command} needs --config")
        else:
            cfg = {}
        if args.replicas is not None and args.replicas < 1:
            raise ConfigError("--replicas must be >= 1")
        return fn(args, cfg)
    except DivergenceError as e:
        print(f"error: numeric divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (UsageError, ValueError, TypeError) as e:
        print(f"error: invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
