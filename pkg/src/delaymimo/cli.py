"""Command-line front end: ``delaymimo {solve,calibrate,simulate,sweep,verify}``.

Exit codes: 0 success, 1 configuration error (including regime violations
and unreachable power budgets), 2 numerical failure, 3 verification
failure.  Set ``DELAYMIMO_CACHE_DIR`` to reuse eigenvalue caches between
runs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import calibrate_gamma
from .config import POLICY_NAMES, RunConfig, load_config, parse_power
from .errors import CalibrationRangeError, ConfigError, NumericalError
from .io import provenance_lines, save_full_solution, save_stream_solutions, write_rows
from .model import StateSpace
from .pipeline import build_policy, get_cache, run_seeds, run_sweep, solve_point
from .verify import format_table, run_suite
from .waterfill import CacheTables

log = logging.getLogger("delaymimo")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _seed_list(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers: {text}") from exc


def _policy_list(text: str) -> tuple:
    names = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = [n for n in names if n not in POLICY_NAMES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown policy {bad}; choose from {sorted(POLICY_NAMES)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON run configuration")
    common.add_argument("--gamma", type=float, help="power price (excludes --p0)")
    common.add_argument("--p0", help="average power budget, linear or e.g. '20dB'")
    common.add_argument("--mode", choices=("full", "decomposed", "both"), help="solver")
    common.add_argument("--policy", type=_policy_list,
                        help="comma list from full,decomposed,rr,csit")
    common.add_argument("--slots", type=int, help="simulated slots per seed")
    common.add_argument("--seeds", type=_seed_list, help="comma list of simulation seeds")
    common.add_argument("--sigma-e2", type=float, help="CSIT error variance")
    common.add_argument("--cache-rows", type=int, help="eigenvalue samples in the cache")
    common.add_argument("--cache-seed", type=int, help="seed of the eigenvalue cache")
    common.add_argument("--workers", type=int, help="worker processes for seeds and sweep points")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="delaymimo",
                     description="Queue-aware MIMO precoding: offline solvers and simulation.")
    parser.add_argument("--version", action="version", version=f"delaymimo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("solve", parents=[common], help="solve the queue MDP offline")
    cal = sub.add_parser("calibrate", parents=[common], help="match gamma to a power budget")
    cal.add_argument("--calibration", choices=("sweep", "root-find"))
    sub.add_parser("simulate", parents=[common], help="Monte Carlo runs of the policies")
    sw = sub.add_parser("sweep", parents=[common], help="delay curves along one axis")
    sw.add_argument("--axis", required=True, choices=("P0", "sigma_e2", "antennas"))
    sw.add_argument("--grid", required=True,
                    help="comma list: powers (e.g. 10dB,20dB), error variances or NxM sizes")
    sw.add_argument("--no-sim", action="store_true", help="analytic columns only")
    sw.add_argument("--plot-spec", action="store_true", help="also write a vega-lite spec")
    ver = sub.add_parser("verify", help="run the cross-module oracle suite")
    ver.add_argument("--cache-rows", type=int, default=100_000)
    ver.add_argument("--seed", type=int, default=1)
    ver.add_argument("--inject-fault", action="store_true",
                     help="perturb the stored dV tables (negative control)")
    ver.add_argument("--json", action="store_true", help="one JSON object per check")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.gamma is not None and args.p0 is not None:
        raise ConfigError("give exactly one of --gamma and --p0")
    changes = {}
    if args.gamma is not None:
        changes.update(gamma=args.gamma, p0=None)
    if args.p0 is not None:
        changes.update(p0=parse_power(args.p0), gamma=None)
    for flag, key in (("mode", "mode"), ("policy", "policies"), ("slots", "slots"),
                      ("seeds", "seeds"), ("cache_rows", "cache_rows"),
                      ("cache_seed", "cache_seed"), ("workers", "workers"), ("out", "out"),
                      ("calibration", "calibration")):
        val = getattr(args, flag, None)
        if val is not None:
            changes[key] = val
    if args.sigma_e2 is not None:
        changes["phy"] = dataclasses.replace(cfg.phy, sigma_e2=args.sigma_e2)
    return cfg.replace(**changes) if changes else cfg


def _modes(cfg: RunConfig) -> list:
    return ["full", "decomposed"] if cfg.mode == "both" else [cfg.mode]


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _header(cfg: RunConfig, **extra) -> list:
    return provenance_lines(cfg.digest(), cfg.cache_seed, extra)


def cmd_solve(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    n_states = cfg.chain(1.0).n_states
    lines = [f"delaymimo {__version__} solve", f"config_hash {cfg.digest()}",
             f"scenario {cfg.scenario}", f"joint states (N+1)^L = {n_states}"]
    start = time.perf_counter()
    cache = get_cache(cfg.phy, cfg.cache_rows, cfg.cache_seed)
    tables = CacheTables(cache)
    lines.append(f"cache {cache.fingerprint()} rows={cache.n_samples} seed={cache.seed} "
                 f"({time.perf_counter() - start:.3f} s)")
    for mode in _modes(cfg):
        if mode == "full":
            StateSpace(len(cfg.streams), cfg.buffer_size, cfg.max_states)
        pt = solve_point(cfg, tables, mode)
        path = out / f"solution_{mode}.json"
        if mode == "full":
            save_full_solution(pt.solution, path, cfg.digest(), cache.fingerprint())
        else:
            save_stream_solutions(pt.solution, path, cfg.digest(), cache.fingerprint())
        lines += ["", f"[{mode}] gamma={pt.gamma:.6g} theta={pt.theta:.10g} "
                  f"time={pt.elapsed:.4f} s", f"  avg power {pt.steady.avg_power:.6g}",
                  "  mean queue " + " ".join(f"{x:.6g}" for x in pt.steady.avg_queue),
                  "  drop rate " + " ".join(f"{x:.3g}" for x in pt.steady.drop_rate)]
        if mode == "full":
            space = StateSpace(len(cfg.streams), cfg.buffer_size, cfg.max_states)
            lines.append(f"  RVI iterations {pt.solution.iterations} "
                         f"span {pt.solution.span_residual:.2e}")
            lines.append("  state      dV")
            for q, row in zip(space.states, pt.solution.delta_v):
                lines.append(f"  {tuple(int(x) for x in q)!s:<10} "
                             + " ".join(f"{x:12.6g}" for x in row))
        else:
            for s in pt.solution:
                lines.append(f"  stream {s.stream + 1} rank {s.rank + 1} theta {s.theta:.10g} "
                             f"bisection steps {s.iterations}")
                lines.append("    dV(1..N) " + " ".join(f"{x:.6g}" for x in s.delta_v))
        lines.append(f"  wrote {path}")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    if cfg.p0 is None:
        raise ConfigError("calibrate needs a power budget (--p0 or p0 in the config)")
    out = _outdir(cfg)
    cache = get_cache(cfg.phy, cfg.cache_rows, cfg.cache_seed)
    tables = CacheTables(cache)
    for mode in _modes(cfg):
        res = calibrate_gamma(cfg.p0, mode, cfg.chain(1.0), tables, mode=cfg.calibration)
        path = out / f"calibration_{mode}.csv"
        write_rows(path, [pt.row() for pt in res.table],
                   _header(cfg, solver=mode, target=cfg.p0))
        print(f"[{mode}] target {cfg.p0:.6g} -> gamma {res.gamma:.6g} "
              f"(power {res.achieved_power:.6g}, {res.mode}); curve in {path}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    cache = get_cache(cfg.phy, cfg.cache_rows, cfg.cache_seed)
    tables = CacheTables(cache)
    needed = [m for m in ("full", "decomposed") if m in cfg.policies]
    if any(p in ("rr", "csit") for p in cfg.policies) and cfg.p0 is None and not needed:
        needed = ["decomposed"]
    solved = {m: solve_point(cfg, tables, m) for m in needed}
    ref = solved.get("decomposed") or solved.get("full")
    budget = cfg.p0 if cfg.p0 is not None else (ref.steady.avg_power if ref else None)
    rows = []
    for name in cfg.policies:
        handle = build_policy(name, cfg, tables, solved, budget)
        for rep in run_seeds(handle, cfg, cfg.seeds, cfg.workers):
            stem = out / f"sim_{name}_seed{rep.seed}"
            rep.to_json(stem.with_suffix(".json"))
            rep.to_csv(stem.with_suffix(".csv"))
            rep.histogram_csv(out / f"hist_{name}_seed{rep.seed}.csv", cfg.buffer_size)
            if rep.clamped_slots:
                log.warning("%s seed %d: %d slots clamped (lam*tau + mu*tau > 1)", name,
                            rep.seed, rep.clamped_slots)
            for i, t in enumerate(rep.avg_queue):
                rows.append({"policy": rep.policy, "seed": rep.seed, "stream": i + 1,
                             "avg_queue": float(t), "avg_power": rep.avg_power,
                             "weighted_delay": rep.weighted_delay, "drops": int(rep.drops[i])})
            print(f"{rep.policy:<13} seed {rep.seed}: queue "
                  + " ".join(f"{x:.4f}" for x in rep.avg_queue)
                  + f"  power {rep.avg_power:.4g}  weighted {rep.weighted_delay:.4f}")
    write_rows(out / "simulate.csv", rows, _header(cfg, slots=cfg.slots))
    return EXIT_OK


def _vega_spec(csv_name: str, axis: str) -> dict:
    return {
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "data": {"url": csv_name, "format": {"type": "csv", "parse": {"value": "number"}}},
        "mark": {"type": "line", "point": True},
        "encoding": {
            "x": {"field": "value", "type": "quantitative" if axis != "antennas" else "ordinal",
                  "title": axis},
            "y": {"field": "analytic_queue", "type": "quantitative", "title": "mean queue"},
            "color": {"field": "policy", "type": "nominal"},
            "strokeDash": {"field": "stream", "type": "nominal"},
        },
    }


def cmd_sweep(cfg: RunConfig, axis: str, grid_text: str, simulate: bool, plot_spec: bool) -> int:
    out = _outdir(cfg)
    grid = [x.strip() for x in grid_text.split(",") if x.strip()]
    if axis == "P0":
        grid = [parse_power(x) for x in grid]
    elif axis == "sigma_e2":
        grid = [float(x) for x in grid]
    rows = run_sweep(cfg, axis, grid, simulate=simulate)
    columns = ["point", "axis", "value", "policy", "stream", "gamma", "analytic_queue",
               "analytic_power", "analytic_drop", "empirical_queue", "empirical_power", "seeds",
               "status", "error"]
    path = out / f"sweep_{axis}.csv"
    write_rows(path, rows, _header(cfg, axis=axis, slots=cfg.slots if simulate else 0), columns)
    if plot_spec:
        (out / f"sweep_{axis}.vl.json").write_text(json.dumps(_vega_spec(path.name, axis),
                                                              indent=2) + "\n")
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"wrote {len(rows)} rows to {path}" + (f" ({failed} failed)" if failed else ""))
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_suite(rows=args.cache_rows, seed=args.seed, inject_fault=args.inject_fault)
    print(format_table(results, as_json=args.json))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        if args.command == "verify":
            return cmd_verify(args)
        cfg = resolve_config(args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "calibrate":
            return cmd_calibrate(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_sweep(cfg, args.axis, args.grid, not args.no_sim, args.plot_spec)
    except (ConfigError, CalibrationRangeError) as exc:
        print(f"delaymimo: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"delaymimo: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
