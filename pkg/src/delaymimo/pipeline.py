"""Solve, calibrate, analyze and simulate one configuration point.

These helpers sit between :mod:`delaymimo.config` and the command line so
that sweeps, the verification suite and scripts share one code path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibrate import calibrate_gamma, evaluate_gamma
from .config import POLICY_NAMES, RunConfig
from .errors import CalibrationRangeError, ConfigError, NumericalError
from .phy import EigenSampleCache, PhyConfig
from .policies import (analyze_policy, csit_only_policy, decomposed_handle, full_policy,
                       round_robin_policy)
from .simulator import run_sim
from .waterfill import CacheTables

log = logging.getLogger(__name__)

CACHE_ENV = "DELAYMIMO_CACHE_DIR"


def cache_key(phy: PhyConfig, rows: int, seed: int) -> str:
    key = {"n_tx": phy.n_tx, "n_rx": phy.n_rx, "n_streams": phy.n_streams,
           "sigma_e2": phy.sigma_e2, "variant": phy.csit_variant, "rows": rows, "seed": seed}
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]


def get_cache(phy: PhyConfig, rows: int, seed: int, cache_dir=None) -> EigenSampleCache:
    """Build the eigenvalue cache, reusing a stored copy when a directory is set."""
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    if not cache_dir:
        return EigenSampleCache.build(phy, rows, seed)
    path = Path(cache_dir) / f"eig-{cache_key(phy, rows, seed)}.npz"
    if path.exists():
        return EigenSampleCache.load(path)
    cache = EigenSampleCache.build(phy, rows, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    cache.save(path)
    return cache


@dataclass
class SolvedPoint:
    mode: str
    gamma: float
    solution: object
    steady: object
    elapsed: float
    calibration: object = None

    @property
    def theta(self) -> float:
        if self.mode == "full":
            return float(self.solution.theta)
        return float(sum(s.theta for s in self.solution))


def solve_point(cfg: RunConfig, cache, mode: str) -> SolvedPoint:
    """Solve at ``cfg.gamma`` or calibrate ``gamma`` to ``cfg.p0``."""
    tables = cache if isinstance(cache, CacheTables) else CacheTables(cache)
    start = time.perf_counter()
    if cfg.p0 is None:
        params = cfg.chain(cfg.gamma)
        _, sol, ss = evaluate_gamma(cfg.gamma, mode, params, tables)
        return SolvedPoint(mode, cfg.gamma, sol, ss, time.perf_counter() - start)
    res = calibrate_gamma(cfg.p0, mode, cfg.chain(1.0), tables, mode=cfg.calibration)
    return SolvedPoint(mode, res.gamma, res.solution, res.steady, time.perf_counter() - start,
                       calibration=res)


def build_policy(name: str, cfg: RunConfig, cache, solved: dict, budget: float | None):
    """Policy handle for a short policy name (``full``, ``decomposed``, ``rr``, ``csit``)."""
    if name in ("full", "decomposed"):
        pt = solved[name]
        params = cfg.chain(pt.gamma)
        if name == "full":
            return full_policy(pt.solution, params)
        return decomposed_handle(pt.solution, params)
    if budget is None:
        raise ConfigError("baselines need a power budget (give p0 or solve a queue-aware policy)")
    params = cfg.chain(1.0)
    maker = round_robin_policy if name == "rr" else csit_only_policy
    return maker(params, cfg.phy, budget, cache=cache, match_average=cfg.match_average)


def _sim_job(args):
    handle, params, phy, slots, seed = args
    return run_sim(handle, params, phy, slots, seed)


def run_seeds(handle, cfg: RunConfig, seeds, workers: int = 1) -> list:
    """One SimReport per seed, in seed order whatever the worker count."""
    jobs = [(handle, handle.params, cfg.phy, cfg.slots, s) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_sim_job, jobs))
    else:
        reports = [_sim_job(j) for j in jobs]
    return sorted(reports, key=lambda r: r.seed)


def needed_solvers(policies) -> list:
    out = [p for p in ("full", "decomposed") if p in policies]
    if any(p in ("rr", "csit") for p in policies) and "decomposed" not in out and "full" not in out:
        out.append("decomposed")
    return out


def evaluate_point(cfg: RunConfig, label: dict, simulate: bool = True) -> list:
    """Rows ``(point, policy, stream)`` with analytic and empirical metrics.

    Baselines are matched to ``cfg.p0`` when given, otherwise to the
    analytic power of the decomposed (or full) policy.
    """
    base = {**label, "status": "ok", "error": ""}
    try:
        cache = get_cache(cfg.phy, cfg.cache_rows, cfg.cache_seed)
        tables = CacheTables(cache)
        solved = {m: solve_point(cfg, tables, m) for m in needed_solvers(cfg.policies)}
    except (ConfigError, CalibrationRangeError, NumericalError) as exc:
        return [{**base, "policy": POLICY_NAMES[p], "status": "failed", "error": str(exc)}
                for p in cfg.policies]
    ref = solved.get("decomposed") or solved.get("full")
    budget = cfg.p0 if cfg.p0 is not None else ref.steady.avg_power
    rows = []
    for name in cfg.policies:
        try:
            handle = build_policy(name, cfg, tables, solved, budget)
            ss = solved[name].steady if name in solved else analyze_policy(handle, handle.params,
                                                                          tables)
            reports = run_seeds(handle, cfg, cfg.seeds, cfg.workers) if simulate else []
        except (ConfigError, CalibrationRangeError, NumericalError) as exc:
            rows.append({**base, "policy": POLICY_NAMES[name], "status": "failed",
                         "error": str(exc)})
            continue
        gamma = solved[name].gamma if name in solved else ""
        for i in range(len(cfg.streams)):
            row = {**base, "policy": POLICY_NAMES[name], "stream": i + 1, "gamma": gamma,
                   "analytic_queue": float(ss.avg_queue[i]),
                   "analytic_power": float(ss.avg_power),
                   "analytic_drop": float(ss.drop_rate[i])}
            if reports:
                row["empirical_queue"] = float(np.mean([r.avg_queue[i] for r in reports]))
                row["empirical_power"] = float(np.mean([r.avg_power for r in reports]))
                row["seeds"] = " ".join(str(r.seed) for r in reports)
            rows.append(row)
    return rows


def sweep_configs(cfg: RunConfig, axis: str, grid) -> list:
    """``(label, config)`` pairs for one sweep axis."""
    out = []
    for value in grid:
        if axis == "P0":
            point = cfg.replace(p0=value)
            label = {"axis": axis, "value": point.p0}
        elif axis == "sigma_e2":
            point = cfg.replace(phy=dataclasses.replace(cfg.phy, sigma_e2=float(value)))
            label = {"axis": axis, "value": float(value)}
        elif axis == "antennas":
            text = str(value).lower()
            n_tx, n_rx = (int(x) for x in text.split("x")) if "x" in text else (int(text),) * 2
            point = cfg.replace(phy=dataclasses.replace(cfg.phy, n_tx=n_tx, n_rx=n_rx))
            label = {"axis": axis, "value": f"{n_tx}x{n_rx}"}
        else:
            raise ConfigError(f"unknown sweep axis {axis!r}; choose P0, sigma_e2 or antennas")
        out.append((label, point))
    return out


def _point_job(args):
    cfg, label, simulate = args
    return evaluate_point(cfg, label, simulate)


def run_sweep(cfg: RunConfig, axis: str, grid, simulate: bool = True) -> list:
    points = sweep_configs(cfg, axis, grid)
    jobs = [(c, {"point": k, **label}, simulate) for k, (label, c) in enumerate(points)]
    if cfg.workers > 1 and len(jobs) > 1:
        inner = [(dataclasses.replace(c, workers=1), lb, s) for c, lb, s in jobs]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_point_job, inner))
    else:
        chunks = [_point_job(j) for j in jobs]
    rows = [r for chunk in chunks for r in chunk]
    return sorted(rows, key=lambda r: (r["point"], r["policy"], r.get("stream", 0)))
