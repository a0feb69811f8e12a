"""Matching the power price ``gamma`` to an average power budget."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .decomposed import solve_decomposed
from .errors import CalibrationRangeError, ConfigError
from .mdp_full import solve_rvi
from .model import ChainParams
from .steady import steady_state_full, steady_state_per_stream
from .waterfill import CacheTables

log = logging.getLogger(__name__)

__all__ = ["CalibrationPoint", "CalibrationResult", "evaluate_gamma", "gamma_sweep",
           "calibrate_gamma", "DEFAULT_GAMMAS"]

DEFAULT_GAMMAS = np.logspace(-5, 0, 20)


@dataclass(frozen=True)
class CalibrationPoint:
    gamma: float
    power: float
    theta: float
    avg_queue: tuple
    drop_rate: tuple

    def row(self) -> dict:
        out = {"gamma": self.gamma, "P0": self.power, "theta": self.theta}
        for i, (t, d) in enumerate(zip(self.avg_queue, self.drop_rate), start=1):
            out[f"T{i}"] = t
            out[f"drop{i}"] = d
        return out


@dataclass(frozen=True)
class CalibrationResult:
    gamma: float
    achieved_power: float
    target_power: float
    mode: str
    table: list = field(default_factory=list)
    solution: object = field(default=None, repr=False, compare=False)
    steady: object = field(default=None, repr=False, compare=False)


def evaluate_gamma(gamma: float, solver: str, params: ChainParams, cache, warm=None):
    """Solve at ``gamma`` and return ``(point, solution, steady_state)``."""
    p = params.with_gamma(gamma)
    if solver == "full":
        sol = solve_rvi(p, cache, v0=None if warm is None else warm.v)
        ss = steady_state_full(sol, p, cache)
        theta = sol.theta
    elif solver == "decomposed":
        sol = solve_decomposed(p, cache)
        ss = steady_state_per_stream(sol, p, cache)
        theta = float(sum(s.theta for s in sol))
    else:
        raise ConfigError(f"unknown solver mode {solver!r}")
    point = CalibrationPoint(gamma=float(gamma), power=ss.avg_power, theta=theta,
                             avg_queue=tuple(float(x) for x in ss.avg_queue),
                             drop_rate=tuple(float(x) for x in ss.drop_rate))
    return point, sol, ss


def gamma_sweep(solver: str, params: ChainParams, cache, gammas=DEFAULT_GAMMAS) -> list:
    """``(gamma, P0(gamma))`` curve; the full solver warm-starts along it."""
    tables = cache if isinstance(cache, CacheTables) else CacheTables(cache)
    points, warm = [], None
    for g in sorted(float(x) for x in gammas):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            point, sol, _ = evaluate_gamma(g, solver, params, tables, warm)
        for w in caught:
            log.info("gamma=%g: %s", g, w.message)
        warm = sol if solver == "full" else None
        points.append(point)
    return points


def _is_non_increasing(points) -> bool:
    powers = [pt.power for pt in points]
    return all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(powers, powers[1:]))


def calibrate_gamma(target: float, solver: str, params: ChainParams, cache, mode: str = "root-find",
                    gammas=DEFAULT_GAMMAS, rtol: float = 1e-3, max_iter: int = 100) -> CalibrationResult:
    """Find ``gamma`` whose stationary average power equals ``target``.

    ``mode="sweep"`` only tabulates the curve and reports the grid point
    closest to the target (in log power).  ``mode="root-find"`` bisects in
    ``log gamma`` between the bracketing grid points; it requires the swept
    curve to be non-increasing and falls back to the sweep answer otherwise.
    """
    if not target > 0:
        raise ConfigError("target power must be positive")
    if mode not in ("sweep", "root-find"):
        raise ConfigError(f"unknown calibration mode {mode!r}")
    tables = cache if isinstance(cache, CacheTables) else CacheTables(cache)
    points = gamma_sweep(solver, params, tables, gammas)
    curve = [(pt.gamma, pt.power) for pt in points]
    powers = np.array([pt.power for pt in points])
    if not powers.min() <= target <= powers.max():
        raise CalibrationRangeError(
            f"target power {target:g} outside the swept range "
            f"[{powers.min():g}, {powers.max():g}]", curve=curve)

    def nearest():
        k = int(np.argmin(np.abs(np.log(np.maximum(powers, 1e-300)) - np.log(target))))
        pt, sol, ss = evaluate_gamma(points[k].gamma, solver, params, tables)
        return CalibrationResult(gamma=pt.gamma, achieved_power=pt.power, target_power=target,
                                 mode="sweep", table=points, solution=sol, steady=ss)

    if mode == "sweep":
        return nearest()
    if not _is_non_increasing(points):
        log.warning("swept power curve is not monotone; root-find refused, using sweep")
        return nearest()

    k = int(np.nonzero(powers >= target)[0].max())
    if k == len(points) - 1:
        k -= 1
    lo, hi = np.log(points[k].gamma), np.log(points[k + 1].gamma)
    warm = None
    best = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        pt, sol, ss = evaluate_gamma(float(np.exp(mid)), solver, params, tables, warm)
        warm = sol if solver == "full" else None
        if best is None or abs(pt.power - target) < abs(best[0].power - target):
            best = (pt, sol, ss)
        if abs(pt.power - target) <= rtol * target:
            break
        if pt.power > target:
            lo = mid
        else:
            hi = mid
    pt, sol, ss = best
    return CalibrationResult(gamma=pt.gamma, achieved_power=pt.power, target_power=target,
                             mode="root-find", table=points, solution=sol, steady=ss)
