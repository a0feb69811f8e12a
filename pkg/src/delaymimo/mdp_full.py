"""Relative value iteration for the joint ``L``-stream queue MDP.

The backup for joint state ``q`` is

    T V(q) = sum_i beta_i q_i + V(q) + sum_i lam_i dV_i(q + e_i) - phi(dV(q))

with ``dV_i(q) = tau (V(q) - V(q - e_i))`` (zero at ``q_i = 0`` and, for the
arrival term, zero when ``q_i = N`` because arrivals to a full buffer are
lost).  This is the one-slot expectation under the optimal water-filling
action: arrivals with probability ``lam_i tau``, departures with
``mu_i(q) tau`` and a self-loop otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RegimeError
from .model import ChainParams, ControlAction, StateSpace, build_precoder
from .waterfill import CacheTables, WaterfillParams, sort_assignment, waterfill_power

log = logging.getLogger(__name__)

__all__ = [
    "FullSolution",
    "bellman_backup",
    "bellman_residual",
    "delta_v_residual",
    "solve_rvi",
    "delta_v_table",
    "extract_action",
]


@dataclass(frozen=True)
class FullSolution:
    theta: float
    v: np.ndarray
    delta_v: np.ndarray
    gamma: float
    converged: bool
    iterations: int
    span_residual: float
    params: ChainParams | None = field(default=None, repr=False, compare=False)

    @property
    def n_states(self) -> int:
        return self.v.size

    def space(self) -> StateSpace:
        n_streams = self.delta_v.shape[1]
        buffer_size = round(self.v.size ** (1.0 / n_streams)) - 1
        return StateSpace(n_streams, buffer_size, max_states=self.v.size)

    def value(self, q) -> float:
        return float(self.v[self.space().index(q)])


def _as_tables(cache):
    return cache if isinstance(cache, CacheTables) else CacheTables(cache)


def delta_v_table(v: np.ndarray, space: StateSpace, tau: float) -> np.ndarray:
    """``tau (V(q) - V(q - e_i))`` for every state and stream."""
    return tau * (v[:, None] - v[space.down])


class _Backup:
    """Precomputed structure for repeated backups on one chain."""

    def __init__(self, params: ChainParams, cache):
        self.params = params
        self.space = StateSpace.for_params(params)
        self.tables = _as_tables(cache)
        if self.tables.n_ranks < params.n_streams:
            raise ConfigError("cache has fewer eigenvalue columns than streams")
        self.holding = self.space.states @ params.betas
        self.lam = params.lambdas
        self.nbar = params.nbars

    def __call__(self, v: np.ndarray, check: bool = True):
        p = self.params
        sp = self.space
        eta = delta_v_table(v, sp, p.tau)
        up = p.tau * (v[sp.up] - v[:, None])
        value, power, rate = self.tables.phi(eta, self.nbar, p.gamma, p.alpha)
        if check:
            stay = 1.0 - p.tau * (self.lam.sum() + (rate / self.nbar[None, :]).sum(axis=1))
            if np.any(stay < -1e-12):
                bad = int(np.argmin(stay))
                raise RegimeError(
                    f"transition probabilities invalid at state {tuple(sp.states[bad])}: "
                    f"stay probability {stay[bad]:.4g} < 0 (tau too large for the service rates)")
        tv = self.holding + v + up @ self.lam - value
        self.last_policy = (power, rate)
        return tv, power

    def evaluate(self, v: np.ndarray, sweeps: int) -> np.ndarray:
        """Relative value sweeps under the policy of the last backup."""
        p = self.params
        sp = self.space
        power, rate = self.last_policy
        cost = self.holding + p.gamma * power
        mu = p.tau * rate / self.nbar[None, :]
        for _ in range(sweeps):
            v = (cost + v + p.tau * (v[sp.up] - v[:, None]) @ self.lam
                 - (mu * (v[:, None] - v[sp.down])).sum(axis=1))
            v = v - v[0]
        return v


def bellman_backup(v, params: ChainParams, cache):
    """One backup; returns the re-pinned table and the estimate of theta."""
    tv, _ = _Backup(params, cache)(np.asarray(v, dtype=float))
    theta = float(tv[0] - v[0])
    return tv - tv[0], theta


def bellman_residual(theta: float, v, params: ChainParams, cache) -> np.ndarray:
    """Per-state ``T V - V - theta``."""
    v = np.asarray(v, dtype=float)
    tv, _ = _Backup(params, cache)(v, check=False)
    return tv - v - theta


def delta_v_residual(theta: float, delta_v, params: ChainParams, cache) -> np.ndarray:
    """Per-state residual of the Bellman equation written in ``dV`` alone.

    ``sum_i beta_i q_i + sum_i lam_i dV_i(q + e_i) - phi(dV(q)) - theta``,
    with the arrival term dropped at a full buffer.  It equals
    :func:`bellman_residual` for a table built from ``V`` but can be
    evaluated on a stored (or tampered) ``dV`` table directly.
    """
    space = StateSpace.for_params(params)
    dv = np.asarray(delta_v, dtype=float)
    tables = _as_tables(cache)
    cols = np.arange(params.n_streams)
    nxt = np.where(space.states < params.buffer_size, dv[space.up, cols], 0.0)
    value, _, _ = tables.phi(np.maximum(dv, 0.0), params.nbars, params.gamma, params.alpha)
    return space.states @ params.betas + nxt @ params.lambdas - value - theta


def solve_rvi(params: ChainParams, cache, tol: float = 1e-8, max_iter: int = 100_000,
              v0=None, eval_sweeps: int = 50) -> FullSolution:
    """Relative value iteration with the span-seminorm stopping rule.

    Parameters
    ----------
    v0 : array, optional
        Warm start (useful across a gamma sweep).
    eval_sweeps : int
        Cheap fixed-policy sweeps between full backups (modified policy
        iteration).  Every stopping test is still made on a full backup,
        so ``min(TV - V) <= theta <= max(TV - V)`` holds at exit.  Use 0
        for plain value iteration.
    """
    backup = _Backup(params, cache)
    v = np.zeros(backup.space.size) if v0 is None else np.asarray(v0, dtype=float) - v0[0]
    span = np.inf
    theta = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        tv, _ = backup(v)
        diff = tv - v
        span = float(diff.max() - diff.min())
        theta = float(diff[0])
        v = tv - tv[0]
        if span < tol:
            break
        if eval_sweeps:
            v = backup.evaluate(v, eval_sweeps)
    converged = span < tol
    if not converged:
        log.warning("RVI stopped after %d iterations with span %.3g", it, span)
    return FullSolution(theta=theta, v=v, delta_v=delta_v_table(v, backup.space, params.tau),
                        gamma=params.gamma, converged=converged, iterations=it,
                        span_residual=span, params=params)


def extract_action(sol: FullSolution, state, ch, params: ChainParams | None = None) -> ControlAction:
    """Online step: sort eigenmodes by the state's ``dV`` and water-fill."""
    params = params or sol.params
    if params is None:
        raise ConfigError("chain parameters are needed to extract an action")
    idx = StateSpace.for_params(params).index(state)
    eta = np.maximum(sol.delta_v[idx], 0.0)
    assignment = sort_assignment(eta)
    wf = WaterfillParams(eta=eta, nbar=params.nbars, gamma=params.gamma, alpha=params.alpha)
    powers = waterfill_power(wf, ch.eigvals, assignment)
    return ControlAction(assignment=assignment, powers=powers,
                         precoder=build_precoder(ch.eigvecs, assignment, powers))
