"""Stationary analysis of the controlled queue chains.

The joint chain is solved by global balance (sparse direct solve), which
needs no reversibility assumption.  Per-stream birth-death chains use the
product formula ``w_q ~ prod_k lam / mu(k)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import NumericalError, RegimeError
from .model import ChainParams, StateSpace
from .waterfill import CacheTables

__all__ = [
    "SteadyState",
    "global_balance",
    "joint_transition_matrix",
    "birth_death_stationary",
    "full_policy_rates",
    "steady_state_full",
    "steady_state_per_stream",
    "stream_policy_rates",
    "detailed_balance_gap",
]

BALANCE_TOL = 1e-10


@dataclass(frozen=True)
class SteadyState:
    """Stationary queue law with the derived delay, power and loss figures.

    ``omega`` is the joint table (lexicographic states) in ``"full"`` mode
    and a list of per-stream vectors in ``"decomposed"`` mode.
    """

    omega: object
    avg_queue: np.ndarray
    avg_power: float
    drop_rate: np.ndarray
    mode: str = "full"

    def weighted_delay(self, betas) -> float:
        return float(np.dot(betas, self.avg_queue))

    def cost(self, betas, gamma) -> float:
        """Lagrangian cost ``sum beta_i T_i + gamma P``."""
        return self.weighted_delay(betas) + gamma * self.avg_power

    def little_delay(self, lambdas) -> np.ndarray:
        """Mean queue divided by accepted throughput (channel uses); derived."""
        lambdas = np.asarray(lambdas, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.avg_queue / (lambdas * (1.0 - self.drop_rate))

    def joint(self) -> np.ndarray:
        """Joint stationary vector in lexicographic state order."""
        if self.mode == "full":
            return np.asarray(self.omega)
        out = np.ones(1)
        for w in self.omega:
            out = np.outer(out, w).ravel()
        return out

    def marginals(self, buffer_size: int) -> list:
        if self.mode != "full":
            return [np.asarray(w) for w in self.omega]
        n_streams = self.avg_queue.size
        table = np.asarray(self.omega).reshape((buffer_size + 1,) * n_streams)
        return [table.sum(axis=tuple(j for j in range(n_streams) if j != i))
                for i in range(n_streams)]


def joint_transition_matrix(mu_tau: np.ndarray, lam_tau, space: StateSpace) -> sps.csr_matrix:
    """One-slot matrix with at most one arrival or departure per slot."""
    mu_tau = np.asarray(mu_tau, dtype=float)
    lam_tau = np.asarray(lam_tau, dtype=float)
    n = space.size
    rows, cols, vals = [], [], []
    idx = np.arange(n)
    for i in range(space.n_streams):
        rows += [idx, idx]
        cols += [space.up[:, i], space.down[:, i]]
        vals += [np.full(n, lam_tau[i]), np.where(space.states[:, i] > 0, mu_tau[:, i], 0.0)]
    moving = sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n, n))
    stay = 1.0 - np.asarray(moving.sum(axis=1)).ravel()
    if np.any(stay < -1e-12):
        bad = int(np.argmin(stay))
        raise RegimeError(f"sum of lam*tau and mu*tau exceeds 1 in state "
                          f"{tuple(space.states[bad])} (stay probability {stay[bad]:.3g})")
    return (moving + sps.diags(np.maximum(stay, 0.0))).tocsr()


def global_balance(p, check: bool = True) -> np.ndarray:
    """Stationary row vector of a (single recurrent class) stochastic matrix."""
    p = sps.csr_matrix(p)
    n = p.shape[0]
    if n == 1:
        return np.ones(1)
    a = (p.T - sps.identity(n, format="csr")).tolil()
    a[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[-1] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            w = spla.spsolve(a.tocsc(), b)
        except (spla.MatrixRankWarning, RuntimeError) as exc:
            raise NumericalError(f"global balance system is singular: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise NumericalError("global balance solve returned non-finite values")
    w = np.maximum(w, 0.0)
    w /= w.sum()
    if check:
        resid = np.abs(p.T @ w - w).max()
        if resid > BALANCE_TOL:
            raise NumericalError(f"global balance residual {resid:.3g} exceeds {BALANCE_TOL}")
    return w


def detailed_balance_gap(omega, p) -> float:
    """``max |w_s P_st - w_t P_ts|``; zero for reversible chains."""
    flow = sps.diags(np.asarray(omega)) @ sps.csr_matrix(p)
    return float(abs(flow - flow.T).max())


def birth_death_stationary(lam_tau: float, mu_tau) -> np.ndarray:
    """Stationary law of a finite birth-death chain.

    ``mu_tau[k]`` is the departure probability in state ``k`` (entry 0 is
    ignored).  States below the highest ``k`` with ``mu_tau[k] == 0`` are
    transient when ``lam_tau > 0``; mass then piles up above it.
    """
    mu_tau = np.asarray(mu_tau, dtype=float)
    n = mu_tau.size
    w = np.zeros(n)
    if lam_tau == 0:
        w[0] = 1.0
        return w
    dead = [k for k in range(1, n) if mu_tau[k] <= 0]
    start = max(dead) if dead else 0
    if dead:
        warnings.warn(f"zero service rate in state {start} with positive arrivals: "
                      "queue is unstable, mass concentrates near the buffer limit",
                      RuntimeWarning, stacklevel=2)
    # log-space product keeps extreme ratios finite
    logs = np.zeros(n - start)
    for k in range(start + 1, n):
        logs[k - start] = logs[k - start - 1] + np.log(lam_tau) - np.log(mu_tau[k])
    logs -= logs.max()
    w[start:] = np.exp(logs)
    return w / w.sum()


def _tables(cache):
    return cache if isinstance(cache, CacheTables) else CacheTables(cache)


def full_policy_rates(sol, params: ChainParams, cache):
    """Per-state mean service rates ``mu(q)`` (S, L) and mean power (S,)."""
    tables = _tables(cache)
    _, power, rate = tables.phi(np.maximum(sol.delta_v, 0.0), params.nbars, params.gamma,
                                params.alpha)
    return rate / params.nbars[None, :], power


def steady_state_full(sol, params: ChainParams, cache) -> SteadyState:
    space = StateSpace.for_params(params)
    mu, power = full_policy_rates(sol, params, cache)
    p = joint_transition_matrix(mu * params.tau, params.lambdas * params.tau, space)
    omega = global_balance(p)
    return _joint_summary(omega, power, space)


def _joint_summary(omega, power, space: StateSpace) -> SteadyState:
    full = space.states == space.buffer_size
    return SteadyState(omega=omega,
                       avg_queue=omega @ space.states,
                       avg_power=float(omega @ power),
                       drop_rate=omega @ full.astype(float),
                       mode="full")


def stream_policy_rates(sol, stream, params: ChainParams, cache):
    """``mu(q)`` and mean power for ``q = 0..N`` of one decomposed stream."""
    col = _tables(cache)[sol.rank]
    ladder = sol.ladder()
    _, power, rate = col.phi(np.maximum(ladder, 0.0), stream.nbar, params.gamma, params.alpha)
    power = np.where(np.arange(ladder.size) == 0, 0.0, power)
    rate = np.where(np.arange(ladder.size) == 0, 0.0, rate)
    return rate / stream.nbar, power


def steady_state_per_stream(sols, params: ChainParams, cache) -> SteadyState:
    tables = _tables(cache)
    omegas, queue, drops = [], [], []
    total_power = 0.0
    rates = [stream_policy_rates(sol, stream, params, tables)
             for sol, stream in zip(sols, params.streams)]
    worst = params.tau * (params.lambdas.sum() + sum(mu.max() for mu, _ in rates))
    if worst > 1.0 + 1e-12:
        raise RegimeError(f"sum of lam*tau and mu*tau reaches {worst:.4g} > 1; "
                          "the slot length tau is too large for the service rates")
    for (mu, power), stream in zip(rates, params.streams):
        w = birth_death_stationary(stream.lam * params.tau, mu * params.tau)
        omegas.append(w)
        queue.append(float(w @ np.arange(w.size)))
        drops.append(float(w[-1]))
        total_power += float(w @ power)
    return SteadyState(omega=omegas, avg_queue=np.array(queue), avg_power=total_power,
                       drop_rate=np.array(drops), mode="decomposed")
