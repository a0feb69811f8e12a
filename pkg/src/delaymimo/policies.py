"""Transmit policies in a common tabular form.

Every policy is reduced to three arrays indexed ``[phase, state, stream]``:
the eigenvalue ``rank`` the stream uses, a ``level`` and a ``floor`` flag.
The per-slot power is ``(level - 1/(alpha xi))^+`` when ``floor`` is set
(water-filling) and ``level`` itself otherwise (constant power).  Only
Round-Robin has more than one phase.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decomposed import static_assignment
from .errors import CalibrationRangeError, ConfigError
from .model import ChainParams, ControlAction, StateSpace, build_precoder
from .phy import EigenSampleCache, PhyConfig
from .steady import SteadyState, global_balance, joint_transition_matrix
from .waterfill import CacheTables, sort_assignment, water_level

__all__ = [
    "POLICY_KINDS",
    "PolicyHandle",
    "full_policy",
    "decomposed_handle",
    "round_robin_policy",
    "csit_only_policy",
    "idle_policy",
    "policy_rates",
    "analyze_policy",
]

POLICY_KINDS = ("full-optimal", "decomposed", "round-robin", "csit-only", "idle")


@dataclass(frozen=True)
class PolicyHandle:
    kind: str
    payload: object
    level: np.ndarray
    floor: np.ndarray
    rank: np.ndarray
    params: ChainParams = field(repr=False)
    note: str = ""

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        shape = (self.period, self.params.n_states, self.params.n_streams)
        for name in ("level", "floor", "rank"):
            if getattr(self, name).shape != shape:
                raise ConfigError(f"policy table {name} must have shape {shape}")
        if np.any(self.level < 0):
            raise ConfigError("policy levels must be non-negative")

    @property
    def period(self) -> int:
        return self.level.shape[0]

    def powers(self, state, eigvals, slot: int = 0):
        """``(assignment, powers)`` for a joint state and eigenvalue row."""
        s = StateSpace.for_params(self.params).index(state)
        ph = slot % self.period
        rank = self.rank[ph, s]
        xi = np.asarray(eigvals, dtype=float)[rank]
        level = self.level[ph, s]
        with np.errstate(divide="ignore"):
            floor = np.where(xi > 0, 1.0 / (self.params.alpha * np.where(xi > 0, xi, 1.0)), np.inf)
        p = np.where(self.floor[ph, s] > 0, np.maximum(0.0, level - floor), level)
        return rank.copy(), p

    def action(self, state, ch, slot: int = 0) -> ControlAction:
        rank, p = self.powers(state, ch.eigvals, slot)
        precoder = build_precoder(ch.eigvecs, rank, p) if ch.eigvecs is not None else None
        return ControlAction(assignment=rank, powers=p, precoder=precoder)


def _single_phase(space, n_streams):
    shape = (1, space.size, n_streams)
    return np.zeros(shape), np.ones(shape), np.zeros(shape, dtype=np.int64)


def full_policy(sol, params: ChainParams) -> PolicyHandle:
    """Joint-QSI policy: per-state same-order sorting of ``dV``."""
    eta = np.maximum(sol.delta_v, 0.0)
    level = water_level(eta, params.nbars[None, :], params.gamma)
    rank = np.array([sort_assignment(row) for row in eta], dtype=np.int64)
    return PolicyHandle("full-optimal", sol, level[None], np.ones_like(level)[None], rank[None],
                        params)


def decomposed_handle(solutions, params: ChainParams) -> PolicyHandle:
    """Static-sorting policy from the per-stream ladders."""
    space = StateSpace.for_params(params)
    level, floor, rank = _single_phase(space, params.n_streams)
    for i, sol in enumerate(solutions):
        ladder = np.maximum(sol.ladder(), 0.0)
        level[0, :, i] = water_level(ladder[space.states[:, i]], params.nbars[i], params.gamma)
        rank[0, :, i] = sol.rank
    return PolicyHandle("decomposed", list(solutions), level, floor, rank, params)


def idle_policy(params: ChainParams) -> PolicyHandle:
    """Never transmits; queues fill up."""
    space = StateSpace.for_params(params)
    level, floor, rank = _single_phase(space, params.n_streams)
    rank[:] = np.arange(params.n_streams)
    return PolicyHandle("idle", None, level, floor, rank, params)


def _tables(params, phy, cache):
    if cache is None:
        if phy is None:
            raise ConfigError("either a PHY configuration or an eigenvalue cache is required")
        cache = EigenSampleCache.build(phy)
    return cache if isinstance(cache, CacheTables) else CacheTables(cache)


def _bisect_increasing(fn, target, lo=0.0, hi=1.0, rtol=1e-12, what="level"):
    curve = []
    for _ in range(200):
        val = fn(hi)
        curve.append((hi, val))
        if val >= target:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise CalibrationRangeError(f"power budget {target:g} unreachable by the {what}", curve)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        val = fn(mid)
        if abs(val - target) <= rtol * target:
            return mid
        if val < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _round_robin_tables(params, space, tx_power):
    n = params.n_streams
    shape = (n, space.size, n)
    level = np.zeros(shape)
    rank = np.zeros(shape, dtype=np.int64)
    for k in range(n):
        others = [i for i in range(n) if i != k]
        rank[k, :, k] = 0
        for r, i in enumerate(others, start=1):
            rank[k, :, i] = r
        level[k, :, k] = np.where(space.states[:, k] > 0, tx_power, 0.0)
    return level, np.zeros(shape), rank


def round_robin_policy(params: ChainParams, phy: PhyConfig | None, power_budget: float,
                       cache=None, match_average: bool = False) -> PolicyHandle:
    """TDMA baseline: slot ``m`` serves stream ``m mod L`` alone.

    The served stream transmits on the strongest eigenmode with a constant
    power when its queue is non-empty.  By default that power is the budget
    itself; with ``match_average`` it is scaled so the long-run average
    power (idle slots included) equals the budget.
    """
    if not power_budget > 0:
        raise ConfigError("power budget must be positive")
    space = StateSpace.for_params(params)
    tx = float(power_budget)
    if match_average:
        tables = _tables(params, phy, cache)

        def avg(pw):
            h = PolicyHandle("round-robin", {"tx_power": pw},
                             *_round_robin_tables(params, space, pw), params)
            return analyze_policy(h, params, tables).avg_power

        tx = _bisect_increasing(avg, power_budget, hi=power_budget, what="round-robin power")
    level, floor, rank = _round_robin_tables(params, space, tx)
    return PolicyHandle("round-robin", {"tx_power": tx, "budget": power_budget}, level, floor,
                        rank, params)


def _csit_only_tables(params, space, level_value, ranks):
    level, floor, rank = _single_phase(space, params.n_streams)
    for i in range(params.n_streams):
        level[0, :, i] = np.where(space.states[:, i] > 0, level_value, 0.0)
        rank[0, :, i] = ranks[i]
    return level, floor, rank


def csit_only_policy(params: ChainParams, phy: PhyConfig | None, power_budget: float,
                     cache=None, match_average: bool = False) -> PolicyHandle:
    """Channel-only water-filling with a fixed water level.

    The level is calibrated so the mean total power over the cache equals
    the budget (all eigenmodes active).  Streams keep the static rank of
    their weights and are silent when their queue is empty.  With
    ``match_average`` the level is instead calibrated on the long-run
    average power, which accounts for those silent slots.
    """
    if not power_budget > 0:
        raise ConfigError("power budget must be positive")
    tables = _tables(params, phy, cache)
    space = StateSpace.for_params(params)
    ranks = static_assignment(params.betas)

    def cache_power(w):
        return float(sum(tables[int(r)].waterfill_stats(w, params.alpha)[0] for r in ranks))

    def long_run_power(w):
        h = PolicyHandle("csit-only", {"water_level": w},
                         *_csit_only_tables(params, space, w, ranks), params)
        return analyze_policy(h, params, tables).avg_power

    fn = long_run_power if match_average else cache_power
    w = _bisect_increasing(fn, power_budget, what="CSIT-only water level")
    level, floor, rank = _csit_only_tables(params, space, w, ranks)
    note = "silent on empty queues"
    return PolicyHandle("csit-only", {"water_level": w, "budget": power_budget}, level, floor,
                        rank, params, note=note)


def policy_rates(handle: PolicyHandle, cache):
    """Cache-averaged service rates ``mu`` (phase, S, L) and power (phase, S)."""
    params = handle.params
    tables = cache if isinstance(cache, CacheTables) else CacheTables(cache)
    mu = np.zeros(handle.level.shape)
    power = np.zeros(handle.level.shape[:2])
    const_memo = {}
    for ph in range(handle.period):
        for i in range(params.n_streams):
            for k in range(params.n_streams):
                sel = handle.rank[ph, :, i] == k
                if not sel.any():
                    continue
                lv = handle.level[ph, sel, i]
                wf = handle.floor[ph, sel, i] > 0
                pw = np.zeros(lv.size)
                rt = np.zeros(lv.size)
                if wf.any():
                    pw[wf], rt[wf] = tables[k].waterfill_stats(lv[wf], params.alpha)
                for j in np.nonzero(~wf)[0]:
                    key = (k, float(lv[j]))
                    if key not in const_memo:
                        const_memo[key] = tables[k].constant_power_rate(lv[j], params.alpha)
                    pw[j], rt[j] = lv[j], const_memo[key]
                mu[ph, sel, i] = rt / params.nbars[i]
                power[ph, sel] += pw
    return mu, power


def analyze_policy(handle: PolicyHandle, params: ChainParams, cache) -> SteadyState:
    """Stationary queue law of any tabular policy.

    Single-phase policies use global balance of the joint chain; periodic
    ones (Round-Robin) use the stationary law of the one-cycle matrix and
    average over the phases.
    """
    space = StateSpace.for_params(params)
    mu, power = policy_rates(handle, cache)
    mu = np.where(space.states[None] > 0, mu, 0.0)
    lam_tau = params.lambdas * params.tau
    mats = [joint_transition_matrix(mu[ph] * params.tau, lam_tau, space)
            for ph in range(handle.period)]
    if handle.period == 1:
        phases = [global_balance(mats[0])]
    else:
        cycle = mats[0]
        for m in mats[1:]:
            cycle = cycle @ m
        start = global_balance(cycle)
        phases = [start]
        for m in mats[:-1]:
            phases.append(m.T @ phases[-1])
    omega = np.mean(phases, axis=0)
    full = (space.states == space.buffer_size).astype(float)
    return SteadyState(omega=omega,
                       avg_queue=omega @ space.states,
                       avg_power=float(np.mean([w @ power[ph] for ph, w in enumerate(phases)])),
                       drop_rate=omega @ full,
                       mode="full")
