"""Slotted Monte Carlo simulation of the ``L`` queues.

Each slot draws a fresh channel, applies the policy to ``(Q, H_hat)`` and
then samples at most one event from a single uniform: an arrival to stream
``i`` with probability ``lam_i tau`` (lost if the buffer is full), a
departure from a non-empty stream ``i`` with probability ``mu_i tau``, or
nothing.  This is the embedded chain the analytic side solves, so
simulated and predicted laws coincide in distribution.

Channel draws and event uniforms come from two independent streams spawned
from the seed; for a given seed every policy sees the same channels.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import ConfigError
from .model import ChainParams, StateSpace
from .phy import PhyConfig, draw_eigvals
from .policies import PolicyHandle

__all__ = ["SimReport", "run_sim", "CHUNK"]

CHUNK = 1 << 16


@dataclass(frozen=True)
class SimReport:
    slots: int
    avg_queue: np.ndarray
    avg_power: float
    weighted_delay: float
    drops: np.ndarray
    arrivals: np.ndarray
    departures: np.ndarray
    histogram: np.ndarray
    seed: int
    clamped_slots: int = 0
    policy: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def empirical_dist(self) -> np.ndarray:
        return self.histogram / self.slots

    def marginals(self, buffer_size: int) -> list:
        n_streams = self.avg_queue.size
        table = self.empirical_dist.reshape((buffer_size + 1,) * n_streams)
        return [table.sum(axis=tuple(j for j in range(n_streams) if j != i))
                for i in range(n_streams)]

    def total_variation(self, omega) -> float:
        return 0.5 * float(np.abs(self.empirical_dist - np.asarray(omega)).sum())

    def summary(self) -> dict:
        return {
            "policy": self.policy,
            "seed": int(self.seed),
            "slots": int(self.slots),
            "avg_queue": [float(x) for x in self.avg_queue],
            "avg_power": float(self.avg_power),
            "weighted_delay": float(self.weighted_delay),
            "drops": [int(x) for x in self.drops],
            "arrivals": [int(x) for x in self.arrivals],
            "departures": [int(x) for x in self.departures],
            "clamped_slots": int(self.clamped_slots),
            **self.meta,
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        body = self.summary()
        body["histogram"] = [int(x) for x in self.histogram]
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path

    def to_csv(self, path) -> Path:
        """One row per stream."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["policy", "seed", "slots", "stream", "avg_queue", "drops", "arrivals",
                        "departures", "avg_power", "weighted_delay"])
            for i in range(self.avg_queue.size):
                w.writerow([self.policy, self.seed, self.slots, i + 1, repr(float(self.avg_queue[i])),
                            int(self.drops[i]), int(self.arrivals[i]), int(self.departures[i]),
                            repr(float(self.avg_power)), repr(float(self.weighted_delay))])
        return path

    def histogram_csv(self, path, buffer_size: int) -> Path:
        path = Path(path)
        space = StateSpace(self.avg_queue.size, buffer_size, max_states=self.histogram.size)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"q{i + 1}" for i in range(space.n_streams)] + ["count", "frequency"])
            for s, q in enumerate(space.states):
                w.writerow(list(map(int, q)) + [int(self.histogram[s]),
                                                repr(float(self.histogram[s] / self.slots))])
        return path


@numba.njit(cache=True)
def _run_chunk(q, eig, u, slot0, level, floor, rank, lam_tau, tau_over_nbar, alpha, strides,
               acc_q, acc_power, drops, arrivals, departures, hist, buffer_size):
    n_streams = q.size
    period = level.shape[0]
    mu = np.zeros(n_streams)
    clamps = 0
    lam_total = 0.0
    for i in range(n_streams):
        lam_total += lam_tau[i]
    for m in range(eig.shape[0]):
        s = 0
        for i in range(n_streams):
            s += q[i] * strides[i]
        hist[s] += 1
        ph = (slot0 + m) % period
        mu_total = 0.0
        for i in range(n_streams):
            acc_q[i] += q[i]
            xi = eig[m, rank[ph, s, i]]
            lv = level[ph, s, i]
            if floor[ph, s, i] > 0.0:
                p = lv - 1.0 / (alpha * xi) if xi > 0.0 else 0.0
                if p < 0.0:
                    p = 0.0
            else:
                p = lv
            acc_power[0] += p
            if q[i] > 0:
                mu[i] = tau_over_nbar[i] * math.log2(1.0 + alpha * p * xi)
            else:
                mu[i] = 0.0
            mu_total += mu[i]
        scale = 1.0
        if lam_total + mu_total > 1.0:
            scale = (1.0 - lam_total) / mu_total
            clamps += 1
        x = u[m]
        cum = 0.0
        done = False
        for i in range(n_streams):
            cum += lam_tau[i]
            if x < cum:
                arrivals[i] += 1
                if q[i] == buffer_size:
                    drops[i] += 1
                else:
                    q[i] += 1
                done = True
                break
        if not done:
            for i in range(n_streams):
                cum += mu[i] * scale
                if x < cum:
                    q[i] -= 1
                    departures[i] += 1
                    break
    return clamps


def run_sim(policy: PolicyHandle, params: ChainParams, phy: PhyConfig, slots: int, seed: int,
            initial_state=None, chunk: int = CHUNK) -> SimReport:
    """Simulate ``slots`` slots of ``policy``; identical seeds give identical reports."""
    if slots < 1:
        raise ConfigError("slots must be positive")
    if phy.n_streams != params.n_streams:
        raise ConfigError("PHY and chain disagree on the number of streams")
    space = StateSpace.for_params(params)
    ch_seq, ev_seq = np.random.SeedSequence(int(seed)).spawn(2)
    rng_ch, rng_ev = np.random.default_rng(ch_seq), np.random.default_rng(ev_seq)
    q = np.zeros(params.n_streams, dtype=np.int64) if initial_state is None else \
        np.array(initial_state, dtype=np.int64)
    acc_q = np.zeros(params.n_streams)
    acc_power = np.zeros(1)
    drops = np.zeros(params.n_streams, dtype=np.int64)
    arrivals = np.zeros_like(drops)
    departures = np.zeros_like(drops)
    hist = np.zeros(space.size, dtype=np.int64)
    lam_tau = params.lambdas * params.tau
    tau_over_nbar = params.tau / params.nbars
    level = np.ascontiguousarray(policy.level, dtype=np.float64)
    floor = np.ascontiguousarray(policy.floor, dtype=np.float64)
    rank = np.ascontiguousarray(policy.rank, dtype=np.int64)
    clamps = 0
    done = 0
    while done < slots:
        n = min(chunk, slots - done)
        eig = draw_eigvals(phy, rng_ch, n)
        u = rng_ev.random(n)
        clamps += _run_chunk(q, eig, u, done, level, floor, rank, lam_tau, tau_over_nbar,
                             float(params.alpha), space.strides, acc_q, acc_power, drops,
                             arrivals, departures, hist, params.buffer_size)
        done += n
    avg_queue = acc_q / slots
    return SimReport(slots=slots, avg_queue=avg_queue, avg_power=float(acc_power[0] / slots),
                     weighted_delay=float(params.betas @ avg_queue), drops=drops,
                     arrivals=arrivals, departures=departures, histogram=hist, seed=int(seed),
                     clamped_slots=int(clamps), policy=policy.kind,
                     meta={"sigma_e2": phy.sigma_e2})
