"""Queue-weighted water-filling and its expectation over the channel.

For marginal values ``eta`` (one per stream) the per-channel problem

    max_p  sum_i eta_i / nbar_i * log2(1 + alpha p_i xi_[i]) - gamma p_i

separates across streams once each stream is tied to an eigenvalue rank.
Because rates are in bits, the stationarity condition carries a ``ln 2``:
the optimum is ``p_i = (eta_i / (nbar_i gamma ln 2) - 1 / (alpha xi_[i]))^+``.
Streams with larger ``eta`` take the larger eigenvalues.

Two evaluation routes are provided for the expectation ``phi``: a direct
average over the cached rows (``phi``/``phi_1d``) and a sorted-column
evaluator with suffix sums (``ColumnTable``) that the solvers call millions
of times.  They agree to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "water_level",
    "WaterfillParams",
    "PhiResult",
    "sort_assignment",
    "waterfill_power",
    "phi",
    "phi_1d",
    "ColumnTable",
    "CacheTables",
]


LN2 = float(np.log(2.0))


def water_level(eta, nbar, gamma):
    """``eta / (nbar gamma ln 2)``, the level maximizing the bit-rate objective."""
    return np.asarray(eta, dtype=float) / (np.asarray(nbar, dtype=float) * gamma * LN2)


@dataclass(frozen=True)
class WaterfillParams:
    eta: np.ndarray
    nbar: np.ndarray
    gamma: float
    alpha: float

    def __post_init__(self):
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        nbar = np.broadcast_to(np.asarray(self.nbar, dtype=float), eta.shape).copy()
        if np.any(eta < 0):
            raise ConfigError("eta entries must be non-negative")
        if np.any(nbar <= 0) or not self.gamma > 0 or not self.alpha > 0:
            raise ConfigError("nbar, gamma and alpha must be strictly positive")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "nbar", nbar)

    @property
    def level(self) -> np.ndarray:
        """Water level per stream."""
        return water_level(self.eta, self.nbar, self.gamma)


@dataclass(frozen=True)
class PhiResult:
    value: float
    mean_power: float
    mean_rate: np.ndarray


def sort_assignment(eta) -> np.ndarray:
    """Eigenvalue rank for each stream, largest ``eta`` first.

    Ties go to the lower stream index.

    >>> sort_assignment([2.0, 3.0, 1.5]).tolist()
    [1, 0, 2]
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    order = np.argsort(-eta, kind="stable")
    rank = np.empty(eta.size, dtype=np.int64)
    rank[order] = np.arange(eta.size)
    return rank


def _powers(level, xi, alpha):
    with np.errstate(divide="ignore"):
        floor = np.where(xi > 0, 1.0 / (alpha * np.where(xi > 0, xi, 1.0)), np.inf)
    return np.maximum(0.0, level - floor)


def waterfill_power(params: WaterfillParams, eigvals_sorted, assignment=None) -> np.ndarray:
    """Optimal powers for one channel realisation."""
    xi = np.asarray(eigvals_sorted, dtype=float)
    if assignment is None:
        assignment = sort_assignment(params.eta)
    p = _powers(params.level, xi[np.asarray(assignment)], params.alpha)
    p[params.eta == 0] = 0.0
    return p


def phi(params: WaterfillParams, cache) -> PhiResult:
    """Expected optimum of the weighted-rate minus power objective.

    Averages the closed-form per-row optimum over every cached row.
    """
    samples = cache.samples if hasattr(cache, "samples") else np.asarray(cache, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[1] < params.eta.size:
        raise ConfigError("cache has fewer eigenvalue columns than streams")
    xi = samples[:, sort_assignment(params.eta)]
    p = _powers(params.level[None, :], xi, params.alpha)
    rate = np.log2(1.0 + params.alpha * p * xi)
    weights = params.eta / params.nbar
    per_row = (rate * weights[None, :] - params.gamma * p).sum(axis=1)
    return PhiResult(value=float(per_row.mean()),
                     mean_power=float(p.sum(axis=1).mean()),
                     mean_rate=rate.mean(axis=0))


def phi_1d(y: float, column, *, nbar: float, gamma: float, alpha: float) -> PhiResult:
    """Single-stream version of :func:`phi` on one eigenvalue column."""
    y = max(0.0, float(y))
    params = WaterfillParams(eta=np.array([y]), nbar=np.array([nbar]), gamma=gamma, alpha=alpha)
    return phi(params, np.asarray(column, dtype=float)[:, None])


class ColumnTable:
    """Fast evaluator of water-filling expectations over one column.

    With the column sorted ascending, the active set for water level ``w``
    is the suffix ``xi > 1 / (alpha w)``; suffix sums of ``log2 xi`` and
    ``1/xi`` then give the expectations in ``O(log M)``.
    """

    def __init__(self, column):
        xs = np.sort(np.asarray(column, dtype=float))
        self.xs = xs
        self.n = xs.size
        rev = xs[::-1]
        with np.errstate(divide="ignore"):
            inv = 1.0 / rev
            logs = np.log2(rev)
        self._sinv = np.concatenate(([0.0], np.cumsum(inv)))
        self._slog = np.concatenate(([0.0], np.cumsum(logs)))

    def waterfill_stats(self, level, alpha):
        """Mean power and mean ``log2(1 + alpha p xi)`` at water level(s)."""
        level = np.asarray(level, dtype=float)
        pos = level > 0
        safe = np.where(pos, level, 1.0)
        # subnormal levels overflow to an empty active set, which is correct
        with np.errstate(over="ignore"):
            k = np.searchsorted(self.xs, 1.0 / (alpha * safe), side="right")
        cnt = self.n - k
        has = pos & (cnt > 0)
        sinv = self._sinv[cnt]
        slog = self._slog[cnt]
        with np.errstate(invalid="ignore", divide="ignore"):
            power = np.where(has, (cnt * safe - sinv / alpha) / self.n, 0.0)
            rate = np.where(has, (cnt * np.log2(alpha * safe) + slog) / self.n, 0.0)
        return np.maximum(power, 0.0), np.maximum(rate, 0.0)

    def phi(self, y, nbar, gamma, alpha):
        """Vectorised ``(value, mean_power, mean_rate)`` for weights ``y``."""
        y = np.maximum(np.asarray(y, dtype=float), 0.0)
        power, rate = self.waterfill_stats(water_level(y, nbar, gamma), alpha)
        value = y / nbar * rate - gamma * power
        return np.maximum(value, 0.0), power, rate

    def constant_power_rate(self, power, alpha) -> float:
        """Mean ``log2(1 + alpha P xi)`` for a fixed power ``P``."""
        return float(np.mean(np.log2(1.0 + alpha * power * self.xs)))


class CacheTables:
    """One :class:`ColumnTable` per eigenvalue rank of a cache."""

    def __init__(self, cache):
        samples = cache.samples if hasattr(cache, "samples") else np.asarray(cache, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        self.columns = [ColumnTable(samples[:, k]) for k in range(samples.shape[1])]
        self.n_ranks = len(self.columns)

    def __getitem__(self, rank) -> ColumnTable:
        return self.columns[rank]

    def phi(self, eta, nbar, gamma, alpha):
        """Evaluate ``phi`` for a batch of ``eta`` vectors (shape ``(S, L)``).

        Returns ``(value (S,), mean_power (S,), mean_rate (S, L))`` with the
        same-order rank assignment applied per row.
        """
        eta = np.maximum(np.atleast_2d(np.asarray(eta, dtype=float)), 0.0)
        n_rows, n_streams = eta.shape
        if n_streams > self.n_ranks:
            raise ConfigError("cache has fewer eigenvalue columns than streams")
        nbar = np.broadcast_to(np.asarray(nbar, dtype=float), (n_streams,))
        order = np.argsort(-eta, axis=1, kind="stable")
        rank = np.empty_like(order)
        np.put_along_axis(rank, order, np.arange(n_streams)[None, :].repeat(n_rows, 0), axis=1)
        value = np.zeros(n_rows)
        power = np.zeros(n_rows)
        rate = np.zeros((n_rows, n_streams))
        for i in range(n_streams):
            for k in range(n_streams):
                sel = rank[:, i] == k
                if not sel.any():
                    continue
                v, p, r = self.columns[k].phi(eta[sel, i], nbar[i], gamma, alpha)
                value[sel] += v
                power[sel] += p
                rate[sel, i] = r
        return value, power, rate
