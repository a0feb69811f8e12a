"""Per-stream solver under static eigenmode sorting.

Each stream ``i`` is tied to the eigenvalue rank of its weight ``beta_i``
and solves a one-dimensional average-cost problem.  Writing
``dV(q) = tau (V(q) - V(q-1))`` the Bellman equation becomes the forward
recursion

    lam dV(q+1) = theta + phi_i(dV(q)) - beta q,     dV(0) = 0,

closed by ``beta N = phi_i(dV(N)) + theta``.  ``f(theta) = (phi_i(dV(N)) +
theta) / beta`` is increasing, so ``theta*`` is found by bisection on
``f(theta) = N``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import ChainParams, ControlAction, StreamProfile, build_precoder
from .waterfill import CacheTables, ColumnTable, sort_assignment, water_level

__all__ = [
    "StreamSolution",
    "static_assignment",
    "forward_recursion",
    "boundary_value",
    "solve_theta",
    "ladder_residual",
    "solve_decomposed",
    "decomposed_policy",
]


@dataclass(frozen=True)
class StreamSolution:
    """``delta_v[q - 1]`` holds ``dV(q)`` for ``q = 1..N``."""

    theta: float
    delta_v: np.ndarray
    stream: int
    gamma: float
    rank: int = 0
    residual: float = 0.0
    iterations: int = 0

    def ladder(self) -> np.ndarray:
        """``dV(q)`` for ``q = 0..N`` (with the leading zero)."""
        return np.concatenate(([0.0], self.delta_v))


def static_assignment(betas) -> np.ndarray:
    """Rank per stream when eigenvalues follow the order of the weights."""
    return sort_assignment(betas)


def forward_recursion(theta: float, stream: StreamProfile, column: ColumnTable,
                      gamma: float, alpha: float, buffer_size: int) -> np.ndarray:
    """Run the recursion from ``dV(0) = 0``; entries may go negative."""
    if not stream.lam > 0:
        raise ConfigError("the forward recursion needs a positive arrival rate")
    out = np.empty(buffer_size)
    prev = 0.0
    for q in range(buffer_size):
        gain = float(column.phi(prev, stream.nbar, gamma, alpha)[0]) if prev > 0 else 0.0
        prev = (theta + gain - stream.beta * q) / stream.lam
        out[q] = prev
    return out


def boundary_value(theta, stream, column, gamma, alpha, buffer_size) -> float:
    """``f(theta)``; the root of ``f(theta) = N`` is the optimal cost."""
    last = forward_recursion(theta, stream, column, gamma, alpha, buffer_size)[-1]
    gain = float(column.phi(last, stream.nbar, gamma, alpha)[0]) if last > 0 else 0.0
    return (gain + theta) / stream.beta


def solve_theta(stream: StreamProfile, column, gamma: float, alpha: float, buffer_size: int,
                tol: float = 1e-9, bracket=None, max_iter: int = 200,
                index: int = 0, rank: int = 0) -> StreamSolution:
    """Bisection for ``theta*`` with ``|f(theta*) - N| <= tol``.

    The default bracket ``[0, beta N]`` always straddles the root because
    ``f(0) = 0`` and ``phi >= 0``.  A user bracket is widened geometrically
    until it straddles.  If the bracket collapses to adjacent floats before
    ``tol`` is met (steep ``f`` for long buffers), the closer endpoint is
    returned and its residual recorded.
    """
    if not isinstance(column, ColumnTable):
        column = ColumnTable(column)
    if stream.lam == 0:
        return _idle_stream(stream, column, gamma, alpha, buffer_size, tol, index, rank)
    n = float(buffer_size)

    def f(theta):
        return boundary_value(theta, stream, column, gamma, alpha, buffer_size) - n

    lo, hi = (0.0, stream.beta * n) if bracket is None else map(float, bracket)
    f_lo, f_hi = f(lo), f(hi)
    for _ in range(200):
        if f_lo <= 0 <= f_hi:
            break
        width = max(hi - lo, 1e-12)
        if f_lo > 0:
            lo, f_lo = lo - 2 * width, f(lo - 2 * width)
        if f_hi < 0:
            hi, f_hi = hi + 2 * width, f(hi + 2 * width)
    else:
        raise ConfigError(
            f"could not bracket theta for stream {index}: f({lo})={f_lo + n}, f({hi})={f_hi + n}")
    it = 0
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = f(mid)
        if f_mid < 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
        if min(-f_lo, f_hi) <= tol:
            break
    theta, resid = (lo, f_lo) if -f_lo <= f_hi else (hi, f_hi)
    ladder = forward_recursion(theta, stream, column, gamma, alpha, buffer_size)
    return StreamSolution(theta=theta, delta_v=ladder, stream=index, gamma=gamma, rank=rank,
                          residual=abs(resid), iterations=it)


def _idle_stream(stream, column, gamma, alpha, buffer_size, tol, index, rank):
    """Stream without arrivals: ``theta = 0`` and ``phi_i(dV(q)) = beta q``.

    The recursion degenerates, so each ``dV(q)`` is found by inverting the
    increasing map ``phi_i`` with bisection.
    """
    def gain(y):
        return float(column.phi(y, stream.nbar, gamma, alpha)[0])

    ladder = np.empty(buffer_size)
    steps = 0
    for q in range(1, buffer_size + 1):
        target = stream.beta * q
        lo, hi = 0.0, 1.0
        while gain(hi) < target:
            lo, hi = hi, 2.0 * hi
        while hi - lo > tol * max(1.0, hi) and steps < 10_000:
            mid = 0.5 * (lo + hi)
            if gain(mid) < target:
                lo = mid
            else:
                hi = mid
            steps += 1
        ladder[q - 1] = 0.5 * (lo + hi)
    return StreamSolution(theta=0.0, delta_v=ladder, stream=index, gamma=gamma, rank=rank,
                          residual=0.0, iterations=steps)


def ladder_residual(sol: StreamSolution, stream: StreamProfile, column, gamma: float,
                    alpha: float) -> np.ndarray:
    """One-stream Bellman residual for ``q = 0..N`` from the stored ladder.

    ``lam dV(q+1) + beta q - phi_i(dV(q)) - theta``, with no arrival term
    at ``q = N``.
    """
    if not isinstance(column, ColumnTable):
        column = ColumnTable(column)
    ladder = sol.ladder()
    nxt = np.append(ladder[1:], 0.0)
    gain = np.where(ladder > 0, column.phi(np.maximum(ladder, 0.0), stream.nbar, gamma, alpha)[0],
                    0.0)
    q = np.arange(ladder.size)
    return stream.lam * nxt + stream.beta * q - gain - sol.theta


def solve_decomposed(params: ChainParams, cache, tol: float = 1e-9) -> list:
    """Solve every stream on its statically assigned eigenvalue column."""
    tables = cache if isinstance(cache, CacheTables) else CacheTables(cache)
    ranks = static_assignment(params.betas)
    return [solve_theta(s, tables[int(ranks[i])], params.gamma, params.alpha, params.buffer_size,
                        tol=tol, index=i, rank=int(ranks[i]))
            for i, s in enumerate(params.streams)]


def stream_powers(solutions, params: ChainParams, state, eigvals) -> np.ndarray:
    levels = np.array([sol.ladder()[q] for sol, q in zip(solutions, state)])
    levels = water_level(np.maximum(levels, 0.0), params.nbars, params.gamma)
    xi = np.asarray(eigvals, dtype=float)[[sol.rank for sol in solutions]]
    with np.errstate(divide="ignore"):
        floor = np.where(xi > 0, 1.0 / (params.alpha * np.where(xi > 0, xi, 1.0)), np.inf)
    p = np.maximum(0.0, levels - floor)
    p[np.asarray(state) == 0] = 0.0
    return p


def decomposed_policy(solutions, state, ch, params: ChainParams) -> ControlAction:
    """Online step of the low-complexity policy for joint state ``state``."""
    if len(solutions) != params.n_streams:
        raise ConfigError("need exactly one StreamSolution per stream")
    assignment = np.array([sol.rank for sol in solutions], dtype=np.int64)
    powers = stream_powers(solutions, params, state, ch.eigvals)
    precoder = build_precoder(ch.eigvecs, assignment, powers) if ch.eigvecs is not None else None
    return ControlAction(assignment=assignment, powers=powers, precoder=precoder)
