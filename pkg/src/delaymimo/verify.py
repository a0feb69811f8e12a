"""Cross-module oracle suite behind ``delaymimo verify``.

Each check compares one part of the pipeline against an independent
computation and records which public operations it exercised.  The last
row asserts that every operation of the library was touched.

Tolerance schedule for reduced caches (``rows`` eigenvalue samples):

* channel trace identity: ``2.5 / sqrt(rows)`` relative (five standard
  errors of the sample mean of ``tr(H^H H)``);
* simulated versus analytic mean queue: ``0.05 + 1 / sqrt(rows)``
  relative, the second term covering the cache error of the prediction;
* all other checks are deterministic identities with fixed tolerances.

Every random draw is seeded, so the suite is deterministic for a given
``(rows, seed)``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .calibrate import calibrate_gamma, gamma_sweep
from .decomposed import (decomposed_policy, forward_recursion, ladder_residual,
                         solve_decomposed, solve_theta)
from .mdp_full import bellman_backup, delta_v_residual, extract_action, solve_rvi
from .model import ChainParams, StateSpace, StreamProfile
from .phy import (EigenSampleCache, PhyConfig, mse_matrix, rate_per_stream, sample_channel,
                  service_rate, wiener_sinr)
from .policies import (analyze_policy, csit_only_policy, decomposed_handle, full_policy,
                       round_robin_policy)
from .simulator import run_sim
from .steady import steady_state_full, steady_state_per_stream
from .waterfill import (CacheTables, WaterfillParams, phi, phi_1d, sort_assignment,
                        waterfill_power)

REQUIRED_OPS = frozenset({
    "sample_channel", "mse_matrix", "rate_per_stream", "service_rate",
    "waterfill_power", "sort_assignment", "phi", "phi_1d",
    "bellman_backup", "solve_rvi", "extract_action",
    "forward_recursion", "solve_theta", "decomposed_policy",
    "steady_state_full", "steady_state_per_stream", "calibrate_gamma",
    "run_sim", "round_robin_policy", "csit_only_policy",
})

RVI_TOL = 1e-8
THETA_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    metric: float
    tolerance: float
    ops: tuple
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.metric = float(self.metric)
        self.tolerance = float(self.tolerance)
        self.ops = tuple(self.ops)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}\t{status}\t{self.metric:.3e}\t{self.tolerance:.3e}\t{self.detail}"


class Context:
    """Shared fixtures: one 2x2 cache and the two-stream reference chain."""

    def __init__(self, rows: int = 100_000, seed: int = 1, inject_fault: bool = False):
        self.rows = rows
        self.seed = seed
        self.inject_fault = inject_fault
        self.phy = PhyConfig()
        self.cache = EigenSampleCache.build(self.phy, rows, seed)
        self.tables = CacheTables(self.cache)
        self.params = ChainParams([StreamProfile(1.0, 0.02, 200.0),
                                   StreamProfile(10.0, 0.02, 200.0)], 4, 1e-2,
                                  alpha=self.phy.alpha)
        self._full = None
        self._dec = None

    @property
    def full(self):
        if self._full is None:
            self._full = solve_rvi(self.params, self.tables, tol=RVI_TOL)
        return self._full

    @property
    def dec(self):
        if self._dec is None:
            self._dec = solve_decomposed(self.params, self.tables, tol=THETA_TOL)
        return self._dec


def _objective(p, eta, nbar, gamma, alpha, xi):
    return eta / nbar * np.log2(1.0 + alpha * p * xi) - gamma * p


def check_trace(ctx):
    """Mean of ``xi_1 + xi_2`` equals ``E tr(H^H H) = n_tx n_rx``."""
    ops = ("sample_channel",)
    rel = abs(ctx.cache.samples.sum(axis=1).mean() / (ctx.phy.n_tx * ctx.phy.n_rx) - 1.0)
    tol = 2.5 / np.sqrt(ctx.rows)
    rng = np.random.default_rng(ctx.seed)
    ch = sample_channel(ctx.phy, rng)
    gram = ch.h_hat.conj().T @ ch.h_hat
    w = np.sort(np.linalg.eigvalsh(gram))[::-1][:ctx.phy.n_streams]
    eig_err = float(np.abs(w - ch.eigvals).max())
    ortho = float(np.abs(ch.eigvecs.conj().T @ ch.eigvecs - np.eye(ch.eigvecs.shape[1])).max())
    ok = rel <= tol and eig_err <= 1e-10 and ortho <= 1e-10
    return CheckResult("channel_trace", ok, rel, tol, ops,
                       f"eig_err={eig_err:.1e} ortho={ortho:.1e}")


def check_wiener(ctx):
    """MSE diagonal against the explicit Wiener SINR; rate and packet rate chain."""
    ops = ("mse_matrix", "rate_per_stream", "service_rate")
    rng = np.random.default_rng(ctx.seed + 1)
    worst = 0.0
    for _ in range(50):
        h = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) / np.sqrt(2)
        p = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) * rng.uniform(0.1, 3)
        d = np.real(np.diag(mse_matrix(p, h)))
        sinr = wiener_sinr(p, h)
        worst = max(worst, float(np.abs(1.0 / d - 1.0 - sinr).max() / (1 + sinr.max())))
        r = rate_per_stream(d, ctx.phy)
        expect = np.log2(1.0 + ctx.phy.alpha * (1.0 / d - 1.0))
        worst = max(worst, float(np.abs(r - expect).max()))
        worst = max(worst, float(np.abs(service_rate(r, 200.0) - r / 200.0).max()))
    return CheckResult("wiener_duality", worst <= 1e-9, worst, 1e-9, ops)


def check_kkt(ctx, draws: int = 200):
    """Closed-form water-filling against grid search plus bounded refinement."""
    ops = ("waterfill_power", "sort_assignment")
    rng = np.random.default_rng(ctx.seed + 2)
    alpha = ctx.phy.alpha
    worst = 0.0
    for _ in range(draws):
        eta = rng.uniform(0, 50, 2)
        nbar = rng.uniform(50, 400, 2)
        gamma = 10 ** rng.uniform(-3, -1)
        xi = np.sort(rng.exponential(2.0, 2))[::-1]
        wf = WaterfillParams(eta=eta, nbar=nbar, gamma=gamma, alpha=alpha)
        asg = sort_assignment(eta)
        p = waterfill_power(wf, xi, asg)
        for i in range(2):
            x = xi[asg[i]]
            pmax = max(eta[i] / (nbar[i] * gamma * np.log(2)), 1.0) * 2
            grid = np.linspace(0, pmax, 2001)
            vals = _objective(grid, eta[i], nbar[i], gamma, alpha, x)
            k = int(np.argmax(vals))
            lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
            res = minimize_scalar(lambda t: -_objective(t, eta[i], nbar[i], gamma, alpha, x),
                                  bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-12})
            best = max(vals[k], -res.fun)
            worst = max(worst, best - _objective(p[i], eta[i], nbar[i], gamma, alpha, x))
    return CheckResult("waterfill_kkt", worst <= 1e-6, worst, 1e-6, ops)


def check_sorting(ctx, draws: int = 100):
    """Same-order assignment is optimal among all permutations (L = 3)."""
    ops = ("sort_assignment", "waterfill_power")
    rng = np.random.default_rng(ctx.seed + 3)
    alpha = ctx.phy.alpha
    violations, worst = 0, 0.0
    for _ in range(draws):
        eta = rng.uniform(0, 50, 3)
        xi = np.sort(rng.exponential(2.0, 3))[::-1]
        wf = WaterfillParams(eta=eta, nbar=np.full(3, 200.0), gamma=1e-2, alpha=alpha)

        def value(asg):
            p = waterfill_power(wf, xi, np.array(asg))
            return float(np.sum(_objective(p, eta, 200.0, 1e-2, alpha, xi[list(asg)])))

        ref = value(tuple(sort_assignment(eta)))
        for perm in itertools.permutations(range(3)):
            gap = value(perm) - ref
            if gap > 1e-12 * max(1.0, abs(ref)):
                violations += 1
                worst = max(worst, gap)
    return CheckResult("sorting_optimality", violations == 0, worst, 0.0, ops,
                       f"violations={violations}")


def check_phi_routes(ctx):
    """Direct cache averages against the sorted-column fast path."""
    ops = ("phi", "phi_1d")
    rng = np.random.default_rng(ctx.seed + 4)
    worst = 0.0
    for _ in range(10):
        eta = rng.uniform(0, 30, 2)
        wf = WaterfillParams(eta=eta, nbar=np.full(2, 200.0), gamma=1e-2, alpha=ctx.phy.alpha)
        direct = phi(wf, ctx.cache)
        fast = ctx.tables.phi(eta[None, :], wf.nbar, wf.gamma, wf.alpha)[0][0]
        worst = max(worst, abs(direct.value - fast) / max(1e-12, abs(direct.value)))
        y = float(eta[0])
        one = phi_1d(y, ctx.cache.column(0), nbar=200.0, gamma=1e-2, alpha=ctx.phy.alpha)
        fast1 = float(ctx.tables[0].phi(y, 200.0, 1e-2, ctx.phy.alpha)[0])
        worst = max(worst, abs(one.value - fast1) / max(1e-12, abs(one.value)))
    return CheckResult("phi_routes", worst <= 1e-10, worst, 1e-10, ops)


def check_rvi_vs_decomposed(ctx):
    """Per-stream bisection against RVI on the same one-stream chain."""
    ops = ("solve_rvi", "bellman_backup", "solve_theta", "forward_recursion")
    worst = 0.0
    for lam, n, beta, gamma in [(0.02, 4, 1.0, 1e-2), (0.05, 2, 10.0, 1e-3), (0.01, 8, 0.5, 1e-1)]:
        stream = StreamProfile(beta, lam, 200.0)
        params = ChainParams([stream], n, gamma, alpha=ctx.phy.alpha)
        rvi = solve_rvi(params, ctx.tables, tol=RVI_TOL)
        bis = solve_theta(stream, ctx.tables[0], gamma, ctx.phy.alpha, n, tol=THETA_TOL)
        worst = max(worst, abs(rvi.theta - bis.theta) / bis.theta)
        _, theta_b = bellman_backup(rvi.v, params, ctx.tables)
        worst = max(worst, abs(theta_b - rvi.theta) / rvi.theta)
        ladder = forward_recursion(bis.theta, stream, ctx.tables[0], gamma, ctx.phy.alpha, n)
        worst = max(worst, float(np.abs(ladder - rvi.delta_v[1:, 0]).max() /
                                 np.abs(ladder).max()))
    return CheckResult("rvi_vs_decomposed", worst <= 1e-6, worst, 1e-6, ops)


def check_residual_full(ctx):
    """Bellman residual of the stored joint ``dV`` table."""
    ops = ("solve_rvi",)
    dv = ctx.full.delta_v.copy()
    if ctx.inject_fault:
        dv[ctx.params.n_states // 2, 0] *= 1.01
    res = float(np.abs(delta_v_residual(ctx.full.theta, dv, ctx.params, ctx.tables)).max())
    tol = 10 * RVI_TOL
    return CheckResult("bellman_residual_full", res <= tol, res, tol, ops,
                       "fault injected" if ctx.inject_fault else "")


def check_residual_decomposed(ctx):
    """Per-stream Bellman residual of the stored ladders."""
    ops = ("solve_theta",)
    worst = 0.0
    tol = 10 * THETA_TOL * float(ctx.params.betas.max())
    for sol, stream in zip(ctx.dec, ctx.params.streams):
        if ctx.inject_fault:
            sol = type(sol)(**{**sol.__dict__, "delta_v": sol.delta_v * 1.01})
        res = ladder_residual(sol, stream, ctx.tables[sol.rank], ctx.params.gamma,
                              ctx.params.alpha)
        worst = max(worst, float(np.abs(res).max()))
    return CheckResult("bellman_residual_decomposed", worst <= tol, worst, tol, ops,
                       "fault injected" if ctx.inject_fault else "")


def check_value_monotone(ctx):
    """``V`` non-decreasing in every queue and ``dV`` non-negative."""
    ops = ("solve_rvi",)
    space = StateSpace.for_params(ctx.params)
    v = ctx.full.v
    has_up = space.states < ctx.params.buffer_size
    drops = (v[:, None] - v[space.up])[has_up]
    bad = int((drops > 1e-9).sum() + (ctx.full.delta_v < -1e-9).sum())
    return CheckResult("value_monotone", bad == 0, float(bad), 0.0, ops)


def check_actions(ctx):
    """Online actions agree with the tabular policies the simulator runs."""
    ops = ("extract_action", "decomposed_policy")
    rng = np.random.default_rng(ctx.seed + 5)
    fh, dh = full_policy(ctx.full, ctx.params), decomposed_handle(ctx.dec, ctx.params)
    worst = 0.0
    for _ in range(20):
        ch = sample_channel(ctx.phy, rng)
        q = tuple(int(x) for x in rng.integers(0, ctx.params.buffer_size + 1, 2))
        a = extract_action(ctx.full, q, ch, ctx.params)
        _, p = fh.powers(q, ch.eigvals)
        worst = max(worst, float(np.abs(a.powers - p).max()))
        b = decomposed_policy(ctx.dec, q, ch, ctx.params)
        _, p = dh.powers(q, ch.eigvals)
        worst = max(worst, float(np.abs(b.powers - p).max()))
        gram = b.precoder.conj().T @ b.precoder
        worst = max(worst, float(np.abs(np.diag(gram).real - b.powers).max()))
    return CheckResult("online_actions", worst <= 1e-9, worst, 1e-9, ops)


def check_steady(ctx):
    """Product of birth-death laws against joint global balance; J ordering."""
    ops = ("steady_state_full", "steady_state_per_stream")
    per = steady_state_per_stream(ctx.dec, ctx.params, ctx.tables)
    joint = analyze_policy(decomposed_handle(ctx.dec, ctx.params), ctx.params, ctx.tables)
    gap = float(np.abs(per.joint() - joint.omega).max())
    full = steady_state_full(ctx.full, ctx.params, ctx.tables)
    j_full = full.cost(ctx.params.betas, ctx.params.gamma)
    j_dec = per.cost(ctx.params.betas, ctx.params.gamma)
    ok = gap <= 1e-10 and j_full <= j_dec
    return CheckResult("steady_state", ok, gap, 1e-10, ops,
                       f"J_full={j_full:.6g} J_dec={j_dec:.6g}")


def check_calibration(ctx):
    """Monotone power curve and root-find round trip of an interior grid point."""
    ops = ("calibrate_gamma",)
    gammas = np.logspace(-4, -1, 7)
    pts = gamma_sweep("decomposed", ctx.params, ctx.tables, gammas)
    powers = [p.power for p in pts]
    mono = all(b <= a for a, b in zip(powers, powers[1:]))
    ref = pts[3]
    res = calibrate_gamma(ref.power, "decomposed", ctx.params, ctx.tables, gammas=gammas)
    err = abs(res.gamma / ref.gamma - 1.0)
    return CheckResult("calibration", mono and err <= 0.05, err, 0.05, ops,
                       f"monotone={mono}")


def check_simulation(ctx, slots: int = 500_000):
    """Simulated mean queues against the stationary prediction; determinism."""
    ops = ("run_sim",)
    handle = decomposed_handle(ctx.dec, ctx.params)
    ss = steady_state_per_stream(ctx.dec, ctx.params, ctx.tables)
    rep = run_sim(handle, ctx.params, ctx.phy, slots, seed=0)
    rel = float(np.max(np.abs(rep.avg_queue / ss.avg_queue - 1.0)))
    tol = 0.05 + 1.0 / np.sqrt(ctx.rows)
    a = run_sim(handle, ctx.params, ctx.phy, 20_000, seed=7)
    b = run_sim(handle, ctx.params, ctx.phy, 20_000, seed=7)
    same = a.summary() == b.summary() and np.array_equal(a.histogram, b.histogram)
    return CheckResult("sim_vs_analytic", rel <= tol and bool(same), rel, tol, ops,
                       f"deterministic={bool(same)}")


def check_baselines(ctx):
    """Baseline calibration identities and the delay ordering at equal power."""
    ops = ("round_robin_policy", "csit_only_policy")
    params = ctx.params.with_gamma(1.0)
    budget = 100.0
    csit = csit_only_policy(params, ctx.phy, budget, cache=ctx.tables)
    w = csit.payload["water_level"]
    cache_power = sum(ctx.tables[k].waterfill_stats(w, params.alpha)[0] for k in range(2))
    ident = abs(cache_power / budget - 1.0)
    rr = round_robin_policy(params, ctx.phy, budget, cache=ctx.tables)
    rr_power = analyze_policy(rr, params, ctx.tables).avg_power
    sym = ChainParams([StreamProfile(1.0, 0.02, 200.0)] * 2, 4, 1.0, alpha=ctx.phy.alpha)
    res = calibrate_gamma(budget, "decomposed", sym, ctx.tables)
    budget_m = res.achieved_power
    d_dec = float(res.steady.avg_queue.sum())
    d_csit = float(analyze_policy(csit_only_policy(sym, ctx.phy, budget_m, ctx.tables, True),
                                  sym, ctx.tables).avg_queue.sum())
    d_rr = float(analyze_policy(round_robin_policy(sym, ctx.phy, budget_m, ctx.tables, True),
                                sym, ctx.tables).avg_queue.sum())
    ok = ident <= 1e-6 and rr_power <= budget * (1 + 1e-12) and d_dec < d_csit < d_rr
    return CheckResult("baselines", ok, ident, 1e-6, ops,
                       f"rr_power={rr_power:.4g} delays dec={d_dec:.4g} csit={d_csit:.4g} "
                       f"rr={d_rr:.4g}")


CHECKS = (check_trace, check_wiener, check_kkt, check_sorting, check_phi_routes,
          check_rvi_vs_decomposed, check_residual_full, check_residual_decomposed, check_value_monotone,
          check_actions, check_steady, check_calibration, check_simulation, check_baselines)


def run_suite(rows: int = 100_000, seed: int = 1, inject_fault: bool = False,
              checks=CHECKS) -> list:
    ctx = Context(rows=rows, seed=seed, inject_fault=inject_fault)
    results = []
    for fn in checks:
        try:
            results.append(fn(ctx))
        except Exception as exc:  # a crashing check is a failing check
            results.append(CheckResult(fn.__name__.removeprefix("check_"), False, float("nan"),
                                       float("nan"), (), f"error: {exc!r}"))
    covered = set().union(*(r.ops for r in results))
    missing = sorted(REQUIRED_OPS - covered)
    results.append(CheckResult("op_coverage", not missing, float(len(missing)), 0.0, (),
                               "missing: " + ",".join(missing) if missing else "all ops"))
    return results


def format_table(results, as_json: bool = False) -> str:
    if as_json:
        return "\n".join(json.dumps({**asdict(r), "ops": list(r.ops)}) for r in results)
    lines = ["check\tstatus\tmetric\ttolerance\tdetail"]
    lines += [r.line() for r in results]
    return "\n".join(lines)
