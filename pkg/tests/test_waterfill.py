import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from delaymimo.errors import ConfigError
from delaymimo.waterfill import (ColumnTable, WaterfillParams, phi, phi_1d, sort_assignment,
                                 water_level, waterfill_power)

ALPHA = 0.3


def objective(p, eta, nbar, gamma, alpha, xi):
    return eta / nbar * np.log2(1.0 + alpha * p * xi) - gamma * p


def brute_force(eta, nbar, gamma, alpha, xi):
    """Grid search then bounded refinement of the concave 1-D objective."""
    pmax = 4 * max(eta / (nbar * gamma), 1.0)
    grid = np.linspace(0.0, pmax, 4001)
    vals = objective(grid, eta, nbar, gamma, alpha, xi)
    k = int(np.argmax(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(lambda t: -objective(t, eta, nbar, gamma, alpha, xi), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-12})
    return (res.x, -res.fun) if -res.fun > vals[k] else (grid[k], vals[k])


def test_reference_allocation():
    wf = WaterfillParams(eta=[10.0], nbar=[200.0], gamma=1e-3, alpha=ALPHA)
    p = waterfill_power(wf, [1.0])
    p_ref, v_ref = brute_force(10.0, 200.0, 1e-3, ALPHA, 1.0)
    assert p[0] == pytest.approx(p_ref, abs=1e-5)
    assert p[0] == pytest.approx(68.801419, abs=1e-6)
    assert objective(p[0], 10.0, 200.0, 1e-3, ALPHA, 1.0) == pytest.approx(v_ref, abs=1e-9)


def test_water_level_is_price_rescaled_by_ln2():
    # the level eta / (nbar gamma) is recovered at the rescaled price gamma / ln 2
    wf = WaterfillParams(eta=[10.0], nbar=[200.0], gamma=1e-3 / np.log(2), alpha=ALPHA)
    assert waterfill_power(wf, [1.0])[0] == pytest.approx(10 / 0.2 - 1 / 0.3, rel=1e-12)
    assert water_level(10.0, 200.0, 1e-3) == pytest.approx(50 / np.log(2))


def test_zero_and_sub_floor_cases():
    wf = WaterfillParams(eta=[0.0, 0.0], nbar=[200.0, 200.0], gamma=1e-2, alpha=ALPHA)
    assert np.all(waterfill_power(wf, [3.0, 1.0]) == 0)
    low = WaterfillParams(eta=[0.1], nbar=[200.0], gamma=1e-2, alpha=ALPHA)
    assert water_level(0.1, 200.0, 1e-2) < 1 / (ALPHA * 1.0)
    assert waterfill_power(low, [1.0])[0] == 0.0
    zero_eig = WaterfillParams(eta=[50.0, 50.0], nbar=[200.0, 200.0], gamma=1e-3, alpha=ALPHA)
    p = waterfill_power(zero_eig, [2.0, 0.0])
    assert p[1] == 0.0 and np.isfinite(p).all()


def test_params_validation():
    with pytest.raises(ConfigError):
        WaterfillParams(eta=[-1.0], nbar=[200.0], gamma=1e-2, alpha=ALPHA)
    with pytest.raises(ConfigError):
        WaterfillParams(eta=[1.0], nbar=[200.0], gamma=0.0, alpha=ALPHA)


def test_sort_assignment_examples():
    assert sort_assignment([2.0, 3.0, 1.5]).tolist() == [1, 0, 2]
    assert sort_assignment([5.0]).tolist() == [0]
    assert sort_assignment([1.0, 1.0]).tolist() == [0, 1]


def test_kkt_against_brute_force():
    rng = np.random.default_rng(21)
    for _ in range(150):
        eta = rng.uniform(0, 60, 2)
        nbar = rng.uniform(50, 400, 2)
        gamma = 10 ** rng.uniform(-3.5, -0.5)
        xi = np.sort(rng.exponential(2.0, 2))[::-1]
        wf = WaterfillParams(eta=eta, nbar=nbar, gamma=gamma, alpha=ALPHA)
        asg = sort_assignment(eta)
        p = waterfill_power(wf, xi, asg)
        for i in range(2):
            x = xi[asg[i]]
            _, best = brute_force(eta[i], nbar[i], gamma, ALPHA, x)
            assert objective(p[i], eta[i], nbar[i], gamma, ALPHA, x) >= best - 1e-6


@pytest.mark.parametrize("n", [2, 3])
def test_same_order_sorting_is_optimal(n):
    rng = np.random.default_rng(30 + n)
    for _ in range(60):
        eta = rng.uniform(0, 60, n)
        xi = np.sort(rng.exponential(2.0, n))[::-1]
        wf = WaterfillParams(eta=eta, nbar=np.full(n, 200.0), gamma=1e-2, alpha=ALPHA)

        def value(asg):
            asg = np.asarray(asg)
            p = waterfill_power(wf, xi, asg)
            return objective(p, eta, 200.0, 1e-2, ALPHA, xi[asg]).sum()

        ref = value(sort_assignment(eta))
        assert all(value(perm) <= ref + 1e-12 for perm in itertools.permutations(range(n)))


def test_phi_single_sample_value():
    wf = WaterfillParams(eta=[10.0], nbar=[200.0], gamma=1e-3, alpha=ALPHA)
    res = phi(wf, np.array([[1.0]]))
    _, best = brute_force(10.0, 200.0, 1e-3, ALPHA, 1.0)
    assert res.value == pytest.approx(best, abs=1e-9)
    assert res.value == pytest.approx(0.1529814297, abs=1e-9)


def test_phi_zero_weights(cache):
    wf = WaterfillParams(eta=[0.0, 0.0], nbar=[200.0, 200.0], gamma=1e-2, alpha=ALPHA)
    res = phi(wf, cache)
    assert res.value == 0.0 and res.mean_power == 0.0


def test_phi_value_identity(cache):
    wf = WaterfillParams(eta=[40.0, 15.0], nbar=[200.0, 100.0], gamma=1e-2, alpha=ALPHA)
    res = phi(wf, cache)
    recon = float(np.sum(res.mean_rate * wf.eta / wf.nbar)) - wf.gamma * res.mean_power
    assert res.value == pytest.approx(recon, abs=1e-9)


def test_phi_is_bit_stable(cache):
    wf = WaterfillParams(eta=[40.0, 15.0], nbar=[200.0, 200.0], gamma=1e-2, alpha=ALPHA)
    a, b = phi(wf, cache), phi(wf, cache)
    assert a.value == b.value and a.mean_power == b.mean_power
    assert np.array_equal(a.mean_rate, b.mean_rate)


def test_phi_1d_equals_phi_for_one_stream(cache):
    col = cache.column(0)
    for y in (0.0, 1.0, 20.0, 300.0):
        a = phi_1d(y, col, nbar=200.0, gamma=1e-2, alpha=ALPHA)
        b = phi(WaterfillParams(eta=[y], nbar=[200.0], gamma=1e-2, alpha=ALPHA), col[:, None])
        assert a.value == pytest.approx(b.value, abs=1e-12)
    assert phi_1d(0.0, col, nbar=200.0, gamma=1e-2, alpha=ALPHA).value == 0.0


def test_phi_1d_increasing_beyond_threshold(cache):
    col = ColumnTable(cache.column(1))
    ys = np.linspace(0.5, 500, 200)
    vals = col.phi(ys, 200.0, 1e-2, ALPHA)[0]
    active = vals > 0
    assert active[-1] and np.all(np.diff(vals[active]) > 0)


def test_column_table_matches_direct_route(cache, tables):
    rng = np.random.default_rng(8)
    for _ in range(20):
        eta = rng.uniform(0, 80, 2)
        wf = WaterfillParams(eta=eta, nbar=[200.0, 150.0], gamma=10 ** rng.uniform(-3, -1),
                             alpha=ALPHA)
        direct = phi(wf, cache)
        value, power, rate = tables.phi(eta[None, :], wf.nbar, wf.gamma, ALPHA)
        assert value[0] == pytest.approx(direct.value, rel=1e-10, abs=1e-13)
        assert power[0] == pytest.approx(direct.mean_power, rel=1e-10, abs=1e-13)
        assert rate[0] == pytest.approx(direct.mean_rate, rel=1e-10, abs=1e-13)


etas = st.lists(st.floats(0, 200, allow_nan=False), min_size=2, max_size=2)


@settings(max_examples=40, deadline=None)
@given(a=etas, b=etas)
def test_phi_monotone_and_convex(small_tables, a, b):
    a, b = np.array(a), np.array(b)
    nbar = np.array([200.0, 200.0])

    def f(eta):
        return float(small_tables.phi(eta[None, :], nbar, 1e-2, ALPHA)[0][0])

    hi = np.maximum(a, b)
    assert f(a) <= f(hi) + 1e-12
    assert f(0.5 * (a + b)) <= 0.5 * (f(a) + f(b)) + 1e-9
