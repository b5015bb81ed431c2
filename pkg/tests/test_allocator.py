import math

import numpy as np
import pytest

from d2dmec.allocator import (
    DualDomainError,
    DualPoint,
    closed_form_times,
    coefficients,
    dual_dim,
    dual_value_p2,
    solve_p2,
    solve_p2_batch,
)
from d2dmec.harness.oracles import grid_oracle_p2
from d2dmec.heuristics import local_only
from d2dmec.model import (
    Scenario,
    assignment_from_labels,
    device_loads,
    rate_fn,
    total_latency_recursive,
)

from conftest import scenario

LN2 = math.log(2.0)


def random_interior_dual(K, rng):
    while True:
        beta = rng.uniform(0, 0.1, K - 1)
        zeta = np.concatenate([rng.uniform(0, 0.1, 1), beta * rng.uniform(0, 1, K - 1)])
        beta0 = rng.uniform(0, 0.3)
        d = DualPoint(eta=rng.uniform(0, 0.1), beta0=beta0, lambda0=10 ** rng.uniform(-1, 3),
                      zeta0=beta0 * rng.uniform(0, 1), lam=10 ** rng.uniform(-1, 3, K), beta=beta, zeta=zeta)
        if d.is_interior():
            return d


def test_dual_point_round_trip_and_coefficients():
    rng = np.random.default_rng(0)
    d = random_interior_dual(3, rng)
    z = d.to_vector()
    assert z.shape == (dual_dim(3),)
    assert np.array_equal(DualPoint.from_vector(z, 3).to_vector(), z)
    A, Bc, D, c0 = coefficients(z, 3)
    b2, b3 = d.beta
    # coefficient formulas written out for K = 3
    np.testing.assert_allclose(A, [1 - d.beta0 - b2 - b3, 1 - d.beta0 - b3, 1 - d.beta0], rtol=1e-14)
    np.testing.assert_allclose(Bc, [1 - d.eta - d.beta0 - b2 - b3 - d.zeta[0], b2 - d.zeta[1], b3 - d.zeta[2]],
                               rtol=1e-14)
    np.testing.assert_allclose(D, [1 - d.beta0, d.eta + b2 + b3, d.eta + b3], rtol=1e-14)
    assert c0 == pytest.approx(d.beta0 - d.zeta0)


def test_closed_form_zero_bits_gives_zero_time():
    scn = scenario(2, 4, seed=1)
    pi = assignment_from_labels([0, 2, 2, 2], 2)  # helper 2 gets nothing
    d = random_interior_dual(2, np.random.default_rng(1))
    cf = closed_form_times(scn, pi, d)
    assert cf.t_off[1] == 0.0 and cf.t_dl[1] == 0.0 and cf.t_c[1] == 0.0
    assert cf.interior


@pytest.mark.parametrize("K", [1, 2, 4])
def test_closed_form_stationarity_100_points(K):
    """Lagrangian stationarity in every slot duration at random interior duals."""
    rng = np.random.default_rng(K)
    for _ in range(100):
        scn = scenario(K, K + 2, seed=50 + K, index=int(rng.integers(1 << 30)))
        labels = np.concatenate([np.arange(K + 1), rng.integers(0, K + 1, 1)])
        pi = assignment_from_labels(labels, K)
        d = random_interior_dual(K, rng)
        A, Bc, D, c0 = coefficients(d.to_vector(), K)
        cf = closed_form_times(scn, pi, d)
        b_off, b_dl, cyc, cyc0 = device_loads(scn, pi)
        B = scn.B
        for k in range(K):
            # d/dt [D t + lambda0/h * t f(b/t)] = D + lambda0/h (f(x) - x f'(x)) = 0
            x = b_off[k] / cf.t_off[k]
            g = D[k] + d.lambda0 / scn.hbar[k] * (rate_fn(x, B) - x * LN2 / B * (rate_fn(x, B) + 1))
            assert abs(g) <= 1e-8 * D[k]
            x = b_dl[k] / cf.t_dl[k]
            g = A[k] + d.lam[k] / scn.gbar[k] * (rate_fn(x, B) - x * LN2 / B * (rate_fn(x, B) + 1))
            assert abs(g) <= 1e-8 * A[k]
            # d/dt [B t + lambda kappa c^3 / t^2] = 0
            f = cyc[k] / cf.t_c[k]
            assert abs(Bc[k] - 2 * d.lam[k] * scn.kappa[k] * f**3) <= 1e-8 * Bc[k]
            assert f == pytest.approx(np.cbrt(Bc[k] / (2 * d.lam[k] * scn.kappa[k])), rel=1e-10)
        f0 = cyc0 / cf.t0_c
        assert abs(c0 - 2 * d.lambda0 * scn.kappa0 * f0**3) <= 1e-8 * c0


def _lagrangian_k1(scn, pi, d, t_off, t_dl, t_c, t0):
    """Lagrangian of the K = 1 allocation problem, written out term by term."""
    b_off, b_dl, cyc, cyc0 = (np.asarray(v, dtype=float).reshape(-1) for v in device_loads(scn, pi))
    B = scn.B
    e_off = (2 ** (b_off[0] / t_off / B) - 1) * t_off / scn.hbar[0]
    e_dl = (2 ** (b_dl[0] / t_dl / B) - 1) * t_dl / scn.gbar[0]
    e_c = scn.kappa[0] * cyc[0] ** 3 / t_c**2
    e0 = scn.kappa0 * cyc0[0] ** 3 / t0**2
    obj = t_off + t_c + t_dl
    return (obj
            + d.eta * (t_off - t_off - t_c)
            + d.beta0 * (t0 - t_off - t_c - t_dl)
            + d.lambda0 * (e_off + e0 - scn.E0)
            + d.zeta0 * (cyc0[0] / scn.f0max - t0)
            + d.lam[0] * (e_dl + e_c - scn.E[0])
            + d.zeta[0] * (cyc[0] / scn.fmax[0] - t_c))


def test_dual_value_matches_term_by_term_lagrangian(fixture_scn):
    scn = fixture_scn
    pi = assignment_from_labels([0, 1], 1)
    rng = np.random.default_rng(5)
    for _ in range(20):
        d = random_interior_dual(1, rng)
        cf = closed_form_times(scn, pi, d)
        want = _lagrangian_k1(scn, pi, d, cf.t_off[0], cf.t_dl[0], cf.t_c[0], cf.t0_c)
        assert dual_value_p2(scn, pi, d) == pytest.approx(want, rel=1e-10)


def test_dual_value_rejects_exterior_point(fixture_scn):
    pi = assignment_from_labels([0, 1], 1)
    z = np.zeros(dual_dim(1))
    z[1] = 2.0  # beta0 > 1 makes A and D negative
    with pytest.raises(DualDomainError):
        dual_value_p2(fixture_scn, pi, z)


def test_supergradient_matches_finite_differences():
    scn = scenario(2, 4, seed=3)
    pi = assignment_from_labels([0, 1, 2, 2], 2)
    rng = np.random.default_rng(9)
    for _ in range(10):
        z = random_interior_dual(2, rng).to_vector()
        val, g = dual_value_p2(scn, pi, z, with_supergradient=True)
        for i in range(z.size):
            h = 1e-6 * max(abs(z[i]), 1e-3)
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            if zm[i] < 0:
                zm[i] = z[i]
                fd = (dual_value_p2(scn, pi, zp) - val) / h
            else:
                fd = (dual_value_p2(scn, pi, zp) - dual_value_p2(scn, pi, zm)) / (2 * h)
            assert fd == pytest.approx(g[i], rel=1e-4, abs=1e-4 * (abs(val) / max(abs(z[i]), 1.0) + 1e-12))


def test_weak_duality_against_feasible_allocations():
    scn = scenario(2, 5, seed=4)
    pi = assignment_from_labels([0, 1, 2, 2, 2], 2)
    res = solve_p2(scn, pi)
    rng = np.random.default_rng(2)
    for _ in range(50):
        z = random_interior_dual(2, rng)
        assert dual_value_p2(scn, pi, z) <= res.latency * (1 + 1e-12)


@pytest.mark.parametrize("index", range(20))
def test_p2_matches_grid_oracle(index):
    scn = scenario(1, 2, seed=77, index=index)
    pi = assignment_from_labels([0, 1], 1)
    res = solve_p2(scn, pi)
    grid = grid_oracle_p2(scn, pi)
    if not np.isfinite(grid):
        assert res.status == "infeasible"
        return
    assert res.status == "optimal"
    # the grid value is attained by a feasible point, so it can only sit above the optimum
    assert res.latency <= grid * (1 + 1e-4)
    assert res.latency == pytest.approx(grid, rel=5e-3)
    assert res.diagnostics["gap"] <= 1e-4


def test_p2_fixture_matches_grid(fixture_scn):
    for labels in ([0, 1], [1, 0]):
        pi = assignment_from_labels(labels, 1)
        assert solve_p2(fixture_scn, pi).latency == pytest.approx(grid_oracle_p2(fixture_scn, pi), rel=5e-3)


@pytest.mark.parametrize("index", range(4))
def test_p2_result_contract(index):
    scn = scenario(3, 6, seed=11, index=index)
    pi = assignment_from_labels([0, 1, 2, 3, 3, 0], 3)
    res = solve_p2(scn, pi)
    assert res.status == "optimal"
    assert res.check(scn).ok, res.check(scn).failures()
    assert res.latency == pytest.approx(total_latency_recursive(res.allocation), rel=1e-12)
    assert res.diagnostics["dual_bound"] <= res.latency
    assert (res.latency - res.diagnostics["dual_bound"]) / res.latency <= 1e-4
    # never worse than running everything locally would allow for the local part alone
    assert res.latency >= np.sum(scn.C * pi[:, 3]) / scn.f0max * (1 - 1e-12)


def test_p2_task_order_invariance():
    """Listing the same tasks in another order does not change the problem."""
    scn = scenario(2, 5, seed=12)
    labels = np.array([0, 1, 2, 2, 1])
    perm = np.array([3, 0, 4, 2, 1])
    scn_p = scn.replace(T=scn.T[perm], R=scn.R[perm], C=scn.C[perm])
    a = solve_p2(scn, assignment_from_labels(labels, 2))
    b = solve_p2(scn_p, assignment_from_labels(labels[perm], 2))
    assert a.latency == pytest.approx(b.latency, rel=1e-4)


def test_p2_identical_helpers_identical_loads():
    """Two identical helpers with identical tasks: the problem depends only on the helper order."""
    scn = Scenario(T=[5e3] * 3, R=[5e3] * 3, C=[2e6] * 3, hbar=[1e5, 1e5], gbar=[1e5, 1e5], E0=1e-3,
                   E=[1e-2, 1e-2], f0max=0.9e9, fmax=[1.8e9, 1.8e9], kappa0=1e-28, kappa=1e-28, B=312500.0)
    a = solve_p2(scn, assignment_from_labels([0, 1, 2], 2))
    b = solve_p2(scn, assignment_from_labels([1, 0, 2], 2))
    assert a.latency == pytest.approx(b.latency, rel=1e-6)
    np.testing.assert_allclose(a.allocation.t_off, b.allocation.t_off, rtol=1e-3)


def test_batch_equals_single():
    scn = scenario(2, 4, seed=13)
    pis = np.stack([assignment_from_labels(l, 2) for l in ([0, 1, 2, 2], [2, 1, 0, 0], [1, 1, 0, 2])])
    batch = solve_p2_batch(scn, pis)
    for pi, r in zip(pis, batch):
        assert r.latency == pytest.approx(solve_p2(scn, pi).latency, rel=1e-4)


def test_p2_rejects_fractional(fixture_scn):
    with pytest.raises(ValueError):
        solve_p2(fixture_scn, np.full((2, 2), 0.5))


def test_p2_beats_local_when_offloading_is_cheap():
    scn = scenario(2, 5, seed=14, Ek_db=0.0)
    loc = local_only(scn)
    ex = min(solve_p2(scn, assignment_from_labels(l, 2)).latency for l in ([0, 1, 2, 2, 2], [0, 1, 0, 1, 2]))
    assert ex < loc.latency


def test_p2_degenerate_dual_closes_gap_via_menu_primal():
    # the best dual has beta0 near 1, so A_K and D_1 vanish and closed-form rates are undetermined
    from d2dmec.fixed import solve_fixed_p2
    from d2dmec.model import check_feasible

    scn = scenario(2, 5, 2024, 40)
    pi = assignment_from_labels((2, 0, 1, 0, 2), 2)
    res = solve_p2(scn, pi)
    assert res.status == "optimal"
    assert res.diagnostics["gap"] <= 1e-4
    assert check_feasible(scn, pi, res.allocation).ok
    assert res.latency <= solve_fixed_p2(scn, pi).latency * (1 + 1e-9)


def test_menu_lp_respects_pinned_assignment():
    from d2dmec.relax import solve_lp2_menu

    scn = scenario(2, 5, 2024, 3)
    pi = assignment_from_labels((0, 1, 2, 2, 0), 2)
    res = solve_p2(scn, pi)
    b_off, b_dl, cyc, cyc0 = device_loads(scn, pi)
    a = res.allocation
    speeds = (b_off / a.t_off, b_dl / a.t_dl, cyc / a.t_c, cyc0 / a.t0_c)
    menu = solve_lp2_menu(scn, speeds, res.latency, spread=2.0, assignment=pi)
    assert menu is not None
    np.testing.assert_allclose(menu[0], pi, atol=1e-9)
    # a discretized primal cannot beat the certified bound
    assert menu[2] >= res.diagnostics["dual_bound"] * (1 - 1e-6)
