import dataclasses

import numpy as np
import pytest

from conftest import tiny
from jointmarket.coordinator import (
    DualState,
    Globals,
    ResidualReport,
    adapt_penalty,
    check_stopping,
    contract_bounds,
    contraction_schedule,
    residuals,
    run,
    stationarity_residual,
    update_duals,
    update_globals,
)
from jointmarket.market_model import Box, McCormickBounds, TradeState
from jointmarket.scenario import bundled_reference_case
from jointmarket.validation import solve_centralized, welfare_gap


def report(**kw):
    base = dict(se=0.0, sr=0.0, sd=0.0, sc=0.0, te=0.0, tr=0.0, td=0.0, tc=0.0)
    base.update(kw)
    return ResidualReport(**base)


def test_update_globals_examples(ref):
    s = TradeState.zeros(ref)
    s.A[0, 0, 0], s.A_r[0, 0, 0] = 0.6, -0.5
    s.A[0, 1, 0], s.A_r[0, 1, 0] = 0.3, -0.3
    s.c_u[:] = [10.0, -4.0, -6.0]
    g = update_globals(s)
    assert g.alpha_hat[0, 0, 0] == pytest.approx(0.05)
    assert g.alpha_hat[0, 1, 0] == 0.0
    assert g.c_bar == 0.0
    assert update_globals(s, carbon_sharing=False).c_bar == 0.0


def test_update_duals_examples(ref):
    ds = DualState.zeros(ref)
    ds.theta = 0.001
    g = Globals.zeros(ref)
    g.c_bar = 0.002
    g.beta_hat[3, 1, 0] = 0.5
    out = update_duals(ds, g)
    assert out.theta == pytest.approx(0.003)
    assert out.lam[3, 1, 0] == ds.rho * 0.5
    assert out.k == ds.k + 1
    # the input state is left alone
    assert ds.theta == 0.001 and ds.lam[3, 1, 0] == 0.0
    g.c_bar = 0.0
    assert update_duals(out, g).theta == out.theta


def test_dual_update_identity(ref, rng):
    ds = DualState.zeros(ref)
    ds.rho, ds.gamma, ds.tau, ds.phi = 0.7, 1.3, 2.0, 0.01
    g = Globals(rng.normal(size=ds.eta.shape), rng.normal(size=ds.lam.shape), rng.normal(size=ds.ups.shape), 0.4)
    out = update_duals(ds, g)
    np.testing.assert_array_equal(out.eta - ds.eta, ds.tau * g.alpha_hat)
    np.testing.assert_array_equal(out.lam - ds.lam, ds.rho * g.beta_hat)
    np.testing.assert_array_equal(out.ups - ds.ups, ds.gamma * g.E_hat)
    assert out.theta - ds.theta == pytest.approx(ds.phi * 0.4)


def test_prices_signs(ref):
    ds = DualState.zeros(ref)
    ds.ups[:] = -0.05
    ds.theta = 0.003
    p = ds.prices()
    assert np.all(p["energy"] == 0.05) and p["carbon"] == 0.003


def test_residuals_vanish_at_consensus(ref):
    s = TradeState.zeros(ref)
    s.Es[:, :, 0] = 10.0
    s.Eb[:, :, 0] = -10.0
    s.A[:, 0, 0], s.A_r[:, 0, 0] = 1.0, -1.0
    g = update_globals(s)
    rr = residuals(s, g, g, prev=s)
    assert all(getattr(rr, k) == 0.0 for k in (*rr.PRIMAL, *rr.DUAL, "me", "mr", "md", "mc"))


def test_check_stopping(ref):
    algo = ref.algo
    assert check_stopping(report(), algo)
    assert not check_stopping(report(sr=1e-5), algo)
    assert check_stopping(report(se=1e-5, sc=1e-4), algo)


def test_adapt_penalty_balanced_is_unchanged(ref):
    ds = DualState.zeros(ref)
    out = adapt_penalty(ds, report(se=1.0, me=1.0, sr=0.01, mr=0.01))
    assert (out.rho, out.gamma, out.tau, out.phi) == (ds.rho, ds.gamma, ds.tau, ds.phi)


def test_adapt_penalty_moves_by_factor_two(ref):
    ds = DualState.zeros(ref)
    out = adapt_penalty(ds, report(se=1.0, me=1e-6, sr=1e-8, mr=1.0))
    assert out.gamma == 2 * ds.gamma
    assert out.tau == ds.tau / 2
    assert out.rho == ds.rho and out.phi == ds.phi


def test_stationarity_residual(ref):
    ds = DualState.zeros(ref)
    ds.gamma, ds.phi = 0.5, 3.0
    rr = report(me=4.0, mc=1e-4)
    assert stationarity_residual(rr, ds) == pytest.approx(1.0)


def bounds_with(p_star, pi_star, init):
    box = Box(np.array([[init[0]]]), np.array([[init[1]]]), np.array([[init[2]]]), np.array([[init[3]]]))
    b = McCormickBounds(box, box.copy())
    s = TradeState.zeros(tiny(bundled_reference_case()))
    s.p_g[:] = p_star
    s.pi_g[:] = pi_star
    s.p_u[:] = p_star
    s.pi_u[:] = pi_star
    return b, s


def test_contract_bounds_examples():
    b, s = bounds_with(100.0, -2.0, (0.0, 260.0, -5.0, 0.0))
    out = contract_bounds(b, s, 0.2)
    assert (out.cg.p_lo[0, 0], out.cg.p_hi[0, 0]) == pytest.approx((80.0, 120.0))
    assert (out.cg.pi_lo[0, 0], out.cg.pi_hi[0, 0]) == pytest.approx((-2.4, -1.6))
    # contracted boxes keep the point they were built around
    assert out.user.p_lo[0, 0] <= 100.0 <= out.user.p_hi[0, 0]


def test_contract_bounds_clamps_to_initial_box():
    b, s = bounds_with(260.0, -5.0, (0.0, 260.0, -5.0, 0.0))
    out = contract_bounds(b, s, 5.0)
    assert (out.cg.p_lo[0, 0], out.cg.p_hi[0, 0]) == (0.0, 260.0)
    assert (out.cg.pi_lo[0, 0], out.cg.pi_hi[0, 0]) == (-5.0, 0.0)
    with pytest.raises(ValueError):
        contract_bounds(b, s, -0.1)


def test_contraction_schedule(ref):
    algo = ref.algo
    assert [contraction_schedule(algo, n) for n in range(4)] == pytest.approx([0.5, 0.3, 0.1, 0.0])


def test_small_run_matches_centralized(ref):
    cfg = tiny(ref, res=())
    dec = run(cfg)
    cen = solve_centralized(cfg)
    assert dec.converged
    assert welfare_gap(dec, cen) <= 1e-3
    last = dec.history[-1]
    assert check_stopping(last, cfg.algo) and last.stationarity <= cfg.algo.tol_stationarity


def test_zero_renewable_scenario_clears(ref):
    cfg = tiny(ref, users=(0, 1), res=(), hours=(12,))
    out = run(cfg)
    assert out.converged
    assert out.state.A.shape == (1, 1, 0) and out.state.B.shape == (1, 2, 0)
    # energy balances: every kWh bought was sold
    np.testing.assert_allclose(out.state.p_u.sum(), out.state.p_g.sum(), atol=0.05)


def test_iteration_cap_gives_partial_result(ref):
    cfg = tiny(ref, max_admm_iters=3)
    out = run(cfg)
    assert not out.converged
    assert len(out.history) == 3


def test_fixed_penalties_still_converge(ref):
    # penalties sized to the price scale; 1.0 is far too stiff for $/kWh prices
    cfg = tiny(ref, res=(), adaptive_penalty=False, gamma=0.01, phi=0.01)
    out = run(cfg)
    assert out.converged
    assert welfare_gap(out, solve_centralized(cfg)) <= 1e-3


def test_guard_can_be_disabled(ref):
    on = run(tiny(ref, res=()))
    off = run(tiny(ref, res=(), stationarity_guard=False))
    assert len(off.history) <= len(on.history)
    assert dataclasses.replace(ref.algo, stationarity_guard=False).stationarity_guard is False
