import numpy as np
import pytest

from conftest import tiny
from jointmarket.agents import (
    Broadcast,
    CgAgent,
    ResAgent,
    UserAgent,
    make_agents,
    merge_decisions,
    solve_cg,
    solve_res,
    solve_user,
)
from jointmarket.conic import SolveError
from jointmarket.coordinator import DualState, Globals
from jointmarket.market_model import MarketVariant, McCormickBounds, TradeState
from jointmarket.scenario import Kind
from jointmarket.uncertainty import build_uncertainty


@pytest.fixture(scope="module")
def slice1(ref):
    """One generator, one user, one PV plant, a dark hour and a sunny hour."""
    cfg = tiny(ref, hours=(2, 12))
    unc = build_uncertainty(cfg)
    return cfg, unc, McCormickBounds.initial(cfg, unc)


def broadcast(cfg, prev=None, pen=1.0, lam=None, eta=None, ups=None, theta=0.0):
    ds = DualState.zeros(cfg)
    g = Globals.zeros(cfg)
    return Broadcast(
        ds.lam if lam is None else lam, ds.eta if eta is None else eta, ds.ups if ups is None else ups,
        theta, g.alpha_hat, g.beta_hat, g.E_hat, g.c_bar,
        TradeState.zeros(cfg) if prev is None else prev, pen, pen, pen, pen,
    )


def test_agent_order_and_kinds(slice1):
    cfg, unc, bounds = slice1
    agents = make_agents(cfg, unc, bounds)
    assert [a.pid.kind for a in agents] == [Kind.USER, Kind.RES, Kind.CG]


def test_large_penalty_pins_to_previous_copies(slice1):
    cfg, unc, bounds = slice1
    agents = make_agents(cfg, unc, bounds)
    bc = broadcast(cfg)
    prev = merge_decisions(cfg, [a.solve(bc) for a in agents])
    pinned = merge_decisions(cfg, [a.solve(broadcast(cfg, prev, pen=1e4)) for a in agents])
    for name in ("Eb", "Es", "A", "A_r", "B", "B_r", "c_u", "c_r"):
        np.testing.assert_allclose(getattr(pinned, name), getattr(prev, name), atol=1e-3, err_msg=name)


def test_local_solve_beats_previous_point(slice1):
    cfg, unc, bounds = slice1
    agent = CgAgent(cfg, unc, bounds, 0)
    prev = merge_decisions(cfg, [a.solve(broadcast(cfg)) for a in make_agents(cfg, unc, bounds)])
    ups = np.full((cfg.hours, 1, 2), -0.08)
    bc = broadcast(cfg, prev, ups=ups)
    prob = agent.local_problem(bc)
    d = agent.solve(bc)
    x_prev = np.zeros(prob.n)
    for key, idx in agent.blocks.idx.items():
        x_prev[idx] = {"p_g": prev.p_g[:, 0], "Es": prev.Es[:, :, 0], "A": prev.A[:, 0, :],
                       "pi_g": prev.pi_g[:, 0], "chi": prev.chi[:, 0]}[key]
    assert prob.max_violation(x_prev) <= 1e-6
    assert d.objective <= prob.objective(x_prev) + 1e-7


def test_paying_for_flexibility_raises_supply(slice1):
    cfg, unc, bounds = slice1
    t = 1
    # a weak proximal pull leaves the price in charge
    base = solve_user(0, cfg, unc, bounds, broadcast(cfg, pen=1e-3))
    lam = np.zeros((cfg.hours, 1, 1))
    lam[t] = -1.0
    paid = solve_user(0, cfg, unc, bounds, broadcast(cfg, pen=1e-3, lam=lam))
    assert paid.values["B"][t, 0] > base.values["B"][t, 0] + 0.1


def test_user_identity_is_consistent(slice1):
    cfg, unc, bounds = slice1
    d = solve_user(0, cfg, unc, bounds, broadcast(cfg, theta=0.01))
    c, c_s = float(d.values["c"]), float(d.values["c_s"])
    M = cfg.big_M
    assert d.binary in (0, 1)
    assert -M * d.binary - 1e-6 <= c <= M * (1 - d.binary) + 1e-6
    assert -1e-6 <= c_s <= M * d.binary + 1e-6


def test_res_dark_hour_sells_nothing(slice1):
    cfg, unc, bounds = slice1
    d = solve_res(0, cfg, unc, broadcast(cfg))
    assert cfg.res[0].forecast[0] == 0.0
    assert np.all(np.abs(d.values["Es"][0]) <= 1e-7)
    assert abs(d.values["p_r"][0]) <= 1e-7 and abs(d.values["p_hat_r"][0]) <= 1e-7


def test_res_factors_sum_to_minus_one(slice1):
    cfg, unc, bounds = slice1
    d = solve_res(0, cfg, unc, broadcast(cfg))
    sums = d.values["A_r"].sum(axis=1) + d.values["B_r"].sum(axis=1)
    np.testing.assert_allclose(sums, -1.0, atol=1e-7)


def test_res_without_flexibility_needs_allowances(slice1):
    cfg, unc, bounds = slice1
    d = solve_res(0, cfg, unc, broadcast(cfg), variant=MarketVariant(flexibility=False))
    assert np.all(np.abs(d.values["B_r"]) <= 1e-7)
    assert float(d.values["c"]) > 1.0


def test_cg_without_profitable_trade(slice1):
    cfg, unc, bounds = slice1
    g = cfg.cgs[0]
    # energy price equal to the marginal cost at zero output
    ups = np.full((cfg.hours, 1, 2), -g.c1)
    d = solve_cg(0, cfg, unc, bounds, broadcast(cfg, ups=ups))
    assert np.all(np.abs(d.values["p_g"]) <= 1e-4)
    assert np.all(np.abs(d.values["A"]) <= 1e-4)


def test_cg_sells_at_a_high_price(slice1):
    cfg, unc, bounds = slice1
    ups = np.full((cfg.hours, 1, 2), -0.2)
    d = solve_cg(0, cfg, unc, bounds, broadcast(cfg, pen=1e-4, ups=ups))
    assert np.all(d.values["p_g"] > 100.0)


def test_infeasible_user_reports_participant(slice1):
    cfg, unc, bounds = slice1
    squeezed = bounds.copy()
    squeezed.user.p_hi[:] = 0.0
    squeezed.user.p_lo[:] = 0.0
    with pytest.raises(SolveError, match="User0"):
        UserAgent(cfg, unc, squeezed, 0).solve(broadcast(cfg))


def test_merge_requires_every_participant(slice1):
    cfg, unc, bounds = slice1
    d = ResAgent(cfg, unc, bounds, 0).solve(broadcast(cfg))
    with pytest.raises(ValueError, match="missing"):
        merge_decisions(cfg, [d])
