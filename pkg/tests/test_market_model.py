import math

import numpy as np
import pytest
import tomli
from hypothesis import given, settings, strategies as st

from jointmarket.conic import ProblemBuilder, solve
from jointmarket.market_model import (
    Box,
    McCormickBounds,
    TradeState,
    allowance_holding,
    box_violations,
    carbon_identity_constraints,
    cg_chance_soc,
    emit_cg_chance_soc,
    emit_mccormick,
    emit_res_emission_soc,
    emit_user_chance_soc,
    energy_balance_residual,
    exact_objective,
    factor_sum_constraint,
    mccormick_envelope,
    mccormick_errors,
    relaxed_objective,
    res_emission_requirement,
    reserve_std,
    setpoint_residuals,
    user_chance_soc,
    user_emission_constraint,
    user_emissions,
)
from jointmarket.scenario import bundled_reference_case, parse_scenario
from jointmarket.uncertainty import build_uncertainty

ONE_HOUR = """
name = "one-hour"
hours = 1

[prices]
r_e = 0.06
r_c_sell = 0.003

[[cg]]
name = "MT1"
c0 = 2.01
c1 = 0.045
c2 = 0.00021
p_max = 260.0
sigma = 0.870

[[user]]
name = "U1"
d1 = 0.087
d2 = -0.00014
p_max = 100.0
psi0 = 1800.0

[[res]]
name = "PV1"
forecast = 100.0
"""

# moments of a plant with 10 kW forecast spread
M10, VAR10 = -3.98942280, 34.08450569


@pytest.fixture(scope="module")
def one_hour():
    cfg = parse_scenario(tomli.loads(ONE_HOUR))
    return cfg, build_uncertainty(cfg)


def test_one_hour_moments(one_hour):
    _, unc = one_hour
    assert unc.M(0)[0] == pytest.approx(M10, abs=1e-6)
    assert unc.Sigma(0)[0, 0] == pytest.approx(VAR10, abs=1e-6)


def test_energy_balance_residual():
    s = TradeState.zeros(parse_scenario(tomli.loads(ONE_HOUR)))
    s.Es[0, 0, 0], s.Eb[0, 0, 0] = 20.0, -20.0
    s.Es[0, 0, 1], s.Eb[0, 0, 1] = 5.0, -4.0
    np.testing.assert_allclose(energy_balance_residual(s)[0, 0], [0.0, 1.0])
    s.Eb = s.Eb[:, :, :1]
    with pytest.raises(ValueError):
        energy_balance_residual(s)


def test_factor_sum(ref):
    s = TradeState.zeros(ref)
    s.A_r[3, :, 1] = [-0.2, -0.3, 0.0]
    s.B_r[3, :, 1] = [-0.5, 0.0, 0.0]
    assert factor_sum_constraint(s, 1, 3) == pytest.approx(-1.0)
    with pytest.raises(IndexError):
        factor_sum_constraint(s, 2, 3)


def test_setpoint_examples(ref):
    s = TradeState.zeros(ref)
    t = 12
    s.Eb[t, 0, :] = -10.0
    s.p_u[t, 0] = 50.0
    s.Es[t, 0, 0], s.Es[t, 1, 0] = 20.0, 30.0
    s.p_g[t, 0] = 50.0
    f = ref.res[0].forecast[t]
    s.p_r[t, 0] = 0.6 * f
    s.Es[t, 2, 3] = 0.6 * f
    s.p_hat_r[t, 0] = 0.4 * f
    res = setpoint_residuals(s, ref)
    for key in ("user", "cg", "res", "res_balance"):
        assert np.abs(res[key][t]).max() == pytest.approx(0.0, abs=1e-12), key


def test_box_violations(ref):
    s = TradeState.zeros(ref)
    s.p_u[:] = np.array([u.p_min for u in ref.users]).T
    s.p_g[5, 1] = ref.cgs[1].p_max[5] + 3.0
    out = box_violations(s, ref)
    assert out == {"cg": pytest.approx(3.0), "user": 0.0}


def test_cg_chance_without_reserve(one_hour):
    cfg, unc = one_hour
    s = TradeState.zeros(cfg)
    s.p_g[0, 0] = 250.0
    assert cg_chance_soc(s, unc, cfg.cgs[0], 0, 0) == pytest.approx(-10.0)


def test_cg_chance_with_full_reserve(one_hour):
    cfg, unc = one_hour
    s = TradeState.zeros(cfg)
    s.A[0, 0, 0] = 1.0
    z = math.sqrt(19)
    bound = 260.0 + M10 - z * math.sqrt(VAR10)
    assert round(bound, 2) == 230.56
    s.p_g[0, 0] = bound
    assert cg_chance_soc(s, unc, cfg.cgs[0], 0, 0) == pytest.approx(0.0, abs=1e-6)


def test_cg_chance_emitter_agrees(one_hour):
    cfg, unc = one_hour
    b = ProblemBuilder()
    p = b.var("p", lb=0.0)
    A = b.var("A", (1,), lb=1.0, ub=1.0)
    pi = b.var("pi")
    b.add_eq([pi, A[0]], [1.0, -unc.M(0)[0]], 0.0)
    emit_cg_chance_soc(b, math.sqrt(19), unc.slice_roots[0], 260.0, int(p), A, int(pi))
    b.add_linear(p, -1.0)
    sol = solve(b.build())
    assert sol.x[p] == pytest.approx(230.56, abs=5e-3)


def test_user_chance_with_full_flexibility(one_hour):
    cfg, unc = one_hour
    u = cfg.users[0]
    assert u.p_min[0] == 40.0
    s = TradeState.zeros(cfg)
    s.B[0, 0, 0] = 1.0
    # load must stay above p_min after curtailing by the (negative) error
    bound = 40.0 - M10 + math.sqrt(19) * math.sqrt(VAR10)
    assert round(bound, 2) == 69.44
    s.p_u[0, 0] = bound
    assert user_chance_soc(s, unc, u, 0, 0) == pytest.approx(0.0, abs=1e-6)
    s.B[0, 0, 0] = 0.0
    s.p_u[0, 0] = 40.0
    assert user_chance_soc(s, unc, u, 0, 0) == pytest.approx(0.0)


def test_user_chance_emitter_agrees(one_hour):
    cfg, unc = one_hour
    b = ProblemBuilder()
    p = b.var("p")
    B = b.var("B", (1,), lb=1.0, ub=1.0)
    pi = b.var("pi")
    b.add_eq([pi, B[0]], [1.0, -unc.M(0)[0]], 0.0)
    emit_user_chance_soc(b, math.sqrt(19), unc.slice_roots[0], 40.0, int(p), B, int(pi))
    b.add_linear(p, 1.0)
    sol = solve(b.build())
    assert sol.x[p] == pytest.approx(69.44, abs=5e-3)


def test_user_emissions(ref):
    s = TradeState.zeros(ref)
    s.Eb[10, 0, 0] = -60.0
    s.Eb[11, 0, 0] = -40.0
    s.Eb[11, 0, 3] = -500.0  # renewable purchase carries no emission
    assert user_emissions(s, ref)[0] == pytest.approx(87.0)
    s.c_u[0] = 87.0 - ref.users[0].psi0
    assert user_emission_constraint(s, ref, 0) == pytest.approx(0.0)


def test_res_emission_requirement(one_hour):
    cfg, unc = one_hour
    s = TradeState.zeros(cfg)
    assert res_emission_requirement(s, unc, cfg, 0) == 0.0
    s.A_r[0, 0, 0] = -1.0
    need = res_emission_requirement(s, unc, cfg, 0)
    assert need == pytest.approx(25.61, abs=5e-3)
    s.A_r *= 2.0
    assert res_emission_requirement(s, unc, cfg, 0) == pytest.approx(2 * need)


def test_res_emission_emitter_agrees(one_hour):
    cfg, unc = one_hour
    b = ProblemBuilder()
    A_r = b.var("A_r", (1, 1), lb=-1.0, ub=-1.0)
    c = b.var("c")
    emit_res_emission_soc(b, math.sqrt(19), unc.horizons[0].mean_row, unc.horizon_roots[0],
                          np.array([0.870]), A_r, int(c))
    b.add_linear(c, 1.0)
    sol = solve(b.build())
    assert sol.x[c] == pytest.approx(25.61, abs=5e-3)


def test_carbon_identity_table_example(ref):
    s = TradeState.zeros(ref)
    s.id[:] = [1, 0, 0]
    s.c_u[:] = [-204.06, 0.0, 0.0]
    s.c_s[:] = [584.20, 0.0, 0.0]
    s.c_r[:] = [204.06, 0.0]
    assert allowance_holding(s, ref).psi_u[0] == pytest.approx(1011.74)
    assert all(carbon_identity_constraints(s, ref).values())


def test_carbon_identity_buyer_cannot_sell(ref):
    s = TradeState.zeros(ref)
    s.id[:] = 0
    s.c_s[0] = 10.0
    assert not carbon_identity_constraints(s, ref)["sale_bounds"]
    s.c_s[0] = 0.0
    s.c_u[0], s.c_r[0] = -5.0, 5.0
    assert not carbon_identity_constraints(s, ref)["identity"]
    s.id[0] = 0.5
    assert not carbon_identity_constraints(s, ref)["binary"]


@settings(max_examples=50)
@given(st.lists(st.floats(-500, 500), min_size=4, max_size=4), st.lists(st.floats(0, 500), min_size=3, max_size=3))
def test_carbon_conservation(c, sold):
    cfg = bundled_reference_case()
    s = TradeState.zeros(cfg)
    s.c_u[:] = c[:3]
    s.c_r[:] = [c[3], -sum(c)]
    s.c_s[:] = sold
    h = allowance_holding(s, cfg)
    psi0 = np.array([u.psi0 for u in cfg.users])
    assert np.sum(psi0 - h.psi_u - s.c_s) == pytest.approx(h.psi_r.sum(), abs=1e-6)


def test_all_zero_objective(ref, ref_unc):
    s = TradeState.zeros(ref)
    s.p_hat_r[:] = 0.0
    assert exact_objective(s, ref, ref_unc) == pytest.approx(145.20)
    assert relaxed_objective(s, ref, ref_unc) == pytest.approx(145.20)


def test_deterministic_when_no_reserve(ref, ref_unc):
    s = TradeState.zeros(ref)
    s.p_hat_r[:] = 0.0
    s.p_g[:] = 100.0
    s.p_u[:] = 50.0
    want = 0.0
    for g in ref.cgs:
        want += 24 * (g.c2 * 100**2 + g.c1 * 100 + g.c0)
    for u in ref.users:
        want -= 24 * (u.d2 * 50**2 + u.d1 * 50)
    assert exact_objective(s, ref, ref_unc) == pytest.approx(want)


def random_state(cfg, unc, rng):
    s = TradeState.zeros(cfg)
    T = cfg.hours
    s.p_g[:] = rng.uniform(0, 200, size=s.p_g.shape)
    s.p_u[:] = rng.uniform(50, 150, size=s.p_u.shape)
    s.A[:] = rng.uniform(0, 0.5, size=s.A.shape)
    s.B[:] = rng.uniform(0, 0.3, size=s.B.shape)
    s.c_s[:] = rng.uniform(0, 300, size=s.c_s.shape)
    for t in range(T):
        s.pi_g[t] = s.A[t] @ unc.M(t)
        s.pi_u[t] = s.B[t] @ unc.M(t)
    s.chi[:] = s.p_g * s.pi_g
    s.phi_v[:] = s.p_u * s.pi_u
    return s


def test_relaxed_equals_exact_with_true_products(ref, ref_unc, rng):
    s = random_state(ref, ref_unc, rng)
    assert relaxed_objective(s, ref, ref_unc) == pytest.approx(exact_objective(s, ref, ref_unc), rel=1e-12)
    assert mccormick_errors(s) == (0.0, 0.0)
    s.chi[12] += 1.0
    assert relaxed_objective(s, ref, ref_unc) != pytest.approx(exact_objective(s, ref, ref_unc), rel=1e-12)


@given(st.floats(0, 10), st.integers(0, 2**32 - 1))
def test_reserve_std_homogeneous(scale, seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(3, 3))
    S = L @ L.T
    row = rng.uniform(0, 1, size=3)
    assert reserve_std(scale * row, S) == pytest.approx(scale * reserve_std(row, S), rel=1e-9, abs=1e-12)


def test_envelope_example():
    lo, hi = mccormick_envelope(0.0, 100.0, -5.0, 0.0, 50.0, -2.0)
    assert (lo, hi) == (-200.0, 0.0)
    assert lo <= 50.0 * -2.0 <= hi


def test_envelope_degenerate_box_is_exact():
    lo, hi = mccormick_envelope(40.0, 40.0, -3.0, -3.0, 40.0, -3.0)
    assert lo == hi == -120.0


@settings(max_examples=200)
@given(st.floats(-200, 200), st.floats(0, 200), st.floats(-20, 0), st.floats(0, 20),
       st.floats(0, 1), st.floats(0, 1))
def test_envelope_sound(p_lo, p_w, pi_hi, pi_w, a, b):
    p_hi, pi_lo = p_lo + p_w, pi_hi - pi_w
    p = p_lo + a * p_w
    pi = pi_lo + b * pi_w
    lo, hi = mccormick_envelope(p_lo, p_hi, pi_lo, pi_hi, p, pi)
    slack = 1e-9 * (1 + abs(p_lo) + abs(p_hi)) * (1 + abs(pi_lo))
    assert lo - slack <= p * pi <= hi + slack


def test_emit_mccormick_pins_product_on_degenerate_box():
    b = ProblemBuilder()
    p = b.var("p", lb=40.0, ub=40.0)
    pi = b.var("pi", lb=-3.0, ub=-3.0)
    w = b.var("w")
    emit_mccormick(b, int(p), int(pi), int(w), 40.0, 40.0, -3.0, -3.0)
    b.add_linear(w, 1.0)
    assert solve(b.build()).x[w] == pytest.approx(-120.0, abs=1e-6)
    with pytest.raises(ValueError):
        emit_mccormick(ProblemBuilder(), 0, 1, 2, 5.0, 1.0, -1.0, 0.0)


def test_initial_bounds_shape(ref, ref_unc):
    bounds = McCormickBounds.initial(ref, ref_unc)
    assert bounds.cg.p_lo.shape == (24, 3) and bounds.user.pi_lo.shape == (24, 3)
    assert np.all(bounds.cg.pi_hi == 0.0)
    # the worst hourly mean error bounds pi from below
    t = 12
    assert bounds.cg.pi_lo[t, 0] == pytest.approx(-np.abs(ref_unc.M(t)).max())
    bounds.cg.validate()
    with pytest.raises(ValueError):
        Box(np.ones((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1))).validate()
