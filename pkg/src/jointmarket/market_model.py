"""Joint energy / uncertainty / carbon market: state, constraints, objectives.

Two views of every market rule live here:

* evaluators take a :class:`TradeState` and return residuals or slacks, used
  for verification and reporting;
* ``emit_*`` functions write the same rule into a
  :class:`~jointmarket.conic.ProblemBuilder` over index blocks, used by the
  agent and centralized problems.

Sign conventions: sellers' trades ``Es`` and generator factors ``A``/user
factors ``B`` are non-negative, the counterpart copies ``Eb``, ``A_r``,
``B_r`` are their negatives at consensus. Forecast errors are non-positive,
so the auxiliary products ``pi = M @ factors`` are non-positive too. A user
with ``id = 1`` sells allowances (``c <= 0``), renewable plants buy
(``c >= 0``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .conic import ProblemBuilder
from .scenario import CgParams, ScenarioConfig, UserParams
from .uncertainty import UncertaintyModel, chebyshev_z


@dataclass
class TradeState:
    Es: np.ndarray  # (T, users, sellers)
    Eb: np.ndarray  # (T, users, sellers)
    A: np.ndarray  # (T, cgs, res)
    A_r: np.ndarray  # (T, cgs, res)
    B: np.ndarray  # (T, users, res)
    B_r: np.ndarray  # (T, users, res)
    c_u: np.ndarray  # (users,)
    c_r: np.ndarray  # (res,)
    c_s: np.ndarray  # (users,)
    id: np.ndarray  # (users,)
    p_u: np.ndarray  # (T, users)
    p_g: np.ndarray  # (T, cgs)
    p_r: np.ndarray  # (T, res)
    p_hat_r: np.ndarray  # (T, res)
    pi_g: np.ndarray  # (T, cgs)
    pi_u: np.ndarray  # (T, users)
    chi: np.ndarray  # (T, cgs)
    phi_v: np.ndarray  # (T, users)

    @classmethod
    def zeros(cls, cfg: ScenarioConfig) -> "TradeState":
        T, U, G, R = cfg.hours, len(cfg.users), len(cfg.cgs), len(cfg.res)
        S = G + R
        return cls(
            Es=np.zeros((T, U, S)), Eb=np.zeros((T, U, S)),
            A=np.zeros((T, G, R)), A_r=np.zeros((T, G, R)),
            B=np.zeros((T, U, R)), B_r=np.zeros((T, U, R)),
            c_u=np.zeros(U), c_r=np.zeros(R), c_s=np.zeros(U), id=np.ones(U),
            p_u=np.zeros((T, U)), p_g=np.zeros((T, G)), p_r=np.zeros((T, R)),
            p_hat_r=np.array([r.forecast for r in cfg.res]).T.reshape(T, R).copy(),
            pi_g=np.zeros((T, G)), pi_u=np.zeros((T, U)), chi=np.zeros((T, G)), phi_v=np.zeros((T, U)),
        )

    @property
    def c(self) -> np.ndarray:
        """Sharing quantities over users then renewable plants."""
        return np.concatenate([self.c_u, self.c_r])

    def copy(self) -> "TradeState":
        return replace(self, **{k: np.array(v, copy=True) for k, v in self.__dict__.items()})


@dataclass
class AllowanceHolding:
    psi_u: np.ndarray
    psi_r: np.ndarray


@dataclass
class Box:
    """Bounds of ``p`` and ``pi`` for one participant kind, shape (T, n)."""

    p_lo: np.ndarray
    p_hi: np.ndarray
    pi_lo: np.ndarray
    pi_hi: np.ndarray

    def copy(self) -> "Box":
        return Box(self.p_lo.copy(), self.p_hi.copy(), self.pi_lo.copy(), self.pi_hi.copy())

    def validate(self) -> None:
        if np.any(self.p_lo > self.p_hi + 1e-12) or np.any(self.pi_lo > self.pi_hi + 1e-12):
            raise ValueError("inverted McCormick bounds")
        if np.any(self.pi_hi > 1e-12):
            raise ValueError("upper bound of pi must be non-positive")


@dataclass
class McCormickBounds:
    cg: Box
    user: Box
    cg_init: Box = field(repr=False, default=None)
    user_init: Box = field(repr=False, default=None)

    def __post_init__(self):
        if self.cg_init is None:
            self.cg_init = self.cg.copy()
        if self.user_init is None:
            self.user_init = self.user.copy()

    @classmethod
    def initial(cls, cfg: ScenarioConfig, unc: UncertaintyModel) -> "McCormickBounds":
        T = cfg.hours
        m_inf = np.array([np.abs(unc.M(t)).max() if len(cfg.res) else 0.0 for t in range(T)])
        G, U = len(cfg.cgs), len(cfg.users)
        cg = Box(
            p_lo=np.array([g.p_min for g in cfg.cgs]).T.reshape(T, G).copy(),
            p_hi=np.array([g.p_max for g in cfg.cgs]).T.reshape(T, G).copy(),
            pi_lo=np.repeat(-m_inf[:, None], G, axis=1),
            pi_hi=np.zeros((T, G)),
        )
        user = Box(
            p_lo=np.array([u.p_min for u in cfg.users]).T.reshape(T, U).copy(),
            p_hi=np.array([u.p_max for u in cfg.users]).T.reshape(T, U).copy(),
            pi_lo=np.repeat(-m_inf[:, None], U, axis=1),
            pi_hi=np.zeros((T, U)),
        )
        return cls(cg, user)

    def copy(self) -> "McCormickBounds":
        return McCormickBounds(self.cg.copy(), self.user.copy(), self.cg_init.copy(), self.user_init.copy())


@dataclass(frozen=True)
class MarketVariant:
    """Switches for the comparison cases.

    ``flexibility=False`` bars users from selling curtailment;
    ``carbon_sharing=False`` replaces allowance sharing by fixed-price
    purchases from the community manager at ``prices.r_c_buy``.
    """

    flexibility: bool = True
    carbon_sharing: bool = True


FULL_MARKET = MarketVariant()


# ---------------------------------------------------------------------------
# evaluators

def energy_balance_residual(state: TradeState) -> np.ndarray:
    if state.Es.shape != state.Eb.shape:
        raise ValueError(f"shape mismatch: Es {state.Es.shape} vs Eb {state.Eb.shape}")
    return state.Es + state.Eb


def factor_sum_constraint(state: TradeState, j: int, t: int) -> float:
    """Sum of the renewable-side factors of plant ``j``; feasible when -1."""
    n_res = state.A_r.shape[2]
    if not 0 <= j < n_res:
        raise IndexError(f"unknown renewable plant {j}")
    return float(state.A_r[t, :, j].sum() + state.B_r[t, :, j].sum())


def setpoint_residuals(state: TradeState, cfg: ScenarioConfig) -> dict[str, np.ndarray]:
    """Residuals of the set-point definitions and the renewable balance (zero when satisfied)."""
    G = len(cfg.cgs)
    forecast = np.array([r.forecast for r in cfg.res]).T.reshape(cfg.hours, len(cfg.res))
    return {
        "user": state.p_u + state.Eb.sum(axis=2),
        "cg": state.p_g - state.Es[:, :, :G].sum(axis=1),
        "res": state.p_r - state.Es[:, :, G:].sum(axis=1),
        "res_balance": state.p_r + state.p_hat_r - forecast,
    }


def box_violations(state: TradeState, cfg: ScenarioConfig) -> dict[str, float]:
    g_lo = np.array([g.p_min for g in cfg.cgs]).T
    g_hi = np.array([g.p_max for g in cfg.cgs]).T
    u_lo = np.array([u.p_min for u in cfg.users]).T
    u_hi = np.array([u.p_max for u in cfg.users]).T
    out = {
        "cg": float(np.max(np.maximum(g_lo - state.p_g, 0) + np.maximum(state.p_g - g_hi, 0), initial=0.0)),
        "user": float(np.max(np.maximum(u_lo - state.p_u, 0) + np.maximum(state.p_u - u_hi, 0), initial=0.0)),
    }
    return out


def reserve_std(factors_row: np.ndarray, Sigma: np.ndarray) -> float:
    """``||Sigma^{1/2} row'||_2``, the std of ``omega @ row``."""
    return float(np.sqrt(max(factors_row @ Sigma @ factors_row, 0.0)))


def cg_chance_soc(state: TradeState, unc: UncertaintyModel, params: CgParams, i: int, t: int) -> float:
    """Left side minus right side of the generator's reformulated chance constraint (feasible when <= 0)."""
    z = chebyshev_z(params.epsilon)
    row = state.A[t, i]
    lhs = state.p_g[t, i] - unc.M(t) @ row + z * reserve_std(row, unc.Sigma(t))
    return float(lhs - params.p_max[t])


def user_chance_soc(state: TradeState, unc: UncertaintyModel, params: UserParams, i: int, t: int) -> float:
    """Left minus right side of ``-p - M@B + z S <= -p_min`` (feasible when <= 0)."""
    z = chebyshev_z(params.epsilon)
    row = state.B[t, i]
    lhs = -state.p_u[t, i] - unc.M(t) @ row + z * reserve_std(row, unc.Sigma(t))
    return float(lhs + params.p_min[t])


def user_emissions(state: TradeState, cfg: ScenarioConfig) -> np.ndarray:
    """Daily emissions attributed to each user from its generator purchases."""
    sigma = np.array([g.sigma for g in cfg.cgs])
    G = len(cfg.cgs)
    return -np.einsum("tus,s->u", state.Eb[:, :, :G], sigma)


def allowance_holding(state: TradeState, cfg: ScenarioConfig) -> AllowanceHolding:
    psi0 = np.array([u.psi0 for u in cfg.users])
    return AllowanceHolding(psi_u=psi0 + state.c_u - state.c_s, psi_r=state.c_r.copy())


def user_emission_constraint(state: TradeState, cfg: ScenarioConfig, i: int) -> float:
    """Emissions minus holding of user ``i`` (feasible when <= 0)."""
    return float(user_emissions(state, cfg)[i] - allowance_holding(state, cfg).psi_u[i])


def reserve_emission_weights(state: TradeState, cfg: ScenarioConfig, i: int) -> np.ndarray:
    """Carbon weight per hour of plant ``i``'s reserve purchases, ``m_t``."""
    sigma = np.array([g.sigma for g in cfg.cgs])
    return -state.A_r[:, :, i] @ sigma


def res_emission_requirement(state: TradeState, unc: UncertaintyModel, cfg: ScenarioConfig, i: int) -> float:
    """Allowances plant ``i`` needs so its reserve emissions stay covered with the target probability."""
    m = reserve_emission_weights(state, cfg, i)
    h = unc.horizons[i]
    z = chebyshev_z(cfg.res[i].epsilon)
    return float(-h.mean_row @ m + z * np.sqrt(max(m @ h.Xi @ m, 0.0)))


def res_emission_soc(state: TradeState, unc: UncertaintyModel, cfg: ScenarioConfig, i: int) -> float:
    """Requirement minus holding of plant ``i`` (feasible when <= 0)."""
    return res_emission_requirement(state, unc, cfg, i) - float(state.c_r[i])


def carbon_identity_constraints(state: TradeState, cfg: ScenarioConfig, tol: float = 1e-6) -> dict[str, bool]:
    """Check the sharing balance and the seller/buyer identity logic."""
    M = cfg.big_M
    idv = state.id
    c = state.c_u
    slack = tol * (1.0 + M)
    return {
        "balance": abs(state.c.sum()) <= tol * (1.0 + np.abs(state.c).sum()),
        "sale_bounds": bool(np.all(state.c_s >= -slack) and np.all(state.c_s <= M * idv + slack)),
        "identity": bool(np.all(c >= -M * idv - slack) and np.all(c <= M * (1 - idv) + slack)),
        "binary": bool(np.all((idv == 0) | (idv == 1))),
    }


def cg_expected_cost(params: CgParams, p: float, mean_shift: float, std: float) -> float:
    """Closed-form ``E[C(p - omega @ A)]`` given ``omega @ A`` has mean ``mean_shift`` and std ``std``."""
    return (params.c2 * p**2 + params.c1 * p + params.c0 - (2 * params.c2 * p + params.c1) * mean_shift
            + params.c2 * (mean_shift**2 + std**2))


def user_expected_utility(params: UserParams, p: float, mean_shift: float, std: float) -> float:
    return (params.d2 * p**2 + params.d1 * p + (2 * params.d2 * p + params.d1) * mean_shift
            + params.d2 * (mean_shift**2 + std**2))


def _carbon_terms(state: TradeState, cfg: ScenarioConfig, variant: MarketVariant) -> float:
    total = -cfg.prices.r_c_sell * float(state.c_s.sum())
    if not variant.carbon_sharing:
        total += cfg.prices.r_c_buy * float(state.c.sum())
    return total


def exact_objective(state: TradeState, cfg: ScenarioConfig, unc: UncertaintyModel,
                    variant: MarketVariant = FULL_MARKET) -> float:
    """Expected community cost with the true products ``p * (M @ factors)``."""
    total = 0.0
    for t in range(cfg.hours):
        M, Sigma = unc.M(t), unc.Sigma(t)
        for i, g in enumerate(cfg.cgs):
            row = state.A[t, i]
            total += cg_expected_cost(g, state.p_g[t, i], M @ row, reserve_std(row, Sigma))
        for i, u in enumerate(cfg.users):
            row = state.B[t, i]
            total -= user_expected_utility(u, state.p_u[t, i], M @ row, reserve_std(row, Sigma))
        total -= float(cfg.prices.r_e[t] * state.p_hat_r[t].sum())
    total += _carbon_terms(state, cfg, variant)
    return float(total)


def relaxed_objective(state: TradeState, cfg: ScenarioConfig, unc: UncertaintyModel,
                      variant: MarketVariant = FULL_MARKET) -> float:
    """Objective with the auxiliary variables ``pi``, ``chi``, ``phi_v`` standing in for the products."""
    total = 0.0
    for t in range(cfg.hours):
        Sigma = unc.Sigma(t)
        for i, g in enumerate(cfg.cgs):
            p, pi, chi = state.p_g[t, i], state.pi_g[t, i], state.chi[t, i]
            s2 = reserve_std(state.A[t, i], Sigma) ** 2
            total += g.c2 * p**2 + g.c1 * p + g.c0 - 2 * g.c2 * chi - g.c1 * pi + g.c2 * (pi**2 + s2)
        for i, u in enumerate(cfg.users):
            p, pi, ph = state.p_u[t, i], state.pi_u[t, i], state.phi_v[t, i]
            s2 = reserve_std(state.B[t, i], Sigma) ** 2
            total -= u.d2 * p**2 + u.d1 * p + 2 * u.d2 * ph + u.d1 * pi + u.d2 * (pi**2 + s2)
        total -= float(cfg.prices.r_e[t] * state.p_hat_r[t].sum())
    total += _carbon_terms(state, cfg, variant)
    return float(total)


def mccormick_envelope(p_lo, p_hi, pi_lo, pi_hi, p, pi) -> tuple[np.ndarray, np.ndarray]:
    """Interval ``[lower, upper]`` the envelope admits for the product at ``(p, pi)``."""
    lower = np.maximum(p_lo * pi + pi_lo * p - p_lo * pi_lo, p_hi * pi + pi_hi * p - p_hi * pi_hi)
    upper = np.minimum(p_hi * pi + pi_lo * p - p_hi * pi_lo, p_lo * pi + pi_hi * p - p_lo * pi_hi)
    return lower, upper


def mccormick_errors(state: TradeState, floor: float = 1e-6) -> tuple[float, float]:
    """Largest relative gap between the auxiliary products and the true products.

    Where the auxiliary value is below ``floor`` in magnitude the gap is
    measured absolutely.
    """
    def err(w, p, pi):
        if w.size == 0:
            return 0.0
        gap = np.abs(w - p * pi)
        denom = np.where(np.abs(w) < floor, 1.0, np.abs(w))
        return float(np.max(gap / denom))

    return err(state.chi, state.p_g, state.pi_g), err(state.phi_v, state.p_u, state.pi_u)


# ---------------------------------------------------------------------------
# emitters

def emit_mccormick(b: ProblemBuilder, p: int, pi: int, w: int, p_lo: float, p_hi: float,
                   pi_lo: float, pi_hi: float) -> None:
    """Four envelope inequalities for ``w = p * pi`` over the given box."""
    if p_lo > p_hi + 1e-12 or pi_lo > pi_hi + 1e-12:
        raise ValueError("inverted McCormick bounds")
    # a collapsed side turns the envelope into the linear identity it encloses;
    # emitting it as one equality keeps a strict interior for the solver
    if pi_hi - pi_lo <= 1e-12 * max(1.0, abs(pi_hi)):
        b.add_eq([w, p], [1.0, -pi_hi], 0.0)
        return
    if p_hi - p_lo <= 1e-12 * max(1.0, abs(p_hi)):
        b.add_eq([w, pi], [1.0, -p_hi], 0.0)
        return
    idx = [w, pi, p]
    b.add_ge(idx, [1.0, -p_lo, -pi_lo], -p_lo * pi_lo)
    b.add_ge(idx, [1.0, -p_hi, -pi_hi], -p_hi * pi_hi)
    b.add_le(idx, [1.0, -p_hi, -pi_lo], -p_hi * pi_lo)
    b.add_le(idx, [1.0, -p_lo, -pi_hi], -p_lo * pi_hi)


def _cone_rows(root: np.ndarray, idx: np.ndarray, scale: float):
    rows = []
    for k in range(root.shape[0]):
        coef = scale * root[k]
        nz = coef != 0
        if nz.any():
            rows.append((idx[nz], coef[nz], 0.0))
    return rows


def emit_cg_chance_soc(b: ProblemBuilder, z: float, root: np.ndarray, p_max: float,
                       p: int, A_row: np.ndarray, pi: int) -> None:
    """``z ||root @ A_row|| <= p_max - p + pi`` with ``pi = M @ A_row`` imposed elsewhere."""
    rows = _cone_rows(root, A_row, z)
    if rows:
        b.add_soc(rows, ([p, pi], [-1.0, 1.0], p_max))
    else:
        b.add_le([p, pi], [1.0, -1.0], p_max)


def emit_user_chance_soc(b: ProblemBuilder, z: float, root: np.ndarray, p_min: float,
                         p: int, B_row: np.ndarray, pi: int) -> None:
    """``z ||root @ B_row|| <= p + pi - p_min``."""
    rows = _cone_rows(root, B_row, z)
    if rows:
        b.add_soc(rows, ([p, pi], [1.0, 1.0], -p_min))
    else:
        b.add_ge([p, pi], [1.0, 1.0], p_min)


def emit_res_emission_soc(b: ProblemBuilder, z: float, mean_row: np.ndarray, root: np.ndarray,
                          sigma: np.ndarray, A_r: np.ndarray, c: int) -> None:
    """Allowance cover for reserve emissions.

    ``A_r`` is the (T, cgs) index block of the plant's reserve factors;
    ``m_t = -sigma @ A_r[t]``.
    """
    T, G = A_r.shape
    flat = A_r.ravel()
    # mean term: -sum_t mean_t m_t = sum_t mean_t sigma @ A_r[t]
    mean_coef = (mean_row[:, None] * sigma[None, :]).ravel()
    rows = []
    for k in range(root.shape[0]):
        coef = (-z * root[k][:, None] * sigma[None, :]).ravel()
        nz = coef != 0
        if nz.any():
            rows.append((flat[nz], coef[nz], 0.0))
    nz = mean_coef != 0
    rhs_idx = np.concatenate([[c], flat[nz]])
    rhs_coef = np.concatenate([[1.0], -mean_coef[nz]])
    if rows:
        b.add_soc(rows, (rhs_idx, rhs_coef, 0.0))
    else:
        b.add_ge(rhs_idx, rhs_coef, 0.0)


def emit_carbon_identity(b: ProblemBuilder, big_M: float, c: int, c_s: int, id_: int) -> None:
    b.add_le([c_s, id_], [1.0, -big_M], 0.0)
    b.add_ge(c_s, 1.0, 0.0)
    b.add_ge([c, id_], [1.0, big_M], 0.0)
    b.add_le([c, id_], [1.0, big_M], big_M)


def emit_user_emission(b: ProblemBuilder, sigma: np.ndarray, Eb_cg: np.ndarray, psi0: float,
                       c: int, c_s: int) -> None:
    """``-sum_t sigma @ Eb_cg[t] <= psi0 + c - c_s``; ``Eb_cg`` is the (T, cgs) index block."""
    coef = -np.broadcast_to(sigma, Eb_cg.shape).ravel()
    b.add_le(np.concatenate([Eb_cg.ravel(), [c, c_s]]), np.concatenate([coef, [-1.0, 1.0]]), psi0)


def emit_cg_cost(b: ProblemBuilder, g: CgParams, Sigma: np.ndarray, p: int, pi: int, chi: int,
                 A_row: np.ndarray) -> None:
    b.add_square(p, g.c2)
    b.add_linear([p, chi, pi], [g.c1, -2 * g.c2, -g.c1])
    b.add_square(pi, g.c2)
    b.add_form(A_row, Sigma, g.c2)
    b.add_constant(g.c0)


def emit_user_disutility(b: ProblemBuilder, u: UserParams, Sigma: np.ndarray, p: int, pi: int,
                         ph: int, B_row: np.ndarray) -> None:
    """Negated expected utility in relaxed form (convex because ``d2 < 0``)."""
    b.add_square(p, -u.d2)
    b.add_linear([p, ph, pi], [-u.d1, -2 * u.d2, -u.d1])
    b.add_square(pi, -u.d2)
    b.add_form(B_row, Sigma, -u.d2)


@dataclass
class Blocks:
    """Index blocks of one participant inside a :class:`ProblemBuilder`."""

    idx: dict[str, np.ndarray]

    def __getitem__(self, key: str) -> np.ndarray:
        return self.idx[key]


def user_block(b: ProblemBuilder, cfg: ScenarioConfig, unc: UncertaintyModel, bounds: McCormickBounds,
               i: int, prefix: str = "", variant: MarketVariant = FULL_MARKET) -> Blocks:
    """Variables, private constraints and relaxed disutility of user ``i``."""
    u = cfg.users[i]
    T, S, R = cfg.hours, len(cfg.sellers), len(cfg.res)
    G = len(cfg.cgs)
    box = bounds.user
    M = cfg.big_M
    p = b.var(prefix + "p_u", (T,), lb=np.maximum(u.p_min, box.p_lo[:, i]), ub=np.minimum(u.p_max, box.p_hi[:, i]))
    # sign and unit bounds below are implied by consensus; they keep the
    # fixed-price individual problems bounded
    Eb = b.var(prefix + "Eb", (T, S), ub=0.0)
    B = b.var(prefix + "B", (T, R), lb=0.0, ub=(1.0 if variant.flexibility else 0.0))
    pi = b.var(prefix + "pi_u", (T,), lb=box.pi_lo[:, i], ub=box.pi_hi[:, i])
    ph = b.var(prefix + "phi_v", (T,))
    # without sharing, c is a purchase from the manager
    c = b.var(prefix + "c", lb=(-M if variant.carbon_sharing else 0.0), ub=M)
    c_s = b.var(prefix + "c_s", lb=0.0, ub=M)
    id_ = b.var(prefix + "id", lb=0.0, ub=1.0)
    z = chebyshev_z(u.epsilon)
    for t in range(T):
        b.add_eq(np.concatenate([[p[t]], Eb[t]]), np.concatenate([[1.0], np.ones(S)]), 0.0)
        if R:
            b.add_eq(np.concatenate([[pi[t]], B[t]]), np.concatenate([[1.0], -unc.M(t)]), 0.0)
            emit_user_chance_soc(b, z, unc.slice_roots[t], float(u.p_min[t]), p[t], B[t], pi[t])
        else:
            b.add_eq(pi[t], 1.0, 0.0)
            b.add_ge(p[t], 1.0, float(u.p_min[t]))
        emit_mccormick(b, p[t], pi[t], ph[t], box.p_lo[t, i], box.p_hi[t, i], box.pi_lo[t, i], box.pi_hi[t, i])
        emit_user_disutility(b, u, unc.Sigma(t) if R else np.zeros((0, 0)), p[t], pi[t], ph[t], B[t])
    emit_carbon_identity(b, M, c, c_s, id_)
    emit_user_emission(b, np.array([g.sigma for g in cfg.cgs]), Eb[:, :G], u.psi0, c, c_s)
    b.add_linear(c_s, -cfg.prices.r_c_sell)
    if not variant.carbon_sharing:
        b.add_linear(c, cfg.prices.r_c_buy)
    return Blocks({"p_u": p, "Eb": Eb, "B": B, "pi_u": pi, "phi_v": ph, "c": c, "c_s": c_s, "id": id_})


def res_block(b: ProblemBuilder, cfg: ScenarioConfig, unc: UncertaintyModel, i: int,
              prefix: str = "", variant: MarketVariant = FULL_MARKET) -> Blocks:
    """Variables, private constraints and negated revenue of renewable plant ``i``."""
    r = cfg.res[i]
    T, U, G = cfg.hours, len(cfg.users), len(cfg.cgs)
    p = b.var(prefix + "p_r", (T,), lb=0.0)
    p_hat = b.var(prefix + "p_hat_r", (T,), lb=0.0)
    Es = b.var(prefix + "Es", (T, U), lb=0.0)
    A_r = b.var(prefix + "A_r", (T, G), lb=-1.0, ub=0.0)
    B_r = b.var(prefix + "B_r", (T, U), lb=(-1.0 if variant.flexibility else 0.0), ub=0.0)
    c = b.var(prefix + "c", lb=(-np.inf if variant.carbon_sharing else 0.0))
    for t in range(T):
        b.add_eq(np.concatenate([[p[t]], Es[t]]), np.concatenate([[1.0], -np.ones(U)]), 0.0)
        b.add_eq([p[t], p_hat[t]], [1.0, 1.0], float(r.forecast[t]))
        b.add_eq(np.concatenate([A_r[t], B_r[t]]), 1.0, -1.0)
    h = unc.horizons[i]
    emit_res_emission_soc(b, chebyshev_z(r.epsilon), h.mean_row, unc.horizon_roots[i],
                          np.array([g.sigma for g in cfg.cgs]), A_r, c)
    b.add_linear(p_hat, -np.asarray(cfg.prices.r_e, dtype=float))
    if not variant.carbon_sharing:
        b.add_linear(c, cfg.prices.r_c_buy)
    return Blocks({"p_r": p, "p_hat_r": p_hat, "Es": Es, "A_r": A_r, "B_r": B_r, "c": c})


def cg_block(b: ProblemBuilder, cfg: ScenarioConfig, unc: UncertaintyModel, bounds: McCormickBounds,
             i: int, prefix: str = "") -> Blocks:
    """Variables, private constraints and relaxed expected cost of generator ``i``."""
    g = cfg.cgs[i]
    T, U, R = cfg.hours, len(cfg.users), len(cfg.res)
    box = bounds.cg
    p = b.var(prefix + "p_g", (T,), lb=np.maximum(g.p_min, box.p_lo[:, i]), ub=np.minimum(g.p_max, box.p_hi[:, i]))
    Es = b.var(prefix + "Es", (T, U), lb=0.0)
    A = b.var(prefix + "A", (T, R), lb=0.0, ub=1.0)
    pi = b.var(prefix + "pi_g", (T,), lb=box.pi_lo[:, i], ub=box.pi_hi[:, i])
    chi = b.var(prefix + "chi", (T,))
    z = chebyshev_z(g.epsilon)
    for t in range(T):
        b.add_eq(np.concatenate([[p[t]], Es[t]]), np.concatenate([[1.0], -np.ones(U)]), 0.0)
        if R:
            b.add_eq(np.concatenate([[pi[t]], A[t]]), np.concatenate([[1.0], -unc.M(t)]), 0.0)
            emit_cg_chance_soc(b, z, unc.slice_roots[t], float(g.p_max[t]), p[t], A[t], pi[t])
        else:
            b.add_eq(pi[t], 1.0, 0.0)
        emit_mccormick(b, p[t], pi[t], chi[t], box.p_lo[t, i], box.p_hi[t, i], box.pi_lo[t, i], box.pi_hi[t, i])
        emit_cg_cost(b, g, unc.Sigma(t) if R else np.zeros((0, 0)), p[t], pi[t], chi[t], A[t])
    return Blocks({"p_g": p, "Es": Es, "A": A, "pi_g": pi, "chi": chi})
