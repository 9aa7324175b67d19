"""Independent checks on a cleared market and the comparison experiments.

* :func:`solve_centralized` clears the whole community in one conic program
  per identity vector and serves as the reference welfare;
* :func:`verify_equilibrium` re-solves every participant at the clearing
  prices;
* :func:`monte_carlo_audit` replays sampled forecast errors against the
  chance constraints;
* :func:`brute_force_oracle` grid-searches the exact bilinear problem on tiny
  instances;
* :func:`run_sweep` and :func:`run_cases` are the price-grid and
  market-design experiments.
"""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import coordinator
from .agents import Broadcast, LocalDecision, make_agents, merge_decisions
from .conic import ProblemBuilder, SolveError, Status, solve, solve_with_binary
from .market_model import (
    FULL_MARKET,
    MarketVariant,
    McCormickBounds,
    TradeState,
    cg_block,
    cg_expected_cost,
    mccormick_errors,
    res_block,
    reserve_std,
    user_block,
)
from .outcome import MarketOutcome, RoundInfo
from .scenario import Kind, ParticipantId, ScenarioConfig
from .uncertainty import UncertaintyModel, build_uncertainty, chebyshev_z

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# centralized clearing

@dataclass
class CentralProblem:
    problem: object
    blocks: dict[ParticipantId, dict[str, np.ndarray]]
    id_slots: list[int]


def build_central_problem(cfg: ScenarioConfig, unc: UncertaintyModel, bounds: McCormickBounds,
                          variant: MarketVariant = FULL_MARKET) -> CentralProblem:
    """All participants in one program with the coupling rules imposed directly."""
    b = ProblemBuilder()
    G = len(cfg.cgs)
    blocks: dict[ParticipantId, dict[str, np.ndarray]] = {}
    for i in range(len(cfg.users)):
        blocks[ParticipantId(Kind.USER, i)] = user_block(b, cfg, unc, bounds, i, f"u{i}.", variant).idx
    for j in range(len(cfg.res)):
        blocks[ParticipantId(Kind.RES, j)] = res_block(b, cfg, unc, j, f"r{j}.", variant).idx
    for g in range(G):
        blocks[ParticipantId(Kind.CG, g)] = cg_block(b, cfg, unc, bounds, g, f"g{g}.").idx
    users = [blocks[ParticipantId(Kind.USER, i)] for i in range(len(cfg.users))]
    res = [blocks[ParticipantId(Kind.RES, j)] for j in range(len(cfg.res))]
    cgs = [blocks[ParticipantId(Kind.CG, g)] for g in range(G)]
    for i, u in enumerate(users):
        for g, cg in enumerate(cgs):
            for t in range(cfg.hours):
                b.add_eq([u["Eb"][t, g], cg["Es"][t, i]], [1.0, 1.0], 0.0)
        for j, r in enumerate(res):
            for t in range(cfg.hours):
                b.add_eq([u["Eb"][t, G + j], r["Es"][t, i]], [1.0, 1.0], 0.0)
                b.add_eq([u["B"][t, j], r["B_r"][t, i]], [1.0, 1.0], 0.0)
    for g, cg in enumerate(cgs):
        for j, r in enumerate(res):
            for t in range(cfg.hours):
                b.add_eq([cg["A"][t, j], r["A_r"][t, g]], [1.0, 1.0], 0.0)
    if variant.carbon_sharing:
        c_idx = [int(u["c"]) for u in users] + [int(r["c"]) for r in res]
        if c_idx:
            b.add_eq(c_idx, 1.0, 0.0)
    return CentralProblem(b.build(), blocks, [int(u["id"]) for u in users])


def _decisions_from_x(cp: CentralProblem, x: np.ndarray, ids) -> list[LocalDecision]:
    out = []
    for pid, idx in cp.blocks.items():
        values = {k: x[v] for k, v in idx.items()}
        binary = int(ids[pid.index]) if pid.kind is Kind.USER else None
        out.append(LocalDecision(pid, values, float("nan"), binary))
    return out


def solve_relaxation(cfg: ScenarioConfig, unc: UncertaintyModel, bounds: McCormickBounds,
                     variant: MarketVariant = FULL_MARKET) -> tuple[TradeState, float]:
    """Best relaxed solution over every user identity vector.

    Ties are broken towards the first vector in lexicographic order with
    sellers (1) first.
    """
    cp = build_central_problem(cfg, unc, bounds, variant)
    p = cp.problem
    best = None
    for ids in itertools.product((1, 0), repeat=len(cp.id_slots)):
        lb, ub = p.lb.copy(), p.ub.copy()
        lb[cp.id_slots] = ids
        ub[cp.id_slots] = ids
        sol = solve(p.with_bounds(lb, ub))
        if not sol.ok:
            continue
        if best is None or sol.objective < best[1] - 1e-9 * (1.0 + abs(best[1])):
            best = (sol.x, sol.objective, ids)
    if best is None:
        raise SolveError(Status.INFEASIBLE, "centralized problem, every identity vector")
    x, obj, ids = best
    state = merge_decisions(cfg, _decisions_from_x(cp, x, ids))
    return state, obj


def solve_centralized(cfg: ScenarioConfig, variant: MarketVariant = FULL_MARKET,
                      unc: UncertaintyModel | None = None) -> MarketOutcome:
    """Reference clearing: relax, solve exactly, contract, repeat."""
    algo = cfg.algo
    unc = build_uncertainty(cfg) if unc is None else unc
    bounds = McCormickBounds.initial(cfg, unc)
    started = time.perf_counter()
    rounds: list[RoundInfo] = []
    converged = False
    state = None
    for n in range(algo.max_rounds):
        state, _ = solve_relaxation(cfg, unc, bounds, variant)
        err_g, err_u = mccormick_errors(state)
        rounds.append(RoundInfo(n, 1, True, err_g, err_u, bounds))
        log.info("centralized round %d: err_g %.2e, err_u %.2e", n, err_g, err_u)
        if err_g <= algo.delta_g and err_u <= algo.delta_u:
            converged = True
            break
        bounds = coordinator.contract_bounds(bounds, state, coordinator.contraction_schedule(algo, n))
    return MarketOutcome.build(cfg, unc, state, mode="centralized", converged=converged, rounds=rounds,
                               bounds=bounds, variant=variant, elapsed=time.perf_counter() - started)


def welfare_gap(decentralized: MarketOutcome, centralized: MarketOutcome) -> float:
    return abs(decentralized.welfare - centralized.welfare) / max(abs(centralized.welfare), 1e-12)


# ---------------------------------------------------------------------------
# equilibrium

@dataclass
class EquilibriumReport:
    deviations: dict[str, float]  # relative objective improvement of the best response
    best_response: dict[str, float]
    at_outcome: dict[str, float]

    @property
    def max_deviation(self) -> float:
        return max(self.deviations.values(), default=0.0)


def _agent_vector(agent, state: TradeState) -> np.ndarray:
    """The agent's own decision inside ``state`` laid out as its problem vector."""
    cfg = agent.cfg
    G = len(cfg.cgs)
    i = agent.index
    x = np.zeros(agent.problem.n)
    blk = agent.blocks.idx
    if agent.kind is Kind.USER:
        src = {"p_u": state.p_u[:, i], "Eb": state.Eb[:, i, :], "B": state.B[:, i, :], "pi_u": state.pi_u[:, i],
               "phi_v": state.phi_v[:, i], "c": state.c_u[i], "c_s": state.c_s[i], "id": state.id[i]}
    elif agent.kind is Kind.RES:
        src = {"p_r": state.p_r[:, i], "p_hat_r": state.p_hat_r[:, i], "Es": state.Es[:, :, G + i],
               "A_r": state.A_r[:, :, i], "B_r": state.B_r[:, :, i], "c": state.c_r[i]}
    else:
        src = {"p_g": state.p_g[:, i], "Es": state.Es[:, :, i], "A": state.A[:, i, :],
               "pi_g": state.pi_g[:, i], "chi": state.chi[:, i]}
    for k, idx in blk.items():
        x[np.asarray(idx).ravel()] = np.asarray(src[k], dtype=float).ravel()
    return x


def price_broadcast(duals, state: TradeState) -> Broadcast:
    """Clearing prices with every penalty switched off."""
    T_ = state.A.shape
    return Broadcast(duals.lam, duals.eta, duals.ups, duals.theta,
                     np.zeros(T_), np.zeros(state.B.shape), np.zeros(state.Es.shape), 0.0,
                     state, 0.0, 0.0, 0.0, 0.0)


def verify_equilibrium(outcome: MarketOutcome, unc: UncertaintyModel | None = None, duals=None,
                       floor: float = 1.0) -> EquilibriumReport:
    """Best response of every participant at fixed clearing prices.

    The deviation of an agent is ``(f(outcome) - f(best)) / max(|f(best)|, floor)``
    where ``f`` is its priced objective; zero means the cleared decision is
    already a best response.
    """
    cfg = outcome.cfg
    unc = build_uncertainty(cfg) if unc is None else unc
    duals = outcome.duals if duals is None else duals
    if duals is None:
        raise ValueError("equilibrium check needs clearing prices")
    bounds = outcome.bounds if outcome.bounds is not None else McCormickBounds.initial(cfg, unc)
    bc = price_broadcast(duals, outcome.state)
    devs, best, here = {}, {}, {}
    for agent in make_agents(cfg, unc, bounds, outcome.variant):
        prob = agent.local_problem(bc)
        if agent.kind is Kind.USER:
            sol, _ = solve_with_binary(prob, int(agent.blocks["id"]))
        else:
            sol = solve(prob)
        if not sol.ok:
            raise SolveError(sol.status, f"{agent.pid} best response")
        f_out = prob.objective(_agent_vector(agent, outcome.state))
        name = str(agent.pid)
        best[name], here[name] = sol.objective, f_out
        devs[name] = max(f_out - sol.objective, 0.0) / max(abs(sol.objective), floor)
    return EquilibriumReport(devs, best, here)


# ---------------------------------------------------------------------------
# Monte Carlo

@dataclass
class AuditReport:
    cg: np.ndarray  # violation frequency, (T, cgs)
    user: np.ndarray  # (T, users)
    res: np.ndarray  # (res,)
    n_samples: int
    seed: int | None
    equilibrium: EquilibriumReport | None = None
    brute_force_gap: float | None = None
    epsilons: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def max_frequency(self) -> float:
        parts = [a.max() for a in (self.cg, self.user, self.res) if a.size]
        return float(max(parts, default=0.0))

    def rows(self, cfg: ScenarioConfig) -> list[dict]:
        out = []
        for t in range(self.cg.shape[0]):
            for i, g in enumerate(cfg.cgs):
                out.append({"constraint": "generation_cap", "participant": g.name, "hour": t,
                            "frequency": float(self.cg[t, i]), "epsilon": g.epsilon})
            for i, u in enumerate(cfg.users):
                out.append({"constraint": "demand_floor", "participant": u.name, "hour": t,
                            "frequency": float(self.user[t, i]), "epsilon": u.epsilon})
        for j, r in enumerate(cfg.res):
            out.append({"constraint": "reserve_emissions", "participant": r.name, "hour": "",
                        "frequency": float(self.res[j]), "epsilon": r.epsilon})
        return out


def realized_outputs(state: TradeState, omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Generator and user set points after errors ``omega`` of shape (n, T, res)."""
    p_g = state.p_g[None] - np.einsum("ntj,tgj->ntg", omega, state.A)
    p_u = state.p_u[None] + np.einsum("ntj,tuj->ntu", omega, state.B)
    return p_g, p_u


def realized_res_emissions(state: TradeState, cfg: ScenarioConfig, omega: np.ndarray) -> np.ndarray:
    """Reserve-induced emissions of each plant per sample, (n, res)."""
    sigma = np.array([g.sigma for g in cfg.cgs])
    weights = np.einsum("tgj,g->tj", state.A_r, sigma)  # non-positive
    return np.einsum("ntj,tj->nj", omega, weights)


def monte_carlo_audit(outcome: MarketOutcome, n_samples: int = 100_000, seed: int | None = 0,
                      unc: UncertaintyModel | None = None, chunk: int = 20_000,
                      rel_tol: float = 1e-7) -> AuditReport:
    """Empirical violation frequency of every chance constraint.

    ``rel_tol`` absorbs solver round-off at constraints that bind exactly.
    """
    cfg, s = outcome.cfg, outcome.state
    unc = build_uncertainty(cfg) if unc is None else unc
    T, G, U, R = cfg.hours, len(cfg.cgs), len(cfg.users), len(cfg.res)
    cg_hits = np.zeros((T, G))
    user_hits = np.zeros((T, U))
    res_hits = np.zeros(R)
    p_max = np.array([g.p_max for g in cfg.cgs]).T.reshape(T, G)
    p_min = np.array([u.p_min for u in cfg.users]).T.reshape(T, U)
    rng = np.random.default_rng(seed)
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        omega = unc.sample(n, rng)
        p_g, p_u = realized_outputs(s, omega)
        cg_hits += (p_g > p_max + rel_tol * (1.0 + np.abs(p_max))).sum(axis=0)
        user_hits += (p_u < p_min - rel_tol * (1.0 + np.abs(p_min))).sum(axis=0)
        if R:
            em = realized_res_emissions(s, cfg, omega)
            res_hits += (em > s.c_r + rel_tol * (1.0 + np.abs(s.c_r))).sum(axis=0)
        done += n
    return AuditReport(cg_hits / n_samples, user_hits / n_samples, res_hits / n_samples, n_samples,
                       seed if isinstance(seed, int) else None)


def sampled_cg_cost(cfg: ScenarioConfig, p_g: np.ndarray, A: np.ndarray, unc: UncertaintyModel,
                    n_samples: int, seed=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample mean, standard error and closed form of every generator's daily expected cost.

    Each sample is a full day of forecast errors; the generator's realized
    output is ``p_g - omega @ A``. Shapes (cgs,).
    """
    rng = np.random.default_rng(seed)
    omega = unc.sample(n_samples, rng)
    T, G = p_g.shape
    p = p_g[None] - np.einsum("ntj,tgj->ntg", omega, A)
    c2 = np.array([g.c2 for g in cfg.cgs])
    c1 = np.array([g.c1 for g in cfg.cgs])
    c0 = np.array([g.c0 for g in cfg.cgs])
    daily = (c2 * p**2 + c1 * p + c0).sum(axis=1)
    mean, se = daily.mean(axis=0), daily.std(axis=0, ddof=1) / np.sqrt(n_samples)
    closed = np.zeros(G)
    for t in range(T):
        for i, g in enumerate(cfg.cgs):
            row = A[t, i]
            closed[i] += cg_expected_cost(g, p_g[t, i], float(unc.M(t) @ row), reserve_std(row, unc.Sigma(t)))
    return mean, se, closed


# ---------------------------------------------------------------------------
# brute force

@dataclass
class OracleResult:
    welfare: float
    point: dict[str, np.ndarray]
    step: float  # grid step as a fraction of each range
    evaluated: int


def _simplex_grid(k: int, n: int) -> np.ndarray:
    """All points of the k-simplex with coordinates on multiples of 1/n, shape (m, k)."""
    if k == 0:
        return np.zeros((1, 0))
    pts = [c for c in itertools.product(range(n + 1), repeat=k - 1) if sum(c) <= n]
    arr = np.array(pts, dtype=float).reshape(-1, k - 1)
    return np.hstack([arr, (n - arr.sum(axis=1, keepdims=True))]) / n


def brute_force_oracle(cfg: ScenarioConfig, n_grid: int = 20, unc: UncertaintyModel | None = None) -> OracleResult:
    """Best welfare of the exact bilinear problem over a regular grid.

    User set points, all generators but the last, and the renewable energy
    delivered inside the community are gridded over their ranges; the last
    generator closes the energy balance. Participation factors of every plant
    run over a simplex grid. For fixed set points and factors the remaining
    decisions (who buys from whom, allowance transfers) only decide
    feasibility and the sales to the manager, and are settled in closed form:
    the plants sell ``forecast - supplied`` to the manager, and every spare
    allowance is sold to the manager, which is possible iff the community
    total covers all emissions. The result is a feasible exact welfare, hence
    a lower bound on the optimum.
    """
    if len(cfg.cgs) > 2 or len(cfg.users) > 2 or len(cfg.res) > 2 or cfg.hours > 2:
        raise ValueError("brute force is limited to two participants per kind and two hours")
    unc = build_uncertainty(cfg) if unc is None else unc
    T, G, U, R = cfg.hours, len(cfg.cgs), len(cfg.users), len(cfg.res)
    forecast = np.array([sum(float(r.forecast[t]) for r in cfg.res) for t in range(T)])
    # per hour: every user, every generator but the last, and the renewable
    # energy delivered inside the community; the last generator closes the
    # energy balance
    axes = []
    for t in range(T):
        for u in cfg.users:
            axes.append(np.linspace(u.p_min[t], u.p_max[t], n_grid + 1))
        for g in cfg.cgs[:-1]:
            axes.append(np.linspace(g.p_min[t], g.p_max[t], n_grid + 1))
        if G and R:
            axes.append(np.linspace(0.0, forecast[t], n_grid + 1))
    simplex = _simplex_grid(G + U, n_grid)
    factor_axes = [np.arange(simplex.shape[0])] * (T * R)
    mesh = np.meshgrid(*(axes + factor_axes), indexing="ij", sparse=False)
    flat = [m.ravel() for m in mesh]
    m = flat[0].size if flat else 1
    p_g = np.zeros((m, T, G))
    p_u = np.zeros((m, T, U))
    supplied = np.zeros((m, T))
    k = 0
    for t in range(T):
        for i in range(U):
            p_u[:, t, i] = flat[k]
            k += 1
        for i in range(G - 1):
            p_g[:, t, i] = flat[k]
            k += 1
        if G and R:
            supplied[:, t] = flat[k]
            k += 1
        if G:
            p_g[:, t, G - 1] = p_u[:, t].sum(axis=1) - p_g[:, t, :G - 1].sum(axis=1) - supplied[:, t]
        else:
            supplied[:, t] = p_u[:, t].sum(axis=1)
    factors = np.zeros((m, T, R, G + U))
    for t in range(T):
        for j in range(R):
            factors[:, t, j, :] = simplex[flat[k].astype(int)]
            k += 1
    A = factors[..., :G].transpose(0, 1, 3, 2)  # (m, T, G, R)
    B = factors[..., G:].transpose(0, 1, 3, 2)  # (m, T, U, R)
    if R == 0:
        A = np.zeros((m, T, G, 0))
        B = np.zeros((m, T, U, 0))

    feasible = np.ones(m, dtype=bool)
    welfare = np.zeros(m)
    r_e = np.asarray(cfg.prices.r_e, dtype=float)
    for t in range(T):
        M = unc.M(t)
        Sigma = unc.Sigma(t)
        for i, g in enumerate(cfg.cgs):
            shift = A[:, t, i, :] @ M
            var = np.einsum("mj,jk,mk->m", A[:, t, i, :], Sigma, A[:, t, i, :])
            welfare -= (g.c2 * p_g[:, t, i] ** 2 + g.c1 * p_g[:, t, i] + g.c0
                        - (2 * g.c2 * p_g[:, t, i] + g.c1) * shift + g.c2 * (shift**2 + var))
            feasible &= p_g[:, t, i] - shift + chebyshev_z(g.epsilon) * np.sqrt(var) <= g.p_max[t] + 1e-9
        for i, u in enumerate(cfg.users):
            shift = B[:, t, i, :] @ M
            var = np.einsum("mj,jk,mk->m", B[:, t, i, :], Sigma, B[:, t, i, :])
            welfare += (u.d2 * p_u[:, t, i] ** 2 + u.d1 * p_u[:, t, i] + (2 * u.d2 * p_u[:, t, i] + u.d1) * shift
                        + u.d2 * (shift**2 + var))
            feasible &= p_u[:, t, i] + shift - chebyshev_z(u.epsilon) * np.sqrt(var) >= u.p_min[t] - 1e-9
        for i, g in enumerate(cfg.cgs):
            feasible &= (p_g[:, t, i] >= g.p_min[t] - 1e-9) & (p_g[:, t, i] <= g.p_max[t] + 1e-9)
        feasible &= supplied[:, t] <= forecast[t] + 1e-9
        welfare += r_e[t] * (forecast[t] - supplied[:, t])
    sigma = np.array([g.sigma for g in cfg.cgs])
    emissions = np.einsum("mtg,g->m", p_g, sigma)
    requirement = np.zeros(m)
    for j, r in enumerate(cfg.res):
        h = unc.horizons[j]
        weights = np.einsum("mtg,g->mt", A[:, :, :, j], sigma)  # = -m_t
        z = chebyshev_z(r.epsilon)
        requirement += weights @ h.mean_row * -1.0 + z * np.sqrt(
            np.maximum(np.einsum("mt,ts,ms->m", weights, h.Xi, weights), 0.0))
    spare = sum(u.psi0 for u in cfg.users) - emissions - requirement
    feasible &= spare >= -1e-9
    welfare += cfg.prices.r_c_sell * np.maximum(spare, 0.0)
    if not feasible.any():
        raise ValueError("no grid point is feasible; refine the grid")
    welfare = np.where(feasible, welfare, -np.inf)
    best = int(np.argmax(welfare))
    return OracleResult(float(welfare[best]), {"p_g": p_g[best], "p_u": p_u[best], "A": A[best], "B": B[best]},
                        1.0 / n_grid, m)


# ---------------------------------------------------------------------------
# experiments

def _solver(mode: str):
    if mode == "centralized":
        return solve_centralized
    if mode == "decentralized":
        return coordinator.run
    raise ValueError(f"unknown mode {mode!r}")


def run_sweep(cfg: ScenarioConfig, r_e_grid=None, r_c_grid=None, mode: str = "centralized") -> list[dict]:
    """Welfare and sales to the manager over a grid of manager prices.

    ``r_e_grid`` values replace the whole hourly electricity price profile by
    a flat price. Failed points are recorded with ``status`` and skipped.
    """
    r_e_grid = np.linspace(0.04, 0.08, 5) if r_e_grid is None else np.asarray(r_e_grid, dtype=float)
    r_c_grid = np.linspace(0.001, 0.006, 6) if r_c_grid is None else np.asarray(r_c_grid, dtype=float)
    solver = _solver(mode)
    rows = []
    for r_e in r_e_grid:
        for r_c in r_c_grid:
            prices = cfg.prices.__class__(r_e=np.full(cfg.hours, float(r_e)), r_c_sell=float(r_c),
                                          r_c_buy=cfg.prices.r_c_buy)
            point = cfg.replace(prices=prices)
            row = {"r_e": float(r_e), "r_c": float(r_c)}
            try:
                out = solver(point)
                row.update(status="converged" if out.converged else "not_converged", welfare=out.welfare,
                           allowances_to_manager=out.allowances_to_manager(), pv_to_manager=out.pv_to_manager())
            except (SolveError, ValueError) as exc:
                log.warning("sweep point r_e=%s r_c=%s failed: %s", r_e, r_c, exc)
                row.update(status=f"failed: {exc}", welfare=float("nan"), allowances_to_manager=float("nan"),
                           pv_to_manager=float("nan"))
            rows.append(row)
    return rows


CASES = {
    "Case 1": MarketVariant(flexibility=True, carbon_sharing=True),
    "Case 2": MarketVariant(flexibility=False, carbon_sharing=True),
    "Case 3": MarketVariant(flexibility=True, carbon_sharing=False),
}


def run_cases(cfg: ScenarioConfig, mode: str = "centralized") -> list[dict]:
    """Full market, market without flexibility sales, market without allowance sharing."""
    solver = _solver(mode)
    rows = []
    for name, variant in CASES.items():
        out = solver(cfg, variant)
        rows.append({"case": name, "welfare": out.welfare, "allowances_held_inside": out.allowances_held_inside(),
                     "allowances_to_manager": out.allowances_to_manager(), "converged": out.converged,
                     "relaxation_gap": abs(out.welfare - out.exact_welfare)})
    return rows
