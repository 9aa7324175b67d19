"""Local subproblems solved by each market participant at every ADMM iteration.

An agent sees its own parameters plus the manager's :class:`Broadcast`; it
keeps no iterate between calls. The problem structure is assembled once per
bound-contraction round and only the objective changes between iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .conic import ConicProblem, ProblemBuilder, SolveError, solve, solve_with_binary
from .market_model import (
    FULL_MARKET,
    Blocks,
    MarketVariant,
    McCormickBounds,
    TradeState,
    cg_block,
    res_block,
    user_block,
)
from .scenario import Kind, ParticipantId, ScenarioConfig
from .uncertainty import UncertaintyModel


@dataclass
class Broadcast:
    """Everything the manager sends out at iteration k."""

    lam: np.ndarray  # flexibility prices (T, users, res)
    eta: np.ndarray  # reserve prices (T, cgs, res)
    ups: np.ndarray  # energy prices (T, users, sellers)
    theta: float  # allowance sharing price
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    E_hat: np.ndarray
    c_bar: float
    prev: TradeState  # local copies from iteration k
    rho: float
    gamma: float
    tau: float
    phi: float


@dataclass
class LocalDecision:
    pid: ParticipantId
    values: dict[str, np.ndarray]
    objective: float
    binary: int | None = None


@dataclass
class _Term:
    idx: np.ndarray
    penalty: str  # name of the Broadcast penalty attribute
    price: np.ndarray = field(default=None)
    center: np.ndarray = field(default=None)


class Agent:
    """Base class: holds the round's problem structure and adds ADMM terms."""

    kind: Kind

    def __init__(self, cfg: ScenarioConfig, unc: UncertaintyModel, bounds: McCormickBounds, index: int,
                 variant: MarketVariant = FULL_MARKET):
        self.cfg = cfg
        self.index = index
        self.variant = variant
        self.pid = ParticipantId(self.kind, index)
        b = ProblemBuilder()
        self.blocks = self._build(b, cfg, unc, bounds)
        self.problem = b.build()
        self._P0 = self.problem.P
        self._q0 = self.problem.q
        self._r0 = self.problem.r
        self._P_cache: dict[tuple, sp.csc_matrix] = {}

    def _build(self, b, cfg, unc, bounds) -> Blocks:
        raise NotImplementedError

    def _terms(self, bc: Broadcast) -> list[_Term]:
        raise NotImplementedError

    def local_problem(self, bc: Broadcast) -> ConicProblem:
        """Private objective plus ``price * x + penalty/2 * (x - center)**2`` for every coupled block."""
        terms = self._terms(bc)
        q = self._q0.copy()
        r = self._r0
        key = tuple(getattr(bc, t.penalty) for t in terms)
        P = self._P_cache.get(key)
        if P is None:
            diag = np.zeros(self.problem.n)
            for t in terms:
                diag[t.idx.ravel()] += getattr(bc, t.penalty)
            P = (self._P0 + sp.diags(diag)).tocsc()
            self._P_cache = {key: P}
        origin = np.zeros(self.problem.n)
        for t in terms:
            w = getattr(bc, t.penalty)
            idx = t.idx.ravel()
            center = np.asarray(t.center, dtype=float).ravel()
            q[idx] += np.asarray(t.price, dtype=float).ravel() - w * center
            r += 0.5 * w * float(center @ center)
            origin[idx] = center
        return self.problem.with_objective(P, q, r, origin)

    def solve(self, bc: Broadcast) -> LocalDecision:
        prob = self.local_problem(bc)
        sol = solve(prob)
        if not sol.ok:
            raise SolveError(sol.status, f"{self.pid} local problem")
        return self._decision(sol.x, sol.objective)

    def _decision(self, x: np.ndarray, objective: float, binary: int | None = None) -> LocalDecision:
        values = {k: x[v] for k, v in self.blocks.idx.items()}
        return LocalDecision(self.pid, values, objective, binary)


class UserAgent(Agent):
    kind = Kind.USER

    def _build(self, b, cfg, unc, bounds):
        return user_block(b, cfg, unc, bounds, self.index, variant=self.variant)

    def _terms(self, bc):
        i = self.index
        blk = self.blocks
        prev = bc.prev
        terms = [
            _Term(blk["B"], "rho", bc.lam[:, i, :], prev.B[:, i, :] - bc.beta_hat[:, i, :]),
            _Term(blk["Eb"], "gamma", bc.ups[:, i, :], prev.Eb[:, i, :] - bc.E_hat[:, i, :]),
        ]
        if self.variant.carbon_sharing:
            terms.append(_Term(blk["c"], "phi", np.array([bc.theta]), np.array([prev.c_u[i] - bc.c_bar])))
        return terms

    def solve(self, bc: Broadcast) -> LocalDecision:
        prob = self.local_problem(bc)
        sol, id_value = solve_with_binary(prob, int(self.blocks["id"]))
        if not sol.ok:
            raise SolveError(sol.status, f"{self.pid} local problem")
        return self._decision(sol.x, sol.objective, id_value)


class ResAgent(Agent):
    kind = Kind.RES

    def _build(self, b, cfg, unc, bounds):
        return res_block(b, cfg, unc, self.index, variant=self.variant)

    def _terms(self, bc):
        j = self.index
        s = len(self.cfg.cgs) + j
        blk = self.blocks
        prev = bc.prev
        terms = [
            _Term(blk["B_r"], "rho", bc.lam[:, :, j], prev.B_r[:, :, j] - bc.beta_hat[:, :, j]),
            _Term(blk["A_r"], "tau", bc.eta[:, :, j], prev.A_r[:, :, j] - bc.alpha_hat[:, :, j]),
            _Term(blk["Es"], "gamma", bc.ups[:, :, s], prev.Es[:, :, s] - bc.E_hat[:, :, s]),
        ]
        if self.variant.carbon_sharing:
            terms.append(_Term(blk["c"], "phi", np.array([bc.theta]), np.array([prev.c_r[j] - bc.c_bar])))
        return terms


class CgAgent(Agent):
    kind = Kind.CG

    def _build(self, b, cfg, unc, bounds):
        return cg_block(b, cfg, unc, bounds, self.index)

    def _terms(self, bc):
        i = self.index
        blk = self.blocks
        prev = bc.prev
        return [
            _Term(blk["A"], "tau", bc.eta[:, i, :], prev.A[:, i, :] - bc.alpha_hat[:, i, :]),
            _Term(blk["Es"], "gamma", bc.ups[:, :, i], prev.Es[:, :, i] - bc.E_hat[:, :, i]),
        ]


def make_agents(cfg: ScenarioConfig, unc: UncertaintyModel, bounds: McCormickBounds,
                variant: MarketVariant = FULL_MARKET) -> list[Agent]:
    """One agent per participant, users first, then renewable plants, then generators."""
    return ([UserAgent(cfg, unc, bounds, i, variant) for i in range(len(cfg.users))]
            + [ResAgent(cfg, unc, bounds, i, variant) for i in range(len(cfg.res))]
            + [CgAgent(cfg, unc, bounds, i, variant) for i in range(len(cfg.cgs))])


def solve_user(i: int, cfg: ScenarioConfig, unc: UncertaintyModel, bounds: McCormickBounds, bc: Broadcast,
               variant: MarketVariant = FULL_MARKET) -> LocalDecision:
    return UserAgent(cfg, unc, bounds, i, variant).solve(bc)


def solve_res(i: int, cfg: ScenarioConfig, unc: UncertaintyModel, bc: Broadcast,
              variant: MarketVariant = FULL_MARKET) -> LocalDecision:
    return ResAgent(cfg, unc, None, i, variant).solve(bc)


def solve_cg(i: int, cfg: ScenarioConfig, unc: UncertaintyModel, bounds: McCormickBounds, bc: Broadcast,
             variant: MarketVariant = FULL_MARKET) -> LocalDecision:
    return CgAgent(cfg, unc, bounds, i, variant).solve(bc)


def merge_decisions(cfg: ScenarioConfig, decisions: list[LocalDecision], template: TradeState | None = None) -> TradeState:
    """Assemble a market-wide state from one decision per participant."""
    state = TradeState.zeros(cfg) if template is None else template.copy()
    G = len(cfg.cgs)
    seen = set()
    for d in decisions:
        i = d.pid.index
        v = d.values
        seen.add(d.pid)
        if d.pid.kind is Kind.USER:
            state.p_u[:, i] = v["p_u"]
            state.Eb[:, i, :] = v["Eb"]
            state.B[:, i, :] = v["B"]
            state.pi_u[:, i] = v["pi_u"]
            state.phi_v[:, i] = v["phi_v"]
            state.c_u[i] = v["c"]
            state.c_s[i] = v["c_s"]
            state.id[i] = d.binary if d.binary is not None else round(float(v["id"]))
        elif d.pid.kind is Kind.RES:
            state.p_r[:, i] = v["p_r"]
            state.p_hat_r[:, i] = v["p_hat_r"]
            state.Es[:, :, G + i] = v["Es"]
            state.A_r[:, :, i] = v["A_r"]
            state.B_r[:, :, i] = v["B_r"]
            state.c_r[i] = v["c"]
        else:
            state.p_g[:, i] = v["p_g"]
            state.Es[:, :, i] = v["Es"]
            state.A[:, i, :] = v["A"]
            state.pi_g[:, i] = v["pi_g"]
            state.chi[:, i] = v["chi"]
    missing = set(cfg.participants) - seen
    if missing:
        raise ValueError(f"missing decisions for {sorted(str(p) for p in missing)}")
    return state
