"""Community manager: the relax / ADMM / contract double loop.

Outer rounds tighten the McCormick boxes around the last solution; inside a
round the manager alternates between collecting local decisions, averaging
the coupled quantities and moving the prices, until the consensus residuals
fall under their thresholds.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .agents import Agent, Broadcast, make_agents, merge_decisions
from .market_model import (
    FULL_MARKET,
    Box,
    MarketVariant,
    McCormickBounds,
    TradeState,
    mccormick_errors,
)
from .outcome import MarketOutcome, RoundInfo
from .scenario import AlgoConfig, ScenarioConfig
from .uncertainty import UncertaintyModel, build_uncertainty

log = logging.getLogger(__name__)

# residual balancing: ratio that triggers a change, and the change factor
BALANCE_RATIO = 10.0
BALANCE_FACTOR = 2.0
PENALTY_MIN, PENALTY_MAX = 1e-8, 1e4


@dataclass
class DualState:
    lam: np.ndarray
    eta: np.ndarray
    ups: np.ndarray
    theta: float
    rho: float
    gamma: float
    tau: float
    phi: float
    k: int = 0

    @classmethod
    def zeros(cls, cfg: ScenarioConfig) -> "DualState":
        T, U, G, R = cfg.hours, len(cfg.users), len(cfg.cgs), len(cfg.res)
        a = cfg.algo
        return cls(np.zeros((T, U, R)), np.zeros((T, G, R)), np.zeros((T, U, G + R)), 0.0,
                   a.rho, a.gamma, a.tau, a.phi)

    def copy(self) -> "DualState":
        return replace(self, lam=self.lam.copy(), eta=self.eta.copy(), ups=self.ups.copy())

    def prices(self) -> dict[str, np.ndarray | float]:
        """Bilateral equilibrium prices: energy, reserve, flexibility, allowance."""
        return {"energy": -self.ups, "reserve": -self.eta, "flexibility": -self.lam, "carbon": self.theta}


@dataclass
class Globals:
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    E_hat: np.ndarray
    c_bar: float

    @classmethod
    def zeros(cls, cfg: ScenarioConfig) -> "Globals":
        T, U, G, R = cfg.hours, len(cfg.users), len(cfg.cgs), len(cfg.res)
        return cls(np.zeros((T, G, R)), np.zeros((T, U, R)), np.zeros((T, U, G + R)), 0.0)


@dataclass
class ResidualReport:
    se: float
    sr: float
    sd: float
    sc: float
    te: float
    tr: float
    td: float
    tc: float
    round: int = 0
    k: int = 0
    err_g: float = float("nan")
    err_u: float = float("nan")
    # squared movement of the local copies, the dual residual used for balancing
    me: float = 0.0
    mr: float = 0.0
    md: float = 0.0
    mc: float = 0.0
    # largest penalty-weighted movement over the coupled blocks, in price units
    stationarity: float = 0.0

    PRIMAL = ("se", "sr", "sd", "sc")
    DUAL = ("te", "tr", "td", "tc")

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("round", "k", *self.PRIMAL, *self.DUAL)}


def update_globals(state: TradeState, carbon_sharing: bool = True) -> Globals:
    """Average each pair of coupled copies; mean of the sharing quantities."""
    c = state.c
    return Globals(
        alpha_hat=0.5 * (state.A + state.A_r),
        beta_hat=0.5 * (state.B + state.B_r),
        E_hat=0.5 * (state.Eb + state.Es),
        c_bar=float(c.mean()) if (carbon_sharing and c.size) else 0.0,
    )


def update_duals(ds: DualState, g: Globals) -> DualState:
    out = ds.copy()
    out.theta = ds.theta + ds.phi * g.c_bar
    out.lam = ds.lam + ds.rho * g.beta_hat
    out.eta = ds.eta + ds.tau * g.alpha_hat
    out.ups = ds.ups + ds.gamma * g.E_hat
    out.k = ds.k + 1
    return out


def residuals(state: TradeState, g: Globals, g_prev: Globals, carbon_sharing: bool = True,
              prev: TradeState | None = None) -> ResidualReport:
    sc = float(state.c.sum() ** 2) if carbon_sharing else 0.0
    moves = {}
    if prev is not None:
        def move(*pairs):
            return float(sum(np.sum((a - b) ** 2) for a, b in pairs))

        moves = dict(
            # the split of a total among trading partners is often not unique,
            # so energy movement is measured on set points
            me=move((state.p_g, prev.p_g), (state.p_u, prev.p_u), (state.p_r, prev.p_r)),
            mr=move((state.A, prev.A), (state.A_r, prev.A_r)),
            md=move((state.B, prev.B), (state.B_r, prev.B_r)),
            mc=move((state.c, prev.c)) if carbon_sharing else 0.0,
        )
    return ResidualReport(
        **moves,
        se=float(np.sum((state.Es + state.Eb) ** 2)),
        sr=float(np.sum((state.A + state.A_r) ** 2)),
        sd=float(np.sum((state.B + state.B_r) ** 2)),
        sc=sc,
        te=float(np.sum((g.E_hat - g_prev.E_hat) ** 2)),
        tr=float(np.sum((g.alpha_hat - g_prev.alpha_hat) ** 2)),
        td=float(np.sum((g.beta_hat - g_prev.beta_hat) ** 2)),
        tc=float((g.c_bar - g_prev.c_bar) ** 2),
    )


def thresholds(algo: AlgoConfig) -> dict[str, float]:
    return {
        "se": algo.tol_e_pri, "sr": algo.tol_r_pri, "sd": algo.tol_d_pri, "sc": algo.tol_c_pri,
        "te": algo.tol_e_dual, "tr": algo.tol_r_dual, "td": algo.tol_d_dual, "tc": algo.tol_c_dual,
    }


def check_stopping(rr: ResidualReport, algo: AlgoConfig) -> bool:
    return all(getattr(rr, k) <= v for k, v in thresholds(algo).items())


_PENALTY_OF = {"gamma": ("se", "me"), "tau": ("sr", "mr"), "rho": ("sd", "md"), "phi": ("sc", "mc")}


def stationarity_residual(rr: ResidualReport, ds: DualState) -> float:
    """Largest ``penalty * ||movement||`` over the coupled blocks.

    At an iterate that has reached consensus, this is how far each agent's
    marginal value can still sit from the price it was charged.
    """
    return max(getattr(ds, name) * float(np.sqrt(getattr(rr, m))) for name, (_, m) in _PENALTY_OF.items())


def is_stationary(rr: ResidualReport, algo: AlgoConfig) -> bool:
    """Price-unit movement of the local copies under ``tol_stationarity``.

    The averaged residuals vanish at consensus even while the copies are
    still drifting towards the optimum; this guard keeps the round going
    until they settle.
    """
    return rr.stationarity <= algo.tol_stationarity


def adapt_penalty(ds: DualState, rr: ResidualReport, ratio: float = BALANCE_RATIO,
                  factor: float = BALANCE_FACTOR) -> DualState:
    """Residual balancing on each penalty.

    The primal norm is compared with ``penalty * ||movement||`` where the
    movement is the change of the local copies between iterations. The
    stopping residuals measure the change of the averages instead, which
    vanishes at consensus however far the copies still move, so they
    cannot steer the penalties. Duals are kept unscaled, so a penalty change
    needs no rescaling of the prices.
    """
    out = ds.copy()
    for name, (p, d) in _PENALTY_OF.items():
        pen = getattr(ds, name)
        primal = np.sqrt(getattr(rr, p))
        dual = pen * np.sqrt(getattr(rr, d))
        if primal > ratio * dual:
            setattr(out, name, min(pen * factor, PENALTY_MAX))
        elif dual > ratio * primal:
            setattr(out, name, max(pen / factor, PENALTY_MIN))
    return out


def _contract_box(box: Box, init: Box, p_star: np.ndarray, pi_star: np.ndarray, eps: float) -> Box:
    p_lo = np.maximum((1 - eps) * p_star, init.p_lo)
    p_hi = np.minimum((1 + eps) * p_star, init.p_hi)
    # pi is non-positive, so the roles of (1 - eps) and (1 + eps) swap
    pi_lo = np.maximum((1 + eps) * pi_star, init.pi_lo)
    pi_hi = np.minimum((1 - eps) * pi_star, init.pi_hi)
    # solver noise around zero must not invert a box
    p_lo = np.minimum(p_lo, p_hi)
    pi_lo = np.minimum(pi_lo, pi_hi)
    return Box(p_lo, p_hi, pi_lo, pi_hi)


def contract_bounds(bounds: McCormickBounds, solution: TradeState, eps_n: float) -> McCormickBounds:
    if eps_n < 0:
        raise ValueError("contraction scalar must be non-negative")
    return McCormickBounds(
        cg=_contract_box(bounds.cg, bounds.cg_init, solution.p_g, solution.pi_g, eps_n),
        user=_contract_box(bounds.user, bounds.user_init, solution.p_u, solution.pi_u, eps_n),
        cg_init=bounds.cg_init.copy(),
        user_init=bounds.user_init.copy(),
    )


def contraction_schedule(algo: AlgoConfig, n: int) -> float:
    """Scalar used by the n-th contraction (n = 0, 1, ...), floored at zero."""
    return max(algo.eps0 - n * algo.kappa, 0.0)


@dataclass
class AdmmRound:
    """Result of one inner ADMM loop."""

    state: TradeState
    duals: DualState
    globals: Globals
    history: list[ResidualReport] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.history)


def admm(cfg: ScenarioConfig, unc: UncertaintyModel, bounds: McCormickBounds, duals: DualState,
         glob: Globals, prev: TradeState, round_no: int = 0, variant: MarketVariant = FULL_MARKET,
         adaptive: bool | None = None, max_iters: int | None = None, agents: list[Agent] | None = None,
         callback=None) -> AdmmRound:
    """Inner loop of one round, starting from the given duals, averages and local copies."""
    algo = cfg.algo
    adaptive = algo.adaptive_penalty if adaptive is None else adaptive
    max_iters = algo.max_admm_iters if max_iters is None else max_iters
    agents = make_agents(cfg, unc, bounds, variant) if agents is None else agents
    history: list[ResidualReport] = []
    converged = False
    state = prev
    for k in range(max_iters):
        bc = Broadcast(duals.lam, duals.eta, duals.ups, duals.theta, glob.alpha_hat, glob.beta_hat,
                       glob.E_hat, glob.c_bar, prev, duals.rho, duals.gamma, duals.tau, duals.phi)
        decisions = [a.solve(bc) for a in agents]
        state = merge_decisions(cfg, decisions, prev)
        new_glob = update_globals(state, variant.carbon_sharing)
        rr = residuals(state, new_glob, glob, variant.carbon_sharing, prev)
        rr.round, rr.k = round_no, k
        rr.stationarity = stationarity_residual(rr, duals)
        duals = update_duals(duals, new_glob)
        history.append(rr)
        if callback is not None:
            callback(rr, duals)
        glob, prev = new_glob, state
        if k >= 1 and check_stopping(rr, algo) and (not algo.stationarity_guard or is_stationary(rr, algo)):
            converged = True
            break
        if adaptive and k < algo.adapt_iters:
            duals = adapt_penalty(duals, rr)
    return AdmmRound(state, duals, glob, history, converged)


def run(cfg: ScenarioConfig, variant: MarketVariant = FULL_MARKET, unc: UncertaintyModel | None = None,
        callback=None) -> MarketOutcome:
    """Decentralized clearing: relax, run ADMM to consensus, contract, repeat."""
    algo = cfg.algo
    unc = build_uncertainty(cfg) if unc is None else unc
    bounds = McCormickBounds.initial(cfg, unc)
    duals, glob, prev = DualState.zeros(cfg), Globals.zeros(cfg), TradeState.zeros(cfg)
    history: list[ResidualReport] = []
    rounds: list[RoundInfo] = []
    converged = False
    result = None
    started = time.perf_counter()
    for n in range(algo.max_rounds):
        if n > 0 and not algo.warm_start:
            duals, glob, prev = DualState.zeros(cfg), Globals.zeros(cfg), TradeState.zeros(cfg)
        result = admm(cfg, unc, bounds, duals, glob, prev, n, variant, callback=callback)
        err_g, err_u = mccormick_errors(result.state)
        result.history[-1].err_g, result.history[-1].err_u = err_g, err_u
        history.extend(result.history)
        rounds.append(RoundInfo(n, result.iterations, result.converged, err_g, err_u, bounds))
        log.info("round %d: %d iterations, consensus %s, err_g %.2e, err_u %.2e",
                 n, result.iterations, result.converged, err_g, err_u)
        if not result.converged:
            break
        if err_g <= algo.delta_g and err_u <= algo.delta_u:
            converged = True
            break
        bounds = contract_bounds(bounds, result.state, contraction_schedule(algo, n))
        duals, glob, prev = result.duals, result.globals, result.state
    return MarketOutcome.build(
        cfg, unc, result.state, mode="decentralized", converged=converged, rounds=rounds,
        history=history, duals=result.duals, bounds=bounds, variant=variant,
        elapsed=time.perf_counter() - started,
    )
