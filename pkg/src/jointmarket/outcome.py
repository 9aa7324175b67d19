"""Cleared-market result: welfare, per-participant profits and the carbon ledger."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .market_model import (
    FULL_MARKET,
    MarketVariant,
    McCormickBounds,
    TradeState,
    allowance_holding,
    exact_objective,
    mccormick_errors,
    relaxed_objective,
    reserve_std,
    user_emissions,
)
from .scenario import ScenarioConfig
from .uncertainty import UncertaintyModel


@dataclass
class RoundInfo:
    round: int
    iterations: int
    consensus: bool
    err_g: float
    err_u: float
    bounds: McCormickBounds = field(repr=False, default=None)


@dataclass
class LedgerRow:
    """Carbon position of one user or renewable plant.

    Quantities are magnitudes; ``direction`` says which way allowances move.
    """

    name: str
    kind: str
    direction: str  # "sells", "buys" or "none"
    shared: float
    sold_to_manager: float
    holding: float
    emissions: float
    price: float


@dataclass
class MarketOutcome:
    cfg: ScenarioConfig
    state: TradeState
    mode: str
    converged: bool
    welfare: float  # negated relaxed objective
    exact_welfare: float  # same point, true products
    err_g: float
    err_u: float
    variant: MarketVariant = FULL_MARKET
    duals: Any = None
    bounds: McCormickBounds | None = None
    rounds: list[RoundInfo] = field(default_factory=list)
    history: list = field(default_factory=list)
    elapsed: float = 0.0
    res_means: np.ndarray = field(repr=False, default=None)  # (T, res) signed error means

    @classmethod
    def build(cls, cfg: ScenarioConfig, unc: UncertaintyModel, state: TradeState, *, mode: str,
              converged: bool, rounds=None, history=None, duals=None, bounds=None,
              variant: MarketVariant = FULL_MARKET, elapsed: float = 0.0) -> "MarketOutcome":
        err_g, err_u = mccormick_errors(state)
        return cls(
            cfg=cfg, state=state, mode=mode, converged=converged,
            welfare=-relaxed_objective(state, cfg, unc, variant),
            exact_welfare=-exact_objective(state, cfg, unc, variant),
            err_g=err_g, err_u=err_u, variant=variant, duals=duals, bounds=bounds,
            rounds=list(rounds or []), history=list(history or []), elapsed=elapsed,
            res_means=np.array([unc.M(t) for t in range(cfg.hours)]).reshape(cfg.hours, len(cfg.res)),
        )

    @property
    def iterations(self) -> int:
        return sum(r.iterations for r in self.rounds)

    @property
    def allowance_price(self) -> float:
        """Sharing price when sharing is active, the fixed purchase price otherwise."""
        if not self.variant.carbon_sharing:
            return self.cfg.prices.r_c_buy
        return float(self.duals.theta) if self.duals is not None else float("nan")

    def allowances_to_manager(self) -> float:
        return float(self.state.c_s.sum())

    def pv_to_manager(self) -> float:
        return float(self.state.p_hat_r.sum())

    def allowances_held_inside(self) -> float:
        """Allowances that stay in the community: users' holdings plus the plants'."""
        h = allowance_holding(self.state, self.cfg)
        return float(h.psi_u.sum() + h.psi_r.sum())

    def carbon_ledger(self) -> list[LedgerRow]:
        s, cfg = self.state, self.cfg
        h = allowance_holding(s, cfg)
        em = user_emissions(s, cfg)
        price = self.allowance_price
        rows = []

        def direction(q):
            if q < -1e-6:
                return "sells"
            return "buys" if q > 1e-6 else "none"

        for i, u in enumerate(cfg.users):
            q = float(s.c_u[i])
            rows.append(LedgerRow(u.name, "user", direction(q), abs(q), float(s.c_s[i]),
                                  float(h.psi_u[i]), float(em[i]), price))
        sigma = np.array([g.sigma for g in cfg.cgs])
        for j, r in enumerate(cfg.res):
            q = float(s.c_r[j])
            # expected reserve emissions: mean deficit times the carbon weight
            expected = float(self.res_means[:, j] @ (s.A_r[:, :, j] @ sigma))
            rows.append(LedgerRow(r.name, "res", direction(q), abs(q), 0.0, float(h.psi_r[j]), expected, price))
        return rows

    def summary(self) -> dict[str, float]:
        return {
            "mode": self.mode,
            "converged": self.converged,
            "welfare": self.welfare,
            "exact_welfare": self.exact_welfare,
            "err_g": self.err_g,
            "err_u": self.err_u,
            "rounds": len(self.rounds),
            "iterations": self.iterations,
            "allowance_price": self.allowance_price,
            "allowances_to_manager": self.allowances_to_manager(),
            "pv_to_manager": self.pv_to_manager(),
            "allowances_held_inside": self.allowances_held_inside(),
            "elapsed_s": self.elapsed,
        }


def profit_decomposition(outcome: MarketOutcome, unc: UncertaintyModel) -> list[dict[str, float]]:
    """Per-participant profit split into its sources at the outcome's prices.

    Requires bilateral prices, so only decentralized outcomes qualify.
    """
    if outcome.duals is None:
        raise ValueError("profit decomposition needs the clearing prices")
    s, cfg, d = outcome.state, outcome.cfg, outcome.duals
    G = len(cfg.cgs)
    theta = outcome.allowance_price
    rows = []
    for i, g in enumerate(cfg.cgs):
        cost = 0.0
        for t in range(cfg.hours):
            row = s.A[t, i]
            Sigma = unc.Sigma(t) if len(cfg.res) else np.zeros((0, 0))
            mean = float(unc.M(t) @ row) if len(cfg.res) else 0.0
            cost += (g.c2 * s.p_g[t, i] ** 2 + g.c1 * s.p_g[t, i] + g.c0 - (2 * g.c2 * s.p_g[t, i] + g.c1) * mean
                     + g.c2 * (mean**2 + reserve_std(row, Sigma) ** 2))
        energy = float(-np.sum(d.ups[:, :, i] * s.Es[:, :, i]))
        reserve = float(-np.sum(d.eta[:, i, :] * s.A[:, i, :]))
        rows.append({"name": g.name, "kind": "cg", "private": -cost, "energy": energy, "reserve": reserve,
                     "flexibility": 0.0, "carbon": 0.0, "manager": 0.0})
    for i, u in enumerate(cfg.users):
        util = 0.0
        for t in range(cfg.hours):
            row = s.B[t, i]
            Sigma = unc.Sigma(t) if len(cfg.res) else np.zeros((0, 0))
            mean = float(unc.M(t) @ row) if len(cfg.res) else 0.0
            p = s.p_u[t, i]
            util += (u.d2 * p**2 + u.d1 * p + (2 * u.d2 * p + u.d1) * mean
                     + u.d2 * (mean**2 + reserve_std(row, Sigma) ** 2))
        rows.append({"name": u.name, "kind": "user", "private": util,
                     "energy": float(-np.sum(d.ups[:, i, :] * s.Eb[:, i, :])),
                     "reserve": 0.0,
                     "flexibility": float(-np.sum(d.lam[:, i, :] * s.B[:, i, :])),
                     "carbon": -theta * float(s.c_u[i]),
                     "manager": cfg.prices.r_c_sell * float(s.c_s[i])})
    r_e = np.asarray(cfg.prices.r_e, dtype=float)
    for j, r in enumerate(cfg.res):
        rows.append({"name": r.name, "kind": "res", "private": 0.0,
                     "energy": float(-np.sum(d.ups[:, :, G + j] * s.Es[:, :, G + j])),
                     "reserve": float(-np.sum(d.eta[:, :, j] * s.A_r[:, :, j])),
                     "flexibility": float(-np.sum(d.lam[:, :, j] * s.B_r[:, :, j])),
                     "carbon": -theta * float(s.c_r[j]),
                     "manager": float(r_e @ s.p_hat_r[:, j])})
    for row in rows:
        row["profit"] = sum(row[k] for k in ("private", "energy", "reserve", "flexibility", "carbon", "manager"))
    return rows
