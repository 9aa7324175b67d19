"""CSV tables and the run manifest.

Every table is a list of flat dicts written with a header row, ``,``
separators and ``.`` decimals. Floats are printed with ``repr`` so two runs
with identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .outcome import MarketOutcome
from .scenario import ScenarioConfig, dumps_scenario


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path: str | Path, rows: list[dict], columns: list[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k, "")) for k in columns})
    return path


OUTCOME_COLUMNS = ["record", "hour", "participant", "counterpart", "quantity", "price"]


def outcome_rows(outcome: MarketOutcome) -> list[dict]:
    """Long-format table of set points, bilateral trades and carbon positions.

    Prices are the bilateral clearing prices when the outcome carries them
    and empty otherwise.
    """
    cfg, s, d = outcome.cfg, outcome.state, outcome.duals
    sellers = [g.name for g in cfg.cgs] + [r.name for r in cfg.res]
    rows = []

    def add(record, hour, who, other, qty, price=""):
        rows.append({"record": record, "hour": hour, "participant": who, "counterpart": other,
                     "quantity": float(qty), "price": price})

    for t in range(cfg.hours):
        for i, g in enumerate(cfg.cgs):
            add("generation", t, g.name, "", s.p_g[t, i])
        for i, u in enumerate(cfg.users):
            add("demand", t, u.name, "", s.p_u[t, i])
        for j, r in enumerate(cfg.res):
            add("res_to_users", t, r.name, "", s.p_r[t, j])
            add("res_to_manager", t, r.name, "manager", s.p_hat_r[t, j], float(np.atleast_1d(cfg.prices.r_e)[t]))
        for i, u in enumerate(cfg.users):
            for k, seller in enumerate(sellers):
                add("energy", t, seller, u.name, s.Es[t, i, k], -float(d.ups[t, i, k]) if d is not None else "")
        for i, g in enumerate(cfg.cgs):
            for j, r in enumerate(cfg.res):
                add("reserve", t, g.name, r.name, s.A[t, i, j], -float(d.eta[t, i, j]) if d is not None else "")
        for i, u in enumerate(cfg.users):
            for j, r in enumerate(cfg.res):
                add("flexibility", t, u.name, r.name, s.B[t, i, j], -float(d.lam[t, i, j]) if d is not None else "")
    price = outcome.allowance_price
    price = "" if np.isnan(price) else price
    for i, u in enumerate(cfg.users):
        add("allowance_share", "", u.name, "", s.c_u[i], price)
        add("allowance_to_manager", "", u.name, "manager", s.c_s[i], cfg.prices.r_c_sell)
    for j, r in enumerate(cfg.res):
        add("allowance_share", "", r.name, "", s.c_r[j], price)
    return rows


RESIDUAL_COLUMNS = ["round", "k", "round_start", "se", "sr", "sd", "sc", "te", "tr", "td", "tc", "stationarity",
                    "err_g", "err_u"]


def residual_rows(outcome: MarketOutcome) -> list[dict]:
    """One row per inner iteration; ``round_start`` marks the first of each round."""
    rows = []
    last_round = None
    for rr in outcome.history:
        row = {k: getattr(rr, k) for k in ("round", "k", "se", "sr", "sd", "sc", "te", "tr", "td", "tc",
                                                 "stationarity")}
        row["round_start"] = rr.round != last_round
        row["err_g"] = "" if np.isnan(rr.err_g) else rr.err_g
        row["err_u"] = "" if np.isnan(rr.err_u) else rr.err_u
        last_round = rr.round
        rows.append(row)
    return rows


LEDGER_COLUMNS = ["participant", "kind", "direction", "shared_kg", "sharing_price", "sold_to_manager_kg",
                  "manager_price", "holding_kg", "emissions_kg"]


def ledger_rows(outcome: MarketOutcome) -> list[dict]:
    rows = []
    for row in outcome.carbon_ledger():
        rows.append({
            "participant": row.name, "kind": row.kind, "direction": row.direction, "shared_kg": row.shared,
            "sharing_price": "" if np.isnan(row.price) else row.price,
            "sold_to_manager_kg": row.sold_to_manager if row.kind == "user" else "",
            "manager_price": outcome.cfg.prices.r_c_sell if row.kind == "user" else "",
            "holding_kg": row.holding, "emissions_kg": row.emissions,
        })
    return rows


CASE_COLUMNS = ["case", "social_welfare_usd", "allowances_held_inside_kg", "allowances_to_manager_kg", "converged",
                "relaxation_gap_usd"]


def case_rows(cases: list[dict]) -> list[dict]:
    return [{"case": c["case"], "social_welfare_usd": c["welfare"],
             "allowances_held_inside_kg": c["allowances_held_inside"],
             "allowances_to_manager_kg": c["allowances_to_manager"], "converged": c["converged"],
             "relaxation_gap_usd": c["relaxation_gap"]} for c in cases]


def config_hash(cfg: ScenarioConfig) -> str:
    """Git blob hash of the canonical TOML form of the effective configuration."""
    data = dumps_scenario(cfg).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class RunManifest:
    scenario: str
    mode: str
    seed: int
    overrides: dict = field(default_factory=dict)
    config_hash: str = ""
    output_dir: str = ""
    requested: list[str] = field(default_factory=list)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path
