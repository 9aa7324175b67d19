"""Scenario configuration: participants, prices, algorithm settings.

Scenarios live in TOML files. A minimal file::

    name = "toy"
    hours = 2

    [prices]
    r_e = 0.06          # scalar or one value per hour
    r_c_sell = 0.003

    [[cg]]
    name = "MT1"
    c0 = 2.01
    c1 = 0.045
    c2 = 0.00021
    p_min = 0.0         # scalar or per-hour array
    p_max = 260.0
    sigma = 0.870
    epsilon = 0.05

    [[user]]
    name = "U1"
    d1 = 0.087
    d2 = -0.00014
    p_max = [100.0, 120.0]
    p_min = [40.0, 48.0]    # optional; defaults to p_min_ratio * p_max
    psi0 = 1800.0
    epsilon = 0.05

    [[res]]
    name = "PV1"
    forecast = [0.0, 80.0]
    sigma_rel = 0.1
    epsilon = 0.05

    [algorithm]         # every key optional, see AlgoConfig
    rho = 1e-3

See ``docs/scenario_format.md`` for the full key list.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import tomli
import tomli_w

REFERENCE_NAME = "reference"


class ScenarioError(ValueError):
    """Invalid scenario data. ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class Kind(enum.Enum):
    CG = "CG"
    USER = "User"
    RES = "RES"


@dataclass(frozen=True, order=True)
class ParticipantId:
    kind: Kind
    index: int

    def __str__(self) -> str:
        return f"{self.kind.value}{self.index}"


@dataclass
class CgParams:
    name: str
    c0: float
    c1: float
    c2: float
    p_min: np.ndarray
    p_max: np.ndarray
    sigma: float
    epsilon: float = 0.05


@dataclass
class UserParams:
    name: str
    d1: float
    d2: float
    p_min: np.ndarray
    p_max: np.ndarray
    psi0: float
    epsilon: float = 0.05


@dataclass
class ResParams:
    name: str
    forecast: np.ndarray
    sigma_rel: float
    epsilon: float = 0.05


@dataclass
class MarketPrices:
    r_e: np.ndarray
    r_c_sell: float
    # only used by the fixed-price carbon market variant
    r_c_buy: float = 0.009


@dataclass
class AlgoConfig:
    rho: float = 1.0  # flexibility factors (B)
    gamma: float = 1.0  # energy trades (E)
    tau: float = 1.0  # reserve factors (A)
    phi: float = 1.0  # carbon sharing (c)
    tol_e_pri: float = 1e-4
    tol_r_pri: float = 1e-6
    tol_d_pri: float = 1e-6
    tol_c_pri: float = 1e-4
    tol_e_dual: float = 1e-4
    tol_r_dual: float = 1e-6
    tol_d_dual: float = 1e-6
    tol_c_dual: float = 1e-4
    eps0: float = 0.5
    kappa: float = 0.2
    delta_g: float = 1e-2
    delta_u: float = 1e-2
    max_admm_iters: int = 5000
    max_rounds: int = 10
    adaptive_penalty: bool = True
    # penalties are frozen after this many iterations of a round, which keeps
    # the convergence guarantee of fixed-penalty ADMM
    adapt_iters: int = 200
    warm_start: bool = True
    # also require the local copies to have stopped moving before a round ends:
    # penalty times movement, in price units, below tol_stationarity
    stationarity_guard: bool = True
    tol_stationarity: float = 1e-4
    big_M: float | None = None


@dataclass
class ScenarioConfig:
    name: str
    hours: int
    cgs: list[CgParams]
    users: list[UserParams]
    res: list[ResParams]
    prices: MarketPrices
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    # optional correlation hooks; identity when absent
    res_correlation: np.ndarray | None = None
    time_correlation: np.ndarray | None = None

    @property
    def big_M(self) -> float:
        if self.algo.big_M is not None:
            return self.algo.big_M
        return float(sum(u.psi0 for u in self.users))

    @property
    def sellers(self) -> list[ParticipantId]:
        return [ParticipantId(Kind.CG, i) for i in range(len(self.cgs))] + \
               [ParticipantId(Kind.RES, i) for i in range(len(self.res))]

    @property
    def participants(self) -> list[ParticipantId]:
        return [ParticipantId(Kind.CG, i) for i in range(len(self.cgs))] + \
               [ParticipantId(Kind.USER, i) for i in range(len(self.users))] + \
               [ParticipantId(Kind.RES, i) for i in range(len(self.res))]

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        a = dataclasses.asdict(self.algo)
        if a["big_M"] is None:
            del a["big_M"]
        d: dict[str, Any] = {
            "name": self.name,
            "hours": self.hours,
            "prices": {
                "r_e": _list(self.prices.r_e),
                "r_c_sell": self.prices.r_c_sell,
                "r_c_buy": self.prices.r_c_buy,
            },
            "cg": [
                {"name": g.name, "c0": g.c0, "c1": g.c1, "c2": g.c2, "p_min": _list(g.p_min),
                 "p_max": _list(g.p_max), "sigma": g.sigma, "epsilon": g.epsilon}
                for g in self.cgs
            ],
            "user": [
                {"name": u.name, "d1": u.d1, "d2": u.d2, "p_min": _list(u.p_min), "p_max": _list(u.p_max),
                 "psi0": u.psi0, "epsilon": u.epsilon}
                for u in self.users
            ],
            "res": [
                {"name": r.name, "forecast": _list(r.forecast), "sigma_rel": r.sigma_rel, "epsilon": r.epsilon}
                for r in self.res
            ],
            "algorithm": a,
        }
        if self.res_correlation is not None:
            d["uncertainty"] = {"res_correlation": [_list(row) for row in self.res_correlation]}
        if self.time_correlation is not None:
            d.setdefault("uncertainty", {})["time_correlation"] = [_list(row) for row in self.time_correlation]
        return d


def _list(a) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


# ---------------------------------------------------------------------------
# parsing

def _get(d: dict, key: str, path: str, default=...):
    if key in d:
        return d[key]
    if default is ...:
        raise ScenarioError(f"{path}.{key}" if path else key, "missing field")
    return default


def _num(d: dict, key: str, path: str, default=...) -> float:
    v = _get(d, key, path, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{path}.{key}", f"expected a number, got {v!r}")
    return float(v)


def _profile(d: dict, key: str, path: str, hours: int, default=...) -> np.ndarray:
    v = _get(d, key, path, default)
    where = f"{path}.{key}"
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return np.full(hours, float(v))
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(where, "expected a number or an array of numbers") from None
    if arr.shape != (hours,):
        raise ScenarioError(where, f"expected {hours} values, got shape {arr.shape}")
    return arr


def _epsilon(d: dict, path: str) -> float:
    eps = _num(d, "epsilon", path, 0.05)
    if not 0.0 < eps <= 0.5:
        raise ScenarioError(f"{path}.epsilon", f"must lie in (0, 0.5], got {eps}")
    return eps


def _matrix(v, where: str, n: int) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (n, n):
        raise ScenarioError(where, f"expected a {n}x{n} matrix")
    if not np.allclose(arr, arr.T, atol=1e-12):
        raise ScenarioError(where, "matrix must be symmetric")
    if np.linalg.eigvalsh(arr).min() < -1e-10:
        raise ScenarioError(where, "matrix must be positive semidefinite")
    return arr


def parse_scenario(data: dict[str, Any]) -> ScenarioConfig:
    """Build and validate a :class:`ScenarioConfig` from parsed TOML data."""
    hours = int(_num(data, "hours", ""))
    if hours < 1:
        raise ScenarioError("hours", "must be positive")
    name = str(data.get("name", "scenario"))

    pr = _get(data, "prices", "")
    prices = MarketPrices(
        r_e=_profile(pr, "r_e", "prices", hours),
        r_c_sell=_num(pr, "r_c_sell", "prices"),
        r_c_buy=_num(pr, "r_c_buy", "prices", 0.009),
    )
    if np.any(prices.r_e < 0):
        raise ScenarioError("prices.r_e", "must be non-negative")
    if prices.r_c_sell < 0:
        raise ScenarioError("prices.r_c_sell", "must be non-negative")

    cgs = []
    for k, g in enumerate(data.get("cg", [])):
        path = f"cg[{k}]"
        cg = CgParams(
            name=str(g.get("name", f"CG{k + 1}")),
            c0=_num(g, "c0", path), c1=_num(g, "c1", path), c2=_num(g, "c2", path),
            p_min=_profile(g, "p_min", path, hours, 0.0),
            p_max=_profile(g, "p_max", path, hours),
            sigma=_num(g, "sigma", path),
            epsilon=_epsilon(g, path),
        )
        if cg.c2 <= 0:
            raise ScenarioError(f"{path}.c2", "cost must be strictly convex (c2 > 0)")
        if np.any(cg.p_min > cg.p_max):
            raise ScenarioError(f"{path}.p_min", "p_min exceeds p_max")
        if cg.sigma < 0:
            raise ScenarioError(f"{path}.sigma", "carbon intensity must be non-negative")
        cgs.append(cg)

    users = []
    for k, u in enumerate(data.get("user", [])):
        path = f"user[{k}]"
        p_max = _profile(u, "p_max", path, hours)
        if "p_min" in u:
            p_min = _profile(u, "p_min", path, hours)
        else:
            p_min = _num(u, "p_min_ratio", path, 0.4) * p_max
        user = UserParams(
            name=str(u.get("name", f"U{k + 1}")),
            d1=_num(u, "d1", path), d2=_num(u, "d2", path),
            p_min=p_min, p_max=p_max,
            psi0=_num(u, "psi0", path),
            epsilon=_epsilon(u, path),
        )
        if user.d2 >= 0:
            raise ScenarioError(f"{path}.d2", "utility must be strictly concave (d2 < 0)")
        if np.any(user.p_min < 0):
            raise ScenarioError(f"{path}.p_min", "must be non-negative")
        if np.any(user.p_min > user.p_max):
            raise ScenarioError(f"{path}.p_min", "p_min exceeds p_max")
        if user.psi0 < 0:
            raise ScenarioError(f"{path}.psi0", "initial allowance must be non-negative")
        users.append(user)

    res = []
    for k, r in enumerate(data.get("res", [])):
        path = f"res[{k}]"
        rp = ResParams(
            name=str(r.get("name", f"PV{k + 1}")),
            forecast=_profile(r, "forecast", path, hours),
            sigma_rel=_num(r, "sigma_rel", path, 0.1),
            epsilon=_epsilon(r, path),
        )
        if np.any(rp.forecast < 0):
            raise ScenarioError(f"{path}.forecast", "must be non-negative")
        if not 0.0 <= rp.sigma_rel < 1.0:
            raise ScenarioError(f"{path}.sigma_rel", "must lie in [0, 1)")
        res.append(rp)

    if not users:
        raise ScenarioError("user", "at least one user is required")

    a = data.get("algorithm", {})
    known = {f.name for f in dataclasses.fields(AlgoConfig)}
    for key in a:
        if key not in known:
            raise ScenarioError(f"algorithm.{key}", "unknown key")
    algo = AlgoConfig(**a)
    for f in dataclasses.fields(AlgoConfig):
        v = getattr(algo, f.name)
        if f.name in ("adaptive_penalty", "warm_start", "stationarity_guard"):
            if not isinstance(v, bool):
                raise ScenarioError(f"algorithm.{f.name}", "expected true/false")
        elif f.name == "big_M":
            if v is not None and v <= 0:
                raise ScenarioError("algorithm.big_M", "must be positive")
        elif f.name in ("max_admm_iters", "max_rounds", "adapt_iters"):
            if int(v) != v or v < 1:
                raise ScenarioError(f"algorithm.{f.name}", "must be a positive integer")
        elif not v > 0:
            raise ScenarioError(f"algorithm.{f.name}", "must be positive")
    if not algo.kappa < algo.eps0:
        raise ScenarioError("algorithm.kappa", "must be smaller than eps0")

    unc = data.get("uncertainty", {})
    res_corr = time_corr = None
    if "res_correlation" in unc:
        res_corr = _matrix(unc["res_correlation"], "uncertainty.res_correlation", len(res))
    if "time_correlation" in unc:
        time_corr = _matrix(unc["time_correlation"], "uncertainty.time_correlation", hours)

    return ScenarioConfig(name, hours, cgs, users, res, prices, algo, res_corr, time_corr)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Read a TOML scenario file. ``"ref"``/``"reference"`` selects the bundled case."""
    if str(path) in ("ref", REFERENCE_NAME):
        return bundled_reference_case()
    path = Path(path)
    try:
        data = tomli.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(str(path), "file not found") from None
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(str(path), f"parse error: {exc}") from None
    return parse_scenario(data)


def dumps_scenario(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def save_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(dumps_scenario(cfg))


def bundled_reference_case() -> ScenarioConfig:
    """Three micro-turbines, three users, two PV plants over 24 hours."""
    text = resources.files("jointmarket.data").joinpath("reference.toml").read_text()
    return parse_scenario(tomli.loads(text))


def sub_scenario(cfg: ScenarioConfig, cgs=None, users=None, res=None, hours=None) -> ScenarioConfig:
    """Scenario restricted to the given participant and hour indices (all when ``None``)."""
    pick = lambda sel, n: list(range(n)) if sel is None else list(sel)
    gi, ui, ri, ti = (pick(cgs, len(cfg.cgs)), pick(users, len(cfg.users)), pick(res, len(cfg.res)),
                      pick(hours, cfg.hours))
    if not ui or not ti:
        raise ScenarioError("sub_scenario", "at least one user and one hour are required")
    g = [dataclasses.replace(cfg.cgs[i], p_min=cfg.cgs[i].p_min[ti], p_max=cfg.cgs[i].p_max[ti]) for i in gi]
    u = [dataclasses.replace(cfg.users[i], p_min=cfg.users[i].p_min[ti], p_max=cfg.users[i].p_max[ti]) for i in ui]
    r = [dataclasses.replace(cfg.res[i], forecast=cfg.res[i].forecast[ti]) for i in ri]
    prices = dataclasses.replace(cfg.prices, r_e=np.asarray(cfg.prices.r_e)[ti])
    res_corr = None if cfg.res_correlation is None else cfg.res_correlation[np.ix_(ri, ri)]
    time_corr = None if cfg.time_correlation is None else cfg.time_correlation[np.ix_(ti, ti)]
    return dataclasses.replace(cfg, name=f"{cfg.name}-sub", hours=len(ti), cgs=g, users=u, res=r, prices=prices,
                               res_correlation=res_corr, time_correlation=time_corr)


# ---------------------------------------------------------------------------
# variable layout

@dataclass(frozen=True)
class IndexLayout:
    """Ordinal slot for every (participant, variable, hour) of the market.

    Variables that span the whole day carry ``hour = None``. Per-participant
    slots are contiguous, participants follow ``cfg.participants`` order.
    """

    keys: tuple[tuple[ParticipantId, str, int | None], ...]
    ranges: dict[ParticipantId, range]
    n_users: int
    n_sellers: int
    n_cgs: int
    n_res: int
    hours: int

    @property
    def es_shape(self) -> tuple[int, int]:
        return (self.n_users, self.n_sellers)

    @property
    def a_shape(self) -> tuple[int, int]:
        return (self.n_cgs, self.n_res)

    @property
    def b_shape(self) -> tuple[int, int]:
        return (self.n_users, self.n_res)

    def slot(self, pid: ParticipantId, var: str, hour: int | None) -> int:
        return self._lookup[(pid, var, hour)]

    def key(self, slot: int) -> tuple[ParticipantId, str, int | None]:
        return self.keys[slot]

    @property
    def _lookup(self) -> dict:
        cached = self.__dict__.get("_lookup_cache")
        if cached is None:
            cached = {k: i for i, k in enumerate(self.keys)}
            object.__setattr__(self, "_lookup_cache", cached)
        return cached

    def __len__(self) -> int:
        return len(self.keys)


def local_variables(cfg: ScenarioConfig, pid: ParticipantId) -> list[tuple[str, bool]]:
    """Variable names of one participant and whether each is indexed by hour."""
    sellers = [str(s) for s in cfg.sellers]
    res = [f"RES{j}" for j in range(len(cfg.res))]
    users = [f"User{j}" for j in range(len(cfg.users))]
    if pid.kind is Kind.USER:
        return ([("p_u", True)] + [(f"Eb:{s}", True) for s in sellers] + [(f"B:{r}", True) for r in res]
                + [("pi_u", True), ("phi", True), ("c", False), ("c_s", False), ("id", False)])
    if pid.kind is Kind.RES:
        cgs = [f"CG{j}" for j in range(len(cfg.cgs))]
        return ([("p_r", True), ("p_hat_r", True)] + [(f"Es:{u}", True) for u in users]
                + [(f"A_r:{g}", True) for g in cgs] + [(f"B_r:{u}", True) for u in users] + [("c", False)])
    return ([("p_g", True)] + [(f"Es:{u}", True) for u in users] + [(f"A:{r}", True) for r in res]
            + [("pi_g", True), ("chi", True)])


def derive_indices(cfg: ScenarioConfig) -> IndexLayout:
    keys: list[tuple[ParticipantId, str, int | None]] = []
    ranges = {}
    for pid in cfg.participants:
        start = len(keys)
        for var, hourly in local_variables(cfg, pid):
            if hourly:
                keys.extend((pid, var, t) for t in range(cfg.hours))
            else:
                keys.append((pid, var, None))
        ranges[pid] = range(start, len(keys))
    return IndexLayout(tuple(keys), ranges, len(cfg.users), len(cfg.sellers), len(cfg.cgs),
                       len(cfg.res), cfg.hours)
