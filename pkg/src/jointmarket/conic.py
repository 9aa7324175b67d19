"""Convex subproblem abstraction backed by the Clarabel interior-point solver.

A :class:`ConicProblem` is

    minimize    1/2 x'Px + q'x + r
    subject to  A_eq x == b_eq
                A_in x <= b_in
                ||F_k x + g_k||_2 <= c_k'x + d_k     for every cone k
                lb <= x <= ub

Problems are usually assembled with :class:`ProblemBuilder`, which hands out
named index blocks so callers never track column offsets by hand.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

SOLVER_TOL = 1e-8


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"
    NUMERICAL_FAILURE = "NumericalFailure"


class SolveError(RuntimeError):
    """Raised when a solve that must succeed does not."""

    def __init__(self, status: Status, context: str = ""):
        self.status = status
        self.context = context
        super().__init__(f"{context}: {status.value}" if context else status.value)


@dataclass
class SocConstraint:
    """``||F x + g||_2 <= c'x + d``."""

    F: sp.csr_matrix
    g: np.ndarray
    c: np.ndarray
    d: float


@dataclass
class ConicProblem:
    P: sp.csc_matrix
    q: np.ndarray
    r: float = 0.0
    A_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    A_in: sp.csr_matrix | None = None
    b_in: np.ndarray | None = None
    socs: list[SocConstraint] = field(default_factory=list)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    # point the solver works around (x = origin + d); keeps the objective
    # small when a proximal term is centered far from zero
    origin: np.ndarray | None = None
    # stacked constraint data, shared by problems that differ only in the objective
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.r)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint violation at ``x``, relative to the data scale."""
        worst = 0.0
        if self.A_eq is not None and self.A_eq.shape[0]:
            ax = self.A_eq @ x
            worst = max(worst, np.max(np.abs(ax - self.b_eq) / (1.0 + np.abs(self.b_eq))))
        if self.A_in is not None and self.A_in.shape[0]:
            ax = self.A_in @ x
            worst = max(worst, np.max(np.maximum(ax - self.b_in, 0.0) / (1.0 + np.abs(self.b_in))))
        for cone in self.socs:
            lhs = np.linalg.norm(cone.F @ x + cone.g)
            rhs = float(cone.c @ x + cone.d)
            worst = max(worst, max(lhs - rhs, 0.0) / (1.0 + abs(rhs)))
        if self.lb is not None:
            fin = np.isfinite(self.lb)
            if fin.any():
                worst = max(worst, np.max(np.maximum(self.lb[fin] - x[fin], 0.0) / (1.0 + np.abs(self.lb[fin]))))
        if self.ub is not None:
            fin = np.isfinite(self.ub)
            if fin.any():
                worst = max(worst, np.max(np.maximum(x[fin] - self.ub[fin], 0.0) / (1.0 + np.abs(self.ub[fin]))))
        return float(worst)

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "ConicProblem":
        return ConicProblem(self.P, self.q, self.r, self.A_eq, self.b_eq, self.A_in, self.b_in,
                            self.socs, lb, ub, self.origin)

    def with_objective(self, P: sp.spmatrix, q: np.ndarray, r: float = 0.0,
                       origin: np.ndarray | None = None) -> "ConicProblem":
        return ConicProblem(P, q, r, self.A_eq, self.b_eq, self.A_in, self.b_in,
                            self.socs, self.lb, self.ub, origin, self._cache)

    def stacked(self):
        if "stack" not in self._cache:
            self._cache["stack"] = _stack(self)
        return self._cache["stack"]


@dataclass
class ConicSolution:
    x: np.ndarray | None
    objective: float
    status: Status
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


_STATUS_MAP = {
    "Solved": Status.OPTIMAL,
    "AlmostSolved": Status.OPTIMAL,
    "PrimalInfeasible": Status.INFEASIBLE,
    "AlmostPrimalInfeasible": Status.INFEASIBLE,
    "DualInfeasible": Status.UNBOUNDED,
    "AlmostDualInfeasible": Status.UNBOUNDED,
    "MaxIterations": Status.ITER_LIMIT,
    "MaxTime": Status.ITER_LIMIT,
}

# fraction of the distance to the cone boundary taken per step on a retry;
# the default 0.99 occasionally cycles on degenerate vertices
CAUTIOUS_STEP = 0.95

# primal residual accepted on top of the solver's own KKT criterion
RESIDUAL_TOL = 1e-6


def _settings(tol: float) -> clarabel.DefaultSettings:
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.tol_feas = tol
    s.tol_gap_abs = tol
    s.tol_gap_rel = tol
    s.tol_ktratio = 1e-6
    s.max_iter = 200
    s.presolve_enable = True
    return s


def _substitute(M: sp.spmatrix, rhs: np.ndarray, pinned: np.ndarray, values: np.ndarray, sign: float = 1.0):
    """Move the pinned columns of ``M`` into the right-hand side (``M x <= or = rhs``)."""
    M = sp.csr_matrix(M, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if pinned.size:
        rhs = rhs - sign * (M[:, pinned] @ values)
        keep = np.ones(M.shape[1])
        keep[pinned] = 0.0
        M = sp.csr_matrix(M @ sp.diags(keep))
        M.eliminate_zeros()
    return M, rhs


def _drop_empty(M: sp.csr_matrix, rhs: np.ndarray, satisfied) -> tuple[sp.csr_matrix, np.ndarray]:
    """Drop all-zero rows that hold trivially; violated ones stay so the solver reports them."""
    empty = np.diff(M.indptr) == 0
    drop = empty & satisfied(rhs)
    return M[~drop], rhs[~drop]


def _stack(p: ConicProblem):
    """Translate to Clarabel's ``Ax + s = b, s in K`` form.

    Variables with a collapsed box enter as one equality each and are
    substituted into every other row. Rows that become empty are dropped:
    a duplicate equality makes the KKT system singular and a zero-width
    slack leaves no interior.
    """
    n = p.n
    lb = np.full(n, -np.inf) if p.lb is None else np.asarray(p.lb, dtype=float)
    ub = np.full(n, np.inf) if p.ub is None else np.asarray(p.ub, dtype=float)
    pinned = np.flatnonzero(np.isfinite(lb) & (lb == ub))
    values = lb[pinned]
    eye = sp.identity(n, format="csr")
    blocks, rhs, cones = [], [], []
    eq_rows, eq_rhs = [], []
    if p.A_eq is not None and p.A_eq.shape[0]:
        M, r = _substitute(p.A_eq, p.b_eq, pinned, values)
        M, r = _drop_empty(M, r, lambda v: np.abs(v) <= 1e-12 * (1.0 + np.abs(values).max(initial=0.0)))
        eq_rows.append(M)
        eq_rhs.append(r)
    if pinned.size:
        eq_rows.append(eye[pinned])
        eq_rhs.append(values)
    if eq_rows:
        blocks.append(sp.vstack(eq_rows, format="csr"))
        rhs.append(np.concatenate(eq_rhs))
        cones.append(clarabel.ZeroConeT(blocks[-1].shape[0]))
    # a cone with one lhs row is |f x + g| <= c x + d, two linear rows; the
    # two-dimensional cone is a corner case the solver handles poorly
    flat = [cone for cone in p.socs if cone.F.shape[0] == 1]
    socs = [cone for cone in p.socs if cone.F.shape[0] != 1]
    lin_rows, lin_rhs = [], []
    if p.A_in is not None and p.A_in.shape[0]:
        lin_rows.append(sp.csr_matrix(p.A_in))
        lin_rhs.append(np.asarray(p.b_in, dtype=float))
    for cone in flat:
        f, c = sp.csr_matrix(cone.F), sp.csr_matrix(cone.c.reshape(1, -1))
        lin_rows += [f - c, -f - c]
        lin_rhs.append([cone.d - cone.g[0], cone.d + cone.g[0]])
    nonneg_rows, nonneg_rhs = [], []
    if lin_rows:
        M, r = _substitute(sp.vstack(lin_rows), np.concatenate(lin_rhs), pinned, values)
        M, r = _drop_empty(M, r, lambda v: v >= 0.0)
        nonneg_rows.append(M)
        nonneg_rhs.append(r)
    free = lb != ub
    fin = np.flatnonzero(np.isfinite(lb) & free)
    if fin.size:
        nonneg_rows.append(-eye[fin])
        nonneg_rhs.append(-lb[fin])
    fin = np.flatnonzero(np.isfinite(ub) & free)
    if fin.size:
        nonneg_rows.append(eye[fin])
        nonneg_rhs.append(ub[fin])
    if nonneg_rows:
        blocks.append(sp.vstack(nonneg_rows, format="csr"))
        rhs.append(np.concatenate(nonneg_rhs))
        if blocks[-1].shape[0]:
            cones.append(clarabel.NonnegativeConeT(blocks[-1].shape[0]))
    if socs:
        # one block for every cone: the rhs row then the lhs rows
        soc_blocks, soc_rhs = [], []
        for cone in socs:
            c, d = _substitute(cone.c.reshape(1, -1), [cone.d], pinned, values, sign=-1.0)
            F, g = _substitute(cone.F, cone.g, pinned, values, sign=-1.0)
            soc_blocks.append(-c)
            soc_blocks.append(-F)
            soc_rhs.append(d)
            soc_rhs.append(g)
            cones.append(clarabel.SecondOrderConeT(1 + cone.F.shape[0]))
        blocks.append(sp.vstack(soc_blocks, format="csr"))
        rhs.append(np.concatenate(soc_rhs))
    if blocks:
        A = sp.vstack(blocks, format="csc")
        b = np.concatenate(rhs)
    else:
        A = sp.csc_matrix((0, n))
        b = np.zeros(0)
    return A, b, cones


def solve(p: ConicProblem, tol: float = SOLVER_TOL) -> ConicSolution:
    """Solve ``p`` to optimality or report why not.

    An ``Optimal`` status is only returned after the primal point has been
    checked against every constraint; a point that fails the check is
    reported as ``NumericalFailure``. When ``p.origin`` is set the solve runs
    in coordinates centred there. An attempt that stalls is retried in plain
    coordinates and then with shorter interior-point steps; infeasibility
    verdicts are returned as they are.
    """
    origins = [p.origin, None] if p.origin is not None else [None]
    sol = None
    for step in (None, CAUTIOUS_STEP):
        for origin in origins:
            sol = _solve_in(p, origin, tol, step)
            if sol.status not in (Status.ITER_LIMIT, Status.NUMERICAL_FAILURE):
                return sol
            log.debug("solve stalled with %s (shifted %s, step %s)", sol.status, origin is not None, step)
    return sol


def _solve_in(p: ConicProblem, origin: np.ndarray | None, tol: float, step: float | None = None) -> ConicSolution:
    A, b, cones = p.stacked()
    q = np.asarray(p.q, dtype=float)
    if origin is not None:
        # the duality-gap test is relative to the objective, so work in d = x - origin
        q = q + p.P @ origin
        b = b - A @ origin
    P = sp.triu(sp.csc_matrix(p.P), format="csc")
    settings = _settings(tol)
    if step is not None:
        settings.max_step_fraction = step
    res = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()
    status = _STATUS_MAP.get(str(res.status).split(".")[-1], Status.NUMERICAL_FAILURE)
    if status is not Status.OPTIMAL:
        return ConicSolution(None, np.nan, status, res.iterations)
    x = np.asarray(res.x)
    if origin is not None:
        x = x + origin
    if p.max_violation(x) > RESIDUAL_TOL:
        return ConicSolution(x, np.nan, Status.NUMERICAL_FAILURE, res.iterations)
    return ConicSolution(x, p.objective(x), status, res.iterations)


def solve_with_binary(p: ConicProblem, slot: int, tol: float = SOLVER_TOL) -> tuple[ConicSolution, int]:
    """Solve ``p`` with ``x[slot]`` restricted to {0, 1} by enumerating both branches.

    Ties go to 1.
    """
    branches = {}
    for value in (1, 0):
        lb = np.full(p.n, -np.inf) if p.lb is None else p.lb
        ub = np.full(p.n, np.inf) if p.ub is None else p.ub
        if lb[slot] > value or ub[slot] < value:
            branches[value] = ConicSolution(None, np.nan, Status.INFEASIBLE)
            continue
        # restricted problems share their stacked constraints across objectives
        key = ("branch", slot, value)
        restricted = p._cache.get(key)
        if restricted is None:
            lb, ub = lb.copy(), ub.copy()
            lb[slot] = ub[slot] = value
            restricted = p.with_bounds(lb, ub)
            p._cache[key] = restricted
        branches[value] = solve(restricted.with_objective(p.P, p.q, p.r, p.origin), tol)
    one, zero = branches[1], branches[0]
    if not one.ok and not zero.ok:
        worst = Status.INFEASIBLE
        for s in (one.status, zero.status):
            if s is not Status.INFEASIBLE:
                worst = s
        return ConicSolution(None, np.nan, worst), 1
    if not zero.ok:
        return one, 1
    if not one.ok:
        return zero, 0
    # relative tie window absorbs solver noise
    if one.objective <= zero.objective + 1e-9 * (1.0 + abs(zero.objective)):
        return one, 1
    return zero, 0


def _ix(idx) -> np.ndarray:
    return np.atleast_1d(np.asarray(idx, dtype=np.int64)).ravel()


class ProblemBuilder:
    """Incremental assembly of a :class:`ConicProblem` from named variable blocks.

    Rows are collected as coordinate triplets and converted once in
    :meth:`build`.
    """

    def __init__(self):
        self.n = 0
        self.blocks: dict[str, np.ndarray] = {}
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        self._pq: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._q: list[tuple[np.ndarray, np.ndarray]] = []
        self.r = 0.0
        self._eq: list[tuple[np.ndarray, np.ndarray, float]] = []
        self._in: list[tuple[np.ndarray, np.ndarray, float]] = []
        self._socs: list = []
        self._fixed: list[tuple[np.ndarray, np.ndarray]] = []

    def var(self, name: str, shape=(), lb: float | np.ndarray = -np.inf,
            ub: float | np.ndarray = np.inf) -> np.ndarray:
        if name in self.blocks:
            raise KeyError(f"duplicate variable block {name!r}")
        size = int(np.prod(shape)) if shape else 1
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        self._lb.append(np.broadcast_to(np.asarray(lb, dtype=float), shape).ravel().copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, dtype=float), shape).ravel().copy())
        self.blocks[name] = idx
        return idx

    # objective -----------------------------------------------------------
    def add_linear(self, idx, coef) -> None:
        idx = _ix(idx)
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape).ravel()
        self._q.append((idx, coef))

    def add_quadratic(self, rows, cols, vals) -> None:
        """Add ``sum vals * x[rows] * x[cols]`` to the objective (not halved)."""
        rows = _ix(rows)
        cols = _ix(cols)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), rows.shape).ravel()
        # 1/2 x'Px convention: symmetric P carries twice the coefficient
        self._pq.append((rows, cols, vals))
        self._pq.append((cols, rows, vals))

    def add_square(self, idx, coef) -> None:
        """``sum coef * x[idx]**2``."""
        self.add_quadratic(idx, idx, coef)

    def add_form(self, idx, Q: np.ndarray, scale: float = 1.0) -> None:
        """``scale * x[idx]' Q x[idx]`` for a dense symmetric ``Q``."""
        idx = _ix(idx)
        rr, cc = np.meshgrid(idx, idx, indexing="ij")
        vals = scale * np.asarray(Q, dtype=float)
        nz = vals != 0
        if nz.any():
            self._pq.append((rr[nz], cc[nz], 2.0 * vals[nz]))

    def add_constant(self, value: float) -> None:
        self.r += float(value)

    # constraints ---------------------------------------------------------
    def add_eq(self, idx, coef, rhs: float) -> None:
        idx = _ix(idx)
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape).ravel()
        self._eq.append((idx, coef, float(rhs)))

    def add_le(self, idx, coef, rhs: float) -> None:
        idx = _ix(idx)
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape).ravel()
        self._in.append((idx, coef, float(rhs)))

    def add_ge(self, idx, coef, rhs: float) -> None:
        idx = _ix(idx)
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape).ravel()
        self._in.append((idx, -coef, -float(rhs)))

    def add_soc(self, lhs_rows, rhs) -> None:
        """``||(row_1, ..., row_m)||_2 <= rhs`` where every row and ``rhs`` is an
        affine term ``(idx, coef, const)``."""
        rows = []
        for i, c, k in lhs_rows:
            i = _ix(i)
            rows.append((i, np.broadcast_to(np.asarray(c, dtype=float), i.shape).ravel(), float(k)))
        i, c, k = rhs
        i = _ix(i)
        c = np.broadcast_to(np.asarray(c, dtype=float), i.shape).ravel()
        self._socs.append((rows, (i, c, float(k))))

    def fix(self, idx, value) -> None:
        idx = _ix(idx)
        self._fixed.append((idx, np.broadcast_to(np.asarray(value, dtype=float), idx.shape).ravel()))

    # ---------------------------------------------------------------------
    def _rows(self, rows):
        if not rows:
            return sp.csr_matrix((0, self.n)), np.zeros(0)
        r_idx = np.concatenate([np.full(len(i), k) for k, (i, _, _) in enumerate(rows)])
        c_idx = np.concatenate([i for i, _, _ in rows])
        vals = np.concatenate([c for _, c, _ in rows])
        A = sp.csr_matrix((vals, (r_idx, c_idx)), shape=(len(rows), self.n))
        b = np.array([k for _, _, k in rows])
        return A, b

    def linear_term(self) -> np.ndarray:
        q = np.zeros(self.n)
        for idx, coef in self._q:
            np.add.at(q, idx, coef)
        return q

    def quadratic_term(self) -> sp.csc_matrix:
        if not self._pq:
            return sp.csc_matrix((self.n, self.n))
        rows = np.concatenate([r for r, _, _ in self._pq])
        cols = np.concatenate([c for _, c, _ in self._pq])
        vals = np.concatenate([v for _, _, v in self._pq])
        return sp.csc_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def build(self) -> ConicProblem:
        A_eq, b_eq = self._rows(self._eq)
        A_in, b_in = self._rows(self._in)
        socs = []
        for rows, (ri, rc, rk) in self._socs:
            F, g = self._rows(rows)
            c = np.zeros(self.n)
            np.add.at(c, ri, rc)
            socs.append(SocConstraint(F, g, c, rk))
        lb = np.concatenate(self._lb) if self._lb else np.zeros(0)
        ub = np.concatenate(self._ub) if self._ub else np.zeros(0)
        for idx, val in self._fixed:
            lb[idx] = val
            ub[idx] = val
        return ConicProblem(self.quadratic_term(), self.linear_term(), self.r,
                            A_eq, b_eq, A_in, b_in, socs, lb, ub)
