"""Bounded-variable linear programming with dual extraction.

A small dense revised-simplex implementation sufficient for the stage
problems of this package (tens of variables and rows).  Problems are
stated as maximizations over variables with individual bounds and
``<=`` / ``=`` / ``>=`` rows; the solution carries primal values, the
objective, and dual multipliers for rows that were tagged when added.

The solver is deliberately self-contained so results are reproducible
bit-for-bit across machines.  Any solver object exposing
``solve(problem, warm_start=None) -> LpSolution`` can be substituted
(see :mod:`battbid.lp_scipy` for an adapter used in differential
tests).

Internals work in minimization form with an explicit basis inverse.
Warm starts reuse the basis of a previous solve; after right-hand-side
changes or appended rows the old basis stays dual feasible, so the
dual simplex typically needs only a handful of pivots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import NumericalError

FEAS_TOL = 1e-7
OPT_TOL = 1e-7
PIVOT_TOL = 1e-9

_BASIC = 0
_AT_LOWER = 1
_AT_UPPER = 2
_FREE = 3

_REL = {"<=": -1, "=": 0, ">=": 1}


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class LpStructureError(ValueError):
    """Malformed problem: unknown variables, bad bounds, unknown relation."""


@dataclass
class _Row:
    coeffs: list[tuple[int, float]]
    rel: str
    rhs: float
    tag: Hashable | None


class LpProblem:
    """A bounded-variable maximization problem built incrementally."""

    def __init__(self, name: str = "lp"):
        self.name = name
        self.var_names: list[str] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.objective: list[float] = []
        self.rows: list[_Row] = []
        self._index: dict[str, int] = {}

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def add_variable(self, name: str | None = None, lower: float = 0.0,
                     upper: float = np.inf, objective: float = 0.0) -> int:
        if name is None:
            name = f"x{len(self.var_names)}"
        if name in self._index:
            raise LpStructureError(f"duplicate variable name {name!r}")
        if not lower <= upper:
            raise LpStructureError(f"variable {name!r} has lower {lower} > upper {upper}")
        idx = len(self.var_names)
        self.var_names.append(name)
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self.objective.append(float(objective))
        self._index[name] = idx
        return idx

    def var(self, name: str) -> int:
        return self._index[name]

    def add_constraint(self, coeffs: dict | Iterable[tuple], rel: str, rhs: float,
                       tag: Hashable | None = None) -> int:
        if rel not in _REL:
            raise LpStructureError(f"unknown relation {rel!r}")
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        resolved: list[tuple[int, float]] = []
        for key, val in items:
            idx = self._index[key] if isinstance(key, str) else int(key)
            if not 0 <= idx < self.n_vars:
                raise LpStructureError(f"constraint references unknown variable {key!r}")
            if val != 0.0:
                resolved.append((idx, float(val)))
        self.rows.append(_Row(resolved, rel, float(rhs), tag))
        return len(self.rows) - 1

    def dense_matrix(self) -> np.ndarray:
        A = np.zeros((self.n_rows, self.n_vars))
        for i, row in enumerate(self.rows):
            for j, v in row.coeffs:
                A[i, j] += v
        return A

    def dump(self) -> str:
        """Plain-text fixed layout used by fixture tests."""
        out = [f"LP {self.name} maximize", "VARIABLES name lower upper objective"]
        for n, lo, up, c in zip(self.var_names, self.lower, self.upper, self.objective):
            out.append(f"  {n} {lo:g} {up:g} {c:g}")
        out.append("CONSTRAINTS tag terms rel rhs")
        for row in self.rows:
            terms = " + ".join(f"{v:g}*{self.var_names[j]}" for j, v in row.coeffs) or "0"
            tag = "-" if row.tag is None else str(row.tag)
            out.append(f"  [{tag}] {terms} {row.rel} {row.rhs:g}")
        return "\n".join(out) + "\n"


@dataclass
class WarmBasis:
    """Opaque warm-start token: basis column indices plus nonbasic statuses."""

    n_vars: int
    basis: np.ndarray
    status: np.ndarray


@dataclass
class LpSolution:
    status: LpStatus
    objective: float
    values: np.ndarray
    row_duals: np.ndarray
    reduced_costs: np.ndarray
    var_names: list[str]
    tags: dict[Hashable, int]
    basis: WarmBasis | None = None
    iterations: int = 0

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.var_names.index(name)])

    def dual(self, tag: Hashable) -> float:
        return float(self.row_duals[self.tags[tag]])


def solve(problem: LpProblem, warm_start: WarmBasis | None = None) -> LpSolution:
    """Solve a maximization problem; never raises for infeasible/unbounded."""
    A = problem.dense_matrix()
    b = np.array([r.rhs for r in problem.rows], dtype=float)
    rel = np.array([_REL[r.rel] for r in problem.rows], dtype=int)
    lb = np.array(problem.lower, dtype=float)
    ub = np.array(problem.upper, dtype=float)
    c = np.array(problem.objective, dtype=float)
    status, x, duals_max, red_max, basis, iters = solve_arrays(
        c, A, rel, b, lb, ub, warm_start)
    tags = {r.tag: i for i, r in enumerate(problem.rows) if r.tag is not None}
    obj = float(c @ x) if status is LpStatus.OPTIMAL else np.nan
    return LpSolution(status=status, objective=obj, values=x, row_duals=duals_max,
                      reduced_costs=red_max, var_names=problem.var_names, tags=tags,
                      basis=basis, iterations=iters)


def solve_arrays(c: np.ndarray, A: np.ndarray, rel: np.ndarray, b: np.ndarray,
                 lb: np.ndarray, ub: np.ndarray,
                 warm_start: WarmBasis | None = None):
    """Array-level entry point (maximization).

    Returns ``(status, x, row_duals, reduced_costs, warm_basis, iterations)``
    where duals and reduced costs follow the maximization sign convention:
    the dual of a binding ``<=`` row is nonnegative and equals the
    objective gain per unit of right-hand side.
    """
    m, n = A.shape
    if m != len(b) or n != len(c) or n != len(lb) or n != len(ub):
        raise LpStructureError("inconsistent problem dimensions")
    if np.any(lb > ub):
        raise LpStructureError("variable with lower bound above upper bound")
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
        raise LpStructureError("objective and right-hand sides must be finite")

    # slack columns: <= rows get s in [0, inf), >= rows s in (-inf, 0], = rows s = 0
    slack_lb = np.where(rel == -1, 0.0, np.where(rel == 1, -np.inf, 0.0))
    slack_ub = np.where(rel == -1, np.inf, 0.0)
    A_full = np.hstack([A, np.eye(m)])
    lb_full = np.concatenate([lb, slack_lb])
    ub_full = np.concatenate([ub, slack_ub])
    c_min = np.concatenate([-c, np.zeros(m)])  # internal minimization form

    core = _SimplexCore(c_min, A_full, b, lb_full, ub_full, n_struct=n)
    status = core.run(warm_start)
    x = core.x[:n].copy()
    if status is LpStatus.OPTIMAL:
        pi_min, d_min = core.duals()
        row_duals = -pi_min
        reduced = -d_min[:n]
        basis = WarmBasis(n_vars=n, basis=core.basis.copy(), status=core.status_of.copy())
    else:
        row_duals = np.full(m, np.nan)
        reduced = np.full(n, np.nan)
        basis = None
    return status, x, row_duals, reduced, basis, core.iterations


class PersistentLp:
    """A re-solvable LP: patch the right-hand side or append rows between solves.

    The simplex core (basis, basis inverse, statuses) survives across
    solves, so a re-solve after a right-hand-side change or a new cut row
    is a handful of dual-simplex pivots instead of a cold start.  The
    objective and the coefficient matrix of existing rows must not change.
    """

    def __init__(self, c: np.ndarray, A: np.ndarray, rel: Sequence[int] | np.ndarray,
                 b: np.ndarray, lb: np.ndarray, ub: np.ndarray):
        self.n = A.shape[1]
        rel = np.asarray(rel, dtype=int)
        slack_lb = np.where(rel == -1, 0.0, np.where(rel == 1, -np.inf, 0.0))
        slack_ub = np.where(rel == -1, np.inf, 0.0)
        m = A.shape[0]
        A_full = np.hstack([np.asarray(A, dtype=float), np.eye(m)])
        self._core = _SimplexCore(
            np.concatenate([-np.asarray(c, dtype=float), np.zeros(m)]),
            A_full,
            np.asarray(b, dtype=float).copy(),
            np.concatenate([np.asarray(lb, dtype=float), slack_lb]),
            np.concatenate([np.asarray(ub, dtype=float), slack_ub]),
            n_struct=self.n,
        )
        self._started = False

    @property
    def n_rows(self) -> int:
        return self._core.m

    def set_rhs(self, b: np.ndarray) -> None:
        if len(b) != self._core.m:
            raise LpStructureError("rhs length does not match row count")
        self._core.b = np.asarray(b, dtype=float).copy()

    def add_rows(self, A_new: np.ndarray, rel: Sequence[int] | np.ndarray,
                 b_new: np.ndarray) -> None:
        """Append rows (structural coefficients only); slacks are created here."""
        A_new = np.atleast_2d(np.asarray(A_new, dtype=float))
        k = A_new.shape[0]
        if A_new.shape[1] != self.n:
            raise LpStructureError("new rows must cover exactly the structural variables")
        rel = np.asarray(rel, dtype=int)
        slack_lb = np.where(rel == -1, 0.0, np.where(rel == 1, -np.inf, 0.0))
        slack_ub = np.where(rel == -1, np.inf, 0.0)
        self._core.append_rows(A_new, np.asarray(b_new, dtype=float), slack_lb, slack_ub)

    def solve(self):
        """Returns ``(status, x, row_duals, reduced_costs)`` in max convention."""
        core = self._core
        status: LpStatus
        if not self._started:
            status = core.run(None)
            self._started = True
        else:
            core._recompute_x()
            try:
                res = core._dual_simplex()
                status = LpStatus.INFEASIBLE if res is LpStatus.INFEASIBLE else core._phase2()
            except (_DualBreakdown, NumericalError):
                status = core.run(None)  # cold restart as a last resort
        if status is not LpStatus.OPTIMAL:
            self._started = False  # force a cold start on the next solve
            return status, None, None, None
        x = core.x[: self.n].copy()
        pi_min, d_min = core.duals()
        return status, x, -pi_min, -d_min[: self.n]


class _SimplexCore:
    """Bounded-variable simplex in minimization form with dense basis inverse."""

    MAX_STALL = 60      # non-improving pivots before switching to Bland's rule
    REFACTOR_EVERY = 100

    def __init__(self, c, A, b, lb, ub, n_struct):
        self.c = c
        self.A = A
        self.b = b
        self.lb = lb
        self.ub = ub
        self.n_struct = n_struct
        self.m, self.n_total = A.shape
        self.iterations = 0
        self.bland = False
        self._stall = 0
        self._since_refactor = 0

    # -- basis management ---------------------------------------------------

    def _cold_basis(self) -> None:
        m, n = self.m, self.n_struct
        self.basis = np.arange(n, n + m)
        self.status_of = np.empty(self.n_total, dtype=np.int8)
        for j in range(self.n_total):
            self.status_of[j] = self._natural_status(j)
        self.status_of[self.basis] = _BASIC
        self._refactor()
        self._recompute_x()

    def _natural_status(self, j: int) -> int:
        lo, up = self.lb[j], self.ub[j]
        if np.isfinite(lo):
            if np.isfinite(up) and abs(up) < abs(lo):
                return _AT_UPPER
            return _AT_LOWER
        if np.isfinite(up):
            return _AT_UPPER
        return _FREE

    def _warm_basis(self, warm: WarmBasis) -> bool:
        """Adopt a previous basis; rows may have been appended since.

        Old rows must be a prefix of the current rows, so old slack ``k``
        keeps column index ``n_struct + k``.  Slacks of appended rows
        enter the basis, which preserves dual feasibility because their
        cost is zero.
        """
        if warm.n_vars != self.n_struct:
            return False
        old_rows = len(warm.basis)
        if old_rows > self.m:
            return False
        n = self.n_struct
        basis = np.empty(self.m, dtype=np.int64)
        basis[:old_rows] = warm.basis
        basis[old_rows:] = n + np.arange(old_rows, self.m)
        status = np.empty(self.n_total, dtype=np.int8)
        status[: n + old_rows] = warm.status
        status[n + old_rows:] = _BASIC
        status[basis] = _BASIC
        if len(np.unique(basis)) != self.m:
            return False
        self.basis = basis
        self.status_of = status
        try:
            self._refactor()
        except np.linalg.LinAlgError:
            return False
        self._recompute_x()
        return True

    def _refactor(self) -> None:
        B = self.A[:, self.basis]
        self.B_inv = np.linalg.inv(B)
        self._since_refactor = 0

    def append_rows(self, A_new: np.ndarray, b_new: np.ndarray,
                    slack_lb: np.ndarray, slack_ub: np.ndarray) -> None:
        """Grow the system by rows whose slacks start out basic.

        With the new slacks basic, the extended basis matrix is
        ``[[B, 0], [C, I]]`` whose inverse is ``[[B^-1, 0], [-C B^-1, I]]``,
        so no refactorization is needed.  Dual feasibility is preserved
        because the appended slacks carry zero cost.
        """
        k = len(b_new)
        m_old, ntot_old = self.m, self.n_total
        block = np.zeros((k, ntot_old + k))
        block[:, : self.n_struct] = A_new
        block[:, ntot_old:] = np.eye(k)
        self.A = np.vstack([np.hstack([self.A, np.zeros((m_old, k))]), block])
        self.b = np.concatenate([self.b, b_new])
        self.lb = np.concatenate([self.lb, slack_lb])
        self.ub = np.concatenate([self.ub, slack_ub])
        self.c = np.concatenate([self.c, np.zeros(k)])
        self.m += k
        self.n_total += k
        if hasattr(self, "basis"):
            C_full = block[:, self.basis]
            self.basis = np.concatenate([self.basis, ntot_old + np.arange(k)])
            self.status_of = np.concatenate([
                self.status_of, np.full(k, _BASIC, dtype=np.int8)])
            lower_left = -C_full @ self.B_inv
            self.B_inv = np.block([
                [self.B_inv, np.zeros((m_old, k))],
                [lower_left, np.eye(k)],
            ])

    def _recompute_x(self) -> None:
        x = np.zeros(self.n_total)
        nb_lower = self.status_of == _AT_LOWER
        nb_upper = self.status_of == _AT_UPPER
        x[nb_lower] = self.lb[nb_lower]
        x[nb_upper] = self.ub[nb_upper]
        x[self.basis] = 0.0
        x[self.basis] = self.B_inv @ (self.b - self.A @ x)
        self.x = x

    # -- pricing ------------------------------------------------------------

    def duals(self) -> tuple[np.ndarray, np.ndarray]:
        pi = self.c[self.basis] @ self.B_inv
        d = self.c - pi @ self.A
        return pi, d

    def _primal_entering(self, d: np.ndarray) -> tuple[int, int] | None:
        """Entering column and direction (+1/-1) for the primal step."""
        fixed = self.lb == self.ub
        viol = np.zeros(self.n_total)
        at_lo = (self.status_of == _AT_LOWER) & ~fixed
        at_up = (self.status_of == _AT_UPPER) & ~fixed
        free = self.status_of == _FREE
        viol[at_lo] = np.maximum(0.0, -d[at_lo])
        viol[at_up] = np.maximum(0.0, d[at_up])
        viol[free] = np.abs(d[free])
        candidates = np.nonzero(viol > OPT_TOL)[0]
        if candidates.size == 0:
            return None
        j = int(candidates[0]) if self.bland else int(candidates[np.argmax(viol[candidates])])
        if self.status_of[j] == _AT_LOWER:
            direction = 1
        elif self.status_of[j] == _AT_UPPER:
            direction = -1
        else:
            direction = 1 if d[j] < 0 else -1
        return j, direction

    # -- primal iteration (shared by phase 1 and phase 2) --------------------

    def _primal_step(self, j: int, direction: int, phase1: bool) -> str:
        """Move nonbasic ``j`` in ``direction``; returns 'pivot'/'flip'/'unbounded'."""
        alpha = self.B_inv @ self.A[:, j]
        rate = -direction * alpha  # d x_B / d t
        t_best = np.inf
        leave = -1
        leave_bound = 0
        xb = self.x[self.basis]
        lb_b = self.lb[self.basis]
        ub_b = self.ub[self.basis]
        for i in range(self.m):
            r = rate[i]
            if abs(r) <= PIVOT_TOL:
                continue
            if phase1 and xb[i] < lb_b[i] - FEAS_TOL:
                # infeasible below: blocks only when rising to its lower bound
                if r <= 0:
                    continue
                t, bound = (lb_b[i] - xb[i]) / r, _AT_LOWER
            elif phase1 and xb[i] > ub_b[i] + FEAS_TOL:
                if r >= 0:
                    continue
                t, bound = (ub_b[i] - xb[i]) / r, _AT_UPPER
            elif r < 0 and np.isfinite(lb_b[i]):
                t, bound = (lb_b[i] - xb[i]) / r, _AT_LOWER
            elif r > 0 and np.isfinite(ub_b[i]):
                t, bound = (ub_b[i] - xb[i]) / r, _AT_UPPER
            else:
                continue
            t = max(t, 0.0)
            take = t < t_best - PIVOT_TOL or (
                t <= t_best + PIVOT_TOL and leave >= 0 and self.basis[i] < self.basis[leave])
            if leave == -1 and np.isfinite(t):
                take = True
            if take:
                t_best = min(t_best, t) if leave >= 0 else t
                leave = i
                leave_bound = bound
        span = self.ub[j] - self.lb[j]
        if np.isfinite(span) and span < t_best:
            # bound flip: variable runs to its opposite bound
            self.x[j] += direction * span
            self.x[self.basis] += rate * span
            self.status_of[j] = _AT_UPPER if direction > 0 else _AT_LOWER
            return "flip"
        if not np.isfinite(t_best):
            return "unbounded"
        self.x[j] += direction * t_best
        self.x[self.basis] += rate * t_best
        out = self.basis[leave]
        self.status_of[out] = leave_bound
        self.x[out] = self.lb[out] if leave_bound == _AT_LOWER else self.ub[out]
        self.basis[leave] = j
        self.status_of[j] = _BASIC
        self._update_b_inv(alpha, leave)
        return "pivot"

    def _update_b_inv(self, alpha: np.ndarray, leave: int) -> None:
        piv = alpha[leave]
        if abs(piv) < PIVOT_TOL:
            self._refactor()
            return
        self.B_inv[leave] /= piv
        scale = alpha.copy()
        scale[leave] = 0.0
        self.B_inv -= np.outer(scale, self.B_inv[leave])
        self._since_refactor += 1
        if self._since_refactor >= self.REFACTOR_EVERY:
            self._refactor()
            self._recompute_x()

    # -- infeasibility ---------------------------------------------------

    def _infeasibility(self) -> tuple[float, np.ndarray]:
        xb = self.x[self.basis]
        below = np.maximum(0.0, self.lb[self.basis] - xb)
        above = np.maximum(0.0, xb - self.ub[self.basis])
        sigma = np.sign(above) - np.sign(below)
        return float(below.sum() + above.sum()), sigma

    def _phase1(self) -> LpStatus | None:
        cap = self._iteration_cap()
        retried = False
        while True:
            infeas, sigma = self._infeasibility()
            if infeas <= FEAS_TOL * (1.0 + abs(self.b).max(initial=0.0)):
                return None
            pi = sigma @ self.B_inv
            g = -(pi @ self.A)  # d infeasibility / d x_j
            g[self.basis] = 0.0
            fixed = self.lb == self.ub
            best = -1
            best_v = OPT_TOL
            for j in range(self.n_total):
                if self.status_of[j] == _BASIC or fixed[j]:
                    continue
                if self.status_of[j] == _AT_LOWER:
                    v = -g[j]
                elif self.status_of[j] == _AT_UPPER:
                    v = g[j]
                else:
                    v = abs(g[j])
                if v > best_v + PIVOT_TOL or (self.bland and v > OPT_TOL):
                    best, best_v = j, v
                    if self.bland:
                        break
            if best < 0:
                return LpStatus.INFEASIBLE
            if self.status_of[best] == _AT_LOWER:
                direction = 1
            elif self.status_of[best] == _AT_UPPER:
                direction = -1
            else:
                direction = 1 if g[best] < 0 else -1
            before = infeas
            move = self._primal_step(best, direction, phase1=True)
            if move == "unbounded":
                # infeasibility always decreases toward a blocking bound, so a
                # ray here is numerical noise: a tiny aggregate gradient whose
                # per-row rates fall below the pivot tolerance.  Refactor and
                # retry once, then accept near-feasibility.
                if not retried:
                    retried = True
                    self._refactor()
                    self._recompute_x()
                    continue
                if infeas <= 1e3 * FEAS_TOL * (1.0 + abs(self.b).max(initial=0.0)):
                    return None
                raise NumericalError("phase 1 ray without blocking bound")
            retried = False
            self.iterations += 1
            after, _ = self._infeasibility()
            self._note_progress(before - after)
            if self.iterations > cap:
                raise NumericalError("simplex phase 1 iteration limit exceeded")

    def _phase2(self) -> LpStatus:
        cap = self._iteration_cap()
        while True:
            _, d = self.duals()
            pick = self._primal_entering(d)
            if pick is None:
                return LpStatus.OPTIMAL
            before = float(self.c @ self.x)
            move = self._primal_step(*pick, phase1=False)
            if move == "unbounded":
                return LpStatus.UNBOUNDED
            self.iterations += 1
            self._note_progress(before - float(self.c @ self.x))
            if self.iterations > cap:
                raise NumericalError("simplex phase 2 iteration limit exceeded")

    def _dual_simplex(self) -> LpStatus | None:
        """Restore primal feasibility while keeping dual feasibility.

        Returns None on success (then the basis is optimal), INFEASIBLE if
        a violated row admits no entering column, or falls back by raising
        ``_DualBreakdown`` when reduced costs are not dual feasible.
        """
        cap = self._iteration_cap()
        tol_scale = 1.0 + abs(self.b).max(initial=0.0)
        stall = 0
        last_total = np.inf
        while True:
            xb = self.x[self.basis]
            below = self.lb[self.basis] - xb
            above = xb - self.ub[self.basis]
            viol = np.maximum(below, above)
            total_viol = float(np.maximum(viol, 0.0).sum())
            if total_viol >= last_total - 1e-12:
                stall += 1
                if stall >= self.MAX_STALL:
                    self.bland = True
            else:
                stall = 0
                self.bland = False
            last_total = total_viol
            if self.bland:
                candidates = np.nonzero(viol > FEAS_TOL * tol_scale)[0]
                if candidates.size == 0:
                    return None
                r = int(candidates[np.argmin(self.basis[candidates])])
            else:
                r = int(np.argmax(viol))
            if viol[r] <= FEAS_TOL * tol_scale:
                return None
            delta = 1 if below[r] > above[r] else -1  # needed movement of x_B[r]
            _, d = self.duals()
            if not self._dual_feasible(d):
                raise _DualBreakdown
            alpha_row = self.B_inv[r] @ self.A
            best = -1
            best_ratio = np.inf
            for j in range(self.n_total):
                if self.status_of[j] == _BASIC or self.lb[j] == self.ub[j]:
                    continue
                a = alpha_row[j]
                if abs(a) <= PIVOT_TOL:
                    continue
                st = self.status_of[j]
                moves_up = delta * a < 0     # x_j increases => x_B[r] moves toward delta
                if st == _AT_LOWER and not moves_up:
                    continue
                if st == _AT_UPPER and moves_up:
                    continue
                ratio = abs(d[j]) / abs(a)
                # ascending scan keeps the lowest index among (near-)ties,
                # which is the anti-cycling choice
                if ratio < best_ratio - PIVOT_TOL:
                    best_ratio = ratio
                    best = j
            if best < 0:
                return LpStatus.INFEASIBLE
            direction = 1 if (self.status_of[best] == _AT_LOWER or
                              (self.status_of[best] == _FREE and delta * alpha_row[best] < 0)) else -1
            alpha = self.B_inv @ self.A[:, best]
            # pivot: leaving variable exits at its violated bound
            t = (self.lb[self.basis[r]] - xb[r]) / (-direction * alpha[r]) if delta > 0 \
                else (self.ub[self.basis[r]] - xb[r]) / (-direction * alpha[r])
            self.x[best] += direction * t
            self.x[self.basis] += -direction * alpha * t
            out = self.basis[r]
            self.status_of[out] = _AT_LOWER if delta > 0 else _AT_UPPER
            self.x[out] = self.lb[out] if delta > 0 else self.ub[out]
            self.basis[r] = best
            self.status_of[best] = _BASIC
            self._update_b_inv(alpha, r)
            self.iterations += 1
            if self.iterations > cap:
                raise NumericalError("dual simplex iteration limit exceeded")

    def _dual_feasible(self, d: np.ndarray) -> bool:
        tol = OPT_TOL * 10
        fixed = self.lb == self.ub
        at_lo = (self.status_of == _AT_LOWER) & ~fixed
        at_up = (self.status_of == _AT_UPPER) & ~fixed
        free = self.status_of == _FREE
        if np.any(d[at_lo] < -tol) or np.any(d[at_up] > tol):
            return False
        return not np.any(np.abs(d[free]) > tol)

    def _note_progress(self, improvement: float) -> None:
        if improvement > 1e-12:
            self._stall = 0
            self.bland = False
        else:
            self._stall += 1
            if self._stall >= self.MAX_STALL:
                self.bland = True

    def _iteration_cap(self) -> int:
        return 200 * (self.m + self.n_total + 10)

    # -- driver ---------------------------------------------------------

    def run(self, warm: WarmBasis | None) -> LpStatus:
        if warm is not None and self._warm_basis(warm):
            try:
                res = self._dual_simplex()
                if res is LpStatus.INFEASIBLE:
                    return LpStatus.INFEASIBLE
                return self._phase2()
            except (_DualBreakdown, NumericalError):
                pass  # fall through to cold start
        self._cold_basis()
        res = self._phase1()
        if res is LpStatus.INFEASIBLE:
            return LpStatus.INFEASIBLE
        return self._phase2()


class _DualBreakdown(Exception):
    pass
