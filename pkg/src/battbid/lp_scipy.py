"""scipy.optimize.linprog adapter with the same solution contract.

Used in differential tests against the built-in simplex; it can also be
swapped in as the LP backend wherever a ``solve(problem)`` callable is
expected.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from .lp import LpProblem, LpSolution, LpStatus


def solve(problem: LpProblem, warm_start=None) -> LpSolution:
    A = problem.dense_matrix()
    c = np.array(problem.objective)
    n = problem.n_vars
    ub_rows, ub_rhs, ub_src = [], [], []
    eq_rows, eq_rhs, eq_src = [], [], []
    for i, row in enumerate(problem.rows):
        if row.rel == "<=":
            ub_rows.append(A[i]); ub_rhs.append(row.rhs); ub_src.append((i, -1.0))
        elif row.rel == ">=":
            ub_rows.append(-A[i]); ub_rhs.append(-row.rhs); ub_src.append((i, 1.0))
        else:
            eq_rows.append(A[i]); eq_rhs.append(row.rhs); eq_src.append(i)
    bounds = [(lo if np.isfinite(lo) else None, up if np.isfinite(up) else None)
              for lo, up in zip(problem.lower, problem.upper)]
    res = linprog(-c,
                  A_ub=np.array(ub_rows) if ub_rows else None,
                  b_ub=np.array(ub_rhs) if ub_rhs else None,
                  A_eq=np.array(eq_rows) if eq_rows else None,
                  b_eq=np.array(eq_rhs) if eq_rhs else None,
                  bounds=bounds, method="highs")
    if res.status == 2:
        status = LpStatus.INFEASIBLE
    elif res.status == 3:
        status = LpStatus.UNBOUNDED
    elif res.status == 0:
        status = LpStatus.OPTIMAL
    else:  # pragma: no cover - solver failure
        raise RuntimeError(f"scipy linprog failed: {res.message}")

    duals = np.full(problem.n_rows, np.nan)
    values = np.full(n, np.nan)
    reduced = np.full(n, np.nan)
    obj = np.nan
    if status is LpStatus.OPTIMAL:
        values = res.x
        obj = float(c @ res.x)
        # marginals are for the minimization; the maximization dual of a
        # "<=" row is the negated marginal, of a ">=" row (negated before
        # passing) the marginal itself.
        for (i, sign), marg in zip(ub_src, res.ineqlin.marginals):
            duals[i] = sign * marg
        for i, marg in zip(eq_src, res.eqlin.marginals):
            duals[i] = -marg
        reduced = -res.lower.marginals - res.upper.marginals
    tags = {r.tag: i for i, r in enumerate(problem.rows) if r.tag is not None}
    return LpSolution(status=status, objective=obj, values=values, row_duals=duals,
                      reduced_costs=reduced, var_names=problem.var_names, tags=tags)
