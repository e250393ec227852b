import numpy as np
import pytest

from battbid import lp, lp_scipy
from battbid.lp import LpProblem, LpStatus, solve


def single_var_problem():
    p = LpProblem("one")
    p.add_variable("x", lower=0, upper=10, objective=1.0)
    p.add_constraint({"x": 1.0}, "<=", 5.0, tag="cap")
    return p


def test_one_variable_lp():
    sol = solve(single_var_problem())
    assert sol.status is LpStatus.OPTIMAL
    assert sol["x"] == pytest.approx(5.0)
    assert sol.objective == pytest.approx(5.0)
    assert sol.dual("cap") == pytest.approx(1.0)


def test_two_variable_vertex():
    # max 2a + b subject to a + b <= 3, 0 <= a, b <= 2; optimum sits at a=2, b=1
    p = LpProblem()
    p.add_variable("a", 0, 2, objective=2.0)
    p.add_variable("b", 0, 2, objective=1.0)
    p.add_constraint({"a": 1, "b": 1}, "<=", 3.0)
    sol = solve(p)
    assert sol.status is LpStatus.OPTIMAL
    assert sol["a"] == pytest.approx(2.0)
    assert sol["b"] == pytest.approx(1.0)
    assert sol.objective == pytest.approx(5.0)


def test_contradictory_rows_are_infeasible_not_an_exception():
    p = LpProblem()
    p.add_variable("x", 0, 10)
    p.add_constraint({"x": 1}, ">=", 2)
    p.add_constraint({"x": 1}, "<=", 1)
    sol = solve(p)
    assert sol.status is LpStatus.INFEASIBLE


def test_unbounded_status():
    p = LpProblem()
    p.add_variable("x", 0, np.inf, objective=1.0)
    sol = solve(p)
    assert sol.status is LpStatus.UNBOUNDED


def test_equality_row_dual_is_objective_sensitivity():
    p = LpProblem()
    p.add_variable("v", -np.inf, np.inf, objective=3.0)
    p.add_constraint({"v": 1.0}, "=", 4.0, tag="fix")
    sol = solve(p)
    assert sol.objective == pytest.approx(12.0)
    assert sol.dual("fix") == pytest.approx(3.0)


def test_negative_cost_buy_side():
    # buying at low price: maximize -5*x with x in [-2, 2] picks x = -2
    p = LpProblem()
    p.add_variable("x", -2, 2, objective=-5.0)
    sol = solve(p)
    assert sol["x"] == pytest.approx(-2.0)
    assert sol.objective == pytest.approx(10.0)


def test_structure_errors():
    p = LpProblem()
    p.add_variable("x")
    with pytest.raises(lp.LpStructureError):
        p.add_constraint({"x": 1}, "<>", 1.0)
    with pytest.raises(KeyError):
        p.add_constraint({"y": 1}, "<=", 1.0)
    with pytest.raises(lp.LpStructureError):
        p.add_variable("bad", lower=2, upper=1)


def random_problem(rng, n=6, m=4, with_eq=True):
    """Random bounded LP guaranteed feasible via a seeded interior point."""
    p = LpProblem()
    lo = rng.uniform(-5, 0, n)
    hi = lo + rng.uniform(1, 6, n)
    c = rng.uniform(-3, 3, n)
    x0 = lo + (hi - lo) * rng.uniform(0.2, 0.8, n)
    for j in range(n):
        p.add_variable(f"x{j}", lo[j], hi[j], objective=c[j])
    A = rng.uniform(-2, 2, (m, n))
    for i in range(m):
        lhs = float(A[i] @ x0)
        kind = rng.integers(0, 3 if with_eq else 2)
        coeffs = {f"x{j}": A[i, j] for j in range(n)}
        if kind == 0:
            p.add_constraint(coeffs, "<=", lhs + abs(rng.normal()) + 0.1, tag=("le", i))
        elif kind == 1:
            p.add_constraint(coeffs, ">=", lhs - abs(rng.normal()) - 0.1, tag=("ge", i))
        else:
            p.add_constraint(coeffs, "=", lhs, tag=("eq", i))
    return p


@pytest.mark.parametrize("seed", range(25))
def test_random_lps_match_scipy(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng)
    ours = solve(p)
    ref = lp_scipy.solve(p)
    assert ours.status is ref.status is LpStatus.OPTIMAL
    assert ours.objective == pytest.approx(ref.objective, abs=1e-6)
    # primal feasibility at our solution
    A = p.dense_matrix()
    lhs = A @ ours.values
    for i, row in enumerate(p.rows):
        if row.rel == "<=":
            assert lhs[i] <= row.rhs + 1e-7
        elif row.rel == ">=":
            assert lhs[i] >= row.rhs - 1e-7
        else:
            assert lhs[i] == pytest.approx(row.rhs, abs=1e-7)


@pytest.mark.parametrize("seed", range(12))
def test_strong_duality_identity(seed):
    # obj = pi'b + d'x* links primal optimum, row duals and reduced costs
    rng = np.random.default_rng(100 + seed)
    p = random_problem(rng)
    sol = solve(p)
    assert sol.status is LpStatus.OPTIMAL
    b = np.array([r.rhs for r in p.rows])
    dual_value = float(sol.row_duals @ b + sol.reduced_costs @ sol.values)
    assert dual_value == pytest.approx(sol.objective, rel=1e-6, abs=1e-6)


@pytest.mark.parametrize("seed", range(12))
def test_dual_sign_convention(seed):
    rng = np.random.default_rng(300 + seed)
    p = random_problem(rng, with_eq=False)
    sol = solve(p)
    for i, row in enumerate(p.rows):
        if row.rel == "<=":
            assert sol.row_duals[i] >= -1e-7
        else:
            assert sol.row_duals[i] <= 1e-7


def test_rhs_perturbation_matches_dual_locally():
    p = single_var_problem()
    base = solve(p)
    lam = base.dual("cap")
    for eps in (1e-4, -1e-4):
        q = single_var_problem()
        q.rows[0].rhs = 5.0 + eps
        moved = solve(q)
        assert moved.objective == pytest.approx(base.objective + lam * eps, abs=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_rhs_perturbation_subgradient_inequality(seed):
    # value function of a max problem is concave in the rhs: the dual is a
    # supergradient, so obj(b') <= obj(b) + dual * (b' - b) for any step
    rng = np.random.default_rng(700 + seed)
    p = random_problem(rng, with_eq=False)
    sol = solve(p)
    row = int(rng.integers(0, p.n_rows))
    delta = float(rng.uniform(-0.5, 0.5))
    p.rows[row].rhs += delta
    moved = solve(p)
    if moved.status is LpStatus.OPTIMAL:
        bound = sol.objective + sol.row_duals[row] * delta
        assert moved.objective <= bound + 1e-6


def test_warm_start_after_rhs_change_and_new_rows():
    rng = np.random.default_rng(42)
    p = random_problem(rng, n=8, m=5)
    cold = solve(p)
    # rhs shift re-solved warm
    p.rows[0].rhs += 0.3
    warm = solve(p, warm_start=cold.basis)
    fresh = solve(p)
    assert warm.objective == pytest.approx(fresh.objective, abs=1e-8)
    assert np.allclose(warm.values, fresh.values, atol=1e-7) or (
        warm.objective == pytest.approx(fresh.objective, abs=1e-8))
    # appended cut-style row, warm solve still correct
    p.add_constraint({f"x{j}": 1.0 for j in range(4)}, "<=", 1.5, tag="cut")
    warm2 = solve(p, warm_start=warm.basis)
    fresh2 = solve(p)
    assert warm2.status is fresh2.status is LpStatus.OPTIMAL
    assert warm2.objective == pytest.approx(fresh2.objective, abs=1e-8)
    assert warm2.iterations <= fresh2.iterations + 5


def test_fixed_variable_acts_as_data():
    p = LpProblem()
    p.add_variable("state", lower=4.0, upper=4.0)
    p.add_variable("y", 0, 10, objective=1.0)
    p.add_constraint({"y": 1, "state": -1}, "<=", 0.0, tag="link")
    sol = solve(p)
    assert sol["y"] == pytest.approx(4.0)
    assert sol.dual("link") == pytest.approx(1.0)


def test_deterministic_resolve():
    rng = np.random.default_rng(9)
    p = random_problem(rng)
    a = solve(p)
    b = solve(p)
    assert a.objective == b.objective
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.row_duals, b.row_duals)


def test_persistent_lp_tracks_cold_solutions():
    rng = np.random.default_rng(5)
    n, m = 12, 8
    lo = rng.uniform(-5, 0, n)
    hi = lo + rng.uniform(1, 6, n)
    c = rng.uniform(-3, 3, n)
    A = rng.uniform(-2, 2, (m, n))
    b = A @ (lo + (hi - lo) * 0.5) + np.abs(rng.normal(size=m)) + 0.1
    rel = np.array([-1] * m)
    plp = lp.PersistentLp(c, A, rel, b, lo, hi)
    status, x, duals, reduced = plp.solve()
    assert status is LpStatus.OPTIMAL

    b_all = b.copy()
    rows = [A]
    for k in range(30):
        row = rng.normal(size=n)
        rhs = float(abs(rng.normal()) * 20 + 5)
        plp.add_rows(row[None, :], [-1], [rhs])
        rows.append(row[None, :])
        b_all = np.append(b_all, rhs)
        if k % 4 == 0:
            b_all[k % m] += 0.05
            plp.set_rhs(b_all)
        status, x, duals, reduced = plp.solve()
        assert status is LpStatus.OPTIMAL
        cold_status, cold_x, cold_d, *_ = lp.solve_arrays(
            c, np.vstack(rows), np.array([-1] * len(b_all)), b_all, lo, hi)
        assert cold_status is LpStatus.OPTIMAL
        assert float(c @ x) == pytest.approx(float(c @ cold_x), abs=1e-7)


def test_persistent_lp_recovers_from_infeasible():
    # a temporarily contradictory rhs must not poison later solves
    c = np.array([1.0])
    A = np.array([[1.0], [1.0]])
    rel = np.array([-1, 1])  # x <= b0, x >= b1
    plp = lp.PersistentLp(c, A, rel, np.array([5.0, 0.0]), np.array([0.0]), np.array([10.0]))
    status, x, *_ = plp.solve()
    assert status is LpStatus.OPTIMAL and x[0] == pytest.approx(5.0)
    plp.set_rhs(np.array([1.0, 2.0]))
    status, *_ = plp.solve()
    assert status is LpStatus.INFEASIBLE
    plp.set_rhs(np.array([7.0, 1.0]))
    status, x, *_ = plp.solve()
    assert status is LpStatus.OPTIMAL and x[0] == pytest.approx(7.0)


def test_dump_fixture():
    p = single_var_problem()
    text = p.dump()
    assert text == (
        "LP one maximize\n"
        "VARIABLES name lower upper objective\n"
        "  x 0 10 1\n"
        "CONSTRAINTS tag terms rel rhs\n"
        "  [cap] 1*x <= 5\n"
    )
