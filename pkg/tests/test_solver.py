import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcells import solver
from fdcells.expr import HermitianExpr
from fdcells.solver import ConicProgram, Status
from solver_corpus import CORPUS, exp_boundary, quadratic_bound, rank_one_trace


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_corpus_optimum(name):
    prog, optimum = CORPUS[name]()
    sol = solver.solve(prog)
    assert sol.ok, sol.message
    assert sol.objective == pytest.approx(optimum, abs=1e-6)
    assert sol.kkt["max"] <= 1e-6


def test_quadratic_bound_solution_point():
    prog, _ = quadratic_bound()
    sol = solver.solve(prog)
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)


def test_rank_one_trace_solution_point():
    prog, _ = rank_one_trace()
    sol = solver.solve(prog)
    U = prog.blocks[0].value(sol.x)
    assert np.allclose(U, np.diag([1.0, 0.0]), atol=1e-6)


def test_exp_boundary_point():
    prog, _ = exp_boundary()
    assert solver.solve(prog).x[0] == pytest.approx(math.log(2.0), abs=1e-7)


def test_kkt_report_at_optimum_and_after_perturbation():
    prog, _ = quadratic_bound()
    sol = solver.solve(prog, tol=1e-10)
    rep = solver.check_kkt(prog, sol)
    assert rep["primal"] <= 1e-8 and rep["stationarity"] <= 1e-8
    assert rep["violated"] == []
    sol.x = sol.x - 0.1
    rep = solver.check_kkt(prog, sol)
    assert rep["primal"] == pytest.approx(0.1, abs=1e-6)
    assert rep["violated"] == ["affine"]


def test_random_point_reports_violations():
    prog, _ = CORPUS["water_filling"]()
    rng = np.random.default_rng(0)
    x = rng.uniform(3.0, 5.0, prog.n)
    tags = {t for t, _ in prog.violations(x)}
    assert tags >= {"exp", "affine"}


def test_infeasible_detected():
    p = ConicProgram()
    x = p.scalar("x")
    p.add_objective(x)
    p.add_ge(x, 2.0)
    p.add_le(x, 1.0)
    sol = solver.solve(p)
    assert sol.status == Status.INFEASIBLE and not sol.ok


def _lp(order, c, A, b):
    p = ConicProgram()
    xs = [None] * len(c)
    for k in order:
        xs[k] = p.scalar(f"x{k}", lb=0.0)
    p.add_objective(sum((xs[k] * c[k] for k in range(len(c))), 0.0 * xs[0]))
    for row, rhs in zip(A, b):
        p.add_ge(sum((xs[k] * row[k] for k in range(len(c))), 0.0 * xs[0]), rhs)
    return p


@settings(max_examples=15)
@given(seed=st.integers(0, 2**32 - 1))
def test_objective_invariant_to_variable_order(seed):
    rng = np.random.default_rng(seed)
    n = 4
    c = rng.uniform(0.5, 2.0, n)
    A = rng.uniform(0.1, 1.0, (3, n))
    b = rng.uniform(0.5, 2.0, 3)
    a = solver.solve(_lp(range(n), c, A, b))
    r = solver.solve(_lp(rng.permutation(n), c, A, b))
    assert a.ok and r.ok
    assert a.objective == pytest.approx(r.objective, rel=1e-6, abs=1e-8)


@settings(max_examples=10)
@given(seed=st.integers(0, 2**32 - 1))
def test_psd_solutions_stay_psd(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    C = A @ A.conj().T
    p = ConicProgram()
    U = p.hermitian("U", 3)
    p.add_objective(U.expr().inner(C))
    p.add_ge(U.expr().trace(), 1.0)
    sol = solver.solve(p)
    assert sol.ok
    X = p.blocks[0].value(sol.x)
    assert np.linalg.eigvalsh(X)[0] >= -1e-8
    assert sol.objective == pytest.approx(np.linalg.eigvalsh(C)[0], rel=1e-5, abs=1e-6)


def test_warm_start_matches_cold():
    prog, optimum = CORPUS["halfplane_distance"]()
    warm = solver.solve(prog, x0=np.array([0.0, 0.0]), mu0=1e-3)
    assert warm.ok and warm.objective == pytest.approx(optimum, abs=1e-6)


def test_dump_round_trip(tmp_path):
    for name, build in CORPUS.items():
        prog, optimum = build()
        path = tmp_path / f"{name}.json"
        solver.dump_program(prog, path)
        back = solver.load_program(path)
        assert back.counts() == prog.counts() and back.tags() == prog.tags()
        assert solver.solve(back).objective == pytest.approx(optimum, abs=1e-6)


def test_load_rejects_other_json(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        solver.load_program(path)


def test_psd_constraint_with_scalar():
    p = ConicProgram()
    lam = p.scalar("lam")
    p.add_objective(lam)
    p.add_psd(HermitianExpr.scaled(lam, np.eye(2)) - HermitianExpr.constant(np.diag([3.0, 1.0])))
    sol = solver.solve(p)
    assert sol.objective == pytest.approx(3.0, abs=1e-6)


def test_negative_square_weight_rejected():
    p = ConicProgram()
    with pytest.raises(ValueError):
        p.add_square(p.scalar("x"), -1.0)
