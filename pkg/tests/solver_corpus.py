"""Small convex programs with optima derived by hand."""

import math

import numpy as np

from fdcells.solver import ConicProgram


def quadratic_bound():
    # min x^2  s.t. x >= 1  ->  x = 1
    p = ConicProgram()
    x = p.scalar("x")
    p.add_square(x)
    p.add_ge(x, 1.0)
    return p, 1.0


def small_lp():
    # min x + y  s.t. x + 2y >= 2, 2x + y >= 2  ->  x = y = 2/3
    p = ConicProgram()
    x, y = p.scalar("x"), p.scalar("y")
    p.add_objective(x + y)
    p.add_ge(x + y * 2.0, 2.0)
    p.add_ge(x * 2.0 + y, 2.0)
    return p, 4.0 / 3.0


def disc_lp():
    # min x + y over the unit disc  ->  -sqrt(2)
    p = ConicProgram()
    x, y = p.scalar("x"), p.scalar("y")
    p.add_objective(x + y)
    p.add_soc([x, y], 1.0)
    return p, -math.sqrt(2.0)


def halfplane_distance():
    # min ||(x, y) - (3, 4)||  s.t. x + y <= 1  ->  6 / sqrt(2)
    p = ConicProgram()
    x, y = p.scalar("x"), p.scalar("y")
    p.add_norm([x - 3.0, y - 4.0])
    p.add_le(x + y, 1.0)
    return p, 6.0 / math.sqrt(2.0)


def rank_one_trace():
    # min tr U  s.t. h^H U h >= 1, U psd, h = e1  ->  1
    p = ConicProgram()
    U = p.hermitian("U", 2)
    p.add_objective(U.expr().trace())
    p.add_ge(U.expr().quad(np.array([1.0, 0.0])), 1.0)
    return p, 1.0


def min_eigenvalue():
    # max lam  s.t. A - lam I psd  ->  smallest eigenvalue of A (= 1)
    A = np.array([[2.0, 1j], [-1j, 2.0]])
    p = ConicProgram()
    lam = p.scalar("lam")
    p.add_objective(-lam)
    from fdcells.expr import HermitianExpr
    p.add_psd(HermitianExpr.constant(A) - HermitianExpr.scaled(lam, np.eye(2)))
    return p, -1.0


def exp_boundary():
    # max t  s.t. e^t <= 2  ->  ln 2
    p = ConicProgram()
    t = p.scalar("t")
    p.add_objective(-t)
    p.add_exp(t, 2.0)
    return p, -math.log(2.0)


def water_filling():
    # max t1 + t2  s.t. e^ti <= 1 + zi, z1 + z2 <= 2, z >= 0  ->  2 ln 2
    p = ConicProgram()
    t1, t2 = p.scalar("t1"), p.scalar("t2")
    z1, z2 = p.scalar("z1", lb=0.0), p.scalar("z2", lb=0.0)
    p.add_objective(-(t1 + t2))
    p.add_exp(t1, z1 + 1.0)
    p.add_exp(t2, z2 + 1.0)
    p.add_le(z1 + z2, 2.0)
    return p, -2.0 * math.log(2.0)


CORPUS = {
    "quadratic_bound": quadratic_bound,
    "small_lp": small_lp,
    "disc_lp": disc_lp,
    "halfplane_distance": halfplane_distance,
    "rank_one_trace": rank_one_trace,
    "min_eigenvalue": min_eigenvalue,
    "exp_boundary": exp_boundary,
    "water_filling": water_filling,
}
