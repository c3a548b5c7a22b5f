from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from carnotlab import group as G
from carnotlab.calculus import SymbolicFunction
from carnotlab.poly import GradedPoly
from carnotlab.polynomials import (
    PolySpaceBasis,
    caloric_basis,
    caloric_taylor_check,
    count_monomials,
    empirical_taylor_constant,
    heat_apply,
    heat_matrix,
    mean_value_quotient,
    solve_heat_polynomial,
    taylor_polynomial,
)

H1 = G.heisenberg(1)
ENGEL = G.engel()


def v(g, j):
    return GradedPoly.variable(g.spacetime_weights, j)


def syms(g):
    return sp.symbols(" ".join(f"x{j + 1}" for j in range(g.N)) + " t", real=True)


@pytest.mark.parametrize("g", [H1, ENGEL, G.heisenberg(2)])
@pytest.mark.parametrize("d", [0, 1, 2, 3, 5, 8])
def test_basis_dimension_matches_generating_function(g, d):
    b = PolySpaceBasis(g, d)
    assert b.dim == count_monomials(g.spacetime_weights, d)
    assert len(set(b.exponents)) == b.dim
    hb = PolySpaceBasis(g, d, homogeneous=True)
    assert hb.dim == count_monomials(g.spacetime_weights, d, homogeneous=True)
    # closed under grading: every degree-<=d monomial sits in some homogeneous block
    assert sum(PolySpaceBasis(g, j, True).dim for j in range(d + 1)) == b.dim


def test_basis_order():
    b = PolySpaceBasis(H1, 2)
    names = [e for e in b.exponents]
    assert names[0] == (0, 0, 0, 0)
    assert names[1:3] == [(1, 0, 0, 0), (0, 1, 0, 0)]
    assert names[3:] == [(2, 0, 0, 0), (1, 1, 0, 0), (0, 2, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)]


def test_grade_decomposition_sums_back():
    p = v(ENGEL, 0) ** 3 + v(ENGEL, 3) * v(ENGEL, 4) + 7 + v(ENGEL, 2)
    assert sum(p.grades().values(), GradedPoly(p.weights)) == p


def test_taylor_examples():
    x1, t = v(H1, 0), v(H1, 3)
    f = x1 * x1 + t
    assert taylor_polynomial(H1, f, 2) == f
    assert taylor_polynomial(H1, x1**3, 2).is_zero()


@settings(max_examples=25, deadline=None)
@given(st.dictionaries(st.tuples(*[st.integers(0, 2)] * 5), st.fractions(min_value=-10, max_value=10, max_denominator=7), max_size=8), st.integers(0, 6))
def test_taylor_equals_truncation_engel(terms, k):
    p = GradedPoly(ENGEL.spacetime_weights, terms)
    assert taylor_polynomial(ENGEL, p, k) == p.truncate(k)


def test_taylor_is_idempotent():
    s = SymbolicFunction(H1, sp.exp(syms(H1)[0]) * sp.cos(syms(H1)[2]))
    P = taylor_polynomial(H1, s, 3)
    again = taylor_polynomial(H1, P, 3)
    assert max(abs(float(c)) for c in (again - P).terms.values()) < 1e-12 if (again - P).terms else True


def test_taylor_of_exp_matches_weighted_truncation():
    # oracle: Euclidean Taylor series truncated by homogeneous degree
    x1, x2, x3, t = syms(H1)
    expr = sp.exp(x1 + 2 * x3) * sp.cos(x2 - t)
    k = 4
    s = SymbolicFunction(H1, expr)
    got = taylor_polynomial(H1, s, k)
    eps = sp.Symbol("eps")
    scaled = expr.subs({x1: eps * x1, x2: eps * x2, x3: eps**2 * x3, t: eps**2 * t}, simultaneous=True)
    series = sp.series(scaled, eps, 0, k + 1).removeO().subs(eps, 1)
    poly = sp.Poly(sp.expand(series), x1, x2, x3, t)
    want = GradedPoly(H1.spacetime_weights, {m: float(c) for m, c in poly.terms()})
    diff = got - want
    assert max((abs(float(c)) for c in diff.terms.values()), default=0.0) < 1e-10


def test_taylor_remainder_slope_for_exp():
    x1 = syms(H1)[0]
    s = SymbolicFunction(H1, sp.exp(x1))
    P = taylor_polynomial(H1, s, 2).to_float()
    rs = [2.0**-j for j in range(2, 7)]
    errs = []
    for r in rs:
        pts = np.array([[r, 0, 0, 0]])
        errs.append(abs(s(pts)[0] - P(pts)[0]))
    slope = np.polyfit(np.log(rs), np.log(errs), 1)[0]
    assert abs(slope - 3) < 0.1


def test_taylor_with_center_is_left_translate():
    e = ENGEL
    W = e.spacetime_weights
    f = v(e, 0) ** 2 * v(e, 1) + v(e, 3) + v(e, 2) * v(e, 4)
    c = (Fraction(1, 2), Fraction(-1), Fraction(2), Fraction(1, 3), Fraction(1, 5))
    lt = [q.embed(W, list(range(4))) for q in e.left_translation_poly(c[:4])]
    shifted = f.compose(lt + [v(e, 4) + c[4]])
    assert taylor_polynomial(e, f, 3, center=c) == shifted.truncate(3)


def test_heat_apply_examples():
    W = H1.spacetime_weights
    t, x1 = v(H1, 3), v(H1, 0)
    assert heat_apply(H1, t) == 1
    assert heat_apply(H1, GradedPoly.constant(W, 3)).is_zero()
    a = [[Fraction(3), Fraction(1)], [Fraction(1), Fraction(2)]]
    assert heat_apply(H1, x1 * x1, a) == -6


def test_heat_apply_linear_and_graded():
    rng = np.random.default_rng(0)
    basis = PolySpaceBasis(ENGEL, 5, homogeneous=True).polys()
    p = sum((b * Fraction(int(rng.integers(-5, 6))) for b in basis), GradedPoly(ENGEL.spacetime_weights))
    q = sum((b * Fraction(int(rng.integers(-5, 6))) for b in basis), GradedPoly(ENGEL.spacetime_weights))
    a, c = Fraction(2, 3), Fraction(-5)
    assert heat_apply(ENGEL, a * p + c * q) == a * heat_apply(ENGEL, p) + c * heat_apply(ENGEL, q)
    hp = heat_apply(ENGEL, p)
    assert hp.is_zero() or hp.is_homogeneous(3)


def test_solve_heat_examples():
    W = H1.spacetime_weights
    P = solve_heat_polynomial(H1, GradedPoly.constant(W, 1))
    assert heat_apply(H1, P) == 1
    assert P.is_homogeneous(2)
    assert solve_heat_polynomial(H1, GradedPoly(W)).is_zero()


def test_solve_heat_min_norm():
    # min-norm: orthogonal to the caloric kernel in coefficient space
    W = H1.spacetime_weights
    src, _, _, _ = heat_matrix(H1, 4)
    Q = v(H1, 0) * v(H1, 1) + 3 * v(H1, 2)
    P = solve_heat_polynomial(H1, Q)
    pc = src.coords(P)
    for k in caloric_basis(H1, 4):
        kc = src.coords(k)
        assert sum(a * b for a, b in zip(pc, kc)) == 0


@pytest.mark.parametrize("g", [H1, ENGEL])
def test_solve_heat_random_rhs_exact(g):
    rng = np.random.default_rng(2)
    for d in range(0, 7):
        basis = PolySpaceBasis(g, d, homogeneous=True).polys()
        Q = sum((b * Fraction(int(rng.integers(-9, 10)), int(rng.integers(1, 5))) for b in basis), GradedPoly(g.spacetime_weights))
        P = solve_heat_polynomial(g, Q)
        assert heat_apply(g, P) == Q


def test_solve_heat_nonidentity_matrix():
    a = [[Fraction(2), Fraction(1, 2)], [Fraction(1, 2), Fraction(1)]]
    for m in PolySpaceBasis(ENGEL, 3, True).polys():
        assert heat_apply(ENGEL, solve_heat_polynomial(ENGEL, m, a), a) == m


def test_solve_heat_rejects_inhomogeneous():
    with pytest.raises(ValueError):
        solve_heat_polynomial(H1, v(H1, 0) + 1)


def test_caloric_taylor_check():
    x1 = v(H1, 0)
    rep = caloric_taylor_check(H1, x1, 3)
    assert all(c.caloric for c in rep)
    # kernel combination of several degrees
    u = sum(caloric_basis(H1, 2), GradedPoly(H1.spacetime_weights)) + caloric_basis(H1, 4)[-1]
    assert all(c.caloric for c in caloric_taylor_check(H1, u, 4))
    a = [[Fraction(3), Fraction(0)], [Fraction(0), Fraction(1)]]
    t = v(H1, 3)
    u3 = t + x1 * x1 / 6  # H = dt - 3 X1^2 - X2^2 annihilates this
    assert all(c.caloric for c in caloric_taylor_check(H1, u3, 2, a))
    bad = caloric_taylor_check(H1, x1 * x1, 2)
    assert not bad[2].caloric and bad[2].heat == -2


def test_empirical_taylor_polynomial_gives_zero():
    p = v(H1, 0) ** 2 + v(H1, 3)
    rep = empirical_taylor_constant(H1, p, 2, [0.5, 0.25, 0.125], seed=0, n_samples=500)
    assert rep.ratios == (0.0, 0.0, 0.0)


def test_empirical_taylor_gauge_power_bounded():
    x1, x2, x3, t = syms(H1)
    k, a0 = 1, 0.5
    n4 = x1**4 + x2**4 + x3**2 + t**2
    s = SymbolicFunction(H1, n4 ** sp.Rational(2 * (k + a0), 8) * 1)
    rep = empirical_taylor_constant(H1, s, k, [2.0**-j for j in range(1, 7)], seed=1, n_samples=1500)
    assert min(rep.ratios) > 0
    assert rep.trend_factor < 3


def test_empirical_smooth_family_bounded():
    x1, x2, x3, x4, t = syms(ENGEL)
    s = SymbolicFunction(ENGEL, sp.exp(x1 - x2) * sp.cos(x3) + sp.sin(x4) + t * x1)
    rep = empirical_taylor_constant(ENGEL, s, 2, [2.0**-j for j in range(1, 9)], seed=2, n_samples=1500)
    assert rep.trend_factor < 3
    assert not rep.monotone_blowup


def test_psti_k1_equals_mean_value_quotient():
    x1, x2, x3, t = syms(H1)
    f = SymbolicFunction(H1, sp.exp(x1) * sp.sin(x2 + 1) + x3 * t)
    radii = [2.0**-j for j in range(1, 6)]
    rep = empirical_taylor_constant(H1, f, 1, radii, seed=3, n_samples=1000)
    P1 = taylor_polynomial(H1, f, 1).to_float()
    g_fn = f - P1.to_sympy(f.symbols)
    mvq = mean_value_quotient(H1, g_fn, radii, seed=3, n_samples=1000)
    assert np.allclose(rep.ratios, mvq.ratios, rtol=1e-9)
