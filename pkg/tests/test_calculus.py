from fractions import Fraction

import numpy as np
import pytest
import sympy as sp

from carnotlab import group as G
from carnotlab.calculus import (
    DerivativeMultiIndex as D,
    StencilError,
    SymbolicFunction,
    apply_derivative,
    check_hormander,
    commutator,
    horizontal_fields,
    left_invariant_fields,
)
from carnotlab.grid import Grid, GridFunction
from carnotlab.poly import GradedPoly


def st_poly(g, terms):
    return GradedPoly(g.spacetime_weights, terms)


def var(g, j):
    return GradedPoly.variable(g.spacetime_weights, j)


def test_engel_fields_match_printed():
    e = G.engel()
    X1, X2, X3, X4 = left_invariant_fields(e)
    x1, x2, x3 = var(e, 0), var(e, 1), var(e, 2)
    one = GradedPoly.constant(e.spacetime_weights, 1)
    zero = GradedPoly.zero(e.spacetime_weights)
    assert X1.coeffs == (one, zero, -x2 / 2, -(x3 / 2 + x1 * x2 / 12))
    assert X2.coeffs == (zero, one, x1 / 2, x1 * x1 / 12)
    assert X3.coeffs == (zero, zero, one, x1 / 2)
    assert X4.coeffs == (zero, zero, zero, one)


def test_heisenberg_field_conventions():
    h = G.heisenberg(1)  # fields convention
    X1, X2 = horizontal_fields(h)
    x1, x2 = var(h, 0), var(h, 1)
    assert X1.coeffs[2] == -x2 / 2
    assert X2.coeffs[2] == x1 / 2
    hp = G.heisenberg(1, "printed")
    Y1, Y2 = horizontal_fields(hp)
    assert Y1.coeffs[2] == 2 * x2
    assert Y2.coeffs[2] == -2 * x1


def test_abelian_fields_are_partials():
    a = G.abelian(3)
    for k, f in enumerate(horizontal_fields(a)):
        for j, b in enumerate(f.coeffs):
            assert b == (1 if j == k else 0)


def test_engel_commutator_table():
    e = G.engel()
    X = left_invariant_fields(e)
    assert commutator(X[0], X[1]) == X[2]
    assert commutator(X[0], X[2]) == X[3]
    for a in range(4):
        for b in range(4):
            if {a, b} in ({0, 1}, {0, 2}):
                continue
            assert commutator(X[a], X[b]).is_zero()


def test_commutator_antisymmetric():
    h = G.heisenberg(2)
    X = horizontal_fields(h)
    assert commutator(X[1], X[1]).is_zero()
    assert commutator(X[0], X[2]) == -1 * commutator(X[2], X[0])


def test_heisenberg_bracket_gives_vertical():
    h = G.heisenberg(1)
    X1, X2, T = left_invariant_fields(h)
    c = commutator(X1, X2)
    assert c == T
    assert c.layer == 2
    assert T.coeffs[2] == 1


def test_bracket_grading_matches_structure_constants():
    g = G.random_step3(5, m3=2)
    X = left_invariant_fields(g)
    for a, b, c, coeff in g.spec.brackets:
        pass
    table = g.spec.bracket_table()
    for a in range(g.N):
        for b in range(g.N):
            want = None
            for c, v in table.get((a, b), {}).items():
                term = X[c] * v
                want = term if want is None else want + term
            got = commutator(X[a], X[b])
            if want is None:
                assert got.is_zero()
            else:
                assert got == want


def test_left_invariance_symbolic():
    # (X f)(p . q) as a function of q equals X applied to q -> f(p . q)
    e = G.engel()
    W = e.spacetime_weights
    f = var(e, 0) ** 2 * var(e, 3) + var(e, 2) * var(e, 1) + var(e, 4) * var(e, 0)
    p = (Fraction(1, 2), Fraction(-2), Fraction(3), Fraction(1, 3))
    lt = [q.embed(W, list(range(4))) for q in e.left_translation_poly(p)] + [var(e, 4)]
    for X in horizontal_fields(e):
        lhs = X.apply(f).compose(lt)
        rhs = X.apply(f.compose(lt))
        assert lhs == rhs


def test_homogeneity_of_fields():
    e = G.engel()
    W = e.spacetime_weights
    p = GradedPoly(W, {(2, 0, 1, 0, 0): 1, (0, 1, 0, 1, 0): 3, (0, 0, 1, 0, 1): -2, (0, 0, 0, 0, 0): 0})
    assert p.is_homogeneous(4)
    for X in horizontal_fields(e):
        r = X.apply(p)
        assert r.is_zero() or r.is_homogeneous(3)
    assert p.diff(4).is_homogeneous(2)


def test_hormander_depths():
    r1 = check_hormander(G.heisenberg(1))
    assert r1.satisfied and r1.spanning_depth == 2 and r1.rank_by_depth == (2, 3)
    r2 = check_hormander(G.engel())
    assert r2.satisfied and r2.spanning_depth == 3 and r2.rank_by_depth == (2, 3, 4)
    r3 = check_hormander(G.upper_triangular(4))
    assert r3.spanning_depth == 3


def test_hormander_degenerate():
    spec = G.StratificationSpec.from_brackets((2, 2), [(0, 1, 2, 1)])
    g = G.CarnotGroup(spec, tuple(G.bch_tables(spec)))
    rep = check_hormander(g)
    assert not rep.satisfied
    assert rep.missing == ("x4 (layer 2)",)


def test_apply_derivative_constant_and_commutator():
    h = G.heisenberg(1)
    one = GradedPoly.constant(h.spacetime_weights, 5)
    assert apply_derivative(h, one, D((0,))).is_zero()
    t3 = var(h, 2)  # the vertical coordinate
    a = apply_derivative(h, t3, D((0, 1)))
    b = apply_derivative(h, t3, D((1, 0)))
    T = left_invariant_fields(h)[2]
    assert a - b == T.apply(t3)
    assert a - b == 1


def test_apply_derivative_time():
    h = G.heisenberg(1)
    t = var(h, 3)
    assert apply_derivative(h, t * t, D((), 1)) == 2 * t
    assert D((0, 1), 1).order == 4


def test_multiindex_enumeration():
    assert len(D.all_of_order(2, 2)) == 4 + 1
    assert len(D.all_up_to(2, 3)) == 1 + 2 + 5 + (8 + 2)
    with pytest.raises(ValueError):
        D((2,)).validate(2)


def test_symbolic_function_matches_poly():
    e = G.engel()
    p = var(e, 0) ** 3 * var(e, 1) + var(e, 3) * var(e, 0) - var(e, 2) * var(e, 4)
    s = SymbolicFunction.from_poly(e, p)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(30, 5))
    for d in D.all_up_to(2, 3):
        got = s.derivative(d).evaluate(pts)
        want = apply_derivative(e, p, d).evaluate(pts)
        assert np.allclose(got, want, atol=1e-12)


def test_symbolic_abs_power_drops_delta():
    h = G.heisenberg(1)
    x1 = sp.Symbol("x1", real=True)
    s = SymbolicFunction(h, sp.Abs(x1) ** sp.Rational(5, 2))
    d2 = s.derivative(D((0, 0)))
    pts = np.array([[0.25, 0, 0, 0], [0.0, 0.1, 0.0, 0.0], [-1.0, 0, 0, 0]])
    assert np.allclose(d2(pts), [15 / 4 * 0.5, 0.0, 15 / 4])


def test_value_at_removable_singularity():
    h = G.heisenberg(1)
    x1, x2, x3, t = sp.symbols("x1 x2 x3 t", real=True)
    n4 = x1**4 + x2**4 + x3**2 + t**2
    s = SymbolicFunction(h, n4 ** sp.Rational(3, 8))  # degree 1.5
    d = s.derivative(D((0,)))
    assert not np.isfinite(d(np.zeros((1, 4)))[0])
    assert abs(d.value_at(np.zeros(4))) < 1e-3


def _grid_error(g, p, d, h, expanded=False):
    # composed one-sided differences are first order in the outer two node
    # layers, so the error is measured on the inner box |x_k| <= 0.3
    grid = Grid.symmetric([0.5] * g.N, [h] * g.N)
    u = GridFunction.from_callable(grid, [0.0], p.evaluate)
    du = apply_derivative(g, u, d, expanded=expanded)
    nodes = grid.nodes()
    pts = np.concatenate([nodes, np.zeros((grid.size, 1))], axis=1)
    exact = apply_derivative(g, p, d).evaluate(pts)
    inner = np.all(np.abs(nodes) <= 0.3 + 1e-12, axis=1)
    return np.max(np.abs(du.values[0].ravel() - exact)[inner])


@pytest.mark.parametrize("expanded", [False, True])
def test_grid_derivative_second_order(expanded):
    h = G.heisenberg(1)
    x1, x2, x3 = var(h, 0), var(h, 1), var(h, 2)
    p = x1**5 + x1 * x2 * x3**2 + x3**3 + 2 * x2**4 * x1
    errs = [_grid_error(h, p, D((0, 1)), hh, expanded) for hh in (1 / 8, 1 / 16, 1 / 32)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_grid_derivative_exact_on_quadratics():
    e = G.engel()
    x1, x2 = var(e, 0), var(e, 1)
    p = x1 * x2 + 3 * x1**2 - x2
    err = _grid_error(e, p, D((0,)), 1 / 8)
    assert err < 1e-12


def test_expanded_and_composed_agree_in_limit():
    h = G.heisenberg(1)
    x1, x2, x3 = var(h, 0), var(h, 1), var(h, 2)
    p = x1**2 * x3 + x2**4 + x3 * x2
    for i, j in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        e1 = _grid_error(h, p, D((i, j)), 1 / 32, expanded=False)
        e2 = _grid_error(h, p, D((i, j)), 1 / 32, expanded=True)
        assert e1 < 0.05 and e2 < 0.05


def test_grid_time_derivative():
    h = G.heisenberg(1)
    grid = Grid.symmetric([0.25] * 3, [0.125, 0.125, 0.0625])
    times = np.linspace(0, 0.2, 9)
    u = GridFunction.from_callable(grid, times, lambda p: p[:, 3] ** 2 + p[:, 0])
    du = apply_derivative(h, u, D((), 1))
    assert np.allclose(du.values, 2 * times[:, None, None, None] * np.ones(grid.shape))


def test_stencil_out_of_domain():
    h = G.heisenberg(1)
    grid = Grid((0.0, 0.0, 0.0), (0.1, 0.1, 0.1), (2, 5, 5))
    u = GridFunction(grid, [0.0], np.zeros((1, 2, 5, 5)))
    with pytest.raises(StencilError):
        apply_derivative(h, u, D((0,)))
