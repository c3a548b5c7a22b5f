import math

import numpy as np
import pytest
import sympy as sp

from carnotlab import group as G
from carnotlab.calculus import SymbolicFunction, spacetime_symbols
from carnotlab.grid import GridFunction
from carnotlab.group import Cylinder, SpaceTimePoint
from carnotlab.norms import best_polynomial
from carnotlab.poly import GradedPoly
from carnotlab.schauder import (
    approximation_constant,
    first_order_taylor,
    node_cloud,
    power_profile_problem,
    schauder_rate,
    sobolev_decay,
    zoom_campanato,
    zoom_grid,
    zoom_solve,
)
from carnotlab.solver import CoefficientField, holder_perturbation, manufactured_problem

H1 = G.heisenberg(1)
RADII = (0.5, 0.25, 0.125)


def test_zoom_grids_are_dilations():
    a, b = zoom_grid(H1, 0.5), zoom_grid(H1, 0.125)
    assert a.shape == b.shape
    assert np.allclose(H1.dilate(0.25, a.nodes()), b.nodes(), atol=1e-15)


def test_node_cloud_volume_and_values():
    g = zoom_grid(H1, 0.5, cells=8)
    times = np.linspace(-0.25, 0.25, 9)
    u = GridFunction.from_callable(g, times, lambda p: 1.0 + 0 * p[:, 0])
    cyl = Cylinder(SpaceTimePoint.origin(H1), 0.5)
    cloud, vals = node_cloud(H1, u, cyl)
    assert np.all(vals == 1.0)
    assert np.all(np.abs(cloud.local[:, :-1]).max(axis=0) < 1 + 1e-12)
    # |Q_r| = r^{Q+2} |Q_1|; a coarse node count should land within 25%
    from carnotlab.norms import unit_cylinder_cloud

    _, vol1 = unit_cylinder_cloud(H1, 200000, 0)
    assert abs(cloud.volume / (0.5**6 * vol1) - 1) < 0.25


def test_exact_polynomial_fit_on_nodes():
    W = H1.spacetime_weights
    x1, x2, x3, t = (GradedPoly.variable(W, j) for j in range(4))
    P = x1 * x1 - 3 * x1 * x2 + x3 + 2 * t + 1
    g = zoom_grid(H1, 0.25)
    u = GridFunction.from_callable(g, np.linspace(-1 / 16, 1 / 16, 5), P.evaluate)
    cloud, vals = node_cloud(H1, u, Cylinder(SpaceTimePoint.origin(H1), 0.25))
    fit = best_polynomial(cloud, vals, 2, 2.0)
    assert fit.error < 1e-12


def test_first_order_taylor_of_sampled_polynomial():
    W = H1.spacetime_weights
    x1, x2, x3, t = (GradedPoly.variable(W, j) for j in range(4))
    P = 2 + 3 * x1 - x2 + x1 * x1 + x3
    g = zoom_grid(H1, 0.5)
    u = GridFunction.from_callable(g, [-0.1, 0.0, 0.1], P.evaluate)
    T = first_order_taylor(H1, u)
    diff = T - (2 + 3 * x1 - x2)
    assert all(abs(float(c)) < 1e-12 for c in diff.terms.values())


def test_quadratic_solution_has_zero_decay_error():
    A = holder_perturbation(H1, 0.5, 0.4, [[0.3, 0.1], [0.1, -0.2]])
    x1, x2, x3, t = spacetime_symbols(3)
    prob = manufactured_problem(H1, SymbolicFunction(H1, x1**2 + x1 * x2 + x3 + 2 * t), A)
    lv = zoom_solve(H1, prob, RADII)
    rep = zoom_campanato(H1, lv, 2, 0.5, 2.0)
    assert max(rep.errors) < 1e-11


def test_holder_profile_rate_and_smooth_control():
    A = holder_perturbation(H1, 0.5, 0.4, [[0.3, 0.1], [0.1, -0.2]])
    res = schauder_rate(H1, power_profile_problem(H1, A, 2.5), radii=RADII)
    assert abs(res.slope - 2.5) < 0.15
    ctrl = schauder_rate(H1, power_profile_problem(H1, A, smooth=True), radii=RADII)
    assert ctrl.slope >= 2.5


def test_sobolev_decay_homogeneous_is_exact():
    x1 = spacetime_symbols(3)[0]
    prob = manufactured_problem(H1, SymbolicFunction(H1, sp.Abs(x1) ** sp.Rational(5, 2)), CoefficientField.identity(2))
    out = sobolev_decay(H1, prob, 2, 0.5, 8.0, radii=RADII)
    assert math.isclose(out["lhs_slope"], out["lhs_target"], abs_tol=1e-6)
    assert math.isclose(out["f_slope"], out["f_target"], abs_tol=1e-6)
    assert np.ptp(out["ratios"]) < 1e-8


def test_sobolev_decay_zero_branch():
    prob = manufactured_problem(H1, SymbolicFunction(H1, 0), CoefficientField.identity(2))
    out = sobolev_decay(H1, prob, 2, 0.5, 8.0, radii=RADII)
    assert all(v == 0 for v in out["lhs"]) and all(v == 0 for v in out["f_norm"])


def test_approximation_constant_bounded():
    x1 = spacetime_symbols(3)[0]
    prob = manufactured_problem(H1, SymbolicFunction(H1, sp.Abs(x1) ** sp.Rational(5, 2)), CoefficientField.identity(2))
    lv = zoom_solve(H1, prob, RADII)
    C, per = approximation_constant(H1, lv, GradedPoly(H1.spacetime_weights), 2.5)
    assert C < 3 and np.ptp(per) < 1e-8 * C
