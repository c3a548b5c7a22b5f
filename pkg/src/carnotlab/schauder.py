"""Pointwise decay experiments at the origin by dyadic zoom.

Each radius ``r`` gets its own solve on a box just covering ``Q_{box r}``
with spacing ``r / cells``, so every level is the same grid up to the
dilation ``delta_r``.  Boundary and initial data come from the manufactured
solution at every level.  Best-approximation errors are computed on the grid
nodes themselves, which avoids interpolation errors of order ``h^2`` that
would otherwise swamp ``r^{d + alpha}`` at small radii.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .calculus import DerivativeMultiIndex, apply_derivative
from .grid import Grid, GridFunction, lattice_spacings
from .group import CarnotGroup, Cylinder, SpaceTimePoint, parabolic_gauge
from .norms import (
    CampanatoReport,
    NormQuery,
    SampleCloud,
    _time_weights,
    best_polynomial,
    decay_slope,
    sobolev_norm,
)
from .poly import GradedPoly
from .solver import (
    CoefficientField,
    ManufacturedProblem,
    SolveConfig,
    explicit_step_bound,
    solve,
)

DEFAULT_ZOOM_RADII = tuple(2.0**-j for j in range(1, 6))


@dataclass
class ZoomLevel:
    r: float
    solution: GridFunction  # stored on [-r^2, r^2]
    n_steps: int
    seconds: float


def zoom_grid(g: CarnotGroup, r: float, cells: int = 4, box: float = 1.25, margin: int = 2) -> Grid:
    """Lattice box covering ``Q_{box r}`` plus ``margin`` cells, spacing ``r / cells``."""
    sp = lattice_spacings(g, r / cells)
    half = [(box * r) ** w + margin * s for w, s in zip(g.weights, sp)]
    return Grid.symmetric(half, sp, g.name)


def zoom_solve(
    g: CarnotGroup,
    problem: ManufacturedProblem,
    radii=DEFAULT_ZOOM_RADII,
    cells: int = 4,
    box: float = 1.25,
    levels: int = 16,
    cfg: SolveConfig | None = None,
) -> list[ZoomLevel]:
    """Solve ``H_A u = f`` once per radius on ``[-(box r)^2, r^2]``.

    The last ``levels + 1`` stored time levels are equally spaced over
    ``[-r^2, r^2]`` (``levels`` even puts one at ``t = 0``).
    """
    if levels < 2 or levels % 2:
        raise ValueError("levels must be an even integer >= 2")
    cfg = cfg or SolveConfig(cfl=1.0)
    out = []
    for r in radii:
        t_start = time.perf_counter()
        grid = zoom_grid(g, r, cells, box)
        pre = (-((box * r) ** 2), -(r**2))
        win = (-(r**2), r**2)
        tau = explicit_step_bound(g, problem.A, grid, (pre[0], win[1]), cfg)
        n_pre = max(1, math.ceil((pre[1] - pre[0]) / tau))
        k = max(1, math.ceil((win[1] - win[0]) / (levels * tau)))
        first = solve(g, problem.f, problem.A, grid, pre,
                      _with(cfg, n_steps=n_pre, store_every=1 << 30), initial=problem.u, boundary=problem.u)
        sol = solve(g, problem.f, problem.A, grid, win, _with(cfg, n_steps=levels * k, store_every=k),
                    initial=first.values[-1].ravel(), boundary=problem.u)
        sol.meta.update({"r": r, "cells": cells, "box": box})
        out.append(ZoomLevel(r, sol, n_pre + levels * k, time.perf_counter() - t_start))
    return out


def _with(cfg: SolveConfig, **kw) -> SolveConfig:
    d = cfg.to_dict()
    d.update(kw)
    return SolveConfig(**d)


def node_cloud(g: CarnotGroup, u: GridFunction, cyl: Cylinder, subtract=None) -> tuple[SampleCloud, np.ndarray]:
    """Grid nodes inside ``cyl`` with quadrature weights, plus the values of ``u`` there.

    Weights are cell volume times the clipped time cell, so end levels count
    half.  ``subtract`` (a polynomial or callable) is removed from the values.
    """
    c = cyl.center.as_array()
    r = float(cyl.radius)
    nodes = u.grid.nodes()
    ball = g.distance(nodes, c[:-1]) < r
    tw = _time_weights(u.times, c[-1] - r**2, c[-1] + r**2)
    lv = np.flatnonzero(tw > 0)
    xs = nodes[ball]
    pts = np.concatenate(
        [np.concatenate([xs, np.full((len(xs), 1), u.times[i])], axis=1) for i in lv]
    )
    vals = np.concatenate([u.values[i].ravel()[ball] for i in lv])
    if subtract is not None:
        vals = vals - (subtract.evaluate(pts) if isinstance(subtract, GradedPoly) else np.asarray(subtract(pts)))
    w = np.concatenate([np.full(len(xs), u.grid.cell_volume * tw[i]) for i in lv])
    inv = g.inverse(c[:-1])
    local = np.empty_like(pts)
    local[:, :-1] = g.dilate(1.0 / r, g.multiply(pts[:, :-1], inv))
    local[:, -1] = (pts[:, -1] - c[-1]) / r**2
    return SampleCloud(g, cyl, pts, local, w, 0, "grid"), vals


def first_order_taylor(g: CarnotGroup, u: GridFunction) -> GradedPoly:
    """``u(0,0) + sum_i X_i u(0,0) x_i`` from grid differences (origin must be a node at a stored level)."""
    W = g.spacetime_weights
    it = int(np.argmin(np.abs(u.times)))
    if abs(u.times[it]) > 1e-12:
        raise ValueError("no stored time level at t = 0")
    centre = tuple(n // 2 for n in u.grid.shape)
    if np.any(np.abs(np.array(u.grid.lower) + np.array(centre) * np.array(u.grid.spacing)) > 1e-12):
        raise ValueError("origin is not a grid node")
    P = GradedPoly.constant(W, float(u.values[it][centre]))
    one = GridFunction(u.grid, u.times[it : it + 1], u.values[it : it + 1])
    for i in range(g.m1):
        d = apply_derivative(g, one, DerivativeMultiIndex((i,))).values[0][centre]
        P = P + GradedPoly.variable(W, i) * float(d)
    return P


def zoom_campanato(
    g: CarnotGroup, levels: list[ZoomLevel], d: int, alpha: float, p: float = math.inf, subtract=None
) -> CampanatoReport:
    """Best ``P_d`` errors at the origin, one radius per zoom level."""
    q = NormQuery(p, alpha, d, SpaceTimePoint.origin(g), tuple(lv.r for lv in levels))
    errors, polys, gaps, vols = [], [], [], []
    for lv in levels:
        cloud, vals = node_cloud(g, lv.solution, Cylinder(q.center, lv.r), subtract)
        fit = best_polynomial(cloud, vals, d, p)
        errors.append(float(fit.error))
        polys.append(fit.poly)
        gaps.append(fit.surrogate_gap)
        vols.append(cloud.volume)
    quots = tuple(e * r**-alpha for e, r in zip(errors, q.radii))
    return CampanatoReport(q, q.radii, tuple(errors), quots, polys, tuple(gaps), tuple(vols))


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------


@dataclass
class DecayResult:
    target: float
    slope: float
    stderr: float
    report: CampanatoReport
    p_star: GradedPoly | None = None
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for r, e in zip(self.report.radii, self.report.errors):
            out.append({"r": r, "error": e, "scaled": e / r**self.target, "slope": self.slope})
        return out


def schauder_rate(
    g: CarnotGroup,
    problem: ManufacturedProblem,
    d: int = 2,
    alpha: float = 0.5,
    radii=DEFAULT_ZOOM_RADII,
    p: float = math.inf,
    cells: int = 4,
    levels: int = 16,
    cfg: SolveConfig | None = None,
) -> DecayResult:
    """Slope of ``inf_P |u_num - P_*  - P|`` over ``P_d`` against ``r`` (expected ``d + alpha``).

    ``P_*`` is the first-order Taylor polynomial of the numerical solution at
    the origin, taken from the finest level.
    """
    t0 = time.perf_counter()
    lv = zoom_solve(g, problem, radii, cells, levels=levels, cfg=cfg)
    p_star = first_order_taylor(g, lv[-1].solution)
    rep = zoom_campanato(g, lv, d, alpha, p, subtract=p_star)
    slope, se = decay_slope(rep)
    sol_err = [float(np.abs(z.solution.values.ravel() - problem.u(z.solution.spacetime_nodes())).max()) for z in lv]
    return DecayResult(d + alpha, slope, se, rep, p_star, time.perf_counter() - t0,
                       {"steps": [x.n_steps for x in lv], "nodes": lv[0].solution.grid.size,
                        "max_solution_error": sol_err})


def power_profile_problem(g: CarnotGroup, A: CoefficientField, beta: float = 2.5, smooth: bool = False):
    """Manufactured ``u* = x1^2 + x1 x2 + x_{m1+1} + 2t + |x1|^beta`` (or a smooth analogue).

    The quadratic part lies in ``P_2`` and the stencil is exact on it;
    ``|x1|^beta`` is homogeneous of degree ``beta`` and not a polynomial, so
    its best-approximation error over ``Q_r`` scales exactly like ``r^beta``.
    The smooth variant replaces it with ``sin(x1)^3 + x1 x2 t``.
    """
    import sympy as sp

    from .calculus import SymbolicFunction, spacetime_symbols
    from .solver import manufactured_problem

    syms = spacetime_symbols(g.N)
    x1, x2, t = syms[0], syms[1], syms[-1]
    base = x1**2 + x1 * x2 + 2 * t + (syms[g.m1] if g.N > g.m1 else 0)
    extra = sp.sin(x1) ** 3 + x1 * x2 * t if smooth else sp.Abs(x1) ** sp.nsimplify(beta)
    return manufactured_problem(g, SymbolicFunction(g, base + extra, syms), A)


def sobolev_decay(
    g: CarnotGroup,
    problem: ManufacturedProblem,
    d: int,
    alpha: float,
    p: float,
    radii=DEFAULT_ZOOM_RADII,
    cells: int = 4,
    levels: int = 16,
    cfg: SolveConfig | None = None,
) -> dict:
    """``sum_k r^k ||X^I D_t^l u||_{L^p(Q_r)}`` and ``||f||_{L^p(Q_r)}`` per radius.

    Given ``||f||_{L^p(Q_r)} <= gamma r^{d - 2 + alpha + (Q+2)/p}`` the
    solution side should decay like ``r^{d + alpha + (Q+2)/p}``; the
    returned slopes and the ratio ``lhs / (gamma r^{...})`` test that.
    """
    lv = zoom_solve(g, problem, radii, cells, levels=levels, cfg=cfg)
    Qp = (g.Q + 2) / p
    lhs, fn = [], []
    for z in lv:
        cyl = Cylinder(SpaceTimePoint.origin(g), z.r)
        rep = sobolev_norm(g, z.solution, p, cyl)
        lhs.append(sum(z.r**k * v for key, (k, v) in rep.terms.items() if key != "u (time sum)"))
        fvals = problem.f(z.solution.spacetime_nodes()).reshape(z.solution.values.shape)
        f_gf = GridFunction(z.solution.grid, z.solution.times, fvals)
        from .solver import _lp_on_cylinder

        fn.append(_lp_on_cylinder(g, f_gf.values, f_gf, cyl, p, 2))
    radii = tuple(z.r for z in lv)
    out = {"radii": radii, "lhs": tuple(lhs), "f_norm": tuple(fn),
           "lhs_target": d + alpha + Qp, "f_target": d - 2 + alpha + Qp}
    if all(v > 0 for v in lhs):
        out["lhs_slope"] = decay_slope((radii, lhs))[0]
    if all(v > 0 for v in fn):
        out["f_slope"] = decay_slope((radii, fn))[0]
        gamma = max(v / r ** out["f_target"] for v, r in zip(fn, radii))
        out["gamma"] = gamma
        out["ratios"] = tuple(v / (gamma * r ** out["lhs_target"]) for v, r in zip(lhs, radii))
    return out


def approximation_constant(
    g: CarnotGroup, levels: list[ZoomLevel], P: GradedPoly, order: float, inner: float = 0.5
) -> tuple[float, list[float]]:
    """``max |u - P| / |(x,t)|^order`` over the nodes of each level with ``inner r <= |(x,t)| < r``.

    Each level only resolves its own shell; together the shells cover
    ``[inner r_min, r_max)``.  Returns the overall maximum and the per-level
    maxima; a bounded sequence indicates ``|u - P| <= C |(x,t)|^order``.
    """
    per = []
    for z in levels:
        cloud, vals = node_cloud(g, z.solution, Cylinder(SpaceTimePoint.origin(g), z.r), P)
        rho = parabolic_gauge(g, cloud.points)
        keep = (rho >= inner * z.r) & (rho > 0)
        per.append(float(np.max(np.abs(vals[keep]) / rho[keep] ** order)) if keep.any() else 0.0)
    return max(per), per
