"""Discrete heat kernels and fitted Gaussian bounds.

The kernel of ``d_t - sum a_ij X_i X_j`` with constant ``A0`` is obtained by
evolving a normalised discrete delta with zero far-field values.  For a
general ``A0 = B B^T`` the horizontal map ``B`` extends to a graded Lie
algebra automorphism ``phi`` (when the bracket relations allow it) and
``Gamma_A(x, t) = |det phi|^{-1} Gamma_I(phi^{-1} x, t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .grid import Grid, GridFunction, lattice_spacings
from .group import CarnotGroup
from .solver import CoefficientField, SolveConfig, decompose_directions, solve


class MassLeakError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# coefficient rotation
# --------------------------------------------------------------------------


def _bracket_matrix(g: CarnotGroup) -> np.ndarray:
    """``C[a, b, c]``: the ``e_c`` component of ``[e_a, e_b]``."""
    n = g.N
    C = np.zeros((n, n, n))
    for (a, b), comps in g.spec.bracket_table().items():
        for c, v in comps.items():
            C[a, b, c] = float(v)
    return C


def horizontal_automorphism(g: CarnotGroup, B, tol: float = 1e-10) -> np.ndarray:
    """Matrix of the graded automorphism equal to ``B`` on the first layer.

    Column ``k`` of ``B`` is the image of ``e_k``.  Higher layers follow from
    ``phi[x, y] = [phi x, phi y]``; raises ``ValueError`` when no such
    automorphism exists (e.g. Engel with a generic ``B``).  In exponential
    coordinates the same matrix is a group automorphism.
    """
    B = np.asarray(B, dtype=float)
    m1, n = g.m1, g.N
    if B.shape != (m1, m1):
        raise ValueError(f"B must be {m1}x{m1}")
    if abs(np.linalg.det(B)) < tol:
        raise ValueError("B must be invertible")
    C = _bracket_matrix(g)
    phi = np.zeros((n, n))
    phi[:m1, :m1] = B
    layers = np.cumsum((0,) + g.spec.layer_dims)
    for k in range(1, g.step):
        lo, hi = layers[k], layers[k + 1]
        src, img = [], []
        for a in range(m1):
            for b in range(layers[k - 1], layers[k]):
                src.append(C[a, b, lo:hi])
                img.append(np.einsum("i,j,ijc->c", phi[:, a], phi[:, b], C)[lo:hi])
        S, T = np.array(src), np.array(img)
        X, *_ = np.linalg.lstsq(S, T, rcond=None)
        phi[lo:hi, lo:hi] = X.T
    # homomorphism check on the basis
    for a in range(n):
        for b in range(n):
            lhs = phi @ C[a, b]
            rhs = np.einsum("i,j,ijc->c", phi[:, a], phi[:, b], C)
            if np.max(np.abs(lhs - rhs)) > tol * max(1.0, np.abs(phi).max() ** 2):
                raise ValueError("B does not extend to an automorphism of this algebra")
    return phi


def coefficient_rotation(g: CarnotGroup, A0) -> np.ndarray:
    """Automorphism carrying ``sum X_k^2`` to ``sum a_ij X_i X_j`` (``B`` = Cholesky factor of ``A0``)."""
    return horizontal_automorphism(g, np.linalg.cholesky(np.asarray(A0, dtype=float)))


def transported_kernel(g: CarnotGroup, kernel_I: GridFunction, phi: np.ndarray):
    """``(x, t) -> |det phi|^{-1} Gamma_I(phi^{-1} x, t)`` evaluated by interpolation."""
    inv = np.linalg.inv(phi)
    jac = abs(np.linalg.det(phi))

    def gamma(pts):
        pts = np.asarray(pts, dtype=float)
        q = pts.copy()
        q[:, :-1] = pts[:, :-1] @ inv.T
        gr = kernel_I.grid
        inside = gr.contains(q[:, :-1])
        q[:, :-1] = np.clip(q[:, :-1], gr.lower, gr.upper)
        out = np.zeros(len(pts))
        out[inside] = kernel_I.evaluate(q[inside]) / jac
        return out

    return gamma


# --------------------------------------------------------------------------
# kernel evolution
# --------------------------------------------------------------------------


@dataclass
class GaussianFit:
    C: float
    b: float
    n_nodes: int
    n_hull: int

    def bound(self, Q: int, d2, t) -> np.ndarray:
        return self.C * np.power(t, -Q / 2) * np.exp(-self.b * np.asarray(d2) / t)


@dataclass
class KernelEstimate:
    group: str
    A0: np.ndarray
    h: float
    family: GridFunction  # stored at t = 0 and each requested time
    masses: np.ndarray  # after every step
    max_step_change: float
    total_leak: float
    min_value: float
    route: str
    mix: float = 0.0
    fit: GaussianFit | None = None
    pointwise_C: float | None = None
    pointwise_max_ratio: float | None = None

    def summary(self) -> dict:
        return {
            "h": self.h,
            "route": self.route,
        "mix": self.mix,
            "min_value": self.min_value,
            "max_step_mass_change": self.max_step_change,
            "total_leak": self.total_leak,
            "C": None if self.fit is None else self.fit.C,
            "b": None if self.fit is None else self.fit.b,
            "pointwise_C": self.pointwise_C,
            "pointwise_max_ratio": self.pointwise_max_ratio,
        }


# half-widths, in units of t^{w/2}, outside which the identity kernel on H^1
# carries less than about 1e-6 of its mass (measured); weight 3 is a guess
KERNEL_REACH = {1: 3.0, 2: 4.7, 3: 7.0}


def kernel_box(g: CarnotGroup, t_max: float, enlarge: float = 3.0) -> list[float]:
    """Half extents: the kernel's essential support at ``t_max`` enlarged by ``enlarge``."""
    return [enlarge * KERNEL_REACH.get(w, 7.0) * t_max ** (w / 2) for w in g.weights]


def heat_kernel_estimate(
    g: CarnotGroup,
    A0=None,
    t_values=(1.0,),
    h: float = 0.25,
    half_extent=None,
    enlarge: float = 3.0,
    cfl: float = 1.0,
    floor: float = 1e-3,
    leak_tol: float = 1e-6,
    fit: bool = True,
    route: str = "rotate",
    mix: float = 0.5,
) -> KernelEstimate:
    """Evolve ``delta_0 / cell volume`` and record mass, positivity and the fitted bound.

    ``t_values`` must be increasing and positive.  By default the identity
    kernel is computed and transported by :func:`coefficient_rotation`;
    ``route="direct"`` steps a diagonally dominant ``A0`` itself and
    ``"auto"`` picks direct when possible.  ``mix`` spreads weight onto the diagonal
    directions (see :func:`~carnotlab.solver.decompose_directions`), which
    keeps point values free of lattice parity oscillation.  The discrete kernel depends on ``h / sqrt(t)``
    only, so resolutions are compared at fixed ``t``.  Raises
    :class:`MassLeakError` when the lost mass exceeds ``leak_tol``.
    """
    A0 = np.eye(g.m1) if A0 is None else np.asarray(A0, dtype=float)
    t_values = [float(t) for t in t_values]
    if not t_values or t_values[0] <= 0 or any(b <= a for a, b in zip(t_values, t_values[1:])):
        raise ValueError("t_values must be positive and increasing")
    if route not in ("auto", "direct", "rotate"):
        raise ValueError(f"unknown route {route!r}")
    if route == "auto":
        try:
            decompose_directions(A0[None], g.m1)
            route = "direct"
        except ValueError:
            route = "rotate"
    A_run = A0 if route == "direct" else np.eye(g.m1)
    half = half_extent or kernel_box(g, t_values[-1], enlarge)
    grid = Grid.symmetric(half, lattice_spacings(g, h), g.name)
    u = np.zeros(grid.size)
    origin = np.ravel_multi_index(tuple(s // 2 for s in grid.shape), grid.shape)
    u[origin] = 1.0 / grid.cell_volume
    A = CoefficientField.constant_matrix(A_run)
    cfg = SolveConfig(cfl=cfl, boundary="zero", store_every=1 << 30, diagonal_mix=mix)
    masses = []

    def track(step, t, vals):
        masses.append(float(vals.sum() * grid.cell_volume))

    levels, t_prev = [u.reshape(grid.shape).copy()], 0.0
    for t in t_values:
        sol = solve(g, None, A, grid, (t_prev, t), cfg, initial=u, callback=track)
        u = sol.values[-1].ravel().copy()
        levels.append(sol.values[-1])
        t_prev = t
    family = GridFunction(grid, np.array([0.0] + t_values), np.stack(levels), {"route": route, "h": h})
    masses = np.array(masses)
    steps = np.diff(np.concatenate([[1.0], masses]))
    leak = 1.0 - masses[-1]
    if leak > leak_tol:
        raise MassLeakError(f"kernel lost {leak:.3e} of its mass (limit {leak_tol:.1e}); enlarge the box")
    est = KernelEstimate(
        g.name, A0, h, family, masses, float(np.abs(steps).max()), float(leak),
        float(family.values.min()), route, mix,
    )
    if route == "rotate" and not np.array_equal(A0, np.eye(g.m1)):
        est.family = _transport_family(g, family, coefficient_rotation(g, A0))
    if fit:
        est.fit = gaussian_fit(g, est.family, floor)
        est.pointwise_C = pointwise_constant(est.fit, g.Q)
        est.pointwise_max_ratio = pointwise_ratio(g, est.family, est.pointwise_C)
    return est


def _transport_family(g: CarnotGroup, family: GridFunction, phi: np.ndarray) -> GridFunction:
    gamma = transported_kernel(g, family, phi)
    nodes = family.grid.nodes()
    vals = [family.values[0]]
    for t in family.times[1:]:
        pts = np.concatenate([nodes, np.full((len(nodes), 1), t)], axis=1)
        vals.append(gamma(pts).reshape(family.grid.shape))
    return GridFunction(family.grid, family.times, np.stack(vals), dict(family.meta, route="rotate"))


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


def _upper_hull(s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the upper convex hull of the points ``(s, y)``, left to right."""
    order = np.lexsort((-y, s))
    hull: list[int] = []
    last_s = None
    for i in order:
        if s[i] == last_s:
            continue  # keep the highest point per abscissa
        last_s = s[i]
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (s[b] - s[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (s[i] - s[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(int(i))
    return np.array(hull)


def gaussian_fit(g: CarnotGroup, family: GridFunction, floor: float = 1e-3) -> GaussianFit:
    """Tightest ``Gamma <= C t^{-Q/2} exp(-b d(x,0)^2 / t)`` in the volume-averaged sense.

    Minimises the mean log-gap over nodes with ``Gamma`` above ``floor`` times its peak
    at every stored positive time, subject to the bound holding at all of
    them.  Only the upper hull of ``(d^2/t, log(Gamma t^{Q/2}))`` can bind, so
    the linear program runs on its vertices.
    """
    d2 = g.gauge_norm(family.grid.nodes()) ** 2
    S, Y = [], []
    for t, vals in zip(family.times, family.values):
        if t <= 0:
            continue
        v = vals.ravel()
        keep = v > floor * v.max()
        S.append(d2[keep] / t)
        Y.append(np.log(v[keep]) + 0.5 * g.Q * math.log(t))
    s, y = np.concatenate(S), np.concatenate(Y)
    hull = _upper_hull(s, y)
    s_bar = float(s.mean())
    # variables (log C, b): minimise log C - b * s_bar subject to log C - b s_i >= y_i
    res = linprog(
        c=[1.0, -s_bar],
        A_ub=np.column_stack([-np.ones(len(hull)), s[hull]]),
        b_ub=-y[hull],
        bounds=[(None, None), (0, None)],
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"Gaussian fit failed: {res.message}")
    logC, b = res.x
    return GaussianFit(float(math.exp(logC)), float(b), int(len(s)), int(len(hull)))


def pointwise_constant(fit: GaussianFit, Q: int) -> float:
    """``C_Q`` with ``C t^{-Q/2} e^{-b d^2/t} <= C_Q / |(x,t)|^Q`` where ``|(x,t)|^2 = d^2 + t``.

    With ``s = d^2/t`` the ratio is ``C (1 + s)^{Q/2} e^{-b s}``, maximal at
    ``s = Q / (2b) - 1`` (or ``s = 0``).
    """
    if fit.b <= 0:
        return math.inf
    s = max(0.0, Q / (2 * fit.b) - 1.0)
    return fit.C * (1 + s) ** (Q / 2) * math.exp(-fit.b * s)


def pointwise_ratio(g: CarnotGroup, family: GridFunction, C_Q: float) -> float:
    """``max Gamma |(x,t)|^Q / C_Q`` over all nodes at positive stored times (``<= 1`` means the bound holds)."""
    d2 = g.gauge_norm(family.grid.nodes()) ** 2
    worst = 0.0
    for t, vals in zip(family.times, family.values):
        if t <= 0:
            continue
        worst = max(worst, float(np.max(vals.ravel() * (d2 + t) ** (g.Q / 2))))
    return worst / C_Q
