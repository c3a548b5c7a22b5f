"""Finite-difference solver for ``H_A u = d_t u - sum a_ij X_i X_j u = f``.

The default ``translation`` stencil writes ``sum a_ij X_i X_j`` as
``sum_v c_v X_v^2`` over the directions ``e_i`` and ``e_i +- e_j`` with
``c_v >= 0`` (possible for diagonally dominant ``A``) and replaces each
``X_v^2 u(p)`` by ``(u(p exp(hv)) - 2 u(p) + u(p exp(-hv))) / h^2``.  On a
lattice grid (see :func:`~carnotlab.grid.lattice_spacings`) the translated
points are nodes, so the scheme is positivity preserving under the step
bound and, because right translation permutes the lattice, conserves mass up
to boundary flux.  The ``composed`` stencil instead composes centred first
differences of the fields and works on any grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .calculus import DerivativeMultiIndex, StencilError, SymbolicFunction, apply_derivative, horizontal_fields
from .grid import Grid, GridFunction, default_directions
from .group import CarnotGroup, Cylinder, parabolic_gauge
from .norms import sobolev_norm
from .poly import GradedPoly


class CFLViolation(ValueError):
    pass


class SolverDivergence(RuntimeError):
    pass


class LinearSolveError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# coefficients
# --------------------------------------------------------------------------


@dataclass
class CoefficientField:
    """Symmetric ``m1 x m1`` coefficient matrix ``A(x, t)``.

    Exactly one of ``constant`` (a matrix), ``poly`` (a matrix of
    :class:`GradedPoly` in the space-time variables) or ``fn`` (vectorised
    ``(M, N + 1) -> (M, m1, m1)``) is set.  ``alpha`` and ``modulus`` record
    Hölder-at-origin data: ``|A(x,t) - A(0,0)| <= modulus |(x,t)|^alpha``.
    """

    m1: int
    lam: float
    Lam: float
    constant: np.ndarray | None = None
    poly: tuple | None = None
    fn: Callable | None = None
    alpha: float | None = None
    modulus: float | None = None
    label: str = ""

    def __post_init__(self):
        if sum(x is not None for x in (self.constant, self.poly, self.fn)) != 1:
            raise ValueError("give exactly one of constant, poly, fn")
        if self.constant is not None:
            self.constant = np.asarray(self.constant, dtype=float)
            if self.constant.shape != (self.m1, self.m1):
                raise ValueError(f"constant matrix must be {self.m1}x{self.m1}")
            if not np.array_equal(self.constant, self.constant.T):
                raise ValueError("coefficient matrix must be symmetric")
        if self.poly is not None:
            for i in range(self.m1):
                for j in range(self.m1):
                    if not self.poly[i][j] == self.poly[j][i]:
                        raise ValueError("coefficient matrix must be symmetric")
        if not 0 < self.lam <= self.Lam:
            raise ValueError("need 0 < lambda <= Lambda")

    @classmethod
    def constant_matrix(cls, A0, label: str = "") -> "CoefficientField":
        A0 = np.asarray(A0, dtype=float)
        ev = np.linalg.eigvalsh(A0)
        if ev[0] <= 0:
            raise ValueError("constant coefficients must be positive definite")
        return cls(len(A0), float(ev[0]), float(ev[-1]), constant=A0, label=label or "constant")

    @classmethod
    def identity(cls, m1: int) -> "CoefficientField":
        return cls.constant_matrix(np.eye(m1), "identity")

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def evaluate(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        n = len(pts)
        if self.constant is not None:
            return np.broadcast_to(self.constant, (n, self.m1, self.m1))
        if self.poly is not None:
            out = np.empty((n, self.m1, self.m1))
            for i in range(self.m1):
                for j in range(self.m1):
                    out[:, i, j] = GradedPoly.evaluate(self.poly[i][j], pts) if isinstance(self.poly[i][j], GradedPoly) else float(self.poly[i][j])
            return out
        out = np.asarray(self.fn(pts), dtype=float)
        if out.shape != (n, self.m1, self.m1):
            raise ValueError(f"coefficient function returned shape {out.shape}")
        return out

    def at_origin(self, N: int) -> np.ndarray:
        return np.array(self.evaluate(np.zeros((1, N + 1)))[0])

    def frozen(self, N: int) -> "CoefficientField":
        """``A(0, 0)`` as a constant field (the frozen operator ``H_A(0)``)."""
        return CoefficientField.constant_matrix(self.at_origin(N), label=f"{self.label} frozen")

    def check_ellipticity(self, pts, seed: int = 0, n_dirs: int = 16) -> tuple[float, float]:
        """Min and max sampled Rayleigh quotient ``xi^T A xi / |xi|^2``; raises if outside ``[lam, Lam]``."""
        A = self.evaluate(pts)
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal((n_dirs, self.m1))
        xi = np.concatenate([xi, np.eye(self.m1)])
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        rq = np.einsum("ki,nij,kj->nk", xi, A, xi)
        ev = np.linalg.eigvalsh(A)
        lo, hi = float(min(rq.min(), ev[:, 0].min())), float(max(rq.max(), ev[:, -1].max()))
        if lo < self.lam - 1e-12 or hi > self.Lam + 1e-12:
            raise ValueError(f"ellipticity fails: sampled range [{lo:.4g}, {hi:.4g}] vs [{self.lam}, {self.Lam}]")
        return lo, hi


def holder_perturbation(
    g: CarnotGroup, alpha: float, amplitude: float, pattern, max_gauge: float = 2.0
) -> CoefficientField:
    """``A = I + amplitude |(x,t)|^alpha M``: Hölder of order ``alpha`` at the origin, smooth elsewhere.

    ``lambda`` and ``Lambda`` are exact for parabolic gauge up to ``max_gauge``.
    """
    m1 = g.m1
    pattern = np.asarray(pattern, dtype=float)
    if pattern.shape != (m1, m1) or not np.array_equal(pattern, pattern.T):
        raise ValueError("pattern must be a symmetric m1 x m1 matrix")
    ev = np.linalg.eigvalsh(pattern)
    smax = amplitude * max_gauge**alpha
    lam = min(1.0, 1.0 + smax * ev[0])
    Lam = max(1.0, 1.0 + smax * ev[-1])
    if lam <= 0:
        raise ValueError("perturbation destroys ellipticity on the requested range")
    eye = np.eye(m1)

    def fn(pts):
        rho = parabolic_gauge(g, pts) ** alpha
        return eye[None] + amplitude * rho[:, None, None] * pattern[None]

    return CoefficientField(
        m1, lam, Lam, fn=fn, alpha=alpha, modulus=amplitude * float(np.abs(ev).max()),
        label=f"I + {amplitude} |.|^{alpha} M",
    )


# --------------------------------------------------------------------------
# manufactured problems
# --------------------------------------------------------------------------


@dataclass
class ManufacturedProblem:
    group: CarnotGroup
    u_star: object  # GradedPoly, SymbolicFunction or callable
    A: CoefficientField
    f: Callable
    f_exact: GradedPoly | None = None

    def u(self, pts) -> np.ndarray:
        return _call(self.u_star, pts)


def _call(fn, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    if isinstance(fn, GradedPoly):
        return fn.evaluate(pts)
    return np.asarray(fn(pts), dtype=float) * np.ones(len(pts))


def manufactured_problem(g: CarnotGroup, u_star, A: CoefficientField) -> ManufacturedProblem:
    """``f = H_A u*``, exact when ``u*`` and the coefficients are polynomial."""
    words = {(i, j): DerivativeMultiIndex((i, j)) for i in range(g.m1) for j in range(g.m1)}
    if isinstance(u_star, GradedPoly) and (A.constant is not None or A.poly is not None):
        W = g.spacetime_weights
        f = apply_derivative(g, u_star, DerivativeMultiIndex((), 1))
        for (i, j), d in words.items():
            a = A.poly[i][j] if A.poly is not None else _exact_scalar(A.constant[i, j])
            term = apply_derivative(g, u_star, d)
            f = f - (a * term if isinstance(a, GradedPoly) else term * a)
        f = GradedPoly(W, f.terms)
        return ManufacturedProblem(g, u_star, A, f, f)
    s = u_star if isinstance(u_star, SymbolicFunction) else SymbolicFunction.from_poly(g, u_star)
    dt = s.derivative(DerivativeMultiIndex((), 1))
    second = {k: s.derivative(d) for k, d in words.items()}

    def f(pts):
        pts = np.asarray(pts, dtype=float)
        a = A.evaluate(pts)
        out = dt.evaluate(pts) * np.ones(len(pts))
        for (i, j), d in second.items():
            out = out - a[:, i, j] * d.evaluate(pts)
        return out

    return ManufacturedProblem(g, s, A, f)


def _exact_scalar(x):
    from fractions import Fraction

    fr = Fraction(float(x))
    return fr if fr.denominator <= 1 << 20 else float(x)


# --------------------------------------------------------------------------
# discrete operators
# --------------------------------------------------------------------------


def decompose_directions(A: np.ndarray, m1: int, mix: float = 0.0) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """Weights ``c_v >= 0`` with ``sum_v c_v v v^T = A`` for each ``(m1, m1)`` matrix in ``A``.

    Directions follow :func:`~carnotlab.grid.default_directions`.  Needs
    ``a_ii >= sum_{j != i} |a_ij|`` (weak diagonal dominance).  ``mix`` in
    ``[0, 1]`` moves that fraction of the dominance slack onto the pairs
    ``e_i +- e_j`` (using ``vv^T + ww^T = 2(e_i e_i^T + e_j e_j^T)``).  On
    step-two lattices the axis moves alone only reach half of the vertical
    nodes near the origin, so point values of a discrete delta oscillate;
    any diagonal weight removes this.
    """
    A = np.asarray(A, dtype=float)
    dirs = default_directions(m1)
    n = A.shape[0]
    c = np.empty((len(dirs), n))
    for k in range(m1):
        off = np.zeros(n)
        for j in range(m1):
            if j != k:
                off = off + np.abs(A[:, k, j])
        c[k] = A[:, k, k] - off
    row = m1
    for i in range(m1):
        for j in range(i + 1, m1):
            c[row] = np.maximum(A[:, i, j], 0.0)
            c[row + 1] = np.maximum(-A[:, i, j], 0.0)
            row += 2
    if np.any(c[:m1] < -1e-13):
        raise ValueError(
            "coefficients are not diagonally dominant; use stencil='composed' "
            "or route constant coefficients through the canonical operator"
        )
    c[:m1] = np.maximum(c[:m1], 0.0)
    if mix:
        if not 0 < mix <= 1:
            raise ValueError("mix must lie in [0, 1]")
        if m1 > 1:
            slack = c[:m1].copy()
            row = m1
            for i in range(m1):
                for j in range(i + 1, m1):
                    sij = mix * np.minimum(slack[i], slack[j]) / (2 * (m1 - 1))
                    c[row] += sij
                    c[row + 1] += sij
                    c[i] -= 2 * sij
                    c[j] -= 2 * sij
                    row += 2
            c[:m1] = np.maximum(c[:m1], 0.0)
    return dirs, c


@dataclass
class DiscreteOperator:
    """``sum_k w_k(x, t) M_k u`` on interior nodes.

    ``terms`` are CSR matrices of shape ``(n_interior, n_nodes)``; the
    weights come from the coefficients via :meth:`weights`.
    """

    group: CarnotGroup
    grid: Grid
    stencil: str
    interior: np.ndarray  # flat node indices
    boundary: np.ndarray
    terms: list
    labels: list
    epsilon_terms: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.grid.size

    def __post_init__(self):
        nodes = self.grid.nodes()
        self._pts = {"interior": _with_time(nodes[self.interior]), "boundary": _with_time(nodes[self.boundary])}

    def interior_points(self, t: float) -> np.ndarray:
        pts = self._pts["interior"]
        pts[:, -1] = t
        return pts

    def boundary_points(self, t: float) -> np.ndarray:
        pts = self._pts["boundary"]
        pts[:, -1] = t
        return pts

    def sampler(self, fn, where: str) -> Callable:
        """``t -> fn`` at the interior or boundary nodes; polynomials in ``t`` are split once."""
        pts = self._pts[where]
        if fn is None:
            return lambda t: np.zeros(len(pts))
        if isinstance(getattr(fn, "__self__", None), ManufacturedProblem):
            fn = fn.__self__.u_star
        if isinstance(fn, GradedPoly):
            n = self.group.N
            parts: dict[int, GradedPoly] = {}
            for e, c in fn.terms.items():
                k = e[n]
                parts[k] = parts.get(k, GradedPoly(fn.weights)) + GradedPoly(fn.weights, {e[:n] + (0,): c})
            vals = {k: p.evaluate(pts) for k, p in parts.items()}
            return lambda t: sum((v * t**k for k, v in vals.items()), np.zeros(len(pts)))
        if isinstance(fn, GridFunction):
            def nested(t):
                pts[:, -1] = t
                return fn.evaluate(pts)
            return nested

        def call(t):
            pts[:, -1] = t
            return _call(fn, pts)

        return call

    def weights(self, A_nodes: np.ndarray, mix: float = 0.0) -> list[np.ndarray]:
        if self.stencil == "translation":
            _, c = decompose_directions(A_nodes, self.group.m1, mix)
            return [np.ascontiguousarray(c[k]) for k in range(len(c))]
        m1 = self.group.m1
        return [np.ascontiguousarray(A_nodes[:, i, j]) for i in range(m1) for j in range(m1)]

    def apply(self, u: np.ndarray, w: list[np.ndarray], epsilon: float = 0.0) -> np.ndarray:
        acc = np.zeros(len(self.interior))
        for wk, M in zip(w, self.terms):
            acc += wk * (M @ u)
        if epsilon:
            for M in self.epsilon_terms:
                acc += epsilon * (M @ u)
        return acc

    def assemble(self, w: list[np.ndarray], epsilon: float = 0.0) -> sps.csr_matrix:
        out = None
        for wk, M in zip(w, self.terms):
            part = sps.diags(wk) @ M
            out = part if out is None else out + part
        if epsilon:
            for M in self.epsilon_terms:
                out = out + epsilon * M
        return out.tocsr()

    def row_abs_sum(self, w: list[np.ndarray], epsilon: float = 0.0) -> float:
        tot = np.zeros(len(self.interior))
        for wk, M in zip(w, self.terms):
            tot += np.abs(wk) * np.asarray(abs(M).sum(axis=1)).ravel()
        if epsilon:
            for M in self.epsilon_terms:
                tot += epsilon * np.asarray(abs(M).sum(axis=1)).ravel()
        return float(tot.max()) if len(tot) else 0.0


_OPERATOR_CACHE: dict = {}


def build_operator(g: CarnotGroup, grid: Grid, stencil: str = "translation") -> DiscreteOperator:
    key = (id(g), grid, stencil)
    if key not in _OPERATOR_CACHE:
        if stencil == "translation":
            op = _translation_operator(g, grid)
        elif stencil == "composed":
            op = _composed_operator(g, grid)
        else:
            raise ValueError(f"unknown stencil {stencil!r}")
        op.epsilon_terms = _epsilon_terms(g, grid, op.interior)
        _OPERATOR_CACHE[key] = (g, op)
    return _OPERATOR_CACHE[key][1]


def _with_time(nodes: np.ndarray) -> np.ndarray:
    return np.concatenate([nodes, np.zeros((len(nodes), 1))], axis=1)


def _flat(idx: np.ndarray, shape) -> np.ndarray:
    return np.ravel_multi_index(tuple(idx.T), shape)


def _translation_operator(g: CarnotGroup, grid: Grid) -> DiscreteOperator:
    m1 = g.m1
    h = grid.spacing[0]
    if any(abs(s - h) > 1e-12 * h for s in grid.spacing[:m1]):
        raise StencilError("translation stencil needs equal horizontal spacings")
    nodes = grid.nodes()
    shape = np.asarray(grid.shape)
    dirs = default_directions(m1)
    targets, ok = [], np.ones(len(nodes), dtype=bool)
    for v in dirs:
        pair = []
        for sgn in (1.0, -1.0):
            step = np.zeros(g.N)
            step[:m1] = sgn * h * np.asarray(v, dtype=float)
            frac = grid.fractional_index(g.multiply(nodes, step))
            idx = np.rint(frac).astype(np.int64)
            if np.max(np.abs(frac - idx)) > 1e-6:
                raise StencilError(
                    f"grid is not a lattice for direction {v}; build spacings with lattice_spacings"
                )
            inside = np.all((idx >= 0) & (idx < shape), axis=1)
            ok &= inside
            pair.append(idx)
        targets.append(pair)
    interior = np.flatnonzero(ok)
    boundary = np.flatnonzero(~ok)
    n_int, n = len(interior), len(nodes)
    rows = np.arange(n_int)
    terms = []
    for plus, minus in targets:
        cols = np.concatenate([_flat(plus[interior], grid.shape), interior, _flat(minus[interior], grid.shape)])
        vals = np.concatenate([np.ones(n_int), -2.0 * np.ones(n_int), np.ones(n_int)]) / h**2
        M = sps.csr_matrix((vals, (np.tile(rows, 3), cols)), shape=(n_int, n))
        terms.append(M)
    labels = ["X_v^2 v=" + str(v) for v in dirs]
    return DiscreteOperator(g, grid, "translation", interior, boundary, terms, labels)


def _first_difference(grid: Grid, axis: int) -> sps.csr_matrix:
    """Centred first difference on nodes with both neighbours; zero rows elsewhere."""
    shape = grid.shape
    n = grid.size
    idx = np.indices(shape).reshape(len(shape), -1).T
    ok = (idx[:, axis] >= 1) & (idx[:, axis] <= shape[axis] - 2)
    rows = np.flatnonzero(ok)
    up, dn = idx[ok].copy(), idx[ok].copy()
    up[:, axis] += 1
    dn[:, axis] -= 1
    h = grid.spacing[axis]
    cols = np.concatenate([_flat(up, shape), _flat(dn, shape)])
    vals = np.concatenate([np.full(len(rows), 0.5 / h), np.full(len(rows), -0.5 / h)])
    return sps.csr_matrix((vals, (np.concatenate([rows, rows]), cols)), shape=(n, n))


def _composed_operator(g: CarnotGroup, grid: Grid) -> DiscreteOperator:
    m1 = g.m1
    nodes = grid.nodes()
    pts = np.concatenate([nodes, np.zeros((len(nodes), 1))], axis=1)
    D = [_first_difference(grid, k) for k in range(g.N)]
    X = []
    used = set()
    for fld in horizontal_fields(g):
        acc = None
        for k, b in enumerate(fld.coeffs):
            if b.is_zero():
                continue
            used.add(k)
            part = sps.diags(b.evaluate(pts)) @ D[k]
            acc = part if acc is None else acc + part
        X.append(acc.tocsr())
    idx = np.indices(grid.shape).reshape(grid.ndim, -1).T
    ok = np.ones(len(nodes), dtype=bool)
    for k in used:
        if grid.shape[k] < 5:
            raise StencilError(f"axis {k + 1} needs at least 5 nodes for composed stencils")
        ok &= (idx[:, k] >= 2) & (idx[:, k] <= grid.shape[k] - 3)
    interior = np.flatnonzero(ok)
    boundary = np.flatnonzero(~ok)
    terms, labels = [], []
    for i in range(m1):
        for j in range(m1):
            terms.append((X[i] @ X[j]).tocsr()[interior])
            labels.append(f"X{i + 1}X{j + 1}")
    return DiscreteOperator(g, grid, "composed", interior, boundary, terms, labels)


def _epsilon_terms(g: CarnotGroup, grid: Grid, interior: np.ndarray) -> list:
    """Plain second differences along the non-horizontal axes (diagnostic regularization)."""
    shape = grid.shape
    idx = np.indices(shape).reshape(grid.ndim, -1).T[interior]
    out = []
    for k in range(g.m1, g.N):
        up, dn = idx.copy(), idx.copy()
        up[:, k] += 1
        dn[:, k] -= 1
        good = (up[:, k] < shape[k]) & (dn[:, k] >= 0)
        rows = np.arange(len(interior))[good]
        h = grid.spacing[k]
        cols = np.concatenate([_flat(up[good], shape), interior[good], _flat(dn[good], shape)])
        vals = np.concatenate([np.ones(len(rows)), -2 * np.ones(len(rows)), np.ones(len(rows))]) / h**2
        out.append(sps.csr_matrix((vals, (np.tile(rows, 3), cols)), shape=(len(interior), grid.size)))
    return out


# --------------------------------------------------------------------------
# time stepping
# --------------------------------------------------------------------------


@dataclass
class SolveConfig:
    scheme: str = "explicit"  # explicit | implicit
    stencil: str = "translation"  # translation | composed
    cfl: float = 0.25
    boundary: str = "exact"  # exact | zero | nested
    tol: float = 1e-10
    linear_solver: str = "direct"  # direct | bicgstab
    epsilon: float = 0.0
    diagonal_mix: float = 0.0
    n_steps: int | None = None
    store_every: int = 1
    check_every: int = 25

    def __post_init__(self):
        if self.scheme not in ("explicit", "implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.stencil not in ("translation", "composed"):
            raise ValueError(f"unknown stencil {self.stencil!r}")
        if not 0 < self.cfl <= 1:
            raise ValueError("CFL factor must lie in (0, 1]")
        if self.boundary not in ("exact", "zero", "nested"):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if not 0 <= self.diagonal_mix <= 1:
            raise ValueError("diagonal_mix must lie in [0, 1]")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def stable_step(op: DiscreteOperator, w: list[np.ndarray], cfg: SolveConfig, Lam: float) -> float:
    """``cfl * h_min^2 / (Lambda * S)``, ``S`` the largest absolute row sum of the
    weighted stencil in units of ``Lambda / h_min^2`` (a Gershgorin bound)."""
    h2 = min(op.grid.spacing[: op.group.m1]) ** 2
    rs = op.row_abs_sum(w, cfg.epsilon)
    if rs == 0:
        return math.inf
    S = rs * h2 / Lam
    return cfg.cfl * h2 / (Lam * S)


def explicit_step_bound(g: CarnotGroup, A: CoefficientField, grid: Grid, t_span, cfg: SolveConfig, w0=None) -> float:
    """Largest explicit step allowed by :func:`stable_step`, probing time-dependent coefficients at three times."""
    op = build_operator(g, grid, cfg.stencil)
    t0, t1 = map(float, t_span)
    times = (t0, 0.5 * (t0 + t1), t1) if not A.is_constant else (t0,)
    ws = [op.weights(A.evaluate(op.interior_points(t)), cfg.diagonal_mix) for t in times]
    if w0 is not None:
        ws[0] = w0
    return min(stable_step(op, w, cfg, A.Lam) for w in ws)


def solve(
    g: CarnotGroup,
    f,
    A: CoefficientField,
    grid: Grid,
    t_span: tuple[float, float],
    cfg: SolveConfig | None = None,
    initial=None,
    boundary=None,
    callback: Callable | None = None,
) -> GridFunction:
    """Advance from ``t_span[0]`` to ``t_span[1]``.

    ``f``, ``initial`` and ``boundary`` are callables on ``(M, N + 1)``
    space-time points (``None`` means zero).  With ``boundary="nested"`` the
    ``boundary`` argument is a parent :class:`GridFunction` sampled by
    interpolation.  ``callback(step, t, u_flat)`` runs after every step.
    """
    cfg = cfg or SolveConfig()
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("need t_span[1] > t_span[0]")
    op = build_operator(g, grid, cfg.stencil)
    time_dep = not A.is_constant

    def A_at(t):
        return A.evaluate(op.interior_points(t))

    w0 = op.weights(A_at(t0), cfg.diagonal_mix)
    tau_max = explicit_step_bound(g, A, grid, (t0, t1), cfg, w0)
    h2 = min(grid.spacing[: g.m1]) ** 2
    span = t1 - t0
    if cfg.n_steps is not None:
        n_steps = int(cfg.n_steps)
        tau = span / n_steps
        if cfg.scheme == "explicit" and tau > tau_max * (1 + 1e-12):
            raise CFLViolation(f"time step {tau:.3e} exceeds the explicit bound {tau_max:.3e} (cfl={cfg.cfl})")
    else:
        if cfg.scheme == "explicit":
            n_steps = max(1, int(math.ceil(span / tau_max - 1e-9)))
        else:
            n_steps = max(1, int(math.ceil(span / (cfg.cfl * h2))))
        tau = span / n_steps

    if cfg.boundary == "nested" and not isinstance(boundary, GridFunction):
        raise ValueError("nested boundary mode needs a parent GridFunction")
    bvals = op.sampler(None if cfg.boundary == "zero" else boundary, "boundary")
    fvals = op.sampler(f, "interior")

    nodes_all = np.concatenate([grid.nodes(), np.full((grid.size, 1), t0)], axis=1)
    if initial is None:
        u = np.zeros(grid.size)
    elif isinstance(initial, np.ndarray):
        u = np.array(initial, dtype=float).ravel()
    elif isinstance(initial, GridFunction):
        u = initial.evaluate(nodes_all)
    else:
        u = _call(initial, nodes_all)
    if u.shape != (grid.size,):
        raise ValueError("initial data has the wrong size")

    stored_t, stored = [t0], [u.reshape(grid.shape).copy()]
    lu = None
    w = w0
    for n in range(1, n_steps + 1):
        t_old, t_new = t0 + (n - 1) * tau, t0 + n * tau
        if n == n_steps:
            t_new = t1
        if cfg.scheme == "explicit":
            t_mid = t_old + 0.5 * (t_new - t_old)
            if time_dep:
                # coefficients and source at the same time keep caloric quadratics exact
                w = op.weights(A_at(t_mid), cfg.diagonal_mix)
            du = op.apply(u, w, cfg.epsilon) + fvals(t_mid)
            u_new = u.copy()
            u_new[op.interior] += (t_new - t_old) * du
        else:
            if time_dep:
                w = op.weights(A_at(t_new), cfg.diagonal_mix)
            if lu is None or time_dep:
                lu = _implicit_factor(op, w, t_new - t_old, cfg)
            u_new = np.empty_like(u)
            bnd = bvals(t_new)
            # boundary columns move to the right-hand side
            rhs = u[op.interior] + (t_new - t_old) * (fvals(t_new) + lu["Lb"] @ bnd)
            u_new[op.interior] = lu["solve"](rhs)
        u_new[op.boundary] = bnd if cfg.scheme == "implicit" else bvals(t_new)
        u = u_new
        if n % cfg.check_every == 0 or n == n_steps:
            if not np.all(np.isfinite(u)):
                raise SolverDivergence(f"non-finite values at step {n} (t={t_new:.6g}, tau={tau:.3e})")
        if callback is not None:
            callback(n, t_new, u)
        if n % cfg.store_every == 0 or n == n_steps:
            stored_t.append(t_new)
            stored.append(u.reshape(grid.shape).copy())
    meta = {
        "scheme": cfg.scheme,
        "stencil": cfg.stencil,
        "tau": tau,
        "n_steps": n_steps,
        "tau_max": tau_max,
        "epsilon": cfg.epsilon,
        "coefficients": A.label,
    }
    return GridFunction(grid, np.asarray(stored_t), np.stack(stored), meta)


def _implicit_factor(op: DiscreteOperator, w, tau: float, cfg: SolveConfig) -> dict:
    L = op.assemble(w, cfg.epsilon)
    Li = L[:, op.interior]
    Lb = L[:, op.boundary]
    M = (sps.identity(len(op.interior), format="csc") - tau * Li).tocsc()
    if cfg.linear_solver == "direct":
        fac = spla.splu(M)
        return {"solve": fac.solve, "Lb": Lb}
    if cfg.linear_solver == "bicgstab":
        ilu = spla.spilu(M, drop_tol=1e-5)
        pre = spla.LinearOperator(M.shape, ilu.solve)

        def run(b):
            x, info = spla.bicgstab(M, b, rtol=cfg.tol, atol=0.0, M=pre, maxiter=1000)
            if info != 0:
                raise LinearSolveError(f"bicgstab did not converge (info={info}, rtol={cfg.tol})")
            return x

        return {"solve": run, "Lb": Lb}
    raise ValueError(f"unknown linear solver {cfg.linear_solver!r}")


def discrete_heat_apply(g: CarnotGroup, u: GridFunction, A: CoefficientField, cfg: SolveConfig | None = None) -> np.ndarray:
    """``sum a_ij X_i X_j`` of a sampled function at interior nodes, per stored level."""
    cfg = cfg or SolveConfig()
    op = build_operator(g, u.grid, cfg.stencil)
    out = []
    for t, v in zip(u.times, u.values):
        w = op.weights(A.evaluate(op.interior_points(t)), cfg.diagonal_mix)
        out.append(op.apply(v.ravel(), w, cfg.epsilon))
    return np.stack(out)


# --------------------------------------------------------------------------
# interior estimate probe
# --------------------------------------------------------------------------


@dataclass
class ProbeResult:
    ratio: float | None  # None: 0/0
    lhs: float
    u_norm: float
    f_norm: float
    terms: dict


def interior_estimate_probe(
    g: CarnotGroup, u: GridFunction, f, r: float, p: float, center=None, margin: int = 2
) -> ProbeResult:
    """``sum_k r^k ||X^I D_t^l u||_{L^p(Q_r)} / (||u||_{L^p(Q_2r)} + r^2 ||f||_{L^p(Q_2r)})``.

    ``k = |I| + 2l`` runs over ``0, 1, 2``; ``f`` may be a callable or a
    :class:`GridFunction` on the same grid.
    """
    from .group import SpaceTimePoint

    center = center or SpaceTimePoint.origin(g)
    inner = sobolev_norm(g, u, p, Cylinder(center, r), margin=margin)
    lhs = 0.0
    seen = set()
    for key, (k, val) in inner.terms.items():
        if key == "u (time sum)":
            continue  # each multi-index once
        seen.add(key)
        lhs += r**k * val
    outer = Cylinder(center, 2 * r)
    un = _lp_on_cylinder(g, u.values, u, outer, p, margin)
    fv = f.values if isinstance(f, GridFunction) else (
        np.zeros_like(u.values) if f is None else _call(f, u.spacetime_nodes()).reshape(u.values.shape)
    )
    fn = _lp_on_cylinder(g, fv, u, outer, p, margin)
    den = un + r**2 * fn
    ratio = None if den == 0 and lhs == 0 else (lhs / den if den > 0 else math.inf)
    return ProbeResult(ratio, lhs, un, fn, {k: v for k, v in inner.terms.items() if k in seen})


def _lp_on_cylinder(g, vals, u: GridFunction, cyl: Cylinder, p, margin):
    tmp = GridFunction(u.grid, u.times, vals)
    from .norms import _time_weights

    c = cyl.center.as_array()
    ball = g.distance(u.grid.nodes(), c[:-1]).reshape(u.grid.shape) < cyl.radius
    tw = _time_weights(u.times, c[-1] - cyl.radius**2, c[-1] + cyl.radius**2)
    inside = (tw > 0)[(slice(None),) + (None,) * u.grid.ndim] & ball
    if math.isinf(p):
        return float(np.abs(tmp.values[inside]).max()) if inside.any() else 0.0
    wts = (u.grid.cell_volume * tw)[(slice(None),) + (None,) * u.grid.ndim] * inside
    return float(np.sum(wts * np.abs(tmp.values) ** p) ** (1.0 / p))
