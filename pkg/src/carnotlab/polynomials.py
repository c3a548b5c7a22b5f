"""Group polynomials on ``G x R``: Taylor expansion and the polynomial heat equation.

Polynomials are :class:`~carnotlab.poly.GradedPoly` objects in the space-time
variables ``(x_1, ..., x_N, t)`` with weights ``(w_1, ..., w_N, 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import exact
from .calculus import DerivativeMultiIndex, SymbolicFunction, apply_derivative, horizontal_fields
from .exact import as_fraction
from .grid import GridFunction
from .group import CarnotGroup, parabolic_dilate, parabolic_gauge
from .poly import GradedPoly, enumerate_exponents


# --------------------------------------------------------------------------
# bases
# --------------------------------------------------------------------------


def _monomial_key(weights, e):
    deg = sum(w * k for w, k in zip(weights, e))
    return (deg, tuple(-k for k in e))


class PolySpaceBasis:
    """Ordered monomial basis of ``P_d`` (or of its degree-``d`` part if ``homogeneous``).

    Order: homogeneous degree, then higher powers of earlier coordinates
    first (coordinates are layer-major, time last).
    """

    def __init__(self, g: CarnotGroup, d: int, homogeneous: bool = False):
        if d < 0:
            raise ValueError("degree must be nonnegative")
        self.group = g
        self.degree = d
        self.homogeneous = homogeneous
        self.weights = g.spacetime_weights
        exps = enumerate_exponents(self.weights, d, exact_degree=homogeneous)
        self.exponents = sorted(exps, key=lambda e: _monomial_key(self.weights, e))
        self.index = {e: i for i, e in enumerate(self.exponents)}

    @property
    def dim(self) -> int:
        return len(self.exponents)

    def __len__(self):
        return self.dim

    def degree_of(self, i: int) -> int:
        return sum(w * k for w, k in zip(self.weights, self.exponents[i]))

    def monomial(self, i: int) -> GradedPoly:
        return GradedPoly.monomial(self.weights, self.exponents[i])

    def polys(self) -> list[GradedPoly]:
        return [self.monomial(i) for i in range(self.dim)]

    def coords(self, p: GradedPoly) -> list:
        v = [Fraction(0)] * self.dim
        for e, c in p.terms.items():
            if e not in self.index:
                raise ValueError(f"monomial {e} is not in the basis")
            v[self.index[e]] = c
        return v

    def from_coords(self, v: Sequence) -> GradedPoly:
        return GradedPoly(self.weights, {e: c for e, c in zip(self.exponents, v)})

    def design_matrix(self, pts) -> np.ndarray:
        """Monomials evaluated at space-time points ``(M, N + 1)`` -> ``(M, dim)``."""
        pts = np.asarray(pts, dtype=float)
        cache = {}
        cols = []
        for e in self.exponents:
            col = np.ones(len(pts))
            for j, k in enumerate(e):
                if k:
                    if (j, k) not in cache:
                        cache[(j, k)] = pts[:, j] ** k
                    col = col * cache[(j, k)]
            cols.append(col)
        return np.stack(cols, axis=1) if cols else np.zeros((len(pts), 0))


def count_monomials(weights: Sequence[int], d: int, homogeneous: bool = False) -> int:
    """Coefficient extraction from ``prod_j 1/(1 - z^w_j)`` (independent of enumeration)."""
    series = np.zeros(d + 1, dtype=np.int64)
    series[0] = 1
    for w in weights:
        # multiply by 1/(1 - z^w): running sum with stride w
        for k in range(w, d + 1):
            series[k] += series[k - w]
    return int(series[d] if homogeneous else series.sum())


# --------------------------------------------------------------------------
# derivative functionals
# --------------------------------------------------------------------------


def _word_derivatives(g: CarnotGroup, p: GradedPoly, words: list[DerivativeMultiIndex]) -> dict:
    """Exact ``X^I D_t^l p`` for each multi-index, sharing suffix work."""
    fields = horizontal_fields(g)
    memo: dict[tuple, GradedPoly] = {}

    def get(indices: tuple, l: int) -> GradedPoly:
        key = (indices, l)
        if key in memo:
            return memo[key]
        if not indices:
            out = p
            for _ in range(l):
                out = out.diff(g.N)
        else:
            out = fields[indices[0]].apply(get(indices[1:], l))
        memo[key] = out
        return out

    return {d: get(d.indices, d.time_order) for d in words}


_TAYLOR_CACHE: dict = {}


def _taylor_block(g: CarnotGroup, j: int):
    """Derivatives of order ``j`` at 0 of the degree-``j`` monomials (exact)."""
    key = (id(g), j)
    if key not in _TAYLOR_CACHE:
        basis = PolySpaceBasis(g, j, homogeneous=True)
        words = DerivativeMultiIndex.all_of_order(g.m1, j)
        cols = []
        for m in basis.polys():
            der = _word_derivatives(g, m, words)
            cols.append([der[d].constant_term() for d in words])
        mat = exact.transpose(cols) if cols else []
        _TAYLOR_CACHE[key] = (g, basis, words, mat)
    _, basis, words, mat = _TAYLOR_CACHE[key]
    return basis, words, mat


def derivative_values(g: CarnotGroup, f, words: list[DerivativeMultiIndex], center) -> list:
    """``X^I D_t^l f(center)`` for each multi-index.

    Exact Fractions for polynomials with a rational center; floats otherwise.
    """
    center = [Fraction(0)] * (g.N + 1) if center is None else list(center)
    if isinstance(f, GradedPoly):
        der = _word_derivatives(g, f, words)
        if all(isinstance(c, (int, Fraction)) for c in center) and f.is_exact():
            return [der[d].evaluate_exact(center) for d in words]
        pt = np.asarray(center, dtype=float)
        return [float(der[d].evaluate(pt)) for d in words]
    if isinstance(f, SymbolicFunction):
        pt = np.asarray(center, dtype=float)
        return [f.derivative(d).value_at(pt) for d in words]
    if isinstance(f, GridFunction):
        pt = np.asarray(center, dtype=float)
        idx = np.rint(f.grid.fractional_index(pt[:-1])).astype(int)
        if not np.allclose(f.grid.fractional_index(pt[:-1]), idx, atol=1e-9):
            raise ValueError("grid Taylor expansion needs the center on a grid node")
        lev = int(np.argmin(np.abs(f.times - pt[-1])))
        out = []
        for d in words:
            der = apply_derivative(g, f, d)
            out.append(float(der.values[(lev,) + tuple(idx)]))
        return out
    raise TypeError(f"unsupported function type {type(f).__name__}")


def taylor_polynomial(g: CarnotGroup, f, k: int, center=None) -> GradedPoly:
    """The unique ``P`` in ``P_k`` with ``X^I D_t^l P(0) = X^I D_t^l f(center)`` for ``|I| + 2l <= k``.

    Derivatives of a degree-``m`` monomial of order ``j`` vanish at 0 unless
    ``m = j``, so the system is block diagonal by degree; each block is
    solved exactly for polynomial input and by least squares otherwise.  For
    a center ``c`` the result is the left Taylor polynomial:
    ``f(c . y, t_c + s) ~ P(y, s)``.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    out = GradedPoly(g.spacetime_weights)
    for j in range(k + 1):
        basis, words, mat = _taylor_block(g, j)
        if not basis.dim:
            continue
        rhs = derivative_values(g, f, words, center)
        if all(isinstance(v, Fraction) for v in rhs):
            try:
                sol = exact.solve_unique(mat, rhs)
            except exact.InconsistentSystem as err:  # impossible for a genuine basis
                raise AssertionError(f"Taylor block {j} inconsistent: {err}") from err
        else:
            a = np.array([[float(v) for v in row] for row in mat])
            sol, *_ = np.linalg.lstsq(a, np.asarray(rhs, dtype=float), rcond=None)
            sol = [float(v) for v in sol]
        out = out + basis.from_coords(sol)
    return out


# --------------------------------------------------------------------------
# heat operator on polynomials
# --------------------------------------------------------------------------


def _as_matrix(g: CarnotGroup, A0) -> tuple[tuple, ...]:
    if A0 is None:
        return tuple(tuple(Fraction(int(i == j)) for j in range(g.m1)) for i in range(g.m1))
    rows = tuple(tuple(as_fraction(v) if not isinstance(v, float) else as_fraction(v) for v in row) for row in A0)
    if len(rows) != g.m1 or any(len(r) != g.m1 for r in rows):
        raise ValueError(f"A0 must be {g.m1}x{g.m1}")
    for i in range(g.m1):
        for j in range(g.m1):
            if rows[i][j] != rows[j][i]:
                raise ValueError("A0 must be symmetric")
    return rows


def heat_apply(g: CarnotGroup, P: GradedPoly, A0=None) -> GradedPoly:
    """``dP/dt - sum_ij a_ij X_i X_j P`` (exact for rational ``A0``; default identity)."""
    a = _as_matrix(g, A0)
    fields = horizontal_fields(g)
    out = P.diff(g.N)
    first = [f.apply(P) for f in fields]
    for i, fi in enumerate(fields):
        for j in range(g.m1):
            if a[i][j] != 0 and not first[j].is_zero():
                out = out - fi.apply(first[j]) * a[i][j]
    return out


class HeatSolveError(RuntimeError):
    """The graded heat system is inconsistent (carries rank data)."""


_HEAT_CACHE: dict = {}


def heat_matrix(g: CarnotGroup, d: int, A0=None):
    """Exact matrix of ``H`` from degree-``d`` to degree-``(d-2)`` homogeneous polynomials."""
    a = _as_matrix(g, A0)
    key = (id(g), a, d)
    if key not in _HEAT_CACHE:
        src = PolySpaceBasis(g, d, homogeneous=True)
        dst = PolySpaceBasis(g, d - 2, homogeneous=True) if d >= 2 else None
        cols = []
        for m in src.polys():
            hm = heat_apply(g, m, a)
            cols.append(dst.coords(hm) if dst is not None else [])
        mat = exact.transpose(cols) if dst is not None and dst.dim else []
        _HEAT_CACHE[key] = (g, src, dst, mat, {})
    return _HEAT_CACHE[key][1:]


def solve_heat_polynomial(g: CarnotGroup, Qp: GradedPoly, A0=None, degree: int | None = None) -> GradedPoly:
    """Homogeneous ``P`` of degree ``deg(Qp) + 2`` with ``heat_apply(P) == Qp`` exactly.

    Returns the minimum-norm solution in monomial coefficients; any caloric
    polynomial of the same degree could be added.  ``Qp == 0`` returns 0.
    """
    if Qp.is_zero():
        return GradedPoly(g.spacetime_weights)
    if not Qp.is_homogeneous():
        raise ValueError("right-hand side must be homogeneous")
    d = Qp.degree() + 2 if degree is None else degree
    if d != Qp.degree() + 2:
        raise ValueError(f"degree {d} does not match deg(Q) + 2 = {Qp.degree() + 2}")
    qp = Qp if Qp.is_exact() else Qp.map_coefficients(as_fraction)
    src, dst, mat, cache = heat_matrix(g, d, A0)
    rhs = dst.coords(qp)
    if "pinv" not in cache:
        rows = exact.independent_rows(mat)
        a_s = [mat[i] for i in rows]
        gram = exact.matmul(a_s, exact.transpose(a_s))
        n = len(rows)
        ident = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
        inv_cols = [exact.solve_square(gram, col) for col in ident]
        cache["rows"] = rows
        cache["pinv"] = exact.matmul(exact.transpose(a_s), exact.transpose(inv_cols))
    rows, pinv = cache["rows"], cache["pinv"]
    sol = exact.matvec(pinv, [rhs[i] for i in rows])
    P = src.from_coords(sol)
    resid = heat_apply(g, P, A0) - qp
    if not resid.is_zero():
        r_aug = exact.rank([list(mat[i]) + [rhs[i]] for i in range(len(mat))])
        raise HeatSolveError(
            f"H P = Q has no solution in degree {d}: rank(M) = {len(rows)}, rank([M|q]) = {r_aug}"
        )
    return P


def caloric_basis(g: CarnotGroup, d: int, A0=None) -> list[GradedPoly]:
    """Basis of homogeneous degree-``d`` polynomials annihilated by ``H`` (exact)."""
    src, dst, mat, _ = heat_matrix(g, d, A0)
    if dst is None or not dst.dim:
        return src.polys()
    return [src.from_coords(v) for v in exact.nullspace(mat, src.dim)]


@dataclass(frozen=True)
class CaloricComponent:
    degree: int
    component: GradedPoly
    heat: GradedPoly

    @property
    def caloric(self) -> bool:
        return self.heat.is_zero()


def caloric_taylor_check(g: CarnotGroup, u: GradedPoly, d: int, A0=None) -> list[CaloricComponent]:
    """Apply ``H`` to each homogeneous component of the degree-``d`` Taylor polynomial."""
    P = taylor_polynomial(g, u, d)
    return [CaloricComponent(k, P.homogeneous_part(k), heat_apply(g, P.homogeneous_part(k), A0)) for k in range(d + 1)]


# --------------------------------------------------------------------------
# empirical Taylor / mean-value constants
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TaylorConstantReport:
    radii: tuple[float, ...]
    ratios: tuple[float, ...]
    k: int
    b: float

    @property
    def trend_factor(self) -> float:
        pos = [r for r in self.ratios if r > 0]
        return max(pos) / min(pos) if pos else 0.0

    @property
    def monotone_blowup(self) -> bool:
        """Ratios strictly increasing as the radius shrinks (radii are decreasing)."""
        r = self.ratios
        return len(r) > 2 and all(b > a for a, b in zip(r, r[1:])) and self.trend_factor >= 3


def unit_ball_cloud(g: CarnotGroup, n: int, seed: int) -> np.ndarray:
    """``n`` uniform space-time points with parabolic gauge ``<= 1``."""
    rng = np.random.default_rng(seed)
    out = []
    got = 0
    while got < n:
        pts = rng.uniform(-1.0, 1.0, size=(4 * n, g.N + 1))
        pts = pts[parabolic_gauge(g, pts) <= 1.0]
        out.append(pts)
        got += len(pts)
    return np.concatenate(out)[:n]


def _running_modulus(g, values_fn, scales, cloud):
    """``s -> sup_{gauge(z) <= s} values_fn(z)`` on a multi-scale cloud."""
    pts = np.concatenate([parabolic_dilate(g, s, cloud) for s in scales])
    rho = parabolic_gauge(g, pts)
    vals = values_fn(pts)
    order = np.argsort(rho)
    rho, vals = rho[order], np.maximum.accumulate(vals[order])

    def M(s):
        idx = np.searchsorted(rho, s, side="right") - 1
        return np.where(idx >= 0, vals[np.maximum(idx, 0)], 0.0)

    return M


def _shell_ratios(g, remainder_fn, modulus_fn, k, radii, b, n_samples, seed):
    cloud = unit_ball_cloud(g, n_samples, seed)
    cloud = cloud[parabolic_gauge(g, cloud) > 0.5]
    mod_cloud = unit_ball_cloud(g, n_samples, seed + 1)
    # one extra half scale so the innermost shell's modulus is sampled as densely as the others
    scales = [b**k * r for r in radii] + [b**k * radii[-1] / 2]
    M = _running_modulus(g, modulus_fn, scales, mod_cloud)
    ratios = []
    for r in radii:
        pts = parabolic_dilate(g, r, cloud)
        rho = parabolic_gauge(g, pts)
        num = np.abs(remainder_fn(pts))
        den = rho**k * M(b**k * rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(num == 0, 0.0, num / den)
        ratios.append(float(np.max(q)))
    return ratios


def empirical_taylor_constant(
    g: CarnotGroup,
    f,
    k: int,
    radii: Sequence[float],
    seed: int,
    b: float = 1.0,
    n_samples: int = 4000,
) -> TaylorConstantReport:
    """Shell-wise sup of ``|f - P_k| / (|(y,s)|^k M(b^k |(y,s)|))``.

    ``M(s) = sup_{|z| <= s, |I|+2l = k} |X^I D_t^l f(z) - X^I D_t^l f(0)|``.
    Points come from the shells ``r/2 < |(y,s)| <= r`` of one dilated unit
    cloud, so the sampling pattern is the same at every radius.
    """
    if isinstance(f, GradedPoly):
        f = SymbolicFunction.from_poly(g, f)
    P = taylor_polynomial(g, f, k).to_float()
    words = DerivativeMultiIndex.all_of_order(g.m1, k)
    ders = [f.derivative(d) for d in words]
    origin = np.zeros(g.N + 1)
    at0 = [d.value_at(origin) for d in ders]

    def modulus(pts):
        out = np.zeros(len(pts))
        for d, v0 in zip(ders, at0):
            out = np.maximum(out, np.abs(d.evaluate(pts) - v0))
        return out

    ratios = _shell_ratios(g, lambda p: f.evaluate(p) - P.evaluate(p), modulus, k, list(radii), b, n_samples, seed)
    return TaylorConstantReport(tuple(radii), tuple(ratios), k, b)


def mean_value_quotient(
    g: CarnotGroup, fn, radii: Sequence[float], seed: int, b: float = 1.0, n_samples: int = 4000
) -> TaylorConstantReport:
    """Shell-wise sup of ``|g(y,s) - g(0)| / (|(y,s)| sup_{|z| <= b|(y,s)|, i} |X_i g(z)|)``."""
    if isinstance(fn, GradedPoly):
        fn = SymbolicFunction.from_poly(g, fn)
    ders = [fn.derivative(DerivativeMultiIndex((i,))) for i in range(g.m1)]
    g0 = fn.value_at(np.zeros(g.N + 1))

    def modulus(pts):
        out = np.zeros(len(pts))
        for d in ders:
            out = np.maximum(out, np.abs(d.evaluate(pts)))
        return out

    ratios = _shell_ratios(g, lambda p: fn.evaluate(p) - g0, modulus, 1, list(radii), b, n_samples, seed)
    return TaylorConstantReport(tuple(radii), tuple(ratios), 1, b)
