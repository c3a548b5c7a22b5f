"""Left-invariant vector fields and horizontal derivatives.

Fields are derived from the group law: the field attached to the basis vector
``e_a`` has coefficients ``b_k(x) = d/dy_a (x . y)_k`` at ``y = 0``.  They act
on :class:`~carnotlab.poly.GradedPoly` objects in the space-time variables
``(x_1, ..., x_N, t)`` exactly, on :class:`SymbolicFunction` closed forms via
sympy, and on :class:`~carnotlab.grid.GridFunction` data by finite
differences.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .exact import rank
from .grid import GridFunction
from .group import CarnotGroup
from .poly import GradedPoly


@dataclass(frozen=True, eq=False)
class PolyVectorField:
    """``sum_k b_k(x) d/dx_k`` with exact polynomial coefficients in ``(x, t)``.

    ``layer`` is the homogeneous order of the field: applied to a homogeneous
    polynomial of degree ``m`` it returns degree ``m - layer``.
    """

    coeffs: tuple[GradedPoly, ...]
    layer: int
    label: str = ""

    @property
    def N(self) -> int:
        return len(self.coeffs)

    def apply(self, f: GradedPoly) -> GradedPoly:
        out = GradedPoly(f.weights)
        for k, b in enumerate(self.coeffs):
            if b.is_zero():
                continue
            dk = f.diff(k)
            if not dk.is_zero():
                out = out + b * dk
        return out

    __call__ = apply

    def at_origin(self) -> list:
        return [b.constant_term() for b in self.coeffs]

    def evaluate(self, points) -> np.ndarray:
        """Coefficient values ``(..., N)`` at space-time points ``(..., N + 1)``."""
        pts = np.asarray(points, dtype=float)
        return np.stack([b.evaluate(pts) for b in self.coeffs], axis=-1)

    def is_zero(self) -> bool:
        return all(b.is_zero() for b in self.coeffs)

    def __eq__(self, other):
        if not isinstance(other, PolyVectorField):
            return NotImplemented
        return all(a == b for a, b in zip(self.coeffs, other.coeffs))

    def __add__(self, other: "PolyVectorField") -> "PolyVectorField":
        return PolyVectorField(tuple(a + b for a, b in zip(self.coeffs, other.coeffs)), self.layer, "")

    def __sub__(self, other: "PolyVectorField") -> "PolyVectorField":
        return PolyVectorField(tuple(a - b for a, b in zip(self.coeffs, other.coeffs)), self.layer, "")

    def __mul__(self, s) -> "PolyVectorField":
        return PolyVectorField(tuple(b * s for b in self.coeffs), self.layer, "")

    __rmul__ = __mul__

    def __repr__(self):
        return f"PolyVectorField({self.label or '?'}, layer={self.layer})"


@lru_cache(maxsize=None)
def left_invariant_fields(g: CarnotGroup) -> tuple[PolyVectorField, ...]:
    """One left-invariant field per basis vector, ordered like the coordinates."""
    n = g.N
    w_st = g.spacetime_weights
    zero_y = [GradedPoly.zero(g.weights) for _ in range(n)]
    xs = [GradedPoly.variable(g.weights, j) for j in range(n)]
    fields = []
    for a in range(n):
        coeffs = []
        for table in g.bch:
            d = table.diff(n + a).compose(xs + zero_y)
            coeffs.append(d.embed(w_st, list(range(n))))
        layer = g.weights[a]
        idx = a - sum(g.spec.layer_dims[: layer - 1])
        fields.append(PolyVectorField(tuple(coeffs), layer, f"X{idx + 1},{layer}"))
    return tuple(fields)


def horizontal_fields(g: CarnotGroup) -> list[PolyVectorField]:
    """``X_1, ..., X_{m1}``: the left-invariant fields of the first layer."""
    return list(left_invariant_fields(g)[: g.m1])


def commutator(v: PolyVectorField, w: PolyVectorField) -> PolyVectorField:
    """``[V, W] = VW - WV`` as a first-order operator (exact)."""
    coeffs = tuple(v.apply(bw) - w.apply(bv) for bv, bw in zip(v.coeffs, w.coeffs))
    label = f"[{v.label},{w.label}]" if v.label and w.label else ""
    return PolyVectorField(coeffs, v.layer + w.layer, label)


def structure_constants_from_fields(g: CarnotGroup) -> dict[tuple[int, int], PolyVectorField]:
    """All nonzero commutators ``[X_a, X_b]`` (a < b) of the left-invariant frame."""
    fields = left_invariant_fields(g)
    out = {}
    for a, b in itertools.combinations(range(g.N), 2):
        c = commutator(fields[a], fields[b])
        if not c.is_zero():
            out[(a, b)] = c
    return out


@dataclass(frozen=True)
class HormanderReport:
    rank_by_depth: tuple[int, ...]
    spanning_depth: int | None
    satisfied: bool
    missing: tuple[str, ...]


def check_hormander(g: CarnotGroup, max_depth: int | None = None) -> HormanderReport:
    """Rank at the origin of iterated brackets of the horizontal fields, per depth.

    ``missing`` lists coordinate directions outside the final span.
    """
    max_depth = max_depth or g.N
    horiz = horizontal_fields(g)
    vectors = [f.at_origin() for f in horiz]
    current = _independent(horiz)
    ranks = [rank(vectors)]
    depth = None if ranks[0] < g.N else 1
    d = 1
    while depth is None and d < max_depth:
        d += 1
        new = [commutator(x, w) for x in horiz for w in current]
        new = [f for f in new if not f.is_zero()]
        if not new:
            ranks.append(ranks[-1])
            break
        vectors += [f.at_origin() for f in new]
        ranks.append(rank(vectors))
        current = _independent(new)
        if ranks[-1] == g.N:
            depth = d
    missing = []
    for k in range(g.N):
        e = [Fraction(int(j == k)) for j in range(g.N)]
        if rank(vectors + [e]) > ranks[-1]:
            missing.append(f"x{k + 1} (layer {g.weights[k]})")
    return HormanderReport(tuple(ranks), depth, depth is not None, tuple(missing))


def _independent(fields: list[PolyVectorField]) -> list[PolyVectorField]:
    """Left-invariant fields are fixed by their value at 0; keep an independent subset."""
    keep, vecs = [], []
    for f in fields:
        v = f.at_origin()
        if rank(vecs + [v]) > len(vecs):
            keep.append(f)
            vecs.append(v)
    return keep


# --------------------------------------------------------------------------
# multi-indices
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DerivativeMultiIndex:
    """``X^I D_t^l`` with ``X^I = X_{i_1} X_{i_2} ... X_{i_j}`` (0-based horizontal indices).

    The rightmost field acts first.  The homogeneous order is ``|I| + 2 l``.
    """

    indices: tuple[int, ...] = ()
    time_order: int = 0

    def __post_init__(self):
        if self.time_order < 0:
            raise ValueError("time order must be nonnegative")
        if any(i < 0 for i in self.indices):
            raise ValueError("field indices are 0-based and nonnegative")

    @property
    def order(self) -> int:
        return len(self.indices) + 2 * self.time_order

    def validate(self, m1: int) -> None:
        if any(i >= m1 for i in self.indices):
            raise ValueError(f"field index out of range for m1={m1}: {self.indices}")

    @classmethod
    def all_of_order(cls, m1: int, k: int) -> list["DerivativeMultiIndex"]:
        out = []
        for l in range(k // 2 + 1):
            for word in itertools.product(range(m1), repeat=k - 2 * l):
                out.append(cls(tuple(word), l))
        return out

    @classmethod
    def all_up_to(cls, m1: int, k: int) -> list["DerivativeMultiIndex"]:
        return [d for j in range(k + 1) for d in cls.all_of_order(m1, j)]

    def __str__(self):
        s = "".join(f"X{i + 1}" for i in self.indices)
        if self.time_order:
            s += f"Dt^{self.time_order}" if self.time_order > 1 else "Dt"
        return s or "id"


# --------------------------------------------------------------------------
# closed-form functions
# --------------------------------------------------------------------------


class SymbolicFunction:
    """A sympy expression in real symbols ``x1..xN, t`` with group derivatives.

    ``DiracDelta`` terms produced by differentiating ``Abs`` are dropped; this
    is valid for the power profiles used here, which vanish to positive order
    at the kink.
    """

    def __init__(self, g: CarnotGroup, expr, symbols=None):
        import sympy as sp

        self.group = g
        self.symbols = tuple(symbols) if symbols is not None else spacetime_symbols(g.N)
        self.expr = sp.sympify(expr)
        self._fn = None

    @classmethod
    def from_poly(cls, g: CarnotGroup, p: GradedPoly) -> "SymbolicFunction":
        syms = spacetime_symbols(g.N)
        return cls(g, p.to_sympy(syms), syms)

    def _wrap(self, expr) -> "SymbolicFunction":
        import sympy as sp

        expr = expr.replace(sp.DiracDelta, lambda *a: sp.Integer(0))
        return SymbolicFunction(self.group, expr, self.symbols)

    def apply_field(self, f: PolyVectorField) -> "SymbolicFunction":
        import sympy as sp

        tot = sp.Integer(0)
        for k, b in enumerate(f.coeffs):
            if not b.is_zero():
                tot += b.to_sympy(self.symbols) * sp.diff(self.expr, self.symbols[k])
        return self._wrap(tot)

    def dt(self) -> "SymbolicFunction":
        import sympy as sp

        return self._wrap(sp.diff(self.expr, self.symbols[-1]))

    def derivative(self, d: DerivativeMultiIndex) -> "SymbolicFunction":
        d.validate(self.group.m1)
        fields = horizontal_fields(self.group)
        out = self
        for _ in range(d.time_order):
            out = out.dt()
        for i in reversed(d.indices):
            out = out.apply_field(fields[i])
        return out

    def evaluate(self, points) -> np.ndarray:
        import sympy as sp

        if self._fn is None:
            self._fn = sp.lambdify(self.symbols, self.expr, modules="numpy")
        pts = np.asarray(points, dtype=float)
        with np.errstate(all="ignore"):
            val = self._fn(*[pts[..., j] for j in range(pts.shape[-1])])
        return np.broadcast_to(np.asarray(val, dtype=float), pts.shape[:-1]).copy()

    __call__ = evaluate

    def value_at(self, point, eps: float = 1e-9, seed: int = 0) -> float:
        """Value at a single point, taking a one-sided limit estimate at removable singularities."""
        point = np.asarray(point, dtype=float)
        v = float(self.evaluate(point[None])[0])
        if np.isfinite(v):
            return v
        rng = np.random.default_rng(seed)
        w = np.asarray(self.group.spacetime_weights, dtype=float)
        dirs = rng.normal(size=(16, point.size))
        vals = self.evaluate(point + dirs * eps**w)
        vals = vals[np.isfinite(vals)]
        if not vals.size:
            raise FloatingPointError("closed form is singular at the requested point")
        return float(np.mean(vals))

    def __add__(self, other):
        o = other.expr if isinstance(other, SymbolicFunction) else other
        return SymbolicFunction(self.group, self.expr + o, self.symbols)

    def __sub__(self, other):
        o = other.expr if isinstance(other, SymbolicFunction) else other
        return SymbolicFunction(self.group, self.expr - o, self.symbols)

    def __mul__(self, other):
        o = other.expr if isinstance(other, SymbolicFunction) else other
        return SymbolicFunction(self.group, self.expr * o, self.symbols)

    __rmul__ = __mul__

    def __repr__(self):
        return f"SymbolicFunction({self.expr})"


def spacetime_symbols(n: int):
    import sympy as sp

    return tuple(sp.Symbol(f"x{j + 1}", real=True) for j in range(n)) + (sp.Symbol("t", real=True),)


# --------------------------------------------------------------------------
# derivatives
# --------------------------------------------------------------------------


class StencilError(ValueError):
    """A finite-difference stencil would leave the grid."""


def apply_derivative(g: CarnotGroup, f, d: DerivativeMultiIndex, expanded: bool = False):
    """``X^I D_t^l f`` for a polynomial, closed form or grid function.

    Polynomials are differentiated exactly.  Grid functions use second-order
    centred differences (one-sided second order at the box faces); each
    first-order field is discretised separately and the fields are composed
    innermost first.  ``expanded=True`` instead uses the expanded second-order
    form for a trailing pair ``X_i X_j`` (see :func:`grid_xx`).
    """
    d.validate(g.m1)
    if isinstance(f, GradedPoly):
        fields = horizontal_fields(g)
        out = f
        for _ in range(d.time_order):
            out = out.diff(g.N)
        for i in reversed(d.indices):
            out = fields[i].apply(out)
        return out
    if isinstance(f, SymbolicFunction):
        return f.derivative(d)
    if isinstance(f, GridFunction):
        return _grid_derivative(g, f, d, expanded)
    raise TypeError(f"cannot differentiate {type(f).__name__}")


def _check_stencil(shape, axes):
    for ax in axes:
        if shape[ax] < 3:
            raise StencilError(f"axis {ax} has {shape[ax]} nodes; second-order stencils need at least 3")


def grid_field(g: CarnotGroup, u: GridFunction, i: int) -> GridFunction:
    """``X_i u`` on every stored time level."""
    fld = horizontal_fields(g)[i]
    grid = u.grid
    used = [k for k, b in enumerate(fld.coeffs) if not b.is_zero()]
    _check_stencil(grid.shape, used)
    nodes = grid.nodes()
    out = np.zeros_like(u.values)
    coeff_vals = {}
    for k in used:
        b = fld.coeffs[k]
        pts = np.concatenate([nodes, np.zeros((len(nodes), 1))], axis=1)
        coeff_vals[k] = b.evaluate(pts).reshape(grid.shape)
    for lev in range(u.n_levels):
        acc = np.zeros(grid.shape)
        for k in used:
            acc += coeff_vals[k] * np.gradient(u.values[lev], grid.spacing[k], axis=k, edge_order=2)
        out[lev] = acc
    return GridFunction(grid, u.times, out, dict(u.meta))


def grid_dt(u: GridFunction) -> GridFunction:
    if u.n_levels < 3:
        raise StencilError("time derivative needs at least 3 stored levels")
    return GridFunction(u.grid, u.times, np.gradient(u.values, u.times, axis=0, edge_order=2), dict(u.meta))


def grid_xx(g: CarnotGroup, u: GridFunction, i: int, j: int) -> GridFunction:
    """``X_i X_j u`` via the expanded form ``sum b_ik (d_k b_jl) d_l u + b_ik b_jl d_kl u``.

    Pure second derivatives use the compact 3-point stencil; mixed ones use
    composed centred differences.
    """
    fi, fj = horizontal_fields(g)[i], horizontal_fields(g)[j]
    grid = u.grid
    nodes = grid.nodes()
    pts = np.concatenate([nodes, np.zeros((len(nodes), 1))], axis=1)
    n = g.N
    used_i = [k for k in range(n) if not fi.coeffs[k].is_zero()]
    used_j = [k for k in range(n) if not fj.coeffs[k].is_zero()]
    _check_stencil(grid.shape, set(used_i) | set(used_j))
    out = np.zeros_like(u.values)
    bi = {k: fi.coeffs[k].evaluate(pts).reshape(grid.shape) for k in used_i}
    bj = {l: fj.coeffs[l].evaluate(pts).reshape(grid.shape) for l in used_j}
    dbj = {(k, l): fj.coeffs[l].diff(k).evaluate(pts).reshape(grid.shape) for k in used_i for l in used_j}
    for lev in range(u.n_levels):
        v = u.values[lev]
        first = {l: np.gradient(v, grid.spacing[l], axis=l, edge_order=2) for l in used_j}
        acc = np.zeros(grid.shape)
        for k in used_i:
            for l in used_j:
                c1 = bi[k] * dbj[(k, l)]
                if np.any(c1):
                    acc += c1 * first[l]
                if k == l:
                    d2 = _second_difference(v, grid.spacing[k], k)
                else:
                    d2 = np.gradient(first[l], grid.spacing[k], axis=k, edge_order=2)
                acc += bi[k] * bj[l] * d2
        out[lev] = acc
    return GridFunction(grid, u.times, out, dict(u.meta))


def _second_difference(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Compact 3-point second difference; 4-point one-sided second order at the faces."""
    out = np.empty_like(v)
    sl = [slice(None)] * v.ndim

    def s(a, b=None):
        idx = list(sl)
        idx[axis] = slice(a, b) if b is not None or a is None else a
        return tuple(idx)

    n = v.shape[axis]
    out[s(1, n - 1)] = (v[s(2, n)] - 2 * v[s(1, n - 1)] + v[s(0, n - 2)]) / h**2
    if n >= 4:
        out[s(0)] = (2 * v[s(0)] - 5 * v[s(1)] + 4 * v[s(2)] - v[s(3)]) / h**2
        out[s(n - 1)] = (2 * v[s(n - 1)] - 5 * v[s(n - 2)] + 4 * v[s(n - 3)] - v[s(n - 4)]) / h**2
    else:
        out[s(0)] = out[s(1)]
        out[s(n - 1)] = out[s(n - 2)]
    return out


def _grid_derivative(g, u: GridFunction, d: DerivativeMultiIndex, expanded: bool) -> GridFunction:
    out = u
    for _ in range(d.time_order):
        out = grid_dt(out)
    idx = list(d.indices)
    if expanded and len(idx) >= 2:
        out = grid_xx(g, out, idx[-2], idx[-1])
        idx = idx[:-2]
    for i in reversed(idx):
        out = grid_field(g, out, i)
    return out
