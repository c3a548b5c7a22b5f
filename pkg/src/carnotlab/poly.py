"""Sparse multivariate polynomials with a weighted (homogeneous) grading.

A :class:`GradedPoly` maps exponent tuples to coefficients.  Coefficients are
kept as :class:`~fractions.Fraction` whenever the inputs are exact, so group
laws, derivatives and heat operators can be computed without rounding.
Floating coefficients are allowed as well and propagate as usual.
"""

from __future__ import annotations

from fractions import Fraction
from numbers import Number
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exact import as_fraction, format_fraction


def _norm_coeff(c):
    if isinstance(c, (bool, np.bool_)):
        return Fraction(int(c))
    if isinstance(c, (int, np.integer)):
        return Fraction(int(c))
    if isinstance(c, np.floating):
        return float(c)
    return c


class GradedPoly:
    """Polynomial in ``len(weights)`` variables, variable ``j`` having weight ``weights[j]``.

    The homogeneous degree of a monomial ``x^e`` is ``sum(weights[j] * e[j])``.
    """

    __slots__ = ("weights", "terms")
    __hash__ = None  # mutable-looking value type; compare with ==

    def __init__(self, weights: Sequence[int], terms: Mapping[tuple, object] | None = None):
        self.weights = tuple(int(w) for w in weights)
        clean = {}
        if terms:
            n = len(self.weights)
            for e, c in terms.items():
                e = tuple(int(v) for v in e)
                if len(e) != n:
                    raise ValueError(f"exponent {e} has wrong length for {n} variables")
                c = _norm_coeff(c)
                if c != 0:
                    clean[e] = c
        self.terms = clean

    # -- constructors -------------------------------------------------
    @classmethod
    def zero(cls, weights) -> "GradedPoly":
        return cls(weights)

    @classmethod
    def constant(cls, weights, c) -> "GradedPoly":
        return cls(weights, {(0,) * len(weights): c})

    @classmethod
    def variable(cls, weights, j: int, coeff=1) -> "GradedPoly":
        e = [0] * len(weights)
        e[j] = 1
        return cls(weights, {tuple(e): coeff})

    @classmethod
    def monomial(cls, weights, exps, coeff=1) -> "GradedPoly":
        return cls(weights, {tuple(exps): coeff})

    # -- basic properties ---------------------------------------------
    @property
    def nvars(self) -> int:
        return len(self.weights)

    def monomial_degree(self, e) -> int:
        return sum(w * k for w, k in zip(self.weights, e))

    def degree(self) -> int:
        """Largest homogeneous degree present; -1 for the zero polynomial."""
        return max((self.monomial_degree(e) for e in self.terms), default=-1)

    def min_degree(self) -> int:
        return min((self.monomial_degree(e) for e in self.terms), default=-1)

    def is_zero(self) -> bool:
        return not self.terms

    def is_exact(self) -> bool:
        return all(isinstance(c, Fraction) for c in self.terms.values())

    def is_homogeneous(self, d: int | None = None) -> bool:
        degs = {self.monomial_degree(e) for e in self.terms}
        if not degs:
            return True
        return len(degs) == 1 and (d is None or degs == {d})

    def homogeneous_part(self, d: int) -> "GradedPoly":
        return GradedPoly(self.weights, {e: c for e, c in self.terms.items() if self.monomial_degree(e) == d})

    def truncate(self, d: int) -> "GradedPoly":
        """Drop every monomial of homogeneous degree above ``d``."""
        return GradedPoly(self.weights, {e: c for e, c in self.terms.items() if self.monomial_degree(e) <= d})

    def grades(self) -> dict[int, "GradedPoly"]:
        out: dict[int, dict] = {}
        for e, c in self.terms.items():
            out.setdefault(self.monomial_degree(e), {})[e] = c
        return {d: GradedPoly(self.weights, t) for d, t in sorted(out.items())}

    def coefficient(self, e) -> object:
        return self.terms.get(tuple(e), Fraction(0))

    def variables_used(self) -> set[int]:
        return {j for e in self.terms for j, k in enumerate(e) if k}

    # -- arithmetic -----------------------------------------------------
    def _coerce(self, other) -> "GradedPoly":
        if isinstance(other, GradedPoly):
            if other.weights != self.weights:
                raise ValueError("polynomials live in different graded rings")
            return other
        if isinstance(other, (Number, np.number)):
            return GradedPoly.constant(self.weights, other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        t = dict(self.terms)
        for e, c in other.terms.items():
            t[e] = t.get(e, 0) + c
        return GradedPoly(self.weights, t)

    __radd__ = __add__

    def __neg__(self):
        return GradedPoly(self.weights, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (Number, np.number)):
            other = _norm_coeff(other)
            return GradedPoly(self.weights, {e: c * other for e, c in self.terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        t: dict[tuple, object] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                t[e] = t.get(e, 0) + c1 * c2
        return GradedPoly(self.weights, t)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (Number, np.number)):
            return NotImplemented
        other = _norm_coeff(other)
        inv = (1 / other) if not isinstance(other, Fraction) else Fraction(1) / other
        return self * inv

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative powers are not polynomials")
        out = GradedPoly.constant(self.weights, 1)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def __eq__(self, other):
        if isinstance(other, (Number, np.number)):
            other = GradedPoly.constant(self.weights, other)
        if not isinstance(other, GradedPoly):
            return NotImplemented
        return self.weights == other.weights and self.terms == other.terms

    # -- calculus ---------------------------------------------------------
    def diff(self, j: int, order: int = 1) -> "GradedPoly":
        t: dict[tuple, object] = {}
        for e, c in self.terms.items():
            k = e[j]
            if k < order:
                continue
            f = 1
            for i in range(order):
                f *= k - i
            e2 = list(e)
            e2[j] = k - order
            e2 = tuple(e2)
            t[e2] = t.get(e2, 0) + c * f
        return GradedPoly(self.weights, t)

    def compose(self, subs: Sequence["GradedPoly"]) -> "GradedPoly":
        """Substitute variable ``j`` by ``subs[j]`` (all in one common ring)."""
        if len(subs) != self.nvars:
            raise ValueError("need one substitution per variable")
        w = subs[0].weights
        cache: dict[tuple[int, int], GradedPoly] = {}

        def pw(j, k):
            key = (j, k)
            if key not in cache:
                cache[key] = subs[j] ** k
            return cache[key]

        out = GradedPoly(w)
        for e, c in self.terms.items():
            term = GradedPoly.constant(w, c)
            for j, k in enumerate(e):
                if k:
                    term = term * pw(j, k)
            out = out + term
        return out

    def embed(self, weights, positions: Sequence[int]) -> "GradedPoly":
        """Re-express in a larger ring; variable ``j`` becomes ``positions[j]``."""
        n = len(weights)
        t = {}
        for e, c in self.terms.items():
            e2 = [0] * n
            for j, k in enumerate(e):
                e2[positions[j]] += k
            t[tuple(e2)] = c
        return GradedPoly(weights, t)

    def scale_variables(self, factors: Sequence) -> "GradedPoly":
        """``P(f_0 x_0, ..., f_{n-1} x_{n-1})``."""
        t = {}
        for e, c in self.terms.items():
            s = c
            for f, k in zip(factors, e):
                if k:
                    s = s * f**k
            t[e] = s
        return GradedPoly(self.weights, t)

    def map_coefficients(self, fn) -> "GradedPoly":
        return GradedPoly(self.weights, {e: fn(c) for e, c in self.terms.items()})

    def to_float(self) -> "GradedPoly":
        return self.map_coefficients(float)

    # -- evaluation -------------------------------------------------------
    def evaluate(self, points) -> np.ndarray:
        """Vectorised float evaluation at ``points`` of shape ``(..., nvars)``."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.nvars:
            raise ValueError(f"points have {pts.shape[-1]} coordinates, expected {self.nvars}")
        out = np.zeros(pts.shape[:-1])
        cache: dict[tuple[int, int], np.ndarray] = {}
        for e, c in self.terms.items():
            term = np.full(pts.shape[:-1], float(c))
            for j, k in enumerate(e):
                if k:
                    key = (j, k)
                    if key not in cache:
                        cache[key] = pts[..., j] ** k
                    term = term * cache[key]
            out = out + term
        return out

    __call__ = evaluate

    def evaluate_exact(self, point: Sequence) -> Fraction:
        pt = [as_fraction(v) for v in point]
        total = Fraction(0)
        for e, c in self.terms.items():
            v = as_fraction(c)
            for x, k in zip(pt, e):
                if k:
                    v *= x**k
            total += v
        return total

    def constant_term(self):
        return self.terms.get((0,) * self.nvars, Fraction(0))

    # -- conversion / io --------------------------------------------------
    def to_sympy(self, symbols):
        import sympy as sp

        expr = sp.Integer(0)
        for e, c in self.terms.items():
            term = sp.Rational(c.numerator, c.denominator) if isinstance(c, Fraction) else sp.Float(c)
            for s, k in zip(symbols, e):
                if k:
                    term = term * s**k
            expr = expr + term
        return expr

    def to_records(self) -> list[tuple[tuple[int, ...], str]]:
        """Sorted ``(exponents, "p/q")`` records; float coefficients use ``repr``."""
        out = []
        for e in sorted(self.terms):
            c = self.terms[e]
            out.append((e, format_fraction(c) if isinstance(c, Fraction) else repr(float(c))))
        return out

    def dumps(self) -> str:
        lines = ["weights " + " ".join(map(str, self.weights))]
        for e, c in self.to_records():
            lines.append(" ".join(map(str, e)) + " : " + c)
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "GradedPoly":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("weights"):
            raise ValueError("missing 'weights' header")
        weights = [int(v) for v in lines[0].split()[1:]]
        terms = {}
        for ln in lines[1:]:
            lhs, rhs = ln.split(":")
            e = tuple(int(v) for v in lhs.split())
            rhs = rhs.strip()
            terms[e] = Fraction(rhs) if ("." not in rhs and "e" not in rhs.lower()) else float(rhs)
        return cls(weights, terms)

    def __repr__(self):
        if not self.terms:
            return "GradedPoly(0)"
        parts = []
        for e in sorted(self.terms, key=lambda e: (self.monomial_degree(e), e)):
            c = self.terms[e]
            mono = "*".join(f"z{j}^{k}" if k > 1 else f"z{j}" for j, k in enumerate(e) if k)
            cs = format_fraction(c) if isinstance(c, Fraction) else f"{c:.6g}"
            parts.append(cs if not mono else f"{cs}*{mono}")
        return "GradedPoly(" + " + ".join(parts) + ")"


def enumerate_exponents(weights: Sequence[int], max_degree: int, exact_degree: bool = False) -> list[tuple]:
    """All exponent tuples with weighted degree ``<= max_degree`` (or ``==``)."""
    out: list[tuple] = []
    n = len(weights)

    def rec(j, remaining, cur):
        if j == n:
            if not exact_degree or remaining == 0:
                out.append(tuple(cur))
            return
        w = weights[j]
        for k in range(remaining // w + 1):
            cur.append(k)
            rec(j + 1, remaining - k * w, cur)
            cur.pop()

    rec(0, max_degree, [])
    return out


def linear_combination(weights, coeffs: Iterable, polys: Iterable[GradedPoly]) -> GradedPoly:
    out = GradedPoly(weights)
    for c, p in zip(coeffs, polys):
        if c != 0:
            out = out + p * c
    return out
