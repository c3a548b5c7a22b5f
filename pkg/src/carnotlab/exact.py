"""Exact rational linear algebra on lists of :class:`fractions.Fraction`.

Matrices are plain lists of rows.  Everything here is small and dense; the
routines are meant for structure-constant and polynomial-coefficient systems
whose sizes stay in the low hundreds.
"""

from __future__ import annotations

from fractions import Fraction
from math import gcd
from typing import Sequence

Matrix = list[list[Fraction]]


def as_fraction(x) -> Fraction:
    """Convert ints, Fractions, floats (exactly) or "p/q" strings to Fraction."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x.strip())
    return Fraction(x)


def to_matrix(rows: Sequence[Sequence]) -> Matrix:
    return [[as_fraction(v) for v in row] for row in rows]


def rref(a: Matrix) -> tuple[Matrix, list[int]]:
    """Reduced row echelon form and pivot columns (input is not modified)."""
    m = [list(r) for r in a]
    if not m:
        return m, []
    nrows, ncols = len(m), len(m[0])
    pivots: list[int] = []
    row = 0
    for col in range(ncols):
        if row >= nrows:
            break
        piv = next((i for i in range(row, nrows) if m[i][col] != 0), None)
        if piv is None:
            continue
        m[row], m[piv] = m[piv], m[row]
        inv = 1 / m[row][col]
        m[row] = [v * inv for v in m[row]]
        for i in range(nrows):
            if i != row and m[i][col] != 0:
                f = m[i][col]
                ri = m[i]
                rr = m[row]
                m[i] = [ri[k] - f * rr[k] for k in range(ncols)]
        pivots.append(col)
        row += 1
    return m, pivots


def rank(a: Matrix) -> int:
    return len(rref(a)[1]) if a else 0


def transpose(a: Matrix) -> Matrix:
    return [list(col) for col in zip(*a)] if a else []


def matmul(a: Matrix, b: Matrix) -> Matrix:
    bt = transpose(b)
    return [[sum((x * y for x, y in zip(row, col)), Fraction(0)) for col in bt] for row in a]


def matvec(a: Matrix, v: Sequence[Fraction]) -> list[Fraction]:
    return [sum((x * y for x, y in zip(row, v)), Fraction(0)) for row in a]


def nullspace(a: Matrix, ncols: int | None = None) -> Matrix:
    """Basis of the right null space, one vector per row."""
    if not a:
        n = ncols or 0
        return [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    r, piv = rref(a)
    n = len(a[0])
    free = [c for c in range(n) if c not in piv]
    basis = []
    for fc in free:
        v = [Fraction(0)] * n
        v[fc] = Fraction(1)
        for i, pc in enumerate(piv):
            v[pc] = -r[i][fc]
        basis.append(v)
    return basis


def independent_rows(a: Matrix) -> list[int]:
    """Indices of a maximal set of linearly independent rows (greedy, in order)."""
    _, piv = rref(transpose(a))
    return piv


def solve_square(a: Matrix, b: Sequence[Fraction]) -> list[Fraction]:
    n = len(a)
    aug = [list(a[i]) + [as_fraction(b[i])] for i in range(n)]
    r, piv = rref(aug)
    if len(piv) < n or piv[-1] >= n:
        raise ZeroDivisionError("singular system")
    return [r[i][n] for i in range(n)]


class InconsistentSystem(ValueError):
    """Raised when a linear system has no solution.  Carries rank data."""

    def __init__(self, msg: str, rank_matrix: int, rank_augmented: int):
        super().__init__(msg)
        self.rank_matrix = rank_matrix
        self.rank_augmented = rank_augmented


def min_norm_solve(a: Matrix, b: Sequence[Fraction]) -> list[Fraction]:
    """Minimum Euclidean-norm solution of a consistent system ``a x = b``.

    Uses ``x = a_S^T (a_S a_S^T)^{-1} b_S`` on a maximal independent row subset
    ``S``; the remaining equations are then checked exactly.
    """
    b = [as_fraction(v) for v in b]
    if not a:
        return []
    rows = independent_rows(a)
    r_aug = rank([list(a[i]) + [b[i]] for i in range(len(a))])
    if r_aug > len(rows):
        raise InconsistentSystem(
            f"inconsistent system: rank(M)={len(rows)} < rank([M|b])={r_aug}", len(rows), r_aug
        )
    if not rows:
        return [Fraction(0)] * len(a[0])
    a_s = [a[i] for i in rows]
    b_s = [b[i] for i in rows]
    gram = matmul(a_s, transpose(a_s))
    y = solve_square(gram, b_s)
    return matvec(transpose(a_s), y)


def solve_unique(a: Matrix, b: Sequence[Fraction]) -> list[Fraction]:
    """Solve an overdetermined but consistent system with full column rank."""
    n = len(a[0])
    aug = [list(a[i]) + [as_fraction(b[i])] for i in range(len(a))]
    r, piv = rref(aug)
    if n in piv:
        ra = len([p for p in piv if p < n])
        raise InconsistentSystem("inconsistent system", ra, len(piv))
    if len(piv) < n:
        raise ValueError(f"system is underdetermined: rank {len(piv)} < {n}")
    return [r[i][n] for i in range(n)]


def rational_gcd(values) -> Fraction:
    """Largest positive rational g with every value an integer multiple of g."""
    num, den = 0, 1
    for v in values:
        v = abs(as_fraction(v))
        if v == 0:
            continue
        # gcd(a/b, c/d) = gcd(a d, c b) / (b d)
        n2 = gcd(num * v.denominator, v.numerator * den)
        d2 = den * v.denominator
        num, den = n2, d2
        f = Fraction(num, den)
        num, den = f.numerator, f.denominator
    return Fraction(num, den)


def format_fraction(x: Fraction) -> str:
    x = as_fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
