"""Carnot groups in exponential coordinates.

A group is described by a :class:`StratificationSpec`: the layer dimensions
and the nonzero structure constants ``[e_a, e_b] = sum_c C^c_{ab} e_c`` of a
graded basis.  :func:`build_group` validates the spec and expands the
Baker-Campbell-Hausdorff series (which terminates by nilpotency) into exact
polynomial multiplication tables.

Points are numpy arrays of shape ``(..., N)``; space-time points carry the
time as an extra last coordinate, shape ``(..., N + 1)``.
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .exact import as_fraction, format_fraction, rank
from .poly import GradedPoly


class SpecError(ValueError):
    """An invalid stratification: grading, antisymmetry, Jacobi or generation."""


# --------------------------------------------------------------------------
# specification
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StratificationSpec:
    """Layer dimensions plus sparse structure constants.

    ``brackets`` holds ``(a, b, c, coeff)`` with 0-based basis indices and
    ``a < b``; it means ``[e_a, e_b]`` has ``coeff`` as its ``e_c`` component.
    Basis vectors are ordered layer by layer.
    """

    layer_dims: tuple[int, ...]
    brackets: tuple[tuple[int, int, int, Fraction], ...] = ()
    name: str = "custom"

    @classmethod
    def from_brackets(cls, layer_dims, entries, name="custom") -> "StratificationSpec":
        """Normalise user entries ``(a, b, c, coeff)`` (any order of a, b).

        Entries given for both ``(a, b)`` and ``(b, a)`` must be negatives of
        each other; ``[e_a, e_a]`` must vanish.
        """
        layer_dims = tuple(int(m) for m in layer_dims)
        if not layer_dims or any(m <= 0 for m in layer_dims):
            raise SpecError(f"layer dimensions must be positive integers, got {layer_dims}")
        n = sum(layer_dims)
        given: dict[tuple[int, int, int], Fraction] = {}
        for a, b, c, coeff in entries:
            a, b, c, coeff = int(a), int(b), int(c), as_fraction(coeff)
            for idx in (a, b, c):
                if not 0 <= idx < n:
                    raise SpecError(f"basis index {idx} out of range 0..{n - 1}")
            if a == b:
                if coeff != 0:
                    raise SpecError(f"antisymmetry violation: [e{a}, e{a}] has e{c} component {coeff}")
                continue
            given[(a, b, c)] = given.get((a, b, c), Fraction(0)) + coeff
        canon: dict[tuple[int, int, int], Fraction] = {}
        for (a, b, c), v in given.items():
            if a < b:
                key, val = (a, b, c), v
                other = given.get((b, a, c))
                if other is not None and other != -v:
                    raise SpecError(
                        f"antisymmetry violation: [e{a}, e{b}]_{c} = {v} but [e{b}, e{a}]_{c} = {other}"
                    )
            else:
                key, val = (b, a, c), -v
                if (b, a, c) in given:
                    continue
            if val != 0:
                canon[key] = val
        br = tuple(sorted((a, b, c, v) for (a, b, c), v in canon.items()))
        return cls(layer_dims, br, name)

    @property
    def step(self) -> int:
        return len(self.layer_dims)

    @property
    def dim(self) -> int:
        return sum(self.layer_dims)

    @property
    def weights(self) -> tuple[int, ...]:
        return tuple(k + 1 for k, m in enumerate(self.layer_dims) for _ in range(m))

    @property
    def homogeneous_dimension(self) -> int:
        return sum((k + 1) * m for k, m in enumerate(self.layer_dims))

    def bracket_table(self) -> dict[tuple[int, int], dict[int, Fraction]]:
        """Full antisymmetric table ``(a, b) -> {c: coeff}``."""
        t: dict[tuple[int, int], dict[int, Fraction]] = {}
        for a, b, c, v in self.brackets:
            t.setdefault((a, b), {})[c] = v
            t.setdefault((b, a), {})[c] = -v
        return t

    def bracket(self, u: Sequence[Fraction], v: Sequence[Fraction]) -> list[Fraction]:
        out = [Fraction(0)] * self.dim
        for (a, b), comps in self.bracket_table().items():
            if u[a] == 0 or v[b] == 0:
                continue
            s = u[a] * v[b]
            for c, coeff in comps.items():
                out[c] += s * coeff
        return out

    # -- serialisation ----------------------------------------------------
    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "layer_dims": list(self.layer_dims),
            "brackets": [[a, b, c, format_fraction(v)] for a, b, c, v in self.brackets],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StratificationSpec":
        doc = json.loads(text)
        return cls.from_brackets(doc["layer_dims"], [tuple(e) for e in doc.get("brackets", [])], doc.get("name", "custom"))


def validate_spec(spec: StratificationSpec) -> None:
    """Raise :class:`SpecError` unless the spec defines a stratified algebra."""
    w = spec.weights
    n = spec.dim
    for a, b, c, v in spec.brackets:
        if w[c] != w[a] + w[b]:
            raise SpecError(
                f"grading violation: [e{a}, e{b}] (layers {w[a]}, {w[b]}) has component {v} on e{c} in layer {w[c]}"
            )
    unit = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    for a, b, c in itertools.combinations(range(n), 3):
        ea, eb, ec = unit[a], unit[b], unit[c]
        s1 = spec.bracket(ea, spec.bracket(eb, ec))
        s2 = spec.bracket(eb, spec.bracket(ec, ea))
        s3 = spec.bracket(ec, spec.bracket(ea, eb))
        tot = [x + y + z for x, y, z in zip(s1, s2, s3)]
        if any(tot):
            raise SpecError(f"Jacobi identity fails on (e{a}, e{b}, e{c}): sum = {[str(x) for x in tot]}")
    reached = generated_layer_ranks(spec)
    for k, (got, want) in enumerate(zip(reached, spec.layer_dims)):
        if got < want:
            raise SpecError(
                f"layer {k + 1} is not generated by layer 1: iterated brackets span rank {got} < {want}"
            )


def generated_layer_ranks(spec: StratificationSpec) -> list[int]:
    """Rank of ``[V1, [V1, ... V1]]`` in each layer."""
    n = spec.dim
    w = spec.weights
    unit = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    horiz = [unit[i] for i in range(n) if w[i] == 1]
    current = list(horiz)
    ranks = [rank(current)]
    for _ in range(1, spec.step):
        nxt = [spec.bracket(h, v) for h in horiz for v in current]
        nxt = [v for v in nxt if any(v)]
        ranks.append(rank(nxt) if nxt else 0)
        current = nxt
    return ranks


# --------------------------------------------------------------------------
# BCH expansion
# --------------------------------------------------------------------------


def _even_bernoulli(n_max: int) -> dict[int, Fraction]:
    from sympy import bernoulli

    return {k: Fraction(int(bernoulli(k).p), int(bernoulli(k).q)) for k in range(2, n_max + 1, 2)}


def bch_tables(spec: StratificationSpec) -> list[GradedPoly]:
    """Coordinates of ``log(exp(X) exp(Y))`` as exact polynomials in ``(X, Y)``.

    Uses the Goldberg-free recursion for the homogeneous pieces ``Z_n``::

        (n+1) Z_{n+1} = 1/2 [X - Y, Z_n]
            + sum_{p>=1} B_{2p}/(2p)! sum_{k_1+..+k_{2p}=n} [Z_{k_1}, [... [Z_{k_2p}, X + Y]]]
    """
    n = spec.dim
    r = spec.step
    weights2 = spec.weights * 2
    table = spec.bracket_table()

    def br(u: list[GradedPoly], v: list[GradedPoly]) -> list[GradedPoly]:
        out = [GradedPoly(weights2) for _ in range(n)]
        for (a, b), comps in table.items():
            if u[a].is_zero() or v[b].is_zero():
                continue
            prod = u[a] * v[b]
            for c, coeff in comps.items():
                out[c] = out[c] + prod * coeff
        return out

    def add(u, v):
        return [p + q for p, q in zip(u, v)]

    def scale(u, s):
        return [p * s for p in u]

    X = [GradedPoly.variable(weights2, a) for a in range(n)]
    Y = [GradedPoly.variable(weights2, n + a) for a in range(n)]
    XpY = add(X, Y)
    XmY = add(X, scale(Y, -1))
    Z: dict[int, list[GradedPoly]] = {1: XpY}
    bern = _even_bernoulli(r)
    for m in range(1, r):
        acc = scale(br(XmY, Z[m]), Fraction(1, 2))
        for p in range(1, m // 2 + 1):
            coef = bern[2 * p] / math.factorial(2 * p)
            if coef == 0:
                continue
            for ks in _compositions(m, 2 * p):
                term = XpY
                for k in reversed(ks):
                    term = br(Z[k], term)
                acc = add(acc, scale(term, coef))
        Z[m + 1] = scale(acc, Fraction(1, m + 1))
    out = [GradedPoly(weights2) for _ in range(n)]
    for m in Z:
        out = add(out, Z[m])
    return out


def _compositions(total: int, parts: int):
    """Ordered tuples of ``parts`` positive integers summing to ``total``."""
    if parts == 1:
        if total >= 1:
            yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


# --------------------------------------------------------------------------
# group object
# --------------------------------------------------------------------------


class _CompiledPoly:
    """Float evaluator sharing a power cache across several polynomials."""

    def __init__(self, polys: Sequence[GradedPoly]):
        self.items = [[(e, float(c)) for e, c in p.terms.items()] for p in polys]

    def __call__(self, pts: np.ndarray) -> list[np.ndarray]:
        cache: dict[tuple[int, int], np.ndarray] = {}
        shape = pts.shape[:-1]
        outs = []
        for terms in self.items:
            acc = np.zeros(shape)
            for e, c in terms:
                t = None
                for j, k in enumerate(e):
                    if k:
                        key = (j, k)
                        if key not in cache:
                            cache[key] = pts[..., j] ** k
                        t = cache[key] if t is None else t * cache[key]
                acc = acc + (c if t is None else c * t)
            outs.append(acc)
        return outs


@dataclass(frozen=True, eq=False)
class CarnotGroup:
    """A validated Carnot group with exact multiplication tables.

    ``bch[c]`` is the ``c``-th coordinate of ``x . y`` as a polynomial in the
    ``2N`` variables ``(x, y)``.
    """

    spec: StratificationSpec
    bch: tuple[GradedPoly, ...] = field(repr=False)

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def N(self) -> int:
        return self.spec.dim

    @property
    def Q(self) -> int:
        return self.spec.homogeneous_dimension

    @property
    def step(self) -> int:
        return self.spec.step

    @property
    def m1(self) -> int:
        return self.spec.layer_dims[0]

    @property
    def weights(self) -> tuple[int, ...]:
        return self.spec.weights

    @cached_property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def spacetime_weights(self) -> tuple[int, ...]:
        return self.weights + (2,)

    @cached_property
    def _compiled(self) -> _CompiledPoly:
        return _CompiledPoly(self.bch)

    @cached_property
    def gauge_exponent(self) -> int:
        """The even integer ``2 r!`` of the gauge norm."""
        return 2 * math.factorial(self.step)

    # -- algebra ------------------------------------------------------------
    def _check(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.N:
            raise ValueError(f"point has {p.shape[-1]} coordinates, group {self.name} needs {self.N}")
        return p

    def multiply(self, p, q) -> np.ndarray:
        """Group product, vectorised over leading axes (broadcasting)."""
        p, q = np.broadcast_arrays(self._check(p), self._check(q))
        return np.stack(self._compiled(np.concatenate([p, q], axis=-1)), axis=-1)

    def multiply_exact(self, p: Sequence, q: Sequence) -> tuple[Fraction, ...]:
        if len(p) != self.N or len(q) != self.N:
            raise ValueError("dimension mismatch")
        pt = [as_fraction(v) for v in p] + [as_fraction(v) for v in q]
        return tuple(t.evaluate_exact(pt) for t in self.bch)

    def inverse(self, p) -> np.ndarray:
        return -self._check(p)

    @property
    def identity(self) -> np.ndarray:
        return np.zeros(self.N)

    def dilate(self, s: float, p) -> np.ndarray:
        if not s > 0:
            raise ValueError(f"dilation factor must be positive, got {s}")
        return self._check(p) * np.power(float(s), self.weight_array)

    def gauge_norm(self, p) -> np.ndarray:
        """``(sum_k sum_i |x_ik|^(2r!/k))^(1/(2r!))``; the inner sum runs over layer k."""
        p = self._check(p)
        e = self.gauge_exponent
        tot = np.zeros(p.shape[:-1])
        for j, w in enumerate(self.weights):
            tot = tot + np.abs(p[..., j]) ** (e // w)
        return tot ** (1.0 / e)

    def distance(self, x, y) -> np.ndarray:
        """``d(x, y) = |x . y^{-1}|``.

        Exactly zero on the diagonal: the float product leaves an O(eps)
        residue there which the ``1/(2r!)`` root would amplify.
        """
        x, y = np.broadcast_arrays(self._check(x), self._check(y))
        d = self.gauge_norm(self.multiply(x, self.inverse(y)))
        return np.where(np.all(x == y, axis=-1), 0.0, d)

    # -- symbolic helpers ---------------------------------------------------
    def left_translation_poly(self, p: Sequence) -> list[GradedPoly]:
        """Coordinates of ``p . y`` as polynomials in ``y`` (p fixed, exact)."""
        pf = [as_fraction(v) for v in p]
        w = self.weights
        subs = [GradedPoly.constant(w, v) for v in pf] + [GradedPoly.variable(w, j) for j in range(self.N)]
        return [t.compose(subs) for t in self.bch]

    def __repr__(self):
        return f"CarnotGroup({self.name}, dims={self.spec.layer_dims}, N={self.N}, Q={self.Q})"


def build_group(spec: StratificationSpec) -> CarnotGroup:
    """Validate ``spec`` and derive its exact BCH multiplication tables."""
    validate_spec(spec)
    return CarnotGroup(spec, tuple(bch_tables(spec)))


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

HEISENBERG_CONVENTIONS = {"fields": Fraction(1), "printed": Fraction(-4)}


def heisenberg_spec(n: int = 1, convention: str | Fraction = "fields") -> StratificationSpec:
    """``H^n`` with ``[e_i, e_{n+i}] = c T``.

    ``convention="fields"`` (c = 1) gives ``X_i = d_i - x_{n+i}/2 d_t``;
    ``convention="printed"`` (c = -4) gives the law
    ``t + t' + 2 sum (x'_i x_{n+i} - x_i x'_{n+i})``.  A rational may be
    passed directly.
    """
    c = HEISENBERG_CONVENTIONS[convention] if isinstance(convention, str) else as_fraction(convention)
    entries = [(i, n + i, 2 * n, c) for i in range(n)]
    tag = convention if isinstance(convention, str) else format_fraction(c)
    return StratificationSpec.from_brackets((2 * n, 1), entries, name=f"heisenberg{n}-{tag}")


def engel_spec() -> StratificationSpec:
    """Engel algebra: ``[e1, e2] = e3`` and ``[e1, e3] = e4``."""
    return StratificationSpec.from_brackets((2, 1, 1), [(0, 1, 2, 1), (0, 2, 3, 1)], name="engel")


def abelian_spec(n: int) -> StratificationSpec:
    return StratificationSpec.from_brackets((n,), [], name=f"abelian{n}")


def upper_triangular_spec(n: int) -> StratificationSpec:
    """Strictly upper-triangular ``n x n`` matrices; layer of ``E_ij`` is ``j - i``.

    The step is ``n - 1``.  Useful as an independent check of the BCH tables
    because the group law is the matrix product of unipotent matrices.
    """
    basis = upper_triangular_basis(n)
    index = {ij: k for k, ij in enumerate(basis)}
    entries = []
    for (i, j), (k, l) in itertools.product(basis, basis):
        if j == k:
            entries.append((index[(i, j)], index[(k, l)], index[(i, l)], 1))
    dims = tuple(n - k for k in range(1, n))
    return StratificationSpec.from_brackets(dims, entries, name=f"upper{n}")


def upper_triangular_basis(n: int) -> list[tuple[int, int]]:
    """``E_ij`` index pairs ordered by layer ``j - i`` then row."""
    return [(i, i + k) for k in range(1, n) for i in range(n - k)]


def random_step3_spec(seed: int, m3: int = 1, max_num: int = 5) -> StratificationSpec:
    """A random valid step-3 algebra with layer dims ``(2, 1, m3)``, ``m3 <= 2``.

    With two generators Jacobi holds for any choice of constants, so only the
    layer-3 map needs to be nonsingular.
    """
    if m3 not in (1, 2):
        raise ValueError("m3 must be 1 or 2")
    rng = np.random.default_rng(seed)

    def rnd():
        while True:
            v = Fraction(int(rng.integers(-max_num, max_num + 1)), int(rng.integers(1, max_num + 1)))
            if v != 0:
                return v

    while True:
        c12 = rnd()
        m = [[rnd() for _ in range(m3)] for _ in range(2)]  # rows: [e0,e2], [e1,e2]
        if rank(m) == m3:
            break
    entries = [(0, 1, 2, c12)]
    for a in range(2):
        for j in range(m3):
            entries.append((a, 2, 3 + j, m[a][j]))
    return StratificationSpec.from_brackets((2, 1, m3), entries, name=f"random3-{seed}")


def heisenberg(n: int = 1, convention: str | Fraction = "fields") -> CarnotGroup:
    return build_group(heisenberg_spec(n, convention))


def engel() -> CarnotGroup:
    return build_group(engel_spec())


def abelian(n: int) -> CarnotGroup:
    return build_group(abelian_spec(n))


def upper_triangular(n: int) -> CarnotGroup:
    return build_group(upper_triangular_spec(n))


def random_step3(seed: int, m3: int = 1) -> CarnotGroup:
    return build_group(random_step3_spec(seed, m3))


PRESETS = {
    "heisenberg": heisenberg,
    "engel": engel,
    "abelian": abelian,
    "upper-triangular": upper_triangular,
    "random-step3": random_step3,
}


def preset(name: str, **params) -> CarnotGroup:
    try:
        fn = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown group preset {name!r}; known: {sorted(PRESETS)}") from None
    return fn(**params)


# --------------------------------------------------------------------------
# printed closed forms
# --------------------------------------------------------------------------


def printed_heisenberg_law(n: int = 1) -> list[GradedPoly]:
    """``(x + x', t + t' + 2 sum_i (x'_i x_{n+i} - x_i x'_{n+i}))``."""
    N = 2 * n + 1
    w = ((1,) * (2 * n) + (2,)) * 2
    v = [GradedPoly.variable(w, j) for j in range(2 * N)]
    x, y = v[:N], v[N:]
    out = [x[j] + y[j] for j in range(2 * n)]
    t = x[2 * n] + y[2 * n]
    for i in range(n):
        t = t + 2 * (y[i] * x[n + i] - x[i] * y[n + i])
    return out + [t]


def printed_engel_law() -> list[GradedPoly]:
    w = (1, 1, 2, 3) * 2
    v = [GradedPoly.variable(w, j) for j in range(8)]
    x1, x2, x3, x4, y1, y2, y3, y4 = v
    a3 = Fraction(1, 2) * (x1 * y2 - x2 * y1)
    a4 = Fraction(1, 2) * (x1 * y3 - x3 * y1) + Fraction(1, 12) * (x1 * x1 * y2 - x1 * y1 * (x2 + y2) + x2 * y1 * y1)
    return [x1 + y1, x2 + y2, x3 + y3 + a3, x4 + y4 + a4]


# --------------------------------------------------------------------------
# parabolic geometry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SpaceTimePoint:
    x: tuple[float, ...]
    t: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.asarray(tuple(self.x) + (self.t,), dtype=float)

    @classmethod
    def origin(cls, g: CarnotGroup) -> "SpaceTimePoint":
        return cls((0.0,) * g.N, 0.0)


@dataclass(frozen=True)
class Cylinder:
    """``Q_r(x0, t0) = {(x, t): |x . x0^{-1}| < r, |t - t0| < r^2}``."""

    center: SpaceTimePoint
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"cylinder radius must be positive, got {self.radius}")

    def contains(self, g: CarnotGroup, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        c = self.center.as_array()
        d = g.gauge_norm(g.multiply(pts[..., :-1], g.inverse(c[:-1])))
        return (d < self.radius) & (np.abs(pts[..., -1] - c[-1]) < self.radius**2)


def parabolic_dilate(g: CarnotGroup, s: float, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    if not s > 0:
        raise ValueError(f"dilation factor must be positive, got {s}")
    return pts * np.power(float(s), np.asarray(g.spacetime_weights, dtype=float))


def parabolic_distance(g: CarnotGroup, a, b) -> np.ndarray:
    """``(|x . y^{-1}|^2 + |t - s|)^{1/2}`` for space-time arrays ``(..., N + 1)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = g.distance(a[..., :-1], b[..., :-1])
    return np.sqrt(d**2 + np.abs(a[..., -1] - b[..., -1]))


def parabolic_gauge(g: CarnotGroup, pts) -> np.ndarray:
    """Distance to the space-time origin, ``(|x|^2 + |t|)^{1/2}``."""
    pts = np.asarray(pts, dtype=float)
    return np.sqrt(g.gauge_norm(pts[..., :-1]) ** 2 + np.abs(pts[..., -1]))


CHUNK = 1 << 15


def _chunk_sizes(total: int, chunk: int = CHUNK) -> list[int]:
    full, rem = divmod(total, chunk)
    return [chunk] * full + ([rem] if rem else [])


class QuasiTriangleEstimate(NamedTuple):
    constant: float
    triple: np.ndarray  # shape (3, N + 1): a, b, c
    sample_count: int


def estimate_quasi_triangle_constant(
    g: CarnotGroup, sample_count: int, seed: int, workers: int = 1
) -> QuasiTriangleEstimate:
    """Empirical sup of ``d_p(a, b) / (d_p(a, c) + d_p(c, b))``.

    Triples are uniform in ``[-1, 1]^(N+1)``.  The first sampled pair also
    contributes the degenerate triple ``(a, b, a)`` (ratio 1 unless a = b),
    since the constant is a sup over all triples.  0/0 counts as 0.  Samples
    are drawn chunk-wise from ``SeedSequence(seed).spawn``, so a larger
    ``sample_count`` extends the smaller run and the estimate is monotone.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    sizes = _chunk_sizes(sample_count)
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    dim = g.N + 1

    def work(args):
        ss, n = args
        rng = np.random.default_rng(ss)
        pts = rng.uniform(-1.0, 1.0, size=(n, 3, dim))
        a, b, c = pts[:, 0], pts[:, 1], pts[:, 2]
        num = parabolic_distance(g, a, b)
        den = parabolic_distance(g, a, c) + parabolic_distance(g, c, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        k = int(np.argmax(ratio))
        return float(ratio[k]), pts[k], pts[0]

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(work, zip(seqs, sizes)))
    else:
        results = [work(a) for a in zip(seqs, sizes)]
    a0, b0 = results[0][2][0], results[0][2][1]
    best = 1.0 if parabolic_distance(g, a0, b0) > 0 else 0.0
    best_triple = np.stack([a0, b0, a0])
    for val, trip, _ in results:
        if val > best:
            best, best_triple = val, trip
    return QuasiTriangleEstimate(best, best_triple, sample_count)


class MeasureCheck(NamedTuple):
    ratio: float
    expected: float
    stderr: float

    @property
    def zscore(self) -> float:
        return abs(self.ratio - self.expected) / self.stderr if self.stderr > 0 else (
            0.0 if self.ratio == self.expected else math.inf
        )


def _ball_hits(g: CarnotGroup, r: float, n: int, seed_seq: np.random.SeedSequence) -> int:
    hits = 0
    for ss, m in zip(seed_seq.spawn(len(_chunk_sizes(n))), _chunk_sizes(n)):
        rng = np.random.default_rng(ss)
        x = rng.uniform(-r, r, size=(m, g.N))
        hits += int(np.count_nonzero(g.gauge_norm(x) < r))
    return hits


def cylinder_measure_check(g: CarnotGroup, r: float, mc_samples: int, seed: int) -> MeasureCheck:
    """Monte Carlo estimate of ``|Q_r| / |Q_1|`` against ``r^(Q+2)``.

    The gauge ball ``B_r`` is sampled in the Euclidean cube ``[-r, r]^N``
    (which contains it for ``r <= 1``), so the scaling law is measured rather
    than built in.  The time factor ``2 r^2`` of the cylinder is exact.
    """
    if not 0 < r <= 1:
        raise ValueError("need 0 < r <= 1")
    ref_seq, r_seq = np.random.SeedSequence(seed).spawn(2)
    n = int(mc_samples)
    h1 = _ball_hits(g, 1.0, n, ref_seq)
    hr = h1 if r == 1 else _ball_hits(g, r, n, r_seq)
    p1, pr = h1 / n, hr / n
    ratio = (r**g.N * pr) / p1 * r**2
    rel_var = (1 - p1) / (n * p1) + (0.0 if r == 1 else (1 - pr) / (n * pr))
    return MeasureCheck(float(ratio), float(r ** (g.Q + 2)), float(ratio * math.sqrt(rel_var)))
