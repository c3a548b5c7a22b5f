"""Campanato, Hölder and Sobolev quantities over parabolic cylinders.

Cylinders are ``Q_r(x0, t0) = {(w . x0, t0 + s): |w| < r, |s| < r^2}``.  Most
estimators work on a :class:`SampleCloud`: uniform points of one cylinder
with equal quadrature weights.  A cloud at radius ``r`` is the parabolic
dilation of a unit cloud, so every radius sees the same sampling pattern.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import exact
from .calculus import DerivativeMultiIndex, apply_derivative
from .grid import GridFunction
from .group import CarnotGroup, Cylinder, SpaceTimePoint, parabolic_dilate, parabolic_distance
from .poly import GradedPoly
from .polynomials import PolySpaceBasis, derivative_values

P_INF_SURROGATE = 64
DEFAULT_RADII = tuple(2.0**-j for j in range(1, 9))


class RankDeficientError(ValueError):
    """The design matrix cannot determine a unique polynomial."""


class InsufficientMarginError(ValueError):
    """The grid does not cover the cylinder plus the stencil margin."""


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------


@dataclass
class SampleCloud:
    """Uniform points of ``Q_r(center) ∩ domain``.

    ``local`` holds the normalized coordinates ``(δ_{1/r}(x . x0^{-1}), (t - t0)/r^2)``
    of each point; ``weights`` are equal and sum to the volume estimate.
    """

    group: CarnotGroup
    cylinder: Cylinder
    points: np.ndarray
    local: np.ndarray
    weights: np.ndarray
    seed: int
    method: str = "random"

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def volume(self) -> float:
        return float(self.weights.sum())


def unit_cylinder_cloud(g: CarnotGroup, n: int, seed: int, method: str = "random") -> tuple[np.ndarray, float]:
    """``n`` uniform points of ``Q_1(0)`` and the estimated ``|Q_1|``.

    Rejection from ``[-1, 1]^(N+1)``: the unit gauge ball sits inside the
    unit box because ``|x_k| <= |x|^(w_k)``.  ``method="sobol"`` draws the
    candidates from a scrambled Sobol sequence instead.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    dim = g.N + 1
    if method == "random":
        rng = np.random.default_rng(seed)
        draw = lambda m: rng.uniform(-1.0, 1.0, size=(m, dim))  # noqa: E731
    elif method == "sobol":
        from scipy.stats import qmc

        sob = qmc.Sobol(d=dim, scramble=True, seed=seed)
        draw = lambda m: 2.0 * sob.random(1 << max(int(math.ceil(math.log2(m))), 1)) - 1.0  # noqa: E731
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    kept, tried, got = [], 0, 0
    while got < n:
        cand = draw(max(2 * (n - got), 64))
        tried += len(cand)
        ok = g.gauge_norm(cand[:, :-1]) < 1.0
        kept.append(cand[ok])
        got += int(ok.sum())
    pts = np.concatenate(kept)
    # the acceptance rate counts every candidate, including the surplus
    vol = 2.0**dim * got / tried
    return pts[:n], vol


def cloud_from_unit(
    g: CarnotGroup,
    cyl: Cylinder,
    unit: np.ndarray,
    unit_volume: float,
    domain: Callable | None = None,
    seed: int = 0,
    method: str = "random",
) -> SampleCloud:
    """Map a unit cloud onto ``cyl`` and keep the points inside ``domain``."""
    r = float(cyl.radius)
    c = cyl.center.as_array()
    w = parabolic_dilate(g, r, unit)
    pts = np.empty_like(w)
    pts[:, :-1] = g.multiply(w[:, :-1], c[:-1])
    pts[:, -1] = c[-1] + w[:, -1]
    local = unit
    if domain is not None:
        keep = np.asarray(domain(pts), dtype=bool)
        pts, local = pts[keep], local[keep]
    frac = len(pts) / len(unit)
    vol = unit_volume * r ** (g.Q + 2) * frac
    weights = np.full(len(pts), vol / len(pts)) if len(pts) else np.zeros(0)
    return SampleCloud(g, cyl, pts, local, weights, seed, method)


def sample_cylinder(
    g: CarnotGroup,
    cyl: Cylinder,
    n: int,
    seed: int,
    domain: Callable | None = None,
    method: str = "random",
) -> SampleCloud:
    unit, vol = unit_cylinder_cloud(g, n, seed, method)
    return cloud_from_unit(g, cyl, unit, vol, domain, seed, method)


def cylinder_domain(g: CarnotGroup, cyl: Cylinder) -> Callable:
    """Indicator of an (open) cylinder, for use as a sampling domain."""
    return lambda pts: cyl.contains(g, pts)


# --------------------------------------------------------------------------
# best approximation in P_d
# --------------------------------------------------------------------------


def _pmean(r: np.ndarray, w: np.ndarray, p: float) -> float:
    """``(sum w |r|^p / sum w)^(1/p)``, scaled to avoid under/overflow."""
    a = np.abs(r)
    s = float(a.max()) if len(a) else 0.0
    if s == 0.0:
        return 0.0
    if math.isinf(p):
        return s
    return s * float(np.sum(w * (a / s) ** p) / np.sum(w)) ** (1.0 / p)


def _wlstsq(A: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    sw = np.sqrt(w)
    c, *_ = np.linalg.lstsq(A * sw[:, None], v * sw, rcond=None)
    return c


def irls(A: np.ndarray, v: np.ndarray, w: np.ndarray, p: float, tol: float = 1e-8, max_iter: int = 300):
    """Minimize ``sum w |v - A c|^p`` by iteratively reweighted least squares.

    Each reweighted solve gives a descent direction for the convex objective;
    a halving line search along it keeps the objective non-increasing.
    Returns ``(c, history, converged)``; ``history`` holds the p-mean error.
    """
    c = _wlstsq(A, v, w)
    hist = [_pmean(v - A @ c, w, p)]
    if p == 2:
        return c, hist, True
    converged = False
    for _ in range(max_iter):
        r = v - A @ c
        s = float(np.abs(r).max())
        if s == 0.0:
            converged = True
            break
        rel = np.maximum(np.abs(r) / s, 1e-12)
        direction = _wlstsq(A, v, w * rel ** (p - 2.0)) - c
        step, best = 1.0, None
        for _ in range(40):
            trial = c + step * direction
            val = _pmean(v - A @ trial, w, p)
            if val <= hist[-1]:
                best = (trial, val)
                break
            step *= 0.5
        if best is None:
            converged = True
            break
        c, val = best
        change = (hist[-1] - val) / hist[-1] if hist[-1] > 0 else 0.0
        hist.append(val)
        if change < tol:
            converged = True
            break
    return c, hist, converged


@dataclass
class LocalPolynomial:
    """A member of ``P_d`` stored by its coefficients in cylinder-local coordinates."""

    group: CarnotGroup
    basis: PolySpaceBasis
    coeffs: np.ndarray
    center: np.ndarray
    radius: float

    def local_coordinates(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        g = self.group
        out = np.empty_like(pts)
        out[..., :-1] = g.dilate(1.0 / self.radius, g.multiply(pts[..., :-1], g.inverse(self.center[:-1])))
        out[..., -1] = (pts[..., -1] - self.center[-1]) / self.radius**2
        return out

    def evaluate(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, pts.shape[-1])
        return (self.basis.design_matrix(self.local_coordinates(flat)) @ self.coeffs).reshape(pts.shape[:-1])

    __call__ = evaluate

    @property
    def degree(self) -> int:
        return self.basis.degree

    def to_global(self) -> GradedPoly:
        """The same polynomial in the global coordinates (float coefficients)."""
        g = self.group
        W = g.spacetime_weights
        n = g.N
        q = [float(-v) for v in self.center[:-1]]
        subs = [GradedPoly.variable(W, j) for j in range(n)] + [GradedPoly.constant(W, v) for v in q]
        right = [b.compose(subs) for b in g.bch]  # x . x0^{-1}
        loc = [right[j] * (self.radius ** -g.weights[j]) for j in range(n)]
        loc.append((GradedPoly.variable(W, n) - float(self.center[-1])) * (self.radius**-2))
        out = GradedPoly(W)
        for e, c in zip(self.basis.exponents, self.coeffs):
            if c != 0:
                out = out + GradedPoly.monomial(W, e, float(c)).compose(loc)
        return out


@dataclass
class PolynomialFit:
    poly: object  # LocalPolynomial or exact GradedPoly
    p: float
    p_used: float
    error: float  # p-mean of |u - P| (for p = inf: sup over the samples)
    sup_error: float
    surrogate_gap: float  # sup_error - p_used-mean error when p = inf, else 0
    history: list = field(default_factory=list)
    converged: bool = True

    def __call__(self, pts):
        return self.poly(pts) if not isinstance(self.poly, GradedPoly) else self.poly.evaluate(pts)


def _check_rank(A: np.ndarray, dim: int):
    if A.shape[0] < dim:
        raise RankDeficientError(f"{A.shape[0]} samples cannot determine {dim} polynomial coefficients")
    rk = np.linalg.matrix_rank(A)
    if rk < dim:
        raise RankDeficientError(f"design matrix has rank {rk} < {dim} (degenerate samples)")


def best_polynomial(
    samples: SampleCloud, values, d: int, p: float = 2.0, tol: float = 1e-8, exact_arith: bool = False
) -> PolynomialFit:
    """Minimizer over ``P_d`` of the empirical ``L^p`` mean of ``|u - P|``.

    ``p = 2`` is a weighted least-squares solve; ``1 < p < inf`` uses IRLS;
    ``p = inf`` uses the ``p = 64`` surrogate.  For the surrogate minimizer
    ``P64`` the true discrete minimax value lies in
    ``[mean_64(u - P64), sup|u - P64|]`` and the width is reported as the gap.

    With ``exact_arith`` the points and values are taken as exact rationals
    and the normal equations are solved in rational arithmetic (``p = 2``).
    """
    if not p > 1:
        raise ValueError(f"need p > 1, got {p}")
    g = samples.group
    basis = PolySpaceBasis(g, d)
    if exact_arith:
        if p != 2:
            raise ValueError("the exact path supports p = 2 only")
        return _exact_fit(samples, values, basis)
    v = np.asarray(values, dtype=float)
    w = samples.weights
    A = basis.design_matrix(samples.local)
    _check_rank(A, basis.dim)
    p_used = float(P_INF_SURROGATE) if math.isinf(p) else float(p)
    c, hist, conv = irls(A, v, w, p_used, tol=tol)
    res = v - A @ c
    sup = float(np.abs(res).max()) if len(res) else 0.0
    err = sup if math.isinf(p) else hist[-1]
    gap = sup - hist[-1] if math.isinf(p) else 0.0
    cyl = samples.cylinder
    poly = LocalPolynomial(g, basis, c, cyl.center.as_array(), float(cyl.radius))
    return PolynomialFit(poly, p, p_used, err, sup, gap, hist, conv)


def _exact_fit(samples: SampleCloud, values, basis: PolySpaceBasis) -> PolynomialFit:
    pts = [[Fraction(float(x)) for x in row] for row in samples.points]
    vals = [exact.as_fraction(x) for x in values]
    rows = [[m.evaluate_exact(pt) for m in basis.polys()] for pt in pts]
    _check_rank(np.array([[float(x) for x in row] for row in rows]), basis.dim)
    at = exact.transpose(rows)
    normal = exact.matmul(at, rows)
    rhs = exact.matvec(at, vals)
    coef = exact.solve_unique(normal, rhs)
    P = basis.from_coords(coef)
    res = [v - sum(c * x for c, x in zip(coef, row)) for v, row in zip(vals, rows)]
    n = len(res)
    mean_sq = sum(r * r for r in res) / n if n else Fraction(0)
    err = math.sqrt(mean_sq) if mean_sq else 0.0
    sup = float(max((abs(r) for r in res), default=Fraction(0)))
    return PolynomialFit(P, 2.0, 2.0, err, sup, 0.0, [err], True)


# --------------------------------------------------------------------------
# Campanato seminorm
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NormQuery:
    p: float
    alpha: float
    d: int
    center: SpaceTimePoint
    radii: tuple[float, ...] = DEFAULT_RADII

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.d) != self.d or self.d < 0:
            raise ValueError(f"d must be a nonnegative integer, got {self.d}")
        radii = tuple(float(r) for r in self.radii)
        if not radii:
            raise ValueError("radii must be a nonempty list")
        if any(not 0 < r <= 1 for r in radii):
            raise ValueError("radii must lie in (0, 1]")
        if any(b >= a for a, b in zip(radii, radii[1:])):
            raise ValueError("radii must be strictly decreasing")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "d", int(self.d))


@dataclass
class CampanatoReport:
    query: NormQuery
    radii: tuple[float, ...]
    errors: tuple[float, ...]  # inf_P mean_{Q_r}|u - P|^p)^(1/p)
    quotients: tuple[float, ...]  # r^(-alpha) * error
    polys: list
    gaps: tuple[float, ...]
    volumes: tuple[float, ...]

    @property
    def seminorm(self) -> float:
        return max(self.quotients)

    @property
    def slope(self) -> float:
        """Log-log slope of the best-approximation error, nan if undefined."""
        try:
            return decay_slope(self)[0]
        except ValueError:
            return float("nan")

    def rows(self) -> list[dict]:
        s = self.slope
        return [
            {"r": r, "quotient": q, "error": e, "slope": s, "surrogate_gap": gp}
            for r, q, e, gp in zip(self.radii, self.quotients, self.errors, self.gaps)
        ]

    def to_csv(self, path) -> Path:
        path = Path(path)
        rows = self.rows()
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "quotient", "error", "slope", "surrogate_gap"])
            for row in rows:
                w.writerow([repr(float(row[k])) for k in ("r", "quotient", "error", "slope", "surrogate_gap")])
        return path


def _evaluate(u, pts) -> np.ndarray:
    return np.asarray(u(pts), dtype=float).reshape(len(pts))


def campanato_seminorm(
    g: CarnotGroup,
    u,
    q: NormQuery,
    domain: Callable | None = None,
    n_samples: int = 4000,
    seed: int = 0,
    method: str = "random",
    exact_arith: bool = False,
    mean_oscillation: bool = False,
    workers: int = 1,
) -> CampanatoReport:
    """Per-radius best ``P_d`` approximation errors and the seminorm estimate.

    ``u`` is any callable on ``(M, N + 1)`` space-time points.  With
    ``mean_oscillation`` and ``d = 0`` the constant is the cylinder average
    rather than the ``L^p`` optimum (they agree for ``p = 2``).
    """
    if mean_oscillation and q.d != 0:
        raise ValueError("mean_oscillation applies to d = 0 only")
    unit, vol = unit_cylinder_cloud(g, n_samples, seed, method)

    def one(r):
        cyl = Cylinder(q.center, r)
        cloud = cloud_from_unit(g, cyl, unit, vol, domain, seed, method)
        if exact_arith:
            if not isinstance(u, GradedPoly):
                raise TypeError("the exact path needs a GradedPoly")
            cloud = _dyadic(cloud)
            vals = [u.evaluate_exact([Fraction(float(x)) for x in pt]) for pt in cloud.points]
            fit = best_polynomial(cloud, vals, q.d, 2.0, exact_arith=True)
        else:
            vals = _evaluate(u, cloud.points)
            if mean_oscillation:
                avg = float(np.sum(cloud.weights * vals) / np.sum(cloud.weights))
                err = _pmean(vals - avg, cloud.weights, q.p)
                W = g.spacetime_weights
                fit = PolynomialFit(GradedPoly.constant(W, avg), q.p, q.p, err, _pmean(vals - avg, cloud.weights, math.inf), 0.0)
            else:
                fit = best_polynomial(cloud, vals, q.d, q.p)
        return fit, cloud.volume

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(one, q.radii))
    else:
        results = [one(r) for r in q.radii]
    errors = tuple(float(f.error) for f, _ in results)
    quots = tuple(e * r**-q.alpha for e, r in zip(errors, q.radii))
    return CampanatoReport(
        q,
        q.radii,
        errors,
        quots,
        [f.poly for f, _ in results],
        tuple(f.surrogate_gap for f, _ in results),
        tuple(v for _, v in results),
    )


def _dyadic(cloud: SampleCloud, bits: int = 16) -> SampleCloud:
    """Round points to multiples of ``2^-bits`` (cheap exact rationals), dropping any that leave the cylinder."""
    pts = np.round(cloud.points * 2.0**bits) / 2.0**bits
    keep = cloud.cylinder.contains(cloud.group, pts)
    w = np.full(int(keep.sum()), cloud.volume / max(int(keep.sum()), 1))
    return SampleCloud(cloud.group, cloud.cylinder, pts[keep], cloud.local[keep], w, cloud.seed, cloud.method)


def campanato_norm(g: CarnotGroup, u, q: NormQuery, **kw) -> tuple[float, CampanatoReport]:
    """``sum_{|I|+2l <= d} |X^I D_t^l u(center)| + [u]``.

    Derivatives at the center are exact for polynomials, symbolic for
    :class:`~carnotlab.calculus.SymbolicFunction` and finite differences on grids.
    """
    rep = campanato_seminorm(g, u, q, **kw)
    words = DerivativeMultiIndex.all_up_to(g.m1, q.d)
    center = tuple(q.center.x) + (q.center.t,)
    if isinstance(u, GradedPoly) and u.is_exact():
        center = tuple(Fraction(float(v)) for v in center)
    vals = derivative_values(g, u, words, center)
    return float(sum(abs(float(v)) for v in vals)) + rep.seminorm, rep


def decay_slope(report) -> tuple[float, float]:
    """OLS slope of ``log error`` against ``log r`` and its standard error.

    Accepts a :class:`CampanatoReport` or a pair ``(radii, errors)``.
    """
    if isinstance(report, CampanatoReport):
        radii, errors = report.radii, report.errors
    else:
        radii, errors = report
    r = np.asarray(radii, dtype=float)
    e = np.asarray(errors, dtype=float)
    if len(r) < 3:
        raise ValueError("slope fit needs at least 3 radii")
    if len(np.unique(r)) < len(r) or np.any(r <= 0):
        raise ValueError("radii must be distinct and positive")
    if np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be positive and finite for a log-log fit")
    x, y = np.log(r), np.log(e)
    xm = x - x.mean()
    sxx = float(xm @ xm)
    slope = float(xm @ (y - y.mean()) / sxx)
    resid = y - y.mean() - slope * xm
    stderr = math.sqrt(float(resid @ resid) / (len(r) - 2) / sxx)
    return slope, stderr


# --------------------------------------------------------------------------
# Hölder quotient, A-property, embedding
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HolderReport:
    radii: tuple[float, ...]
    quotients: tuple[float, ...]
    alpha: float

    @property
    def value(self) -> float:
        return max(self.quotients) if self.quotients else 0.0


def holder_quotient(
    g: CarnotGroup,
    f,
    center: SpaceTimePoint,
    radii: Sequence[float],
    alpha: float,
    n_samples: int = 4000,
    seed: int = 0,
    domain: Callable | None = None,
) -> HolderReport:
    """Per radius, the sampled sup over ``Q_r(center)`` of ``|f - f(center)| / d_p(., center)^alpha``."""
    unit, vol = unit_cylinder_cloud(g, n_samples, seed)
    c = center.as_array()
    f0 = float(_evaluate(f, c[None, :])[0])
    out = []
    for r in radii:
        cloud = cloud_from_unit(g, Cylinder(center, r), unit, vol, domain, seed)
        if not cloud.n:
            out.append(0.0)
            continue
        num = np.abs(_evaluate(f, cloud.points) - f0)
        den = parabolic_distance(g, cloud.points, c) ** alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            qv = np.where(num == 0, 0.0, num / den)
        out.append(float(qv.max()))
    return HolderReport(tuple(float(r) for r in radii), tuple(out), alpha)


@dataclass(frozen=True)
class APropertyReport:
    constant: float  # min over probes of |Q_r(c) ∩ Ω| / |Q_r(c)|
    worst_center: tuple
    worst_radius: float
    probes: int


def a_property_constant(
    g: CarnotGroup,
    domain: Callable,
    centers: np.ndarray,
    radii: Sequence[float],
    n_samples: int = 4000,
    seed: int = 0,
) -> APropertyReport:
    """Monte Carlo ``min |Q_r(c) ∩ Ω| / |Q_r(c)|`` over the given centers and radii.

    All probes reuse one unit cloud, so the ratio is the kept fraction.
    """
    unit, vol = unit_cylinder_cloud(g, n_samples, seed)
    best = (math.inf, None, None)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    for c in centers:
        sp = SpaceTimePoint(tuple(c[:-1]), float(c[-1]))
        for r in radii:
            cloud = cloud_from_unit(g, Cylinder(sp, r), unit, vol, domain, seed)
            frac = cloud.n / len(unit)
            if frac < best[0]:
                best = (frac, tuple(float(v) for v in c), float(r))
    return APropertyReport(best[0], best[1], best[2], len(centers) * len(radii))


@dataclass(frozen=True)
class EmbeddingReport:
    holder: float
    campanato: float
    ratio: float | None  # None when both sides vanish
    a_constant: float
    sobolev_alpha: float  # 2 - (Q + 2)/p


def sobolev_exponent(g: CarnotGroup, p: float) -> float:
    """Hölder exponent ``2 - (Q + 2)/p`` of the parabolic Sobolev embedding."""
    return 2.0 - (g.Q + 2) / p


def embedding_check(
    g: CarnotGroup,
    u,
    p: float,
    alpha: float,
    domain_cyl: Cylinder,
    centers: np.ndarray,
    radii: Sequence[float] = (0.5, 0.25, 0.125, 0.0625),
    n_samples: int = 3000,
    seed: int = 0,
) -> EmbeddingReport:
    """Compare the sampled Hölder quotient with the ``d = 0`` Campanato estimate.

    Both are maximized over ``centers`` (inside the domain) and ``radii``;
    the domain's A-constant is measured on the same probes.
    """
    dom = cylinder_domain(g, domain_cyl)
    hol, cam = 0.0, 0.0
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    for c in centers:
        sp = SpaceTimePoint(tuple(c[:-1]), float(c[-1]))
        hol = max(hol, holder_quotient(g, u, sp, radii, alpha, n_samples, seed, dom).value)
        q = NormQuery(p, alpha, 0, sp, tuple(radii))
        cam = max(cam, campanato_seminorm(g, u, q, dom, n_samples, seed, mean_oscillation=True).seminorm)
    a = a_property_constant(g, dom, centers, radii, n_samples, seed).constant
    if hol == 0 and cam == 0:
        ratio = None
    else:
        ratio = hol / cam if cam > 0 else math.inf
    return EmbeddingReport(hol, cam, ratio, a, sobolev_exponent(g, p))


# --------------------------------------------------------------------------
# Sobolev norm on grids
# --------------------------------------------------------------------------


@dataclass
class SobolevReport:
    value: float
    terms: dict  # label -> (order k, L^p norm)
    p: float
    nodes: int


def _time_weights(times: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Length of each level's dual cell, clipped to ``[lo, hi]``."""
    t = np.asarray(times, dtype=float)
    if len(t) == 1:
        return np.array([hi - lo])
    mids = 0.5 * (t[1:] + t[:-1])
    left = np.concatenate([[t[0] - (mids[0] - t[0])], mids])
    right = np.concatenate([mids, [t[-1] + (t[-1] - mids[-1])]])
    return np.clip(np.minimum(right, hi) - np.maximum(left, lo), 0.0, None)


def _check_margin(u: GridFunction, inside: np.ndarray, cyl: Cylinder, margin: int):
    """Every node inside the cylinder must sit ``margin`` cells from the box edge.

    A cylinder that pokes out of the box puts inside-nodes on the edge, so
    this also detects insufficient coverage.
    """
    c = cyl.center.as_array()
    hit = inside.any(axis=0)
    for k, n in enumerate(u.grid.shape):
        other = tuple(j for j in range(u.grid.ndim) if j != k)
        idx = np.flatnonzero(hit.any(axis=other) if other else hit)
        if len(idx) and (idx[0] < margin or idx[-1] > n - 1 - margin):
            raise InsufficientMarginError(
                f"cylinder nodes come within {margin} cells of the grid edge on axis {k + 1}"
            )
    if u.times[0] > c[-1] - cyl.radius**2 + 1e-12 or u.times[-1] < c[-1] + cyl.radius**2 - 1e-12:
        raise InsufficientMarginError("time levels do not cover the cylinder's time interval")


def sobolev_norm(
    g: CarnotGroup, u: GridFunction, p: float, cyl: Cylinder, margin: int = 2, expanded: bool = False
) -> SobolevReport:
    """``sum_{|I| <= 2} ||X^I u||_p + ||u||_p + ||D_t u||_p`` over ``cyl``.

    ``u`` appears in both sums, as written in the definition.  Quadrature
    uses the grid nodes inside the cylinder with weight (cell volume) x
    (clipped time cell).  Derivatives are grid finite differences.
    """
    if u.n_levels < 3:
        raise ValueError("need at least 3 time levels for D_t")
    c = cyl.center.as_array()
    # space by node membership, time by clipped dual cells (end levels count half)
    ball = g.distance(u.grid.nodes(), c[:-1]).reshape(u.grid.shape) < cyl.radius
    tw = _time_weights(u.times, c[-1] - cyl.radius**2, c[-1] + cyl.radius**2)
    inside = (tw > 0)[(slice(None),) + (None,) * u.grid.ndim] & ball
    _check_margin(u, inside, cyl, margin)
    wts = (u.grid.cell_volume * tw)[(slice(None),) + (None,) * u.grid.ndim] * inside

    def norm(vals):
        if math.isinf(p):
            return float(np.abs(vals[inside]).max()) if inside.any() else 0.0
        return float(np.sum(wts * np.abs(vals) ** p) ** (1.0 / p))

    terms = {}
    words = [DerivativeMultiIndex(())] + DerivativeMultiIndex.all_of_order(g.m1, 1)
    words += [w for w in DerivativeMultiIndex.all_of_order(g.m1, 2) if w.time_order == 0]
    for w in words:
        vals = u.values if not w.indices else apply_derivative(g, u, w, expanded=expanded).values
        terms["X" + "".join(str(i + 1) for i in w.indices) if w.indices else "u"] = (len(w.indices), norm(vals))
    terms["u (time sum)"] = (0, terms["u"][1])
    terms["Dt"] = (2, norm(apply_derivative(g, u, DerivativeMultiIndex((), 1)).values))
    return SobolevReport(sum(v for _, v in terms.values()), terms, p, int(inside.sum()))
