"""Experiment catalog: named, seeded campaigns with pass/fail checks.

Every entry has a short statement of the property it measures, default
parameters and one or more tolerances from :data:`DEFAULT_TOLERANCES`.
Running an entry returns an :class:`Outcome` holding the checks, one table
of measured quantities and any number of two-column plot series.  Nothing
time-dependent goes into tables or series, so fixed seeds give identical
files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from . import group as G
from .group import CarnotGroup, Cylinder, SpaceTimePoint, parabolic_distance


class ExperimentError(ValueError):
    """Unknown experiment, unknown parameter or an invalid parameter value."""


# --------------------------------------------------------------------------
# checks and outcomes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    key: str  # tolerance key
    measured: float
    tolerance: float
    kind: str  # "max": measured <= tolerance, "min": measured >= tolerance
    anchor: str

    @property
    def passed(self) -> bool:
        m = self.measured
        if m is None or (isinstance(m, float) and math.isnan(m)):
            return False
        return m <= self.tolerance if self.kind == "max" else m >= self.tolerance

    def message(self) -> str:
        rel = "<=" if self.kind == "max" else ">="
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: measured {self.measured!r}, required {rel} {self.tolerance!r} [{self.anchor}]"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "key": self.key,
            "measured": _jsonable(self.measured),
            "tolerance": _jsonable(self.tolerance),
            "kind": self.kind,
            "passed": self.passed,
            "anchor": self.anchor,
        }


def _jsonable(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return repr(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


@dataclass
class Outcome:
    experiment: str
    checks: list[Check] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    series: dict[str, tuple[list, list]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def write(self, outdir) -> list[Path]:
        """``<experiment>.csv``, ``checks.csv`` and ``series/<label>.txt`` under ``outdir``."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        written = [_write_rows(outdir / f"{self.experiment}.csv", self.rows)]
        written.append(_write_rows(outdir / "checks.csv", [
            {k: v for k, v in c.to_dict().items() if k != "anchor"} for c in self.checks
        ]))
        if self.series:
            sdir = outdir / "series"
            sdir.mkdir(exist_ok=True)
            for label, (x, y) in sorted(self.series.items()):
                path = sdir / f"{label}.txt"
                with path.open("w") as fh:
                    for a, b in zip(x, y):
                        fh.write(f"{_fmt(a)} {_fmt(b)}\n")
                written.append(path)
        return written


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _write_rows(path: Path, rows: list[dict]) -> Path:
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in keys])
    return path


class _Ctx:
    """Per-run state: group, merged parameters, merged tolerances and the outcome being built."""

    def __init__(self, exp: "Experiment", g: CarnotGroup, params: dict, tolerances: dict, seed: int):
        self.exp, self.g, self.params, self.tol, self.seed = exp, g, params, tolerances, seed
        self.out = Outcome(exp.name)

    def check(self, name: str, key: str, measured) -> Check:
        kind = self.exp.tolerances[key][0]
        c = Check(name, key, _as_float(measured), float(self.tol[key]), kind, self.exp.anchor)
        self.out.checks.append(c)
        return c

    def rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, *key]))


def _as_float(x):
    if isinstance(x, (bool, np.bool_)):
        return float(bool(x))
    return float(x)


# --------------------------------------------------------------------------
# catalog
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Experiment:
    name: str
    anchor: str  # the statement being measured
    summary: str
    defaults: dict
    runner: Callable
    default_group: str = "heisenberg"
    main_theorem_p: bool = False  # p must exceed Q + 2

    @property
    def tolerances(self) -> dict:
        return DEFAULT_TOLERANCES[self.name]

    def describe(self) -> str:
        lines = [f"{self.name}: {self.summary}", f"  measures: {self.anchor}", f"  default group: {self.default_group}",
                 "  parameters:"]
        lines += [f"    {k} = {v!r}" for k, v in self.defaults.items()]
        lines.append("  tolerances:")
        for k, (kind, v) in self.tolerances.items():
            lines.append(f"    {k}: measured {'<=' if kind == 'max' else '>='} {v!r}")
        return "\n".join(lines)


CATALOG: dict[str, Experiment] = {}

# experiment -> check key -> (kind, value); values are toolkit policy
DEFAULT_TOLERANCES: dict[str, dict[str, tuple[str, float]]] = {
    "group-axioms": {
        "associativity": ("max", 1e-12),
        "identity": ("max", 1e-12),
        "inverse": ("max", 1e-12),
        "dilation_homomorphism": ("max", 1e-12),
        "inhomogeneous_components": ("max", 0),
    },
    "bch-vs-explicit": {"mismatched_terms": ("max", 0), "numeric_gap": ("max", 1e-12)},
    "hormander": {
        "spanning_depth_minus_step": ("max", 0),
        "missing_directions": ("max", 0),
        "structure_mismatches": ("max", 0),
    },
    "measure-mc": {"zscore": ("max", 3.0)},
    "quasi-triangle": {"relative_change": ("max", 0.05), "abelian_deviation": ("max", 1e-9)},
    "mvt-taylor": {
        "truncation_mismatches": ("max", 0),
        "trend_factor": ("max", 3.0),
        "monotone_blowups": ("max", 0),
    },
    "hp-solve": {"nonzero_residuals": ("max", 0), "fraction_exact": ("min", 1.0)},
    "caloric-taylor": {
        "noncaloric_components": ("max", 0),
        "control_flagged": ("min", 1),
        "coefficient_ratio": ("max", 10.0),
    },
    "campanato-embedding": {
        "pd_seminorm": ("max", 0.0),
        "average_gap": ("max", 1e-8),
        "slope_error": ("max", 0.1),
        "embedding_ratio_spread": ("max", 5.0),
        "a_constant": ("min", 0.05),
    },
    "lp-constant": {"nonfinite_ratios": ("max", 0), "refinement_change": ("max", 0.2)},
    "kernel-bounds": {
        "min_value": ("min", 0.0),
        "step_mass_change": ("max", 1e-8),
        "C_relative_change": ("max", 0.1),
        "b_relative_change": ("max", 0.1),
        "pointwise_ratio": ("max", 1.0),
    },
    "local-decay": {"lhs_slope_deficit": ("max", 0.15), "constant_spread": ("max", 3.0), "zero_branch_norm": ("max", 0.0)},
    "pointwise-approx": {"approximation_constant": ("max", 10.0), "level_spread": ("max", 2.0)},
    "schauder-rate": {"slope_error": ("max", 0.15), "control_excess": ("min", 0.0)},
}


def register(name: str, anchor: str, summary: str, defaults: dict, default_group: str = "heisenberg",
             main_theorem_p: bool = False):
    def deco(fn):
        CATALOG[name] = Experiment(name, anchor, summary, defaults, fn, default_group, main_theorem_p)
        return fn

    return deco


def get_experiment(name: str) -> Experiment:
    try:
        return CATALOG[name]
    except KeyError:
        raise ExperimentError(f"unknown experiment {name!r}; known: {', '.join(sorted(CATALOG))}") from None


# --------------------------------------------------------------------------
# parameter handling
# --------------------------------------------------------------------------


def parse_p(v) -> float:
    if isinstance(v, str):
        if v.lower() in ("inf", "infinity"):
            return math.inf
        raise ExperimentError(f"p must be a number or 'inf', got {v!r}")
    return float(v)


def _radii(v, name="radii") -> tuple[float, ...]:
    if not isinstance(v, (list, tuple)) or not v:
        raise ExperimentError(f"{name} must be a nonempty list")
    r = tuple(float(x) for x in v)
    if any(not 0 < x <= 1 for x in r):
        raise ExperimentError(f"{name} must lie in (0, 1]")
    if any(b >= a for a, b in zip(r, r[1:])):
        raise ExperimentError(f"{name} must be strictly decreasing")
    return r


def resolve_params(exp: Experiment, g: CarnotGroup, params: dict | None) -> dict:
    """Merge ``params`` into the defaults and validate ranges."""
    params = dict(params or {})
    unknown = sorted(set(params) - set(exp.defaults))
    if unknown:
        raise ExperimentError(f"{exp.name}: unknown parameters {unknown}; known: {sorted(exp.defaults)}")
    out = {**exp.defaults, **params}
    for k, v in out.items():
        if k in ("radii", "taylor_radii"):
            out[k] = _radii(v, k)
        elif k == "alpha":
            if not 0 < float(v) < 1:
                raise ExperimentError(f"alpha must lie in (0, 1), got {v!r}")
            out[k] = float(v)
        elif k == "p":
            out[k] = parse_p(v)
            if not out[k] > 1:
                raise ExperimentError(f"p must exceed 1, got {v!r}")
            if exp.main_theorem_p and not out[k] > g.Q + 2:
                raise ExperimentError(f"p must exceed Q + 2 = {g.Q + 2} here, got {v!r}")
        elif k in ("n_triples", "mc_samples", "n_samples", "max_degree", "levels", "cells") or k.startswith("n_"):
            if int(v) != v or int(v) < 1:
                raise ExperimentError(f"{k} must be a positive integer, got {v!r}")
            out[k] = int(v)
        elif k in ("sample_counts", "h_values", "betas", "members", "ks"):
            if not isinstance(v, (list, tuple)) or not v:
                raise ExperimentError(f"{k} must be a nonempty list")
            if k in ("sample_counts", "h_values") and any(float(x) <= 0 for x in v):
                raise ExperimentError(f"{k} entries must be positive")
            out[k] = list(v)
        elif k == "d":
            if int(v) != v or int(v) < 0:
                raise ExperimentError(f"d must be a nonnegative integer, got {v!r}")
            out[k] = int(v)
    return out


def resolve_tolerances(exp: Experiment, overrides: dict | None) -> dict:
    tol = {k: v for k, (_, v) in exp.tolerances.items()}
    for k, v in (overrides or {}).items():
        if k not in tol:
            raise ExperimentError(f"{exp.name}: unknown tolerance {k!r}; known: {sorted(tol)}")
        tol[k] = float(v)
    return tol


def run_experiment(name: str, g: CarnotGroup | None = None, params: dict | None = None, seed: int = 0,
                   tolerances: dict | None = None) -> Outcome:
    exp = get_experiment(name)
    g = g or G.preset(exp.default_group)
    p = resolve_params(exp, g, params)
    ctx = _Ctx(exp, g, p, resolve_tolerances(exp, tolerances), int(seed))
    exp.runner(ctx)
    return ctx.out


# --------------------------------------------------------------------------
# group_core
# --------------------------------------------------------------------------


@register(
    "group-axioms",
    "associativity, identity, inverse and dilation homomorphism of the group law",
    "float checks on random triples plus exact homogeneity of every BCH component",
    {"n_triples": 10000, "scale": 1.0, "dilation": 0.7},
)
def _group_axioms(ctx: _Ctx):
    g, n, s = ctx.g, ctx.params["n_triples"], float(ctx.params["scale"])
    a, b, c = ctx.rng(0).uniform(-s, s, size=(3, n, g.N))
    z = np.zeros_like(a)
    err = {
        "associativity": np.abs(g.multiply(g.multiply(a, b), c) - g.multiply(a, g.multiply(b, c))).max(),
        "identity": max(np.abs(g.multiply(a, z) - a).max(), np.abs(g.multiply(z, a) - a).max()),
        "inverse": max(np.abs(g.multiply(a, g.inverse(a))).max(), np.abs(g.multiply(g.inverse(a), a)).max()),
    }
    lam = float(ctx.params["dilation"])
    err["dilation_homomorphism"] = np.abs(
        g.dilate(lam, g.multiply(a, b)) - g.multiply(g.dilate(lam, a), g.dilate(lam, b))
    ).max()
    bad = sum(not comp.is_homogeneous(w) for comp, w in zip(g.bch, g.weights))
    for k, v in err.items():
        ctx.check(k, k, float(v))
        ctx.out.rows.append({"check": k, "measured": float(v)})
    ctx.check("inhomogeneous_components", "inhomogeneous_components", bad)
    ctx.out.rows.append({"check": "inhomogeneous_components", "measured": float(bad)})


def _printed_counterpart(g: CarnotGroup):
    name = g.name
    if name.startswith("heisenberg"):
        n = g.m1 // 2
        return G.heisenberg(n, "printed"), G.printed_heisenberg_law(n)
    if name == "engel":
        return G.engel(), G.printed_engel_law()
    raise ExperimentError(f"no closed-form group law is available for {name!r}; use heisenberg or engel")


@register(
    "bch-vs-explicit",
    "the law generated by BCH equals the closed-form Heisenberg and Engel products",
    "exact comparison in rational arithmetic; Heisenberg presets are normalized to the printed convention",
    {"n_points": 1000},
)
def _bch_vs_explicit(ctx: _Ctx):
    ref, printed = _printed_counterpart(ctx.g)
    mismatched = 0
    for k, (got, want) in enumerate(zip(ref.bch, printed)):
        diff = got - want
        mismatched += len(diff.terms)
        ctx.out.rows.append({"component": k + 1, "bch_terms": len(got.terms), "printed_terms": len(want.terms),
                             "mismatched_terms": len(diff.terms)})
    ctx.check("mismatched_terms", "mismatched_terms", mismatched)
    # the compiled float product agrees with the closed form too
    x, y = ctx.rng(0).uniform(-1, 1, size=(2, ctx.params["n_points"], ref.N))
    xy = np.concatenate([x, y], axis=1)
    closed = np.stack([p.to_float().evaluate(xy) for p in printed], axis=1)
    ctx.check("numeric_gap", "numeric_gap", float(np.abs(ref.multiply(x, y) - closed).max()))


@register(
    "hormander",
    "iterated brackets of the horizontal fields span the tangent space at depth equal to the step",
    "rank per bracket depth, plus the commutators of the frame against the configured structure constants",
    {},
    default_group="engel",
)
def _hormander(ctx: _Ctx):
    from .calculus import check_hormander, commutator, left_invariant_fields

    g = ctx.g
    rep = check_hormander(g)
    for depth, rk in enumerate(rep.rank_by_depth, start=1):
        ctx.out.rows.append({"depth": depth, "rank": rk, "N": g.N})
    ctx.out.series["rank_by_depth"] = (list(range(1, len(rep.rank_by_depth) + 1)), list(rep.rank_by_depth))
    depth = rep.spanning_depth if rep.spanning_depth is not None else math.inf
    ctx.check("spanning_depth_minus_step", "spanning_depth_minus_step", abs(depth - g.step))
    ctx.check("missing_directions", "missing_directions", len(rep.missing))
    X = left_invariant_fields(g)
    table = g.spec.bracket_table()
    bad = 0
    for a in range(g.N):
        for b in range(g.N):
            got = commutator(X[a], X[b])
            want = [sum((coef * X[c].coeffs[k] for c, coef in table.get((a, b), {}).items()),
                        0 * X[0].coeffs[k]) for k in range(g.N)]
            bad += sum(not (gc - wc).is_zero() for gc, wc in zip(got.coeffs, want))
    ctx.check("structure_mismatches", "structure_mismatches", bad)


@register(
    "measure-mc",
    "|Q_r| = r^(Q+2) |Q_1| for parabolic cylinders",
    "Monte Carlo gauge-ball volume ratio against r^(Q+2) in units of its standard error",
    {"radii": [0.5, 0.25], "mc_samples": 1_000_000},
)
def _measure_mc(ctx: _Ctx):
    g = ctx.g
    xs, ys = [], []
    for i, r in enumerate(ctx.params["radii"]):
        m = G.cylinder_measure_check(g, r, ctx.params["mc_samples"], ctx.seed + i)
        ctx.out.rows.append({"r": r, "ratio": m.ratio, "expected": m.expected, "stderr": m.stderr, "zscore": m.zscore})
        ctx.check(f"zscore[r={r!r}]", "zscore", m.zscore)
        xs.append(r)
        ys.append(m.ratio)
    ctx.out.series["ratio_vs_r"] = (xs, ys)


@register(
    "quasi-triangle",
    "the parabolic distance satisfies a quasi-triangle inequality with a finite constant",
    "sampled sup of d(a,b)/(d(a,c)+d(c,b)) at growing sample counts, with an abelian control",
    {"sample_counts": [100_000, 1_000_000]},
)
def _quasi_triangle(ctx: _Ctx):
    g = ctx.g
    counts = [int(c) for c in ctx.params["sample_counts"]]
    vals = []
    for n in counts:
        est = G.estimate_quasi_triangle_constant(g, n, ctx.seed)
        vals.append(est.constant)
        ctx.out.rows.append({"group": g.name, "samples": n, "constant": est.constant})
    ctx.out.series["constant_vs_samples"] = (counts, vals)
    ctx.check("relative_change", "relative_change", abs(vals[-1] / vals[0] - 1))
    ab = G.abelian(g.N)
    ctrl = G.estimate_quasi_triangle_constant(ab, counts[0], ctx.seed).constant
    ctx.out.rows.append({"group": ab.name, "samples": counts[0], "constant": ctrl})
    ctx.check("abelian_deviation", "abelian_deviation", abs(ctrl - 1.0))


# --------------------------------------------------------------------------
# polynomials
# --------------------------------------------------------------------------


def smooth_family(g: CarnotGroup):
    """Three smooth test functions written in the first two and the last space coordinates."""
    import sympy as sp

    from .calculus import spacetime_symbols

    s = spacetime_symbols(g.N)
    x1, x2, xl, t = s[0], s[1], s[-2], s[-1]
    return s, [
        sp.exp(x1 - x2) * sp.cos(xl) + t * x1,
        sp.sin(x1 + xl) + x2**2 * t,
        sp.cos(x2) * (1 + x1 * xl) + sp.exp(t) * x1,
    ]


@register(
    "mvt-taylor",
    "Taylor polynomials are exact truncations; mean value and Taylor remainder quotients stay bounded as r -> 0",
    "random exact polynomials for the truncation test, shell-sampled remainder quotients for a smooth family",
    {"taylor_radii": [2.0**-j for j in range(1, 9)], "ks": [1, 2, 3], "n_samples": 1500, "max_degree": 6,
     "n_polys": 5},
)
def _mvt_taylor(ctx: _Ctx):
    from .calculus import SymbolicFunction
    from .poly import GradedPoly
    from .polynomials import empirical_taylor_constant, mean_value_quotient, taylor_polynomial

    g, P = ctx.g, ctx.params
    W = g.spacetime_weights
    rng = ctx.rng(0)
    bad = 0
    for j in range(P["n_polys"]):
        terms = {}
        for _ in range(8):
            e = tuple(int(k) for k in rng.integers(0, 3, size=len(W)))
            terms[e] = Fraction(int(rng.integers(-9, 10)), int(rng.integers(1, 8)))
        u = GradedPoly(W, terms)
        for k in range(P["max_degree"] + 1):
            bad += taylor_polynomial(g, u, k) != u.truncate(k)
    ctx.check("truncation_mismatches", "truncation_mismatches", bad)
    syms, fam = smooth_family(g)
    radii = list(P["taylor_radii"])
    worst, blowups = 0.0, 0
    for m, expr in enumerate(fam):
        f = SymbolicFunction(g, expr, syms)
        reps = [(f"k={k}", empirical_taylor_constant(g, f, int(k), radii, ctx.seed + m, n_samples=P["n_samples"]))
                for k in P["ks"]]
        reps.append(("mvt", mean_value_quotient(g, f, radii, ctx.seed + m, n_samples=P["n_samples"])))
        for label, rep in reps:
            worst = max(worst, rep.trend_factor)
            blowups += rep.monotone_blowup
            for r, q in zip(rep.radii, rep.ratios):
                ctx.out.rows.append({"member": m, "quotient": label, "r": r, "ratio": q})
            ctx.out.series[f"member{m}_{label.replace('=', '')}"] = (list(rep.radii), list(rep.ratios))
    ctx.check("trend_factor", "trend_factor", worst)
    ctx.check("monotone_blowups", "monotone_blowups", blowups)


@register(
    "hp-solve",
    "every homogeneous polynomial Q has a polynomial P with H P = Q",
    "solve for each monomial of each homogeneous degree and verify the residual in rational arithmetic",
    {"max_degree": 6},
)
def _hp_solve(ctx: _Ctx):
    from .polynomials import PolySpaceBasis, heat_apply, solve_heat_polynomial

    g = ctx.g
    total = exact = 0
    for d in range(ctx.params["max_degree"] + 1):
        basis = PolySpaceBasis(g, d, homogeneous=True).polys()
        ok = 0
        for Q in basis:
            P = solve_heat_polynomial(g, Q)
            ok += (heat_apply(g, P) - Q).is_zero() and P.is_homogeneous(d + 2) if not Q.is_zero() else 1
        total += len(basis)
        exact += ok
        ctx.out.rows.append({"degree": d, "monomials": len(basis), "exact": ok})
    ctx.check("nonzero_residuals", "nonzero_residuals", total - exact)
    ctx.check("fraction_exact", "fraction_exact", exact / total if total else 1.0)


@register(
    "caloric-taylor",
    "homogeneous Taylor components of a caloric polynomial are caloric with bounded coefficients",
    "caloric basis members and random combinations; x1^2 is the non-caloric control",
    {"max_degree": 4, "n_samples": 20000, "n_combinations": 3},
)
def _caloric_taylor(ctx: _Ctx):
    from .poly import GradedPoly
    from .polynomials import caloric_basis, caloric_taylor_check, unit_ball_cloud

    g, P = ctx.g, ctx.params
    cloud = unit_ball_cloud(g, P["n_samples"], ctx.seed)
    rng = ctx.rng(1)
    bad, worst = 0, 0.0
    for d in range(1, P["max_degree"] + 1):
        basis = caloric_basis(g, d)
        members = list(basis)
        for _ in range(P["n_combinations"]):
            members.append(sum((b * Fraction(int(rng.integers(-5, 6)), int(rng.integers(1, 4))) for b in basis),
                               GradedPoly(g.spacetime_weights)))
        for j, u in enumerate(members):
            if u.is_zero():
                continue
            comps = caloric_taylor_check(g, u, d)
            bad += sum(not c.caloric for c in comps)
            sup = float(np.abs(u.to_float().evaluate(cloud)).max())
            ratio = max(abs(float(c)) for c in u.terms.values()) / sup
            worst = max(worst, ratio)
            ctx.out.rows.append({"degree": d, "member": j, "components": len(comps),
                                 "all_caloric": all(c.caloric for c in comps), "coefficient_ratio": ratio})
    ctx.check("noncaloric_components", "noncaloric_components", bad)
    ctl = caloric_taylor_check(g, GradedPoly.variable(g.spacetime_weights, 0) ** 2, 2)
    ctx.check("control_flagged", "control_flagged", sum(not c.caloric for c in ctl))
    ctx.check("coefficient_ratio", "coefficient_ratio", worst)


# --------------------------------------------------------------------------
# metrics_norms
# --------------------------------------------------------------------------


@register(
    "campanato-embedding",
    "Campanato seminorms vanish on P_d, decay like the gauge power, and control the Hölder quotient",
    "exact P_d check, d = 0 average oracle, gauge-power slopes and the Hölder/Campanato ratio",
    {"p": 2.0, "alpha": 0.5, "radii": [0.5, 0.25, 0.125, 0.0625], "betas": [1.3, 2.5], "embedding_betas": [0.5, 0.7, 0.9],
     "n_samples": 2000},
)
def _campanato_embedding(ctx: _Ctx):
    import sympy as sp

    from .calculus import SymbolicFunction, spacetime_symbols
    from .norms import NormQuery, campanato_seminorm, embedding_check, sample_cylinder, sobolev_exponent
    from .poly import GradedPoly
    from .polynomials import PolySpaceBasis

    g, P = ctx.g, ctx.params
    W = g.spacetime_weights
    O = SpaceTimePoint.origin(g)
    radii = P["radii"]
    # P_2 members on the exact path
    basis = PolySpaceBasis(g, 2).polys()
    u = sum((b * Fraction(k + 1, 3) for k, b in enumerate(basis)), GradedPoly(W))
    c = SpaceTimePoint(tuple([0.25] * g.N), -0.5)
    rep = campanato_seminorm(g, u, NormQuery(2, P["alpha"], 2, c, radii[:3]), n_samples=50, seed=ctx.seed,
                             exact_arith=True)
    ctx.check("pd_seminorm", "pd_seminorm", rep.seminorm)
    # d = 0 at p = 2 is the cylinder average
    syms = spacetime_symbols(g.N)
    f = SymbolicFunction(g, sp.exp(syms[0]) * sp.cos(syms[-2] + syms[-1]), syms)
    q0 = NormQuery(2, P["alpha"], 0, O, radii)
    rep0 = campanato_seminorm(g, f, q0, n_samples=P["n_samples"], seed=ctx.seed)
    gap = 0.0
    for r, poly in zip(radii, rep0.polys):
        cloud = sample_cylinder(g, Cylinder(O, r), P["n_samples"], seed=ctx.seed)
        gap = max(gap, abs(float(poly(cloud.points[:1])[0]) - float(np.mean(f(cloud.points)))))
    ctx.check("average_gap", "average_gap", gap)
    for beta in P["betas"]:
        beta = float(beta)
        fn = lambda pts, b=beta: parabolic_distance(g, pts, np.zeros(g.N + 1)) ** b  # noqa: E731
        for d in (0, 1, 2):
            rp = campanato_seminorm(g, fn, NormQuery(P["p"], P["alpha"], d, O, radii), n_samples=P["n_samples"],
                                    seed=ctx.seed)
            for r, e in zip(radii, rp.errors):
                ctx.out.rows.append({"beta": beta, "d": d, "r": r, "error": e, "slope": rp.slope})
            ctx.out.series[f"gauge{beta!r}_d{d}"] = (list(radii), list(rp.errors))
            ctx.check(f"slope_error[beta={beta!r},d={d}]", "slope_error", abs(rp.slope - beta))
    # Hölder quotient against the d = 0 Campanato seminorm
    dom = Cylinder(O, 1.0)
    centers = np.zeros((2, g.N + 1))
    centers[1, :] = 0.15
    ratios, a_min = [], 1.0
    for beta in P["embedding_betas"]:
        beta = float(beta)
        fn = lambda pts, b=beta: parabolic_distance(g, pts, np.zeros(g.N + 1)) ** b  # noqa: E731
        er = embedding_check(g, fn, max(P["p"], 1.01), min(beta, 0.99), dom, centers,
                             radii=radii, n_samples=P["n_samples"] // 2, seed=ctx.seed)
        ratios.append(er.ratio if er.ratio is not None else math.nan)
        a_min = min(a_min, er.a_constant)
        ctx.out.rows.append({"beta": beta, "holder": er.holder, "campanato": er.campanato, "ratio": er.ratio,
                             "a_constant": er.a_constant, "sobolev_alpha": sobolev_exponent(g, P["p"])})
    fin = [r for r in ratios if np.isfinite(r) and r > 0]
    spread = max(fin) / min(fin) if len(fin) == len(ratios) else math.inf
    ctx.check("embedding_ratio_spread", "embedding_ratio_spread", spread)
    ctx.check("a_constant", "a_constant", a_min)


def probe_members(g: CarnotGroup):
    """Five manufactured solutions for the interior-estimate probe (the last is only C^{2,1/2})."""
    import sympy as sp

    from .calculus import spacetime_symbols

    s = spacetime_symbols(g.N)
    x1, x2, xl, t = s[0], s[1], s[-2], s[-1]
    return s, [
        sp.exp(x1) * sp.cos(x2) + t,
        sp.sin(x1 + x2) * (1 + t) + xl,
        x1**2 * x2 + xl * t + sp.cos(xl),
        sp.exp(-(x1**2 + x2**2)) * (1 + xl),
        sp.Abs(x1) ** sp.Rational(5, 2) + x2**2,
    ]


def probe_family(
    g: CarnotGroup,
    h_values=(0.125, 0.0625),
    r: float = 0.25,
    p: float = 8.0,
    alpha: float = 0.5,
    amplitude: float = 0.4,
    members=None,
    levels: int = 32,
) -> list[dict]:
    """Interior-estimate ratio of each manufactured member, solved numerically at each spacing.

    The box covers ``Q_{2r}`` plus three cells; the solve runs over
    ``[-(2r)^2, (2r)^2]`` with exact initial and boundary data and
    ``levels + 1`` stored time levels.
    """
    from .calculus import SymbolicFunction
    from .grid import Grid
    from .solver import SolveConfig, explicit_step_bound, holder_perturbation, interior_estimate_probe, \
        manufactured_problem, solve

    syms, exprs = probe_members(g)
    pattern = np.zeros((g.m1, g.m1))
    pattern[0, 0], pattern[-1, -1] = 0.3, -0.2
    pattern[0, -1] = pattern[-1, 0] = 0.1
    A = holder_perturbation(g, alpha, amplitude, pattern)
    idx = range(len(exprs)) if members is None else [int(m) for m in members]
    T = (2 * r) ** 2
    rows = []
    for m in idx:
        prob = manufactured_problem(g, SymbolicFunction(g, exprs[m], syms), A)
        for h in h_values:
            grid = Grid.for_cylinder(g, 2 * r, float(h), margin=3)
            cfg = SolveConfig(cfl=1.0)
            tau = explicit_step_bound(g, A, grid, (-T, T), cfg)
            k = max(1, math.ceil(2 * T / (levels * tau)))
            sol = solve(g, prob.f, A, grid, (-T, T), SolveConfig(cfl=1.0, n_steps=levels * k, store_every=k),
                        initial=prob.u, boundary=prob.u)
            res = interior_estimate_probe(g, sol, prob.f, r, p)
            rows.append({"member": m, "h": float(h), "ratio": res.ratio, "lhs": res.lhs, "u_norm": res.u_norm,
                         "f_norm": res.f_norm})
    return rows


@register(
    "lp-constant",
    "local L^p estimates: sum_k r^k ||X^I D_t^l u||_p(Q_r) <= C (||u||_p(Q_2r) + r^2 ||f||_p(Q_2r)) with finite C",
    "probe ratio of five manufactured solutions under Hölder coefficients, compared across a grid refinement",
    {"h_values": [0.125, 0.0625], "r": 0.25, "p": 8.0, "alpha": 0.5, "amplitude": 0.4, "members": [0, 1, 2, 3, 4]},
    main_theorem_p=True,
)
def _lp_constant(ctx: _Ctx):
    P = ctx.params
    rows = probe_family(ctx.g, P["h_values"], float(P["r"]), P["p"], P["alpha"], float(P["amplitude"]), P["members"])
    ctx.out.rows = rows
    nonfinite = sum(r["ratio"] is None or not np.isfinite(r["ratio"]) for r in rows)
    ctx.check("nonfinite_ratios", "nonfinite_ratios", nonfinite)
    hs = [float(h) for h in P["h_values"]]
    for m in P["members"]:
        rs = [r["ratio"] for r in rows if r["member"] == m]
        ctx.out.series[f"member{m}_ratio_vs_h"] = (hs, rs)
        if len(rs) > 1 and all(v is not None and np.isfinite(v) and v > 0 for v in rs):
            change = max(abs(a / b - 1) for a, b in zip(rs, rs[1:]))
        else:
            change = math.inf
        ctx.check(f"refinement_change[member={m}]", "refinement_change", change)


# --------------------------------------------------------------------------
# solver
# --------------------------------------------------------------------------


@register(
    "kernel-bounds",
    "the heat kernel is nonnegative, conserves mass and obeys a Gaussian bound C t^(-Q/2) exp(-b d^2/t)",
    "delta evolved to t at two resolutions; (C, b) fitted on the log-profile upper hull",
    {"h_values": [2.0**-1.5, 0.25], "t": 1.0, "A0": None},
)
def _kernel_bounds(ctx: _Ctx):
    from .kernel import heat_kernel_estimate

    g, P = ctx.g, ctx.params
    ests = []
    for h in P["h_values"]:
        est = heat_kernel_estimate(g, P["A0"], (float(P["t"]),), h=float(h))
        ests.append(est)
        row = {"h": float(h)}
        row.update({k: v for k, v in est.summary().items() if k not in ("h", "route")})
        ctx.out.rows.append(row)
        ctx.check(f"min_value[h={float(h)!r}]", "min_value", est.min_value)
        ctx.check(f"step_mass_change[h={float(h)!r}]", "step_mass_change", est.max_step_change)
        ctx.check(f"pointwise_ratio[h={float(h)!r}]", "pointwise_ratio", est.pointwise_max_ratio)
        ctx.out.series[f"mass_h{float(h):.4f}"] = (list(range(len(est.masses))), [float(m) for m in est.masses])
    a, b = ests[0].fit, ests[-1].fit
    ctx.check("C_relative_change", "C_relative_change", abs(a.C / b.C - 1))
    ctx.check("b_relative_change", "b_relative_change", abs(a.b / b.b - 1))


# --------------------------------------------------------------------------
# pointwise decay
# --------------------------------------------------------------------------


def _holder_A(g: CarnotGroup, alpha: float, amplitude: float):
    from .solver import holder_perturbation

    pattern = np.zeros((g.m1, g.m1))
    pattern[0, 0], pattern[-1, -1] = 0.3, -0.2
    pattern[0, -1] = pattern[-1, 0] = 0.1
    return holder_perturbation(g, alpha, amplitude, pattern)


@register(
    "local-decay",
    "if ||f||_p(Q_r) <= gamma r^(d-2+alpha+(Q+2)/p) then sum_k r^k ||X^I D_t^l u||_p(Q_r) <= C gamma r^(d+alpha+(Q+2)/p)",
    "zoom solves of a homogeneous manufactured solution; slope and constant of the solution side",
    {"d": 2, "alpha": 0.5, "p": 8.0, "radii": [0.5, 0.25, 0.125, 0.0625], "amplitude": 0.4},
    main_theorem_p=True,
)
def _local_decay(ctx: _Ctx):
    import sympy as sp

    from .calculus import SymbolicFunction, spacetime_symbols
    from .schauder import sobolev_decay
    from .solver import manufactured_problem

    g, P = ctx.g, ctx.params
    A = _holder_A(g, P["alpha"], float(P["amplitude"]))
    s = spacetime_symbols(g.N)
    beta = sp.nsimplify(P["d"] + P["alpha"])
    prob = manufactured_problem(g, SymbolicFunction(g, sp.Abs(s[0]) ** beta, s), A)
    out = sobolev_decay(g, prob, P["d"], P["alpha"], P["p"], P["radii"])
    for i, r in enumerate(out["radii"]):
        ctx.out.rows.append({"r": r, "lhs": out["lhs"][i], "f_norm": out["f_norm"][i],
                             "ratio": out.get("ratios", [math.nan] * len(out["radii"]))[i]})
    ctx.out.series["lhs_vs_r"] = (list(out["radii"]), list(out["lhs"]))
    ctx.out.series["f_norm_vs_r"] = (list(out["radii"]), list(out["f_norm"]))
    ctx.check("lhs_slope_deficit", "lhs_slope_deficit", out["lhs_target"] - out.get("lhs_slope", -math.inf))
    ratios = out.get("ratios", ())
    ctx.check("constant_spread", "constant_spread", max(ratios) / min(ratios) if ratios else math.inf)
    zero = manufactured_problem(g, SymbolicFunction(g, 0, s), A)
    z = sobolev_decay(g, zero, P["d"], P["alpha"], P["p"], P["radii"][:1])
    ctx.check("zero_branch_norm", "zero_branch_norm", max(z["lhs"] + z["f_norm"]))


@register(
    "pointwise-approx",
    "a polynomial P_d of degree <= d satisfies |u - P_d| <= C |(x,t)|^(d+alpha) near the origin",
    "P_d is the exact degree-d Taylor polynomial of the manufactured solution; the numerical solution is "
    "checked against it shell by shell",
    {"d": 2, "alpha": 0.5, "radii": [0.5, 0.25, 0.125, 0.0625, 0.03125], "amplitude": 0.4},
)
def _pointwise_approx(ctx: _Ctx):
    from .polynomials import taylor_polynomial
    from .schauder import approximation_constant, power_profile_problem, zoom_solve

    g, P = ctx.g, ctx.params
    A = _holder_A(g, P["alpha"], float(P["amplitude"]))
    order = P["d"] + P["alpha"]
    prob = power_profile_problem(g, A, order)
    levels = zoom_solve(g, prob, P["radii"])
    # a grid-fitted P_d is only accurate to O(h^alpha) in its top-degree part,
    # which would dominate the shells below the grid scale
    Pd = taylor_polynomial(g, prob.u_star, P["d"])
    C, per = approximation_constant(g, levels, Pd, order)
    for z, c in zip(levels, per):
        ctx.out.rows.append({"r": z.r, "shell_constant": c})
    ctx.out.series["shell_constant_vs_r"] = ([z.r for z in levels], per)
    ctx.check("approximation_constant", "approximation_constant", C)
    pos = [c for c in per if c > 0]
    ctx.check("level_spread", "level_spread", max(pos) / min(pos) if len(pos) == len(per) else math.inf)


@register(
    "schauder-rate",
    "u - P decays like r^(d+alpha) at the origin when the coefficients and f are C^alpha there",
    "zoom solves, first-order numeric Taylor P_* subtracted, slope of inf_P ||u - P_* - P||_inf(Q_r); "
    "a smooth manufactured control must decay at least as fast",
    {"d": 2, "alpha": 0.5, "p": "inf", "radii": [2.0**-j for j in range(1, 6)], "amplitude": 0.4, "control": True},
    main_theorem_p=True,
)
def _schauder(ctx: _Ctx):
    from .schauder import power_profile_problem, schauder_rate

    g, P = ctx.g, ctx.params
    if P["d"] < 2:
        raise ExperimentError("schauder-rate needs d >= 2 (the manufactured profile has a quadratic part)")
    A = _holder_A(g, P["alpha"], float(P["amplitude"]))
    target = P["d"] + P["alpha"]
    res = schauder_rate(g, power_profile_problem(g, A, target), P["d"], P["alpha"], P["radii"], P["p"])
    runs = [("holder", res)]
    if P["control"]:
        ctrl = schauder_rate(g, power_profile_problem(g, A, smooth=True), P["d"], P["alpha"], P["radii"], P["p"])
        runs.append(("smooth", ctrl))
    for label, rr in runs:
        for row in rr.rows():
            ctx.out.rows.append({"datum": label, **row})
        ctx.out.series[f"{label}_error_vs_r"] = (list(rr.report.radii), list(rr.report.errors))
        # the radius below which the scaled error levels off is reported, not asserted
        ctx.out.series[f"{label}_scaled_vs_r"] = (list(rr.report.radii), [x["scaled"] for x in rr.rows()])
    ctx.check("slope_error", "slope_error", abs(res.slope - target))
    if P["control"]:
        ctx.check("control_excess", "control_excess", runs[1][1].slope - target)


def catalog_listing() -> list[dict]:
    """One record per entry: name, statement, tolerance keys."""
    return [
        {"name": e.name, "anchor": e.anchor, "tolerances": sorted(e.tolerances), "default_group": e.default_group}
        for e in sorted(CATALOG.values(), key=lambda e: e.name)
    ]
