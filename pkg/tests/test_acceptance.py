"""Acceptance suite: one PASS/FAIL line per criterion, printed even under capture.

Run with ``pytest tests/test_acceptance.py -v``; each test also asserts, so
a failed criterion is a red test.
"""

import json
import time

import numpy as np
import pytest

from carnotlab import group as G
from carnotlab.calculus import commutator, left_invariant_fields
from carnotlab.cli import main
from carnotlab.experiments import run_experiment
from carnotlab.grid import Grid, lattice_spacings
from carnotlab.poly import GradedPoly
from carnotlab.solver import CoefficientField, SolveConfig, manufactured_problem, solve

H1 = G.heisenberg(1)
H2 = G.heisenberg(2)
ENGEL = G.engel()


@pytest.fixture
def report(capsys):
    t0 = time.perf_counter()

    def emit(n: int, title: str, ok: bool, detail: str, limit: float):
        secs = time.perf_counter() - t0
        ok = bool(ok) and secs < limit
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {title} | {detail} | {secs:.1f}s (limit {limit:.0f}s)")
        assert ok, detail

    return emit


def _failures(outcomes):
    return [f"{o.experiment}: {c.message()}" for o in outcomes for c in o.checks if not c.passed]


def _worst(outcomes, key):
    return max(c.measured for o in outcomes for c in o.checks if c.key == key)


def test_criterion_01_group_algebra(report):
    outs = [run_experiment("group-axioms", g, {"n_triples": 10000}, seed=1) for g in (H1, H2, ENGEL)]
    outs += [run_experiment("bch-vs-explicit", g, seed=1) for g in (H1, H2, ENGEL)]
    bad = _failures(outs)
    detail = (f"max assoc {_worst(outs, 'associativity'):.1e}, identity {_worst(outs, 'identity'):.1e}, "
              f"inverse {_worst(outs, 'inverse'):.1e}; printed-law mismatches {_worst(outs, 'mismatched_terms'):.0f}")
    report(1, "group algebra", not bad, detail if not bad else "; ".join(bad), 10)


def test_criterion_02_structure(report):
    X = left_invariant_fields(ENGEL)
    ok = commutator(X[0], X[1]) == X[2] and commutator(X[0], X[2]) == X[3]
    others = [(a, b) for a in range(4) for b in range(4) if {a, b} not in ({0, 1}, {0, 2})]
    ok = ok and all(commutator(X[a], X[b]).is_zero() for a, b in others)
    outs = [run_experiment("hormander", g, seed=0) for g in (H1, ENGEL)]
    bad = _failures(outs)
    report(2, "structure", ok and not bad,
           f"Engel table exact: {ok}; Hörmander depth = step on H1 and Engel: {not bad}", 5)


def test_criterion_03_geometry(report):
    outs = [run_experiment("measure-mc", g, {"radii": [0.5, 0.25], "mc_samples": 1_000_000}, seed=3) for g in (H1, ENGEL)]
    outs += [run_experiment("quasi-triangle", g, {"sample_counts": [100_000, 1_000_000]}, seed=3) for g in (H1, ENGEL)]
    bad = _failures(outs)
    detail = (f"max z-score {_worst(outs, 'zscore'):.2f}, quasi-triangle change {_worst(outs, 'relative_change'):.3f}, "
              f"abelian deviation {_worst(outs, 'abelian_deviation'):.1e}")
    report(3, "geometry", not bad, detail if not bad else "; ".join(bad), 60)


def test_criterion_04_caloric_solver(report):
    outs = [run_experiment("hp-solve", g, {"max_degree": 6}, seed=0) for g in (H1, ENGEL)]
    n = sum(r["monomials"] for o in outs for r in o.rows)
    bad = _failures(outs)
    report(4, "H P = Q solver", not bad, f"{n} homogeneous monomials of degree <= 6, nonzero residuals "
           f"{_worst(outs, 'nonzero_residuals'):.0f}", 60)


def test_criterion_05_taylor(report):
    radii = [2.0**-j for j in range(1, 9)]
    outs = [run_experiment("mvt-taylor", g, {"taylor_radii": radii}, seed=5) for g in (H1, ENGEL)]
    bad = _failures(outs)
    report(5, "Taylor machinery", not bad, f"truncation mismatches {_worst(outs, 'truncation_mismatches'):.0f}, "
           f"max trend factor {_worst(outs, 'trend_factor'):.2f}, monotone blow-ups "
           f"{_worst(outs, 'monotone_blowups'):.0f}", 30)


def test_criterion_06_campanato(report):
    out = run_experiment("campanato-embedding", H1, {"betas": [1.3, 2.5], "n_samples": 3000}, seed=6)
    bad = _failures([out])
    report(6, "Campanato engine", not bad, f"P_d seminorm {_worst([out], 'pd_seminorm')!r}, average gap "
           f"{_worst([out], 'average_gap'):.1e}, max slope error {_worst([out], 'slope_error'):.1e}", 60)


def _degree4_errors():
    W = H1.spacetime_weights
    x1, x2, x3, t = (GradedPoly.variable(W, j) for j in range(4))
    u = x1**4 + x1 * x2 * x3 + x3**2 + t * x2**2
    A = CoefficientField.identity(2)
    mp = manufactured_problem(H1, u, A)
    errs = []
    for h in (0.25, 0.125, 0.0625):
        grid = Grid.symmetric((1, 1, 0.5), lattice_spacings(H1, h))
        sol = solve(H1, mp.f, A, grid, (0, 0.0625), SolveConfig(store_every=1 << 30), initial=mp.u, boundary=mp.u)
        pts = sol.spacetime_nodes()[-grid.size:]
        errs.append(float(np.abs(sol.values[-1].ravel() - u.evaluate(pts)).max()))
    return errs


def test_criterion_07_solver(report):
    errs = _degree4_errors()
    orders = [float(np.log2(a / b)) for a, b in zip(errs, errs[1:])]
    W = H1.spacetime_weights
    lin = 3 * GradedPoly.variable(W, 0) - 2 * GradedPoly.variable(W, 1) + 0.5 * GradedPoly.variable(W, 2) + 1
    A = CoefficientField.constant_matrix([[1.5, 0.25], [0.25, 1.0]])
    mp = manufactured_problem(H1, lin, A)
    grid = Grid.symmetric((1, 1, 0.5), lattice_spacings(H1, 0.125))
    sol = solve(H1, mp.f, A, grid, (0, 0.1), initial=mp.u, boundary=mp.u)
    lin_err = float(np.abs(sol.values[-1].ravel() - lin.evaluate(sol.spacetime_nodes()[-grid.size:])).max())
    A0 = np.array([[1.5, 0.25], [0.25, 1.0]])
    frozen = CoefficientField.constant_matrix(A0)
    variable = CoefficientField(2, frozen.lam, frozen.Lam, fn=lambda p: np.broadcast_to(A0, (len(p), 2, 2)).copy())
    f = lambda p: np.sin(p[:, 0]) * p[:, 3]  # noqa: E731
    init = lambda p: np.cos(p[:, 1]) + p[:, 2]  # noqa: E731
    g25 = Grid.symmetric((1, 1, 0.5), lattice_spacings(H1, 0.25))
    a = solve(H1, f, frozen, g25, (0, 0.1), SolveConfig(n_steps=80), initial=init, boundary=init)
    b = solve(H1, f, variable, g25, (0, 0.1), SolveConfig(n_steps=80), initial=init, boundary=init)
    same = np.array_equal(a.values, b.values)
    ok = min(orders) >= 1.8 and lin_err <= 1e-10 and same
    report(7, "solver convergence", ok, f"sup errors {[f'{e:.2e}' for e in errs]}, orders "
           f"{[round(o, 3) for o in orders]}, linear error {lin_err:.1e}, frozen == variable: {same}", 300)


def test_criterion_08_kernel(report):
    out = run_experiment("kernel-bounds", H1, {"h_values": [2.0**-1.5, 0.25], "t": 1.0}, seed=0)
    bad = _failures([out])
    report(8, "heat kernel bounds", not bad, f"min {_worst([out], 'min_value')!r}, max step mass change "
           f"{_worst([out], 'step_mass_change'):.1e}, C change {_worst([out], 'C_relative_change'):.4f}, "
           f"b change {_worst([out], 'b_relative_change'):.4f}, "
           f"max pointwise ratio {_worst([out], 'pointwise_ratio'):.3f}", 300)


def test_criterion_09_schauder_rate(report):
    out = run_experiment("schauder-rate", H1, {"d": 2, "alpha": 0.5, "radii": [2.0**-j for j in range(1, 6)]}, seed=0)
    bad = _failures([out])
    report(9, "pointwise Schauder rate", not bad,
           f"|slope - 2.5| = {_worst([out], 'slope_error'):.4f} (<= 0.15), smooth control excess "
           f"{_worst([out], 'control_excess'):.3f} (>= 0)", 600)


def test_criterion_10_interior_probe(report):
    out = run_experiment("lp-constant", H1, {"h_values": [0.125, 0.0625], "r": 0.25, "p": 8.0}, seed=0)
    bad = _failures([out])
    report(10, "interior-estimate probe", not bad,
           f"5 members, non-finite {_worst([out], 'nonfinite_ratios'):.0f}, max refinement change "
           f"{_worst([out], 'refinement_change'):.3f}", 300)


def test_criterion_11_determinism(report, tmp_path):
    runs = [
        {"experiment": "group-axioms", "group": "engel", "params": {"n_triples": 2000}},
        {"experiment": "measure-mc", "params": {"mc_samples": 100_000}},
        {"experiment": "quasi-triangle", "params": {"sample_counts": [5000, 20000]}},
        {"experiment": "mvt-taylor", "params": {"n_samples": 500, "n_polys": 2}},
        {"experiment": "campanato-embedding", "params": {"n_samples": 800}},
    ]
    files = []
    for name in ("a", "b"):
        cfg = tmp_path / f"{name}.json"
        cfg.write_text(json.dumps({"runs": runs, "seed": 11, "outdir": name}))
        assert main(["run", str(cfg)]) == 0
        root = tmp_path / name
        files.append({p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
                      if p.is_file() and p.suffix in (".csv", ".txt")})
    same = files[0] == files[1] and len(files[0]) > 0
    report(11, "determinism", same, f"{len(files[0])} CSV and series files byte-identical: {same}", 60)
