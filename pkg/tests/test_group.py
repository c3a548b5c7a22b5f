from fractions import Fraction

import numpy as np
import pytest
from scipy.linalg import expm, logm

from carnotlab import group as G
from carnotlab.group import SpecError, StratificationSpec


@pytest.fixture(scope="module")
def groups():
    return {
        "H1": G.heisenberg(1),
        "H1p": G.heisenberg(1, "printed"),
        "H2": G.heisenberg(2),
        "engel": G.engel(),
        "rand3": G.random_step3(7, m3=2),
        "upper5": G.upper_triangular(5),
    }


def test_dimensions():
    h = G.heisenberg(1)
    assert (h.N, h.Q) == (3, 4)
    e = G.engel()
    assert (e.N, e.Q) == (4, 7)
    h3 = G.heisenberg(3)
    assert h3.Q == 2 * 3 + 2


def test_abelian_product_is_addition():
    a = G.abelian(3)
    rng = np.random.default_rng(0)
    p, q = rng.normal(size=(2, 50, 3))
    assert np.array_equal(a.multiply(p, q), p + q)


def test_printed_heisenberg_law_matches_bch_exactly():
    h = G.heisenberg(1, "printed")
    for got, want in zip(h.bch, G.printed_heisenberg_law(1)):
        assert got == want
    h2 = G.heisenberg(2, "printed")
    for got, want in zip(h2.bch, G.printed_heisenberg_law(2)):
        assert got == want


def test_printed_engel_law_matches_bch_exactly():
    e = G.engel()
    for got, want in zip(e.bch, G.printed_engel_law()):
        assert got == want


def test_printed_example_product():
    h = G.heisenberg(1, "printed")
    assert h.multiply_exact((1, 0, 0), (0, 1, 0)) == (1, 1, -2)
    assert np.allclose(h.multiply([1, 0, 0], [0, 1, 0]), [1, 1, -2])


def test_bch_against_matrix_exponential():
    # independent oracle: unipotent matrices, step 4
    n = 5
    g = G.upper_triangular(n)
    basis = G.upper_triangular_basis(n)
    rng = np.random.default_rng(3)

    def mat(v):
        m = np.zeros((n, n))
        for (i, j), c in zip(basis, v):
            m[i, j] = c
        return m

    for _ in range(20):
        x, y = rng.uniform(-1, 1, size=(2, g.N))
        z = logm(expm(mat(x)) @ expm(mat(y))).real
        want = np.array([z[i, j] for i, j in basis])
        assert np.allclose(g.multiply(x, y), want, atol=1e-10)


@pytest.mark.parametrize("name", ["H1", "H1p", "H2", "engel", "rand3", "upper5"])
def test_group_axioms(groups, name):
    g = groups[name]
    rng = np.random.default_rng(11)
    p, q, w = rng.uniform(-1, 1, size=(3, 10_000, g.N))
    lhs = g.multiply(g.multiply(p, q), w)
    rhs = g.multiply(p, g.multiply(q, w))
    assert np.max(np.abs(lhs - rhs)) < 1e-12
    assert np.array_equal(g.multiply(p, g.identity), p)
    assert np.max(np.abs(g.multiply(p, g.inverse(p)))) < 1e-12
    s = 0.7
    assert np.max(np.abs(g.dilate(s, g.multiply(p, q)) - g.multiply(g.dilate(s, p), g.dilate(s, q)))) < 1e-12
    assert np.allclose(g.gauge_norm(g.inverse(p)), g.gauge_norm(p), rtol=0, atol=1e-15)
    assert np.allclose(g.gauge_norm(g.dilate(s, p)), s * g.gauge_norm(p), rtol=1e-12)


def test_associativity_exact_small(groups):
    g = groups["engel"]
    p = (Fraction(1, 2), Fraction(-3), Fraction(2, 7), Fraction(1))
    q = (Fraction(5), Fraction(1, 3), Fraction(-1), Fraction(2, 5))
    w = (Fraction(-1, 4), Fraction(2), Fraction(3), Fraction(-7, 2))
    assert g.multiply_exact(g.multiply_exact(p, q), w) == g.multiply_exact(p, g.multiply_exact(q, w))


def test_inverse_examples():
    h = G.heisenberg(1, "printed")
    assert np.array_equal(h.inverse(np.array([1.0, 1.0, -2.0])), [-1, -1, 2])
    assert np.array_equal(h.inverse(np.zeros(3)), np.zeros(3))


def test_dilation_examples():
    h = G.heisenberg(1)
    assert np.array_equal(h.dilate(2, [1, 1, 1]), [2, 2, 4])
    p = np.array([0.3, -0.2, 0.9])
    assert np.array_equal(h.dilate(1, p), p)
    with pytest.raises(ValueError):
        h.dilate(0, p)
    assert np.array_equal(G.parabolic_dilate(h, 2, [1, 1, 1, 1]), [2, 2, 4, 4])


def test_gauge_norm_examples():
    h = G.heisenberg(1)
    assert h.gauge_norm(np.array([1.0, 0, 0])) == 1.0
    assert h.gauge_norm(np.zeros(3)) == 0.0
    # (x1^4 + x2^4 + x3^2)^(1/4)
    assert np.isclose(h.gauge_norm(np.array([1.0, 1.0, 2.0])), 6**0.25)
    e = G.engel()
    # exponent 2 * 3! = 12
    x = np.array([0.5, 0.4, 0.3, 0.2])
    want = (0.5**12 + 0.4**12 + 0.3**6 + 0.2**4) ** (1 / 12)
    assert np.isclose(e.gauge_norm(x), want)


def test_gauge_norm_sums_over_each_layer():
    # H^2 has four horizontal coordinates; every one of them must count
    h = G.heisenberg(2)
    assert h.gauge_norm(np.array([0, 0, 0, 1.0, 0])) == 1.0


def test_parabolic_distance_properties():
    g = G.engel()
    rng = np.random.default_rng(5)
    a, b = rng.uniform(-1, 1, size=(2, 500, g.N + 1))
    assert np.all(G.parabolic_distance(g, a, a) == 0)
    s = 0.37
    lhs = G.parabolic_distance(g, G.parabolic_dilate(g, s, a), G.parabolic_dilate(g, s, b))
    assert np.allclose(lhs, s * G.parabolic_distance(g, a, b), rtol=1e-12)
    # right invariance of d(x, y) = |x y^{-1}|
    c = rng.uniform(-1, 1, size=(500, g.N))
    d1 = g.distance(a[:, :-1], b[:, :-1])
    d2 = g.distance(g.multiply(a[:, :-1], c), g.multiply(b[:, :-1], c))
    assert np.allclose(d1, d2, rtol=1e-10)


def test_cylinder_contains():
    g = G.heisenberg(1)
    cyl = G.Cylinder(G.SpaceTimePoint((0.2, 0.0, 0.1), 0.5), 0.3)
    c = cyl.center.as_array()
    assert cyl.contains(g, c)
    far = c + np.array([0, 0, 0, 0.1])
    assert not cyl.contains(g, far)


def test_quasi_triangle_abelian_is_one():
    est = G.estimate_quasi_triangle_constant(G.abelian(3), 20_000, seed=1)
    assert abs(est.constant - 1.0) < 1e-9


def test_quasi_triangle_single_sample():
    est = G.estimate_quasi_triangle_constant(G.heisenberg(1), 1, seed=2)
    assert est.sample_count == 1
    assert est.constant >= 1.0


def test_quasi_triangle_monotone_in_samples():
    h = G.heisenberg(1)
    vals = [G.estimate_quasi_triangle_constant(h, n, seed=4).constant for n in (10, 1000, 50_000, 120_000)]
    assert vals == sorted(vals)
    assert np.isfinite(vals[-1])


def test_quasi_triangle_reports_triple():
    h = G.heisenberg(1)
    est = G.estimate_quasi_triangle_constant(h, 5000, seed=9)
    a, b, c = est.triple
    ratio = G.parabolic_distance(h, a, b) / (G.parabolic_distance(h, a, c) + G.parabolic_distance(h, c, b))
    assert np.isclose(ratio, est.constant)


def test_quasi_triangle_chunked_workers_match():
    h = G.heisenberg(1)
    a = G.estimate_quasi_triangle_constant(h, 100_000, seed=3, workers=1)
    b = G.estimate_quasi_triangle_constant(h, 100_000, seed=3, workers=3)
    assert a.constant == b.constant


def test_cylinder_measure_r1_is_one():
    m = G.cylinder_measure_check(G.heisenberg(1), 1.0, 10_000, seed=0)
    assert m.ratio == 1.0 and m.expected == 1.0


def test_cylinder_measure_small_run():
    m = G.cylinder_measure_check(G.heisenberg(1), 0.5, 200_000, seed=8)
    assert m.zscore < 4


def test_spec_json_round_trip():
    spec = G.random_step3_spec(11, m3=2)
    text = spec.to_json()
    again = StratificationSpec.from_json(text)
    assert again == spec
    assert again.to_json() == text


def test_spec_from_brackets_both_orders():
    s = StratificationSpec.from_brackets((2, 1), [(1, 0, 2, -1)])
    assert s.brackets == ((0, 1, 2, Fraction(1)),)
    with pytest.raises(SpecError, match="antisymmetry"):
        StratificationSpec.from_brackets((2, 1), [(0, 1, 2, 1), (1, 0, 2, 1)])


def test_grading_violation_reported():
    spec = StratificationSpec.from_brackets((2, 1, 1), [(0, 1, 3, 1)])
    with pytest.raises(SpecError, match=r"grading violation: \[e0, e1\]"):
        G.build_group(spec)


def test_jacobi_failure_reported():
    # 3 generators, [e0,e1]=e3, [e1,e2]=e4? use a step-3 fragment that breaks Jacobi:
    # layer dims (3, 3, 1); brackets of layer 1 into layer 2 fine, then
    # [e0, e4] = e6 only -> Jacobi on (e0, e1, e2) involves [e0,[e1,e2]] = [e0, e4] = e6
    entries = [(0, 1, 3, 1), (0, 2, 4, 1), (1, 2, 5, 1), (0, 5, 6, 1)]
    spec = StratificationSpec.from_brackets((3, 3, 1), entries)
    with pytest.raises(SpecError, match="Jacobi"):
        G.build_group(spec)


def test_non_generating_layer_reported():
    spec = StratificationSpec.from_brackets((2, 2), [(0, 1, 2, 1)])
    with pytest.raises(SpecError, match="layer 2 is not generated"):
        G.build_group(spec)


def test_multiply_dimension_mismatch():
    with pytest.raises(ValueError):
        G.heisenberg(1).multiply(np.zeros(4), np.zeros(4))


def test_left_translation_poly():
    e = G.engel()
    p = (1, 2, -1, 3)
    lt = e.left_translation_poly(p)
    y = np.array([0.3, -0.1, 0.5, 0.2])
    assert np.allclose([q.evaluate(y) for q in lt], e.multiply(np.array(p, float), y))
