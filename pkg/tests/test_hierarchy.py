import numpy as np
import pytest
from hypothesis import given, strategies as st

from adiabatic_hierarchy.classical import ParametricHamiltonian, find_fixed_points
from adiabatic_hierarchy.errors import GradeOverflow, OrbitNotClosed
from adiabatic_hierarchy.hierarchy import (DeviationHamiltonian, GradedTerm, OrderShift, ShiftEngine,
                                           action, delta_gamma, delta_gamma_terms, delta_j_gamma,
                                           delta_j_gamma_from_tensors, deviation_hamiltonian,
                                           first_order_hamiltonian, first_order_shift, grade_select,
                                           kth_order_shift, orientation, quadratic_action,
                                           second_order_hamiltonian, second_order_shift, shift_series,
                                           signed_area)
from adiabatic_hierarchy.models import LandauZener, SpinRotatingField, lz_closed_forms

# Shifts S_1..S_3 from the symbolic oracle in tests/oracles.py (x = 1 or L = 1).
# Keys: (R, rates); values: ((A1, B1), (A2, B2), (A3, B3)).
LZ_ORACLE = {
    (-3.0, (1e-3,)): ((1e-4, 0.0), (0.0, -1.1858541225631423e-09), (-1.0833333333333335e-11, 0.0)),
    (0.0, (1e-3,)): ((1e-3, 0.0), (0.0, 0.0), (2.6666666666666666e-09, 0.0)),
    (1.0, (1e-3,)): ((5e-4, 0.0), (0.0, 1.1048543456039804e-07), (-6.041666666666667e-10, 0.0)),
    (0.5, (1e-3,)): ((8e-4, 0.0), (0.0, 2.862167011199731e-07), (-1.7066666666666667e-10, 0.0)),
    (2.0, (1e-3,)): ((2e-4, 0.0), (0.0, 8.944271909999159e-09), (-7.466666666666668e-11, 0.0)),
    (-3.0, (1e-3, 2e-6, 5e-9)): ((1e-4, 0.0), (0.0, -4.348131782731521e-09), (-1.1483333333333332e-10, 0.0)),
    (0.0, (1e-3, 2e-6, 5e-9)): ((1e-3, 0.0), (0.0, -1e-06), (-2.3333333333333335e-09, 0.0)),
    (1.0, (1e-3, 2e-6, 5e-9)): ((5e-4, 0.0), (0.0, -6.629126073623883e-08), (3.9583333333333357e-10, 0.0)),
    (0.5, (1e-3, 2e-6, 5e-9)): ((8e-4, 0.0), (0.0, -2.862167011199731e-07), (1.2373333333333328e-09, 0.0)),
    (2.0, (1e-3, 2e-6, 5e-9)): ((2e-4, 0.0), (0.0, -8.944271909999159e-09), (1.3333333333333313e-11, 0.0)),
}
# spin upper branch: S1 = (0, a'/2), S2 = (-a'', 0), S3 = (0, -a'^3/4 - a'''/2)
SPIN_ORACLE = {
    (0.3, (1e-5, 3e-7, 1e-8)): ((0.0, 5e-06), (-3e-07, 0.0), (0.0, -5.00000025e-09)),
    (0.3, (1e-5,)): ((0.0, 5e-06), (0.0, 0.0), (0.0, -2.5000000000000007e-16)),
}


def lz_fp(z, h=None):
    """Lower branch in its default chart (pivot 1 once q_bar > 0.9)."""
    return find_fixed_points(h or LandauZener(1.0), z)[0]


def in_pivot_zero(fp, vector):
    # the pivot-1 chart is (-p, 1 - q), so shifts change sign
    return -vector if fp.chart.pivot == 1 else vector


def spin_fp(alpha, h=None):
    return find_fixed_points(h or SpinRotatingField(1.0), alpha)[1]


def padded(rates):
    return tuple(rates) + (0.0,) * (3 - len(rates))


@pytest.mark.parametrize("key", list(LZ_ORACLE))
def test_lz_shifts_match_symbolic_oracle(key):
    z, rates = key
    fp = lz_fp(z)
    got = shift_series(LandauZener(1.0), fp, padded(rates), 3)
    for k, (s, expect) in enumerate(zip(got, LZ_ORACLE[key]), start=1):
        np.testing.assert_allclose(in_pivot_zero(fp, s.vector), expect, rtol=1e-7, atol=1e-9 * 1e-3 ** k)


@pytest.mark.parametrize("key", list(SPIN_ORACLE))
def test_spin_shifts_match_symbolic_oracle(key):
    alpha, rates = key
    got = shift_series(SpinRotatingField(1.0), spin_fp(alpha), padded(rates), 3)
    for k, (s, expect) in enumerate(zip(got, SPIN_ORACLE[key]), start=1):
        np.testing.assert_allclose(s.vector, expect, rtol=1e-7, atol=1e-9 * 1e-5 ** k)


def test_generic_path_matches_oracle_third_order():
    lz = LandauZener(1.0).generic()
    got = shift_series(lz, lz_fp(0.5, lz), (1e-3, 0.0, 0.0), 3)
    np.testing.assert_allclose(got[2].vector, LZ_ORACLE[(0.5, (1e-3,))][2], rtol=1e-5, atol=1e-15)


@pytest.mark.slow
def test_frozen_values_regenerate_from_oracle():
    oracles = pytest.importorskip("oracles")
    lz = oracles.lz_shifts()
    for (z, rates), expect in LZ_ORACLE.items():
        np.testing.assert_allclose(oracles.evaluate(lz, z, rates), expect, rtol=1e-14, atol=1e-300)
    spin = oracles.spin_shifts()
    for (a, rates), expect in SPIN_ORACLE.items():
        np.testing.assert_allclose(oracles.evaluate(spin, a, rates), expect, rtol=1e-14, atol=1e-300)


def test_first_order_examples():
    s = first_order_shift(SpinRotatingField(1.0), spin_fp(0.7), None, 1e-5)
    np.testing.assert_allclose(s.vector, [0.0, 5e-6], atol=1e-18)
    for z in (-1.0, 0.0, 0.8):
        s = first_order_shift(LandauZener(1.0), lz_fp(z), None, 1e-3)
        np.testing.assert_allclose(s.vector, [1e-3 / (1 + z * z), 0.0], atol=1e-16)
    assert np.all(first_order_shift(LandauZener(1.0), lz_fp(0.3), None, 0.0).vector == 0)


def test_first_order_hamiltonian_examples():
    H1 = first_order_hamiltonian(SpinRotatingField(1.0), spin_fp(0.2), None, 1e-5)
    # -(L/2)[2 (dq - B1)^2 + dp^2 / 2]
    assert H1(0.0, 5e-6 + 1e-3) == pytest.approx(-1e-6, rel=1e-10)
    assert H1(2e-3, 5e-6) == pytest.approx(-1e-6, rel=1e-10)
    z = 0.6
    r = np.hypot(1, z)
    H1 = first_order_hamiltonian(LandauZener(1.0), lz_fp(z), None, 1e-3)
    A1 = 1e-3 / r ** 2
    assert H1(A1 + 1e-3, 0.0) == pytest.approx(0.25 * 1e-6 / r, rel=1e-9)
    assert H1(A1, 1e-3) == pytest.approx(r * (1 + z * z) * 1e-6, rel=1e-9)
    H0 = first_order_hamiltonian(LandauZener(1.0), lz_fp(z), None, 0.0)
    assert np.all(H0.center.vector == 0)


def test_second_order_examples():
    for z in np.linspace(-1.2, 1.2, 7):
        s2 = second_order_shift(LandauZener(1.0), lz_fp(z), None, 1e-3, 0.0)
        np.testing.assert_allclose(s2.vector, lz_closed_forms(1.0, z, 1e-3).shift2, atol=1e-12)
    zero = second_order_shift(LandauZener(1.0), lz_fp(0.4), None, 0.0, 0.0)
    assert np.all(np.abs(zero.vector) == 0)


def test_second_order_with_acceleration():
    z, V, acc = 0.7, 1e-3, 2e-6
    r = np.hypot(1, z)
    s2 = second_order_shift(LandauZener(1.0), lz_fp(z), None, V, acc)
    expect = 5 * z * V * V / (4 * r ** 7) - acc / (2 * r ** 5)
    assert s2.B[0] == pytest.approx(expect, rel=1e-8)


def test_second_order_hamiltonian_hessian():
    z, V = 0.4, 1e-3
    H2 = second_order_hamiltonian(LandauZener(1.0), lz_fp(z), None, V, 0.0)
    cf = lz_closed_forms(1.0, z, V)
    np.testing.assert_allclose(H2.coefficients, cf.h2, rtol=1e-5, atol=1e-12)
    H2k = deviation_hamiltonian(LandauZener(1.0), lz_fp(z), (V, 0.0), 2)
    np.testing.assert_allclose(H2k.hessian, H2.hessian, atol=1e-10)
    np.testing.assert_allclose(H2k.center.vector, H2.center.vector, atol=1e-15)


@pytest.mark.parametrize("model", ["spin", "lz"])
def test_path_consistency(model, rng):
    for _ in range(6):
        if model == "spin":
            h, R = SpinRotatingField(1.0), rng.uniform(-3, 3)
            fp, rates = spin_fp(R), (rng.uniform(-2e-5, 2e-5), rng.uniform(-1e-6, 1e-6))
        else:
            h, R = LandauZener(1.0), rng.uniform(-1.2, 1.2)
            fp, rates = lz_fp(R), (rng.uniform(-2e-3, 2e-3), rng.uniform(-1e-5, 1e-5))
        s1 = kth_order_shift(h, fp, rates, 1).vector
        s2 = kth_order_shift(h, fp, rates, 2).vector
        np.testing.assert_allclose(s1, first_order_shift(h, fp, None, rates[0]).vector, atol=1e-10)
        np.testing.assert_allclose(s2, second_order_shift(h, fp, None, *rates).vector, atol=1e-10)


@pytest.mark.parametrize("model", ["spin", "lz"])
@pytest.mark.parametrize("lam", [0.5, 3.0])
def test_scaling_homogeneity(model, lam):
    if model == "spin":
        h, fp, rates = SpinRotatingField(1.0), spin_fp(0.3), (1e-5, 3e-7, 1e-8)
    else:
        h, fp, rates = LandauZener(1.0), lz_fp(0.5), (1e-3, 2e-6, 5e-9)
    base = shift_series(h, fp, rates, 3)
    scaled = shift_series(h, fp, tuple(r * lam ** (m + 1) for m, r in enumerate(rates)), 3)
    for k, (a, b) in enumerate(zip(base, scaled), start=1):
        scale = np.linalg.norm(a.vector) * lam ** k
        assert np.linalg.norm(b.vector - lam ** k * a.vector) <= 1e-9 * scale


def test_grade_select_worked_example():
    A2, B2 = GradedTerm.symbol("A", 2), GradedTerm.symbol("B", 2)
    terms = [A2, B2, A2 * A2, A2 * B2]
    assert [t.monomial for t in grade_select(terms, 2)] == ["A2", "B2"]
    assert grade_select(terms, 3) == []
    assert [t.monomial for t in grade_select(terms, 4)] == ["A2^2", "A2*B2"]


@given(st.lists(st.tuples(st.sampled_from("AB"), st.integers(1, 3)), min_size=1, max_size=4))
def test_product_grades_add(factors):
    term = GradedTerm.symbol(*factors[0])
    for f in factors[1:]:
        term = term * GradedTerm.symbol(*f)
    assert term.grade == sum(r for _, r in factors)
    assert grade_select([term], term.grade) == [term]


def test_delta_j_gamma_grade_two_monomials():
    h = SpinRotatingField(1.0)
    fp = spin_fp(0.3)
    shifts = [s.vector[None, :] for s in shift_series(h, fp, (1e-5, 3e-7), 2)]
    tensors = {o: h.tensor(fp.chart.z[None, :], np.array([fp.R]), 0, o) for o in (3, 4)}
    terms = grade_select(delta_gamma_terms(tensors, shifts, 2), 2)
    allowed = {"A1^2", "A1*B1", "B1^2", "A2", "B2"}
    assert {t.monomial for t in terms} <= allowed
    assert {"A2", "B2", "A1^2", "B1^2", "A1*B1"} == {t.monomial for t in terms}
    assert all(t.grade == 2 for t in terms)


@pytest.mark.parametrize("model", ["spin", "lz"])
def test_delta_one_is_half_delta_gamma(model):
    if model == "spin":
        h, fp, rate = SpinRotatingField(1.0), spin_fp(0.3), 1e-5
    else:
        h, fp, rate = LandauZener(1.0), lz_fp(0.5), 1e-3
    s1 = first_order_shift(h, fp, None, rate)
    d1 = delta_j_gamma(h, fp, [s1], 1)
    np.testing.assert_allclose(d1, 0.5 * delta_gamma(h, fp, s1), atol=1e-12)


def test_delta_j_gamma_vanishes_for_zero_shifts():
    h, fp = LandauZener(1.0), lz_fp(0.2)
    zero = OrderShift(1, np.zeros(1), np.zeros(1))
    assert np.all(delta_j_gamma(h, fp, [zero, zero], 2) == 0)
    assert np.all(delta_gamma(h, fp, zero) == 0)


def test_constant_gamma_has_no_corrections():
    zeros = {o: np.zeros((1,) + (2,) * o) for o in (3, 4, 5)}
    shifts = [np.array([[0.3, -0.2]]), np.array([[0.1, 0.4]]), np.array([[0.2, 0.2]])]
    for j in (1, 2, 3):
        assert np.all(delta_j_gamma_from_tensors(zeros, shifts, j) == 0)


def test_spin_delta_gamma_along_q():
    h, fp = SpinRotatingField(1.0), spin_fp(0.3)
    s1 = first_order_shift(h, fp, None, 1e-5)
    # d Gamma / dq at q = 1/2 from the third partials: H_ppq = 0, H_qqq = 0 there; H_qpp = 0
    T = h.tensor(fp.chart.z, 0.3, 0, 3)
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    np.testing.assert_allclose(delta_gamma(h, fp, s1), J @ T[:, :, 1] * 5e-6, atol=1e-15)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-3, 3))
def test_delta_gamma_linear(a, b, c):
    h, fp = LandauZener(1.0), lz_fp(0.3)
    u = OrderShift(1, np.array([1e-3 * a]), np.array([1e-3 * b]))
    v = OrderShift(1, np.array([2e-4]), np.array([-5e-4]))
    combo = OrderShift.from_vector(1, u.vector + c * v.vector)
    lhs = delta_gamma(h, fp, combo)
    rhs = delta_gamma(h, fp, u) + c * delta_gamma(h, fp, v)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_grade_overflow():
    h, fp = LandauZener(1.0), lz_fp(0.2)
    with pytest.raises(GradeOverflow):
        kth_order_shift(h, fp, (1e-3, 0, 0, 0), 4)
    with pytest.raises(GradeOverflow):
        ShiftEngine(h, [0.2], fp.vector, 0, 0).shift(4, (np.array([0.2]),) + (np.zeros(1),) * 4)
    with pytest.raises(ValueError):
        kth_order_shift(h, fp, (1e-3,), 2)


def test_engine_batch_matches_single_points():
    lz = LandauZener(1.0)
    zs = np.linspace(-1, 1, 5)
    refs = np.array([lz_fp(z).vector for z in zs])
    eng = ShiftEngine(lz, zs, refs, 0, 0)
    derivs = (zs, np.full(5, 1e-3), np.zeros(5), np.zeros(5))
    batch = eng.series(derivs, 3)
    for i, z in enumerate(zs):
        single = shift_series(lz, lz_fp(z), (1e-3, 0.0, 0.0), 3)
        for k in range(3):
            np.testing.assert_allclose(batch[k][i], single[k].vector, rtol=1e-9, atol=1e-22)


def test_elliptic_definiteness():
    for z in np.linspace(-1.2, 1.2, 9):
        H1 = first_order_hamiltonian(LandauZener(1.0), lz_fp(z), None, 1e-3)
        c_qq, c_qp, c_pp = H1.coefficients
        assert c_qq * c_pp - c_qp ** 2 > 0 and H1.is_elliptic
    for alpha in np.linspace(-3, 3, 7):
        for fp in find_fixed_points(SpinRotatingField(1.0), alpha):
            assert first_order_hamiltonian(SpinRotatingField(1.0), fp, None, 1e-5).is_elliptic


def test_ellipse_action_matches_closed_form():
    hess = np.array([[0.7, 0.2], [0.2, 1.9]])
    H = DeviationHamiltonian(1, hess, OrderShift(1, np.array([0.1]), np.array([-0.3])))
    energy = 0.013
    # parametrize the level set through the eigenbasis of the quadratic form
    w, v = np.linalg.eigh(hess)
    th = np.linspace(0, 2 * np.pi, 100001)[:-1]
    u = (v @ np.stack([np.sqrt(2 * energy / w[0]) * np.cos(th), np.sqrt(2 * energy / w[1]) * np.sin(th)]))
    p, q = u[0] + 0.1, u[1] - 0.3
    assert H(p[17], q[17]) == pytest.approx(energy, rel=1e-12)
    assert action(p, q) == pytest.approx(H.action_of_energy(energy), rel=1e-8)
    assert quadratic_action(hess, u[:, 5]) == pytest.approx(H.action_of_energy(energy), rel=1e-12)


def test_action_edge_cases():
    assert action(np.zeros(5), np.ones(5)) == 0.0
    th = np.linspace(0, np.pi, 50)
    with pytest.raises(OrbitNotClosed):
        action(np.cos(th), np.sin(th))
    th = np.linspace(0, 2 * np.pi, 400)[:-1]
    assert orientation(np.cos(th), np.sin(th)) == 1
    assert signed_area(np.cos(th), np.sin(th)) == pytest.approx(np.pi, rel=1e-3)


def test_third_order_decays_with_distance():
    h = LandauZener(1.0)
    near = shift_series(h, lz_fp(0.0), (1e-3, 0.0, 0.0), 3)[2].vector
    far = shift_series(h, find_fixed_points(h, -20.0)[0], (1e-3, 0.0, 0.0), 3)[2].vector
    assert np.linalg.norm(far) < 1e-4 * np.linalg.norm(near)
