import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from scipy.linalg import expm

from adiabatic_hierarchy.chart import ChartState, to_chart, to_wavefunction, wrap_angle
from adiabatic_hierarchy.classical import (ParametricHamiltonian, branch_chart, classical_hamiltonian,
                                           find_fixed_points, fixed_point_R_derivative, gamma_at,
                                           gamma_from_hessian, gradient, numerical_tensor,
                                           track_fixed_point)
from adiabatic_hierarchy.errors import (BranchJump, DegenerateSpectrum, DerivativeUnstable,
                                        InvalidHamiltonian)
from adiabatic_hierarchy.models import LandauZener, SpinRotatingField

P, Q, R = sp.symbols("p q R", real=True)
SPIN_H0 = sp.sqrt(Q - Q ** 2) * sp.cos(P - R)              # L = 1
LZ_H0 = sp.sqrt(Q - Q ** 2) * sp.cos(P) - R * Q              # x = 1


def symbolic_tensor(expr, p, q, r, order):
    """Derivative tensor of ``expr`` in ``(p, q)`` by symbolic differentiation."""
    at = {P: p, Q: q, R: r}
    if order == 0:
        return float(expr.subs(at))
    out = np.empty((2,) * order)
    for idx in np.ndindex(*(2,) * order):
        d = expr
        for i in idx:
            d = sp.diff(d, P if i == 0 else Q)
        out[idx] = float(d.subs(at))
    return out


@pytest.fixture(scope="module")
def spin():
    return SpinRotatingField(1.0)


@pytest.fixture(scope="module")
def lz():
    return LandauZener(1.0)


def test_spin_energy_examples(spin):
    assert classical_hamiltonian(spin, ChartState([0.3], [0.5]), 0.3) == pytest.approx(0.5, abs=1e-12)
    for q in (0.0, 1.0):
        assert classical_hamiltonian(spin, ChartState([0.7], [q]), 0.2) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("q", [0.2, 0.5, 0.8])
def test_lz_energy_example(lz, q):
    # the model drops the constant z/2, which vanishes at z = 0
    assert classical_hamiltonian(lz, ChartState([np.pi], [q]), 0.0) == pytest.approx(-np.sqrt(q - q * q), abs=1e-12)


def test_energy_is_expectation(spin, lz, rng):
    for h in (spin, lz):
        for _ in range(20):
            psi = rng.normal(size=2) + 1j * rng.normal(size=2)
            psi /= np.linalg.norm(psi)
            R = rng.uniform(-2, 2)
            s = to_chart(psi, int(np.argmax(np.abs(psi))))
            expect = float(np.real(np.vdot(psi, h.matrix(R) @ psi)))
            assert classical_hamiltonian(h, s, R) + float(h.dropped_constant(R)) == pytest.approx(expect, abs=1e-12)


def test_spin_gradient_examples(spin):
    gp, gq = gradient(spin, ChartState([0.4], [0.5]), 0.4)
    assert abs(gp[0]) < 1e-12 and abs(gq[0]) < 1e-12
    _, gq = gradient(spin, ChartState([0.4], [0.25]), 0.4)
    oracle = float(sp.diff(SPIN_H0, Q).subs({P: 0.4, Q: 0.25, R: 0.4}))
    assert gq[0] == pytest.approx(oracle, rel=1e-12)
    assert gq[0] == pytest.approx(0.5 / (2 * np.sqrt(0.1875)), rel=1e-12)


def test_lz_gradient_example(lz):
    gp, _ = gradient(lz, ChartState([np.pi], [0.3]), 0.7)
    assert abs(gp[0]) < 1e-12


@pytest.mark.parametrize("order", [0, 1, 2, 3])
def test_analytic_tensors_match_symbolic(spin, lz, rng, order):
    for h, expr in ((spin, SPIN_H0), (lz, LZ_H0)):
        for _ in range(5):
            p, q, r = rng.uniform(-np.pi, np.pi), rng.uniform(0.15, 0.85), rng.uniform(-2, 2)
            got = h.tensor(np.array([p, q]), r, 0, order)
            np.testing.assert_allclose(got, symbolic_tensor(expr, p, q, r, order), rtol=1e-11, atol=1e-12)


@pytest.mark.parametrize("order", [1, 2])
def test_finite_difference_path_matches_analytic(spin, lz, rng, order):
    for h in (spin, lz):
        generic = h.generic()
        for _ in range(5):
            z = np.array([rng.uniform(-np.pi, np.pi), rng.uniform(0.2, 0.8)])
            r = rng.uniform(-2, 2)
            np.testing.assert_allclose(numerical_tensor(generic, z, r, 0, order), h.tensor(z, r, 0, order),
                                       atol=1e-8)


def test_pivot_one_tensors_consistent(lz):
    z0 = np.array([2.0, 0.3])
    z1 = np.array([-2.0, 0.7])          # same ray in the pivot-1 chart
    assert lz.tensor(z1, 0.5, 1, 0) == pytest.approx(lz.tensor(z0, 0.5, 0, 0), abs=1e-12)
    np.testing.assert_allclose(lz.tensor(z1, 0.5, 1, 1), lz.generic().tensor(z1, 0.5, 1, 1), atol=1e-8)
    np.testing.assert_allclose(lz.tensor(z1, 0.5, 1, 2), lz.generic().tensor(z1, 0.5, 1, 2), atol=1e-8)


def test_spin_gamma_example(spin):
    for alpha in np.linspace(-3, 3, 10):
        G = gamma_at(spin, ChartState([alpha], [0.5]), alpha)
        np.testing.assert_allclose(G.entries, [[0.0, 2.0], [-0.5, 0.0]], atol=1e-12)


def test_lz_gamma_example(lz):
    fp = find_fixed_points(lz, 0.0)[0]
    H = gamma_at(lz, fp.chart, 0.0).hessian
    assert abs(H[0, 1]) < 1e-12 and abs(H[1, 0]) < 1e-12
    assert H[1, 1] == pytest.approx(2.0, rel=1e-12)          # 2 sqrt(x^2+z^2)(1+z^2/x^2)
    for z in (-1.2, 0.5, 1.0):
        fp = find_fixed_points(lz, z, pivot=0)[0]
        H = gamma_at(lz, fp.chart, z).hessian
        r = np.hypot(1.0, z)
        assert H[1, 1] == pytest.approx(2 * r * (1 + z * z), rel=1e-10)
        assert H[0, 0] == pytest.approx(0.5 / r, rel=1e-10)


def test_gamma_of_separable_quadratic():
    a, b = 3.0, 0.7
    G = gamma_from_hessian(np.diag([b, a]))
    np.testing.assert_array_equal(G, [[0.0, -a], [b, 0.0]])


def test_spin_fixed_points(spin):
    lower, upper = find_fixed_points(spin, 0.3)
    assert upper.chart.p[0] == pytest.approx(0.3) and upper.chart.q[0] == pytest.approx(0.5)
    assert abs(wrap_angle(lower.chart.p[0] - 0.3 - np.pi)) < 1e-12 and lower.chart.q[0] == pytest.approx(0.5)
    assert lower.energy < upper.energy


def test_lz_fixed_points(lz):
    lower, upper = find_fixed_points(lz, 0.0)
    assert abs(wrap_angle(lower.chart.p[0] - np.pi)) < 1e-12 and lower.chart.q[0] == pytest.approx(0.5)
    assert abs(upper.chart.p[0]) < 1e-12 and upper.chart.q[0] == pytest.approx(0.5)
    lower = find_fixed_points(lz, 1e4)[0]
    assert abs(lower.vector[1]) ** 2 > 1 - 1e-8


def test_fixed_points_are_eigenvectors(spin, lz, rng):
    for h in (spin, lz):
        for R in rng.uniform(-5, 5, 10):
            for fp in find_fixed_points(h, R):
                v = to_wavefunction(fp.chart)
                M = h.matrix(R)
                assert np.linalg.norm(M @ v - fp.energy * v) < 1e-10
                assert abs(gamma_at(h, fp.chart, R).det) > 1e-8


def test_fixed_point_gradient_vanishes(lz):
    for z in np.linspace(-1.2, 1.2, 7):
        fp = find_fixed_points(lz, z, pivot=0)[0]
        gp, gq = gradient(lz, fp.chart, z)
        assert abs(gp[0]) < 1e-10 and abs(gq[0]) < 1e-10


def test_fixed_point_slopes(spin, lz):
    fp = find_fixed_points(spin, 0.3)[1]
    dp, dq = fixed_point_R_derivative(spin, fp)
    assert dp[0] == pytest.approx(1.0, abs=1e-12) and abs(dq[0]) < 1e-12
    for z in np.linspace(-1.2, 1.2, 9):
        expect = 1.0 / (2 * (1 + z * z) ** 1.5)
        for h in (lz, lz.generic()):
            fpg = find_fixed_points(h, z, pivot=0)[0]
            dp, dq = fixed_point_R_derivative(h, fpg)
            assert abs(dp[0]) < 1e-8
            assert dq[0] == pytest.approx(expect, rel=1e-7)


def test_static_hamiltonian_has_zero_slope():
    h = ParametricHamiltonian(lambda R: np.array([[0.3, 0.2], [0.2, -0.4]]), 2)
    fp = find_fixed_points(h, 0.5)[0]
    dp, dq = fixed_point_R_derivative(h, fp)
    assert np.all(np.abs(dp) < 1e-10) and np.all(np.abs(dq) < 1e-10)


def test_track_fixed_point_follows_branch(lz):
    fp = find_fixed_points(lz, -1.0, pivot=0)[0]
    for z in np.linspace(-0.9, 1.0, 20):
        fp = track_fixed_point(lz, fp, z)
        assert fp.branch_id == 0
        assert fp.chart.q[0] == pytest.approx(0.5 + z / (2 * np.hypot(1, z)), abs=1e-12)


def test_branch_jump_detected(lz):
    fp = find_fixed_points(lz, 0.0, pivot=0)[0]
    with pytest.raises(BranchJump):
        branch_chart(lz, np.array([3.0]), fp.vector, 0, fp.chart.z[None, :])


def test_degenerate_spectrum():
    h = ParametricHamiltonian(lambda R: np.eye(2) * R, 2)
    with pytest.raises(DegenerateSpectrum):
        find_fixed_points(h, 1.0)


def test_non_hermitian_rejected():
    with pytest.raises(InvalidHamiltonian):
        ParametricHamiltonian(lambda R: np.array([[0.0, 1.0], [0.0, 0.0]]), 2)


def test_noisy_parameter_dependence_is_unstable():
    noise = np.random.default_rng(1)
    h = ParametricHamiltonian(
        lambda R: np.array([[R, 0.5], [0.5, -R]]) + 1e-7 * np.diag(noise.normal(size=2)), 2)
    fp = find_fixed_points(h, 0.2)[0]
    with pytest.raises(DerivativeUnstable):
        fixed_point_R_derivative(h, fp)


@given(st.floats(-np.pi, np.pi), st.floats(0.15, 0.85), st.floats(-3, 3))
def test_chart_flow_is_hamiltonian(p, q, z):
    """Schrodinger velocity mapped through the chart equals ``(-dH/dq, dH/dp)``."""
    lz = LandauZener(1.0)
    s = ChartState([p], [q])
    psi = to_wavefunction(s)
    M = lz.matrix(z)
    dt = 1e-5
    ahead = to_chart(expm(-1j * M * dt) @ psi, 0)
    behind = to_chart(expm(1j * M * dt) @ psi, 0)
    velocity = np.array([wrap_angle(ahead.p - behind.p)[0], (ahead.q - behind.q)[0]]) / (2 * dt)
    gp, gq = gradient(lz, s, z)
    np.testing.assert_allclose(velocity, [-gq[0], gp[0]], atol=1e-8)
