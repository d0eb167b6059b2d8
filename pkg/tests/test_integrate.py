"""Schrodinger and Hamilton integrators against independent propagators and each other."""
import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from adiabatic_hierarchy import (ChartState, LandauZener, ParametricHamiltonian, SpinRotatingField,
                                 chart_distance, choose_pivot, find_fixed_points, to_chart)
from adiabatic_hierarchy.chart import chart_coordinates
from adiabatic_hierarchy.dynamics import (Protocol, chart_distance_series, hysteresis_pivots,
                                          integrate_hamilton, integrate_schrodinger, sample_times)
from adiabatic_hierarchy.errors import ChartSingularity, NormDrift, StepUnderflow
from adiabatic_hierarchy.models import spin_analytic_solution

from conftest import random_states

SPIN = SpinRotatingField(1.0)
LZ = LandauZener(1.0)


def overlap_defect(a, b):
    """``1 - |<a|b>|^2`` per row."""
    return 1.0 - np.abs(np.sum(np.conj(a) * b, axis=-1)) ** 2


def chart_of(psi):
    return to_chart(psi, choose_pivot(np.abs(psi) ** 2, 0))


def test_eigenstate_is_stationary_at_fixed_parameter():
    ts = np.linspace(0.0, 10.0, 41)
    for h, R in [(SPIN, 0.7), (LZ, -0.4), (LZ, 2.5)]:
        for fp in find_fixed_points(h, R):
            protocol = Protocol.linear(0.0, R)
            ham = integrate_hamilton(h, fp.chart, protocol, (0.0, 10.0), t_eval=ts)
            sch = integrate_schrodinger(h, fp.vector, protocol, (0.0, 10.0), t_eval=ts,
                                        pivot=fp.chart.pivot)
            for traj in (ham, sch):
                assert np.all(traj.pivots == fp.chart.pivot)
                assert np.max(np.abs(traj.q - fp.chart.q)) < 1e-10
                assert np.max(np.abs(np.angle(np.exp(1j * (traj.p - fp.chart.p))))) < 1e-10


def test_fixed_parameter_matches_matrix_exponential(rng):
    ts = np.linspace(0.0, 30.0, 31)
    for h, R in [(SPIN, 0.3), (LZ, 0.4)]:
        U = expm(-1j * h.matrix(R) * (ts[1] - ts[0]))
        for psi0 in random_states(rng, 3):
            traj = integrate_schrodinger(h, psi0, Protocol.linear(0.0, R), (0.0, 30.0), t_eval=ts)
            ref = [psi0]
            for _ in ts[1:]:
                ref.append(U @ ref[-1])
            assert np.max(overlap_defect(np.array(ref), traj.psi)) < 1e-12


@pytest.mark.parametrize("h,protocol,T", [(LZ, Protocol.linear(1e-2, -3.0), 600.0),
                                          (SPIN, Protocol.linear(1e-2), 300.0)])
def test_driven_run_matches_reference_propagator(h, protocol, T, rng):
    ts = np.linspace(0.0, T, 301)
    for psi0 in random_states(rng, 2):
        sol = solve_ivp(lambda t, y: -1j * h.matrix(float(protocol.R(t))) @ y, (0.0, T),
                        psi0.astype(complex), method="DOP853", rtol=1e-13, atol=1e-14, t_eval=ts)
        traj = integrate_schrodinger(h, psi0, protocol, (0.0, T), t_eval=ts)
        assert np.max(overlap_defect(sol.y.T, traj.psi)) < 1e-10
        assert traj.norm_drift < 1e-9


@pytest.mark.parametrize("h,protocol,T", [(LZ, Protocol.linear(1e-2, -3.0), 100.0),
                                          (SPIN, Protocol.linear(1e-2), 300.0),
                                          (SPIN, Protocol.square_wave_rate(2e-2, 0.05, 200.0), 200.0)])
def test_hamilton_flow_matches_schrodinger(h, protocol, T, rng):
    ts = np.linspace(0.0, T, 401)
    for psi0 in random_states(rng, 2):
        sch = integrate_schrodinger(h, psi0, protocol, (0.0, T), t_eval=ts)
        ham = integrate_hamilton(h, chart_of(psi0), protocol, (0.0, T), t_eval=ts)
        assert np.max(chart_distance_series(sch, ham)) < 1e-8


def test_hamilton_repivots_through_the_sweep():
    # the lower branch moves from one pole to the other across the crossing
    protocol = Protocol.linear(0.05, -8.0)
    fp = find_fixed_points(LZ, -8.0)[0]
    ts = np.linspace(0.0, 320.0, 641)
    ham = integrate_hamilton(LZ, fp.chart, protocol, (0.0, 320.0), t_eval=ts)
    sch = integrate_schrodinger(LZ, fp.vector, protocol, (0.0, 320.0), t_eval=ts)
    assert ham.pivots[0] != ham.pivots[-1]
    assert np.max(chart_distance_series(sch, ham)) < 1e-8


def test_energy_is_conserved_at_fixed_parameter(rng):
    for psi0 in random_states(rng, 3):
        traj = integrate_hamilton(LZ, chart_of(psi0), Protocol.linear(0.0, 0.8), (0.0, 50.0))
        assert np.ptp(traj.energy) < 1e-9


def test_spin_first_order_solution():
    omega = 1e-3
    ts = np.linspace(0.0, 50.0, 201)
    psi0 = spin_analytic_solution(1.0, omega, 0.0)
    traj = integrate_schrodinger(SPIN, psi0, Protocol.linear(omega), (0.0, 50.0), t_eval=ts, pivot=0)
    _, q_ref = chart_coordinates(spin_analytic_solution(1.0, omega, ts), 0)
    # population deviation is O(omega); the residual is O(omega^2)
    assert np.max(np.abs(q_ref - 0.5)) == pytest.approx(omega, rel=1e-3)
    assert np.max(np.abs(traj.q - q_ref)) < 10 * omega ** 2
    # the integrated phase lags the drive by (omega / L) sin(L t)
    dp = np.angle(np.exp(1j * (traj.p[:, 0] - omega * ts)))
    assert np.max(np.abs(dp + omega * np.sin(ts))) < 10 * omega ** 2


def test_global_phase_does_not_affect_charts(rng):
    protocol = Protocol.linear(1e-2, -3.0)
    ts = np.linspace(0.0, 600.0, 301)
    for psi0 in random_states(rng, 4):
        a = integrate_schrodinger(LZ, psi0, protocol, (0.0, 600.0), t_eval=ts)
        b = integrate_schrodinger(LZ, psi0 * np.exp(1j * rng.uniform(0, 2 * np.pi)), protocol,
                                  (0.0, 600.0), t_eval=ts)
        assert np.array_equal(a.pivots, b.pivots)
        assert np.max(chart_distance_series(a, b)) < 1e-12


def test_time_reversal_returns_to_start(rng):
    protocol = Protocol.linear(1e-2, -3.0)
    for psi0 in random_states(rng, 2):
        fwd = integrate_schrodinger(LZ, psi0, protocol, (0.0, 200.0))
        back = integrate_schrodinger(LZ, fwd.psi[-1], protocol, (200.0, 0.0))
        assert np.all(np.diff(back.times) < 0)
        assert overlap_defect(back.psi[-1], psi0) < 1e-8 ** 2
        s0 = chart_of(psi0)
        hf = integrate_hamilton(LZ, s0, protocol, (0.0, 200.0))
        hb = integrate_hamilton(LZ, hf.final_state(), protocol, (200.0, 0.0))
        assert chart_distance(hb.final_state(), s0) < 1e-8


def test_python_fallback_reproduces_compiled_path(rng):
    protocol = Protocol.linear(1e-2, -3.0)
    ts = np.linspace(0.0, 60.0, 31)
    psi0 = random_states(rng, 1)[0]
    compiled = integrate_schrodinger(LZ, psi0, protocol, (0.0, 60.0), t_eval=ts)
    generic = ParametricHamiltonian(LZ.matrix, 2, vectorized=True)
    by_model = integrate_schrodinger(generic, psi0, protocol, (0.0, 60.0), t_eval=ts)
    callable_protocol = Protocol.from_callable(lambda t: -3.0 + 1e-2 * np.asarray(t))
    by_protocol = integrate_schrodinger(LZ, psi0, callable_protocol, (0.0, 60.0), t_eval=ts)
    assert np.max(chart_distance_series(compiled, by_model)) < 1e-12
    assert np.max(chart_distance_series(compiled, by_protocol)) < 1e-9


def test_three_level_model_conserves_norm(rng):
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    h = ParametricHamiltonian(lambda R: (a + a.conj().T) + R * (b + b.conj().T), 3)
    psi0 = random_states(rng, 1, n=3)[0]
    ts = np.linspace(0.0, 5.0, 11)
    traj = integrate_schrodinger(h, psi0, Protocol.linear(0.1), (0.0, 5.0), t_eval=ts)
    sol = solve_ivp(lambda t, y: -1j * h.matrix(0.1 * t) @ y, (0.0, 5.0), psi0.astype(complex),
                    method="DOP853", rtol=1e-13, atol=1e-14, t_eval=ts)
    assert np.max(overlap_defect(sol.y.T, traj.psi)) < 1e-10
    assert traj.p.shape == (11, 2)


def test_default_sampling_resolves_every_period():
    protocol = Protocol.linear(0.05, -4.0)
    ts = sample_times(LZ, protocol, 0.0, 160.0)
    gap = LZ.gap(protocol.R(ts[:-1]))
    assert np.all(np.diff(ts) * gap / (2 * np.pi) <= 1.0 / 40)


def test_hysteresis_pivots():
    pops = np.array([[0.9, 0.1], [0.15, 0.85], [0.09, 0.91], [0.15, 0.85], [0.25, 0.75],
                     [0.5, 0.5], [0.95, 0.05]])
    assert hysteresis_pivots(pops, 0).tolist() == [0, 0, 1, 1, 1, 1, 0]


def test_norm_drift_is_reported():
    with pytest.raises(NormDrift):
        integrate_schrodinger(LZ, [1, 0], Protocol.linear(0.0, 30.0), (0.0, 20.0),
                              t_eval=[0.0, 20.0], tol=1e-6)


def test_step_underflow_is_reported():
    bad = Protocol.from_callable(lambda t: np.where(np.asarray(t) < 0.5, 0.0, np.nan))
    with pytest.raises(StepUnderflow):
        integrate_schrodinger(LZ, [1, 0], bad, (0.0, 1.0), t_eval=[0.0, 1.0])


def test_chart_singularity_is_reported():
    s0 = ChartState(np.array([0.3]), np.array([1e-8]), 0)
    with pytest.raises(ChartSingularity):
        integrate_hamilton(LZ, s0, Protocol.linear(0.0), (0.0, 1.0))


def test_bad_arguments():
    with pytest.raises(ValueError):
        integrate_schrodinger(LZ, [1, 0, 0], Protocol.linear(0.0), (0.0, 1.0))
    with pytest.raises(ValueError):
        integrate_schrodinger(LZ, [1, 0], Protocol.linear(0.0), (0.0, 1.0), tol=1e-3)
