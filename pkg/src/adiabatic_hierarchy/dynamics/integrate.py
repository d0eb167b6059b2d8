"""Time integration of the Schrodinger equation and of Hamilton's equations in a chart.

Both paths share one Dormand-Prince 5(4) stepper (:mod:`._kernel`).  Two-level
models with affine parameter dependence and piecewise-polynomial protocols
run fully compiled; anything else runs the same stepper in Python with a
callback right-hand side.  Integration restarts at every protocol
discontinuity, so no step straddles a jump in a derivative of ``R``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..chart import (PIVOT_SWITCH_TARGET, PIVOT_THRESHOLD, ChartState, as_wavefunction,
                     chart_coordinates, choose_pivot, wavefunction_from_chart, wrap_angle)
from ..classical import ParametricHamiltonian
from ..errors import ChartSingularity, NormDrift, StepUnderflow
from ..models import TwoLevelModel
from . import _kernel
from .protocol import Protocol

ORACLE_RTOL, ORACLE_ATOL = 1e-11, 1e-13
SWEEP_RTOL, SWEEP_ATOL = 1e-9, 1e-11
MIN_TOL, MAX_TOL = 1e-13, 1e-6
NORM_DRIFT_LIMIT = 1e-9
Q_FLOOR = 1e-6
SAMPLES_PER_PERIOD = 64
MIN_SAMPLES_PER_PERIOD = 40
MAX_STEPS_PER_CALL = 2 ** 62
_NO_SEGMENT = np.zeros(4)


@dataclass
class Trajectory:
    """Sampled solution in chart coordinates.

    Attributes
    ----------
    kind : str
        ``"schrodinger"`` or ``"hamilton"``.
    times : ndarray, shape (N,)
        Strictly monotone sample times (decreasing for backward runs).
    p, q : ndarray, shape (N, m)
        Chart coordinates relative to ``pivots``.
    pivots : ndarray of int, shape (N,)
    psi : ndarray, shape (N, n), optional
        Normalized amplitudes (Schrodinger runs).
    energy : ndarray, shape (N,), optional
        H0 along the classical flow (not conserved while ``R`` moves).
    norm_drift : float
        Largest per-step norm drift before renormalization.
    n_steps : int
        Accepted integrator steps.
    deviations : dict
        Order ``k`` -> residual ``(delta^k p, delta^k q)``, filled by
        :func:`~adiabatic_hierarchy.dynamics.analysis.extract_deviations`.
    hierarchy : object, optional
        Fixed points, shifts and Hessians along the samples.
    actions : dict
        Order ``k`` -> per-cycle actions where orbits close.
    instantaneous_actions : dict
        Order ``k`` -> quadratic-form action at every sample.
    """

    kind: str
    times: np.ndarray
    p: np.ndarray
    q: np.ndarray
    pivots: np.ndarray
    psi: np.ndarray | None = None
    energy: np.ndarray | None = None
    norm_drift: float = 0.0
    n_steps: int = 0
    deviations: dict = field(default_factory=dict)
    hierarchy: object = None
    actions: dict = field(default_factory=dict)
    instantaneous_actions: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.times.size

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.p, self.q], axis=-1)

    @property
    def states(self) -> list[ChartState]:
        return [self.state(i) for i in range(len(self))]

    def state(self, i: int) -> ChartState:
        return ChartState(self.p[i], self.q[i], int(self.pivots[i]))

    def wavefunctions(self) -> np.ndarray:
        """Normalized amplitudes with a real non-negative pivot component."""
        if self.psi is not None:
            return self.psi
        q = np.clip(self.q, 0.0, 1.0)
        return wavefunction_from_chart(self.p, q, self.pivots)

    def in_pivots(self, pivots) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates re-expressed in the given per-sample pivots (no population threshold)."""
        pivots = np.broadcast_to(np.asarray(pivots, dtype=np.intp), self.pivots.shape)
        p, q = self.p.copy(), self.q.copy()
        other = pivots != self.pivots
        if np.any(other):
            psi = self.wavefunctions()[other]
            p[other], q[other] = chart_coordinates(psi, pivots[other], threshold=0.0)
        return p, q

    def final_state(self) -> ChartState:
        return self.state(len(self) - 1)


def chart_distance_series(a: Trajectory, b: Trajectory) -> np.ndarray:
    """Per-sample chart distance, with ``b`` expressed in the pivots of ``a``."""
    if a.times.shape != b.times.shape or np.any(a.times != b.times):
        raise ValueError("trajectories must share sample times")
    p, q = b.in_pivots(a.pivots)
    dp = wrap_angle(a.p - p)
    return np.sqrt(np.sum(dp ** 2, axis=-1) + np.sum((a.q - q) ** 2, axis=-1))


@njit(cache=True)
def _hysteresis_pivots(pops, start, threshold, target):
    out = np.empty(pops.shape[0], dtype=np.int64)
    cur = start
    for i in range(pops.shape[0]):
        if pops[i, cur] < threshold:
            best = np.argmax(pops[i])
            if pops[i, best] > target:
                cur = best
        out[i] = cur
    return out


def hysteresis_pivots(pops, start: int, threshold: float = PIVOT_THRESHOLD,
                      target: float = PIVOT_SWITCH_TARGET) -> np.ndarray:
    """Sequential pivot choice along samples, as :func:`~adiabatic_hierarchy.chart.choose_pivot`."""
    pops = np.ascontiguousarray(pops, dtype=float)
    if pops.shape[0] == 0:
        return np.zeros(0, dtype=np.intp)
    return _hysteresis_pivots(pops, int(start), float(threshold), float(target)).astype(np.intp)


def _check_tolerances(rtol: float, atol: float | None, default_ratio: float):
    rtol = float(rtol)
    if not MIN_TOL <= rtol <= MAX_TOL:
        raise ValueError(f"relative tolerance {rtol} outside [{MIN_TOL}, {MAX_TOL}]")
    atol = rtol * default_ratio if atol is None else float(atol)
    if not atol > 0:
        raise ValueError("absolute tolerance must be positive")
    return rtol, atol


def max_frequency(h: ParametricHamiltonian, protocol: Protocol, t0: float, t1: float,
                  probes: int = 257) -> float:
    """Largest spectral spread ``E_max - E_min`` along the protocol (linearization frequency bound)."""
    lo, hi = min(t0, t1), max(t0, t1)
    ts = np.concatenate([np.linspace(lo, hi, probes), protocol.breaks_inside(lo, hi)])
    E = np.linalg.eigvalsh(h.matrix(protocol.R(ts)))
    return float(np.max(E[:, -1] - E[:, 0]))


def sample_times(h: ParametricHamiltonian, protocol: Protocol, t0: float, t1: float,
                 samples_per_period: int = SAMPLES_PER_PERIOD) -> np.ndarray:
    """Uniform samples with at least ``samples_per_period`` per fastest linearization period."""
    if samples_per_period < MIN_SAMPLES_PER_PERIOD:
        raise ValueError(f"need at least {MIN_SAMPLES_PER_PERIOD} samples per period")
    if t1 == t0:
        return np.array([float(t0)])
    omega = max(max_frequency(h, protocol, t0, t1), 1e-300)
    dt = 2.0 * np.pi / (omega * samples_per_period)
    n = int(np.ceil(abs(t1 - t0) / dt))
    return np.linspace(t0, t1, n + 1)


def _prepare_times(t_span, t_eval, h, protocol, samples_per_period):
    t0, t1 = (float(x) for x in t_span)
    if t_eval is None:
        times = sample_times(h, protocol, t0, t1, samples_per_period)
    else:
        times = np.asarray(t_eval, dtype=float).reshape(-1)
        lo, hi = min(t0, t1), max(t0, t1)
        if np.any((times < lo) | (times > hi)):
            raise ValueError("sample times must lie inside t_span")
    steps = np.diff(times) * (1.0 if t1 >= t0 else -1.0)
    if np.any(steps <= 0):
        raise ValueError("sample times must be strictly monotone in the integration direction")
    return t0, t1, np.ascontiguousarray(times)


def _compiled(h, protocol) -> bool:
    return isinstance(h, TwoLevelModel) and protocol.is_polynomial


def _protocol_R(protocol: Protocol, t: float, seg: np.ndarray) -> float:
    if protocol.is_polynomial:
        tau = t - seg[0]
        return seg[1] + tau * (seg[2] + tau * seg[3])
    return float(protocol.R(t))


def chart_gradient(M: np.ndarray, z: np.ndarray, pivot: int) -> np.ndarray:
    """Exact ``(dH0/dp, dH0/dq)`` of ``<psi(z)|M|psi(z)>`` in the chart of ``pivot``."""
    m = z.size // 2
    p, q = z[:m], z[m:]
    psi = wavefunction_from_chart(p, np.clip(q, 0.0, 1.0), pivot)
    phi = M @ psi
    others = np.delete(np.arange(m + 1), pivot)
    psi_j, phi_j = psi[others], phi[others]
    Hp = 2.0 * np.imag(np.conj(psi_j) * phi_j)
    Hq = np.real(np.exp(-1j * p) * phi_j) / np.sqrt(q) - np.real(phi[pivot]) / psi[pivot].real
    return np.concatenate([Hp, Hq])


def _python_rhs(h: ParametricHamiltonian, protocol: Protocol):
    n = h.dim

    def rhs(t, y, seg, margs, mode, out):
        M = h.matrix(np.array(_protocol_R(protocol, t, seg)))
        if mode == _kernel.SCHRODINGER:
            dpsi = -1j * (M @ (y[:n] + 1j * y[n:]))
            out[:n], out[n:] = dpsi.real, dpsi.imag
            return
        g = chart_gradient(M, y, mode - 1)
        m = n - 1
        out[:m], out[m:] = -g[m:], g[:m]

    return rhs


def _stepper(h, protocol):
    if _compiled(h, protocol):
        return _kernel.integrate_piece, h.kernel_params()
    return _kernel.piece_integrator(_python_rhs(h, protocol)), np.zeros(0)


def _drive(h, protocol, y, mode, t0, t1, times, rtol, atol, on_event,
           q_floor=0.0, pivot_floor=0.0, max_drift=np.inf):
    """Run the stepper piece by piece; ``on_event(status, t, y, mode)`` returns ``(y, mode)`` or raises."""
    step, margs = _stepper(h, protocol)
    out = np.empty((times.size, y.size))
    modes = np.empty(times.size, dtype=np.intp)
    direction = 1.0 if t1 >= t0 else -1.0
    key = times * direction
    filled, steps, drift, h_next = 0, 0, 0.0, 0.0
    t = t0
    for ta, tb, s in protocol.pieces(t0, t1) if t1 != t0 else []:
        seg = protocol.segment_params(s) if s >= 0 else _NO_SEGMENT
        hi = int(np.searchsorted(key, tb * direction, side="right"))
        while True:
            status, t, y, nf, ns, dr, h_next = step(
                y, t, tb, times[filled:hi], out[filled:hi], seg, margs, mode, rtol, atol,
                h_next, q_floor, pivot_floor, max_drift, MAX_STEPS_PER_CALL)
            modes[filled:filled + nf] = mode
            filled += nf
            steps += ns
            drift = max(drift, dr)
            if status == _kernel.OK:
                break
            y, mode = on_event(status, t, y, mode)
            h_next = 0.0
    if filled < times.size:
        # samples at t0 when the span is empty
        out[filled:] = y
        modes[filled:] = mode
    return out, modes, steps, drift, y, mode


def _raise_common(status, t):
    if status == _kernel.UNDERFLOW:
        raise StepUnderflow(f"required step fell below the floor at t = {t!r}")
    if status == _kernel.MAX_STEPS:
        raise StepUnderflow(f"step budget exhausted at t = {t!r}")


def integrate_schrodinger(h: ParametricHamiltonian, psi0, protocol: Protocol, t_span,
                          tol: float = ORACLE_RTOL, *, atol: float | None = None, t_eval=None,
                          samples_per_period: int = SAMPLES_PER_PERIOD,
                          pivot: int | None = None) -> Trajectory:
    """Integrate ``i dpsi/dt = H(R(t)) psi`` (hbar = 1) and map samples to charts.

    Parameters
    ----------
    tol : float
        Relative tolerance in ``[1e-13, 1e-6]``; ``atol`` defaults to ``tol / 100``.
    t_eval : array_like, optional
        Sample times, monotone in the integration direction.  Default: uniform
        with ``samples_per_period`` per fastest linearization period.
    pivot : int, optional
        Initial chart pivot; later samples switch with hysteresis.

    Raises
    ------
    NormDrift
        If a single step changes the norm by more than 1e-9.
    StepUnderflow
        If the adaptive step falls below 1e-15.
    """
    psi0 = as_wavefunction(psi0)
    if psi0.size != h.dim:
        raise ValueError(f"state has dimension {psi0.size}, model has {h.dim}")
    rtol, atol = _check_tolerances(tol, atol, 1e-2)
    t0, t1, times = _prepare_times(t_span, t_eval, h, protocol, samples_per_period)
    n = h.dim

    def on_event(status, t, y, mode):
        _raise_common(status, t)
        if status == _kernel.NORM_DRIFT:
            raise NormDrift(f"norm drift above {NORM_DRIFT_LIMIT} in one step at t = {t!r}; "
                            f"tighten the tolerance")
        raise RuntimeError(f"unexpected integrator status {status}")

    # integrate the ray with its largest component real so step control ignores the global phase
    lead = psi0[np.argmax(np.abs(psi0))]
    phase = lead / abs(lead)
    psi0 = psi0 / phase
    y0 = np.concatenate([psi0.real, psi0.imag])
    out, _, steps, drift, _, _ = _drive(h, protocol, y0, _kernel.SCHRODINGER, t0, t1, times,
                                        rtol, atol, on_event, max_drift=NORM_DRIFT_LIMIT)
    psi = (out[:, :n] + 1j * out[:, n:]) * phase
    psi /= np.linalg.norm(psi, axis=-1, keepdims=True)
    pops = np.abs(psi) ** 2
    if pivot is None:
        pivot = choose_pivot(pops[0], 0) if pops.shape[0] else 0
    pivots = hysteresis_pivots(pops, pivot)
    p, q = chart_coordinates(psi, pivots, threshold=0.0)
    return Trajectory("schrodinger", times, p, q, pivots, psi=psi, norm_drift=drift, n_steps=steps)


def integrate_hamilton(h: ParametricHamiltonian, s0: ChartState, protocol: Protocol, t_span,
                       tol: float = ORACLE_RTOL, *, atol: float | None = None, t_eval=None,
                       samples_per_period: int = SAMPLES_PER_PERIOD,
                       margin: float = PIVOT_THRESHOLD) -> Trajectory:
    """Integrate ``dp/dt = -dH0/dq``, ``dq/dt = dH0/dp`` with ``R = R(t)``.

    The chart is re-pivoted when the pivot population drops below ``margin``.

    Raises
    ------
    ChartSingularity
        If a population comes within 1e-6 of 0 and no other pivot is usable.
    StepUnderflow
    """
    if s0.dim != h.dim:
        raise ValueError(f"state has dimension {s0.dim}, model has {h.dim}")
    rtol, atol = _check_tolerances(tol, atol, 1e-2)
    t0, t1, times = _prepare_times(t_span, t_eval, h, protocol, samples_per_period)
    m = h.dim - 1

    def on_event(status, t, y, mode):
        _raise_common(status, t)
        pivot = mode - 1
        psi = wavefunction_from_chart(y[:m], np.clip(y[m:], 0.0, 1.0), pivot)
        pops = np.abs(psi) ** 2
        new = choose_pivot(pops, pivot, margin) if status == _kernel.REPIVOT else int(np.argmax(pops))
        if new != pivot:
            p, q = chart_coordinates(psi, new, threshold=0.0)
            if pops[new] > margin and np.min(q) >= Q_FLOOR:
                return np.concatenate([p, q]), new + 1
        raise ChartSingularity(f"populations {np.round(pops, 8).tolist()} at t = {t!r}: "
                               f"no pivot gives a regular chart")

    y0 = s0.z.astype(float)
    pop0 = 1.0 - float(np.sum(s0.q))
    if np.min(s0.q) < Q_FLOOR or pop0 < margin:
        y0, mode0 = on_event(_kernel.REPIVOT if pop0 < margin else _kernel.CHART_SINGULAR,
                             t0, y0, s0.pivot + 1)
    else:
        mode0 = s0.pivot + 1
    out, modes, steps, _, _, _ = _drive(h, protocol, y0, mode0, t0, t1, times, rtol, atol, on_event,
                                        q_floor=Q_FLOOR, pivot_floor=margin)
    pivots = modes - 1
    p, q = wrap_angle(out[:, :m]), out[:, m:]
    energy = np.empty(times.size)
    R = protocol.R(times)
    for piv in np.unique(pivots):
        sel = pivots == piv
        energy[sel] = h.energy(np.concatenate([p[sel], q[sel]], axis=-1), R[sel], int(piv))
    return Trajectory("hamilton", times, p, q, pivots, energy=energy, n_steps=steps)
