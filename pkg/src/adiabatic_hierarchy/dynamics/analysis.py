"""Deviations from the adiabatic trajectory, infidelity, and orbit actions along a run.

Fixed points, shifts and expansion Hessians are evaluated on knots that are
uniform in time inside each smooth protocol piece and interpolated to the
samples with local cubic Lagrange polynomials.  Short pieces are evaluated
directly at every sample.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..chart import PIVOT_SWITCH_TARGET, PIVOT_THRESHOLD, ChartState, choose_pivot, wavefunction_from_chart, wrap_angle
from ..classical import ParametricHamiltonian
from ..hierarchy import CLOSURE_TOLERANCE, K_MAX, ShiftEngine, quadratic_action
from .integrate import Trajectory, hysteresis_pivots
from .protocol import Protocol

KNOT_SPACING = 0.01
MIN_KNOTS = 4
MAX_KNOTS = 20001
DIRECT_SAMPLES = 64


@dataclass
class HierarchyTrack:
    """Adiabatic quantities at every sample of a trajectory.

    Attributes
    ----------
    derivs : tuple of ndarray
        ``(R, R', ..., R^(K))`` at the samples.
    pivots : ndarray of int
        Chart pivot of the fixed point (hysteresis on its populations).
    zbar : ndarray, shape (N, d)
        Fixed point, angles continuous along the run.
    shifts : dict
        ``k -> S_k``, shape (N, d), for ``k = 1..K``.
    hessians : dict
        ``k -> `` second partials of H0 at ``z_bar + S_1 + ... + S_{k-1}``.
    branch : int
        Ascending-eigenvalue label of the tracked branch.
    """

    derivs: tuple
    pivots: np.ndarray
    zbar: np.ndarray
    shifts: dict
    hessians: dict
    branch: int

    @property
    def R(self) -> np.ndarray:
        return self.derivs[0]

    @property
    def order(self) -> int:
        return len(self.shifts)

    def period(self) -> np.ndarray:
        """Local linearization period ``2 pi / sqrt|det Gamma_0|``."""
        return 2.0 * np.pi / np.sqrt(np.abs(np.linalg.det(self.hessians[1])))


def branch_of_state(h: ParametricHamiltonian, psi, R: float) -> int:
    """Eigenvector label with the largest overlap with ``psi``."""
    _, V = np.linalg.eigh(h.matrix(float(R)))
    return int(np.argmax(np.abs(np.conj(V).T @ psi)))


def _runs(labels: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index ranges of constant label."""
    if labels.size == 0:
        return []
    cut = np.flatnonzero(np.diff(labels)) + 1
    edges = np.concatenate([[0], cut, [labels.size]])
    return list(zip(edges[:-1].tolist(), edges[1:].tolist()))


def _lagrange_weights(s: np.ndarray) -> np.ndarray:
    """Cubic Lagrange weights on nodes 0..3 at positions ``s``."""
    s = s[:, None]
    nodes = np.arange(4.0)
    w = np.ones((s.shape[0], 4))
    for j in range(4):
        for i in range(4):
            if i != j:
                w[:, j] *= (s[:, 0] - nodes[i]) / (nodes[j] - nodes[i])
    return w


def _evaluation_plan(protocol: Protocol, times: np.ndarray, knot_spacing: float):
    """Evaluation points and per-sample interpolation stencils.

    Returns ``(eval_t, eval_seg, first, weights, cell)``: samples are
    ``sum_j weights[:, j] * value[first + j]`` over evaluation points, and
    ``cell`` is the evaluation point at the start of each sample's knot
    interval.  Pieces with few samples are evaluated directly (weight one on
    their own point).
    """
    N = times.size
    segments = protocol.segment_index(times)
    first = np.empty(N, dtype=np.intp)
    cells = np.empty(N, dtype=np.intp)
    weights = np.zeros((N, 4))
    eval_t, eval_seg = [], []
    offset = 0
    for lo, hi in _runs(segments):
        ts = times[lo:hi]
        span = float(np.ptp(protocol.R(ts)))
        n_knots = int(np.clip(np.ceil(span / knot_spacing) + 1, MIN_KNOTS, MAX_KNOTS))
        if ts.size <= max(n_knots, DIRECT_SAMPLES):
            knots = ts
            first[lo:hi] = offset + np.arange(ts.size)
            cells[lo:hi] = first[lo:hi]
            weights[lo:hi, 0] = 1.0
        else:
            knots = np.linspace(ts[0], ts[-1], n_knots)
            pos = (ts - knots[0]) / ((knots[-1] - knots[0]) / (n_knots - 1))
            cell = np.clip(np.floor(pos).astype(np.intp), 0, n_knots - 2)
            start = np.clip(cell - 1, 0, n_knots - 4)
            first[lo:hi] = offset + start
            cells[lo:hi] = offset + cell
            weights[lo:hi] = _lagrange_weights(pos - start)
        eval_t.append(knots)
        eval_seg.append(np.full(knots.size, segments[lo]))
        offset += knots.size
    if not eval_t:
        return np.zeros(0), np.zeros(0, dtype=np.intp), first, weights, cells
    return np.concatenate(eval_t), np.concatenate(eval_seg), first, weights, cells


def hierarchy_along(h: ParametricHamiltonian, protocol: Protocol, times, K: int, branch: int,
                    pivot: int | None = None, knot_spacing: float = KNOT_SPACING) -> HierarchyTrack:
    """Fixed point, shifts ``S_1..S_K`` and expansion Hessians at each sample time.

    Parameters
    ----------
    pivot : int, optional
        Chart pivot of the fixed point before the first sample (continuity
        across chunks); default is the hysteresis choice starting from 0.
    """
    if not 1 <= K <= K_MAX:
        raise ValueError(f"order must be in 1..{K_MAX}")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    N = times.size
    d = 2 * (h.dim - 1)
    m = d // 2
    seg = protocol.segment_index(times) if protocol.is_polynomial else None
    derivs = protocol.derivatives(times, K, segment=seg)
    eval_t, eval_seg, first, weights, cells = _evaluation_plan(protocol, times, knot_spacing)
    kd = protocol.derivatives(eval_t, K, segment=eval_seg if protocol.is_polynomial else None)
    _, V = np.linalg.eigh(h.matrix(kd[0]))
    refs = V[:, :, branch]
    pops = np.abs(refs) ** 2
    start = choose_pivot(pops[0], 0) if pivot is None else int(pivot)
    eval_piv = hysteresis_pivots(pops, start, PIVOT_THRESHOLD, PIVOT_SWITCH_TARGET)
    pivots = eval_piv[cells]

    zbar = np.empty((N, d))
    shifts = {k: np.empty((N, d)) for k in range(1, K + 1)}
    hessians = {k: np.empty((N, d, d)) for k in range(1, K + 1)}
    for piv in np.unique(pivots):
        rows = np.flatnonzero(pivots == piv)
        nodes = first[rows, None] + np.arange(4)
        live = weights[rows] != 0.0
        need = np.zeros(eval_t.size, dtype=bool)
        need[nodes[live]] = True
        sel = np.flatnonzero(need)
        index = np.zeros(eval_t.size, dtype=np.intp)
        index[sel] = np.arange(sel.size)
        local = index[np.where(live, nodes, sel[0])]
        w = weights[rows]

        def interp(values):
            shape = (rows.size,) + values.shape[1:]
            out = np.zeros(shape)
            for j in range(4):
                out += w[:, j].reshape((-1,) + (1,) * (values.ndim - 1)) * values[local[:, j]]
            return out

        eng = ShiftEngine(h, kd[0][sel], refs[sel], int(piv), branch, K)
        dsel = tuple(a[sel] for a in kd)
        z = eng.zbar(dsel[0]).copy()
        z[:, :m] = np.unwrap(z[:, :m], axis=0)
        zbar[rows] = interp(z)
        for k, s in enumerate(eng.series(dsel, K), start=1):
            shifts[k][rows] = interp(s)
            hessians[k][rows] = interp(eng.expansion_hessian(dsel, k))
    return HierarchyTrack(tuple(np.asarray(a, dtype=float) for a in derivs), pivots, zbar, shifts,
                          hessians, int(branch))


def _unwrap_runs(dp: np.ndarray, pivots: np.ndarray, reference=None) -> np.ndarray:
    """Continuous angles within runs of constant pivot; the first run starts near ``reference``."""
    out = dp.copy()
    for i, (lo, hi) in enumerate(_runs(pivots)):
        out[lo:hi] = np.unwrap(out[lo:hi], axis=0)
        if i == 0 and reference is not None:
            ref = np.asarray(reference, dtype=float)
            out[lo:hi] += 2.0 * np.pi * np.round((ref - out[lo]) / (2.0 * np.pi))
    return out


def extract_deviations(traj: Trajectory, h: ParametricHamiltonian, protocol: Protocol, K: int = 1, *,
                       branch: int | None = None, track: HierarchyTrack | None = None,
                       dp_reference=None) -> Trajectory:
    """Residuals ``delta^k z`` for ``k = 1..K`` and instantaneous actions ``I_0..I_K``.

    ``delta^1 = z - z_bar`` and ``delta^(k+1) = delta^k - S_k``; the angle part of
    ``delta^1`` is unwrapped along the samples (starting near ``dp_reference``).
    The instantaneous action of order k is the quadratic-form action of
    ``delta^k - S_k`` under the order-k expansion Hessian (``I_0`` uses
    ``delta^1`` and the Hessian at ``z_bar``).
    """
    if branch is None:
        branch = branch_of_state(h, traj.wavefunctions()[0], float(protocol.R(traj.times[0])))
    if track is None:
        track = hierarchy_along(h, protocol, traj.times, K, branch,
                                pivot=None)
    p, q = traj.in_pivots(track.pivots)
    m = p.shape[-1]
    dp = wrap_angle(p - track.zbar[:, :m])
    dp = _unwrap_runs(dp, track.pivots, dp_reference)
    delta = {1: np.concatenate([dp, q - track.zbar[:, m:]], axis=-1)}
    for k in range(1, K):
        delta[k + 1] = delta[k] - track.shifts[k]
    inst = {0: quadratic_action(track.hessians[1], delta[1]) if m == 1 else None}
    for k in range(1, K + 1):
        u = delta[k] - track.shifts[k]
        inst[k] = quadratic_action(track.hessians[k], u) if m == 1 else None
    return replace(traj, deviations=delta, hierarchy=track, instantaneous_actions=inst)


def adiabatic_error(traj: Trajectory, h: ParametricHamiltonian | None = None,
                    protocol: Protocol | None = None) -> np.ndarray:
    """``1 - |<psi(z_bar)|psi(t)>|^2`` per sample, computed as a residual norm for accuracy."""
    if traj.hierarchy is None:
        if h is None or protocol is None:
            raise ValueError("deviations not extracted; pass the model and protocol")
        traj = extract_deviations(traj, h, protocol, 1)
    track = traj.hierarchy
    m = track.zbar.shape[-1] // 2
    ref = wavefunction_from_chart(track.zbar[:, :m], np.clip(track.zbar[:, m:], 0.0, 1.0), track.pivots)
    psi = traj.wavefunctions()
    psi = psi / np.linalg.norm(psi, axis=-1, keepdims=True)
    ov = np.sum(np.conj(ref) * psi, axis=-1)
    resid = psi - ov[:, None] * ref
    return np.sum(np.abs(resid) ** 2, axis=-1)


# orbit geometry

def moving_center(times, values, period) -> np.ndarray:
    """Average of ``values`` over a window of one local period centred on each sample.

    The running integral is interpolated with cubic Hermite polynomials (its
    derivative is the sampled series), so window edges between samples cost
    fourth-order errors only.  Windows are truncated at the ends of the run.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size < 2:
        return v.copy()
    sign = 1.0 if t[-1] >= t[0] else -1.0
    ts = t * sign
    flat = v.reshape(v.shape[0], -1)
    dt = np.diff(ts)[:, None]
    # trapezoid with endpoint-derivative correction keeps the integral fourth order
    C = np.concatenate([np.zeros((1, flat.shape[1])),
                        np.cumsum(0.5 * dt * (flat[1:] + flat[:-1]), axis=0)])
    half = 0.5 * np.broadcast_to(np.asarray(period, dtype=float), t.shape)
    lo = np.clip(ts - half, ts[0], ts[-1])
    hi = np.clip(ts + half, ts[0], ts[-1])
    width = (hi - lo)[:, None]

    def hermite(x):
        i = np.clip(np.searchsorted(ts, x, side="right") - 1, 0, ts.size - 2)
        h_ = ts[i + 1] - ts[i]
        s = ((x - ts[i]) / h_)[:, None]
        hh = h_[:, None]
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        return (h00 * C[i] + h10 * hh * flat[i] + h01 * C[i + 1] + h11 * hh * flat[i + 1])

    with np.errstate(invalid="ignore", divide="ignore"):
        centre = (hermite(hi) - hermite(lo)) / width
    centre = np.where(width > 0, centre, flat)
    return centre.reshape(v.shape)


@dataclass
class CycleActions:
    """Actions of the closed cycles of one residual orbit."""

    order: int
    t_start: np.ndarray
    t_end: np.ndarray
    action: np.ndarray
    rejected: int = 0

    @property
    def mean(self) -> float:
        return float(np.mean(self.action)) if self.action.size else float("nan")

    @property
    def drift(self) -> float:
        """Relative change between the first and last closed cycle."""
        if self.action.size < 2:
            return float("nan")
        return float((self.action[-1] - self.action[0]) / self.mean)

    def spread(self) -> float:
        """``(max - min) / mean`` over the closed cycles."""
        if self.action.size < 2:
            return float("nan")
        return float(np.ptp(self.action) / self.mean)


def cycle_actions(times, u, period, order: int = 0,
                  closure_tolerance: float = CLOSURE_TOLERANCE) -> CycleActions:
    """Split a one-pair residual orbit at successive crossings of the positive p axis.

    ``u`` should already be centred (for instance with :func:`moving_center`).
    Cycles whose endpoints miss each other by more than ``closure_tolerance``
    times the cycle diameter are rejected.  Only cycles at least one local
    period away from both ends are used.
    """
    t = np.asarray(times, dtype=float)
    u = np.asarray(u, dtype=float)
    empty = CycleActions(order, np.zeros(0), np.zeros(0), np.zeros(0))
    if t.size < 3:
        return empty
    P = np.broadcast_to(np.asarray(period, dtype=float), t.shape)
    x, y = u[:, 0], u[:, 1]
    turn = np.sum(x[:-1] * y[1:] - y[:-1] * x[1:])
    if turn == 0.0:
        return empty
    if turn < 0:
        y = -y
    up = (y[:-1] < 0) & (y[1:] >= 0)
    idx = np.flatnonzero(up)
    frac = -y[idx] / (y[idx + 1] - y[idx])
    xc = x[idx] + frac * (x[idx + 1] - x[idx])
    keep = xc > 0
    idx, frac, xc = idx[keep], frac[keep], xc[keep]
    tc = t[idx] + frac * (t[idx + 1] - t[idx])
    inside = (np.abs(tc - t[0]) >= P[idx]) & (np.abs(t[-1] - tc) >= P[idx])
    idx, frac, xc, tc = idx[inside], frac[inside], xc[inside], tc[inside]
    if idx.size < 2:
        return empty
    # area as oint x dy with the sign fixed by the orientation flip above
    seg = 0.5 * (x[1:] + x[:-1]) * (y[1:] - y[:-1])
    cs = np.concatenate([[0.0], np.cumsum(seg)])
    a, b = idx[:-1], idx[1:]
    # crossing points lie on y = 0
    area = (cs[b] - cs[a + 1]
            + 0.5 * (xc[:-1] + x[a + 1]) * (y[a + 1] - 0.0)
            + 0.5 * (x[b] + xc[1:]) * (0.0 - y[b]))
    gap = np.abs(xc[1:] - xc[:-1])
    # reduceat over [a_i, a_{i+1}) covers cycle i up to its closing crossing
    bounds = np.append(a, b[-1] + 1)
    width_x = np.maximum.reduceat(x, bounds)[:-1] - np.minimum.reduceat(x, bounds)[:-1]
    width_y = np.maximum.reduceat(y, bounds)[:-1] - np.minimum.reduceat(y, bounds)[:-1]
    diam = np.hypot(width_x, width_y)
    closed = gap <= closure_tolerance * diam
    action = np.abs(area) / (2.0 * np.pi)
    return CycleActions(order, tc[:-1][closed], tc[1:][closed], action[closed], int(np.sum(~closed)))


def orbit_actions(traj: Trajectory, orders=None) -> Trajectory:
    """Per-cycle actions of the residual orbits ``delta^k`` about their moving centres."""
    if traj.hierarchy is None:
        raise ValueError("extract deviations first")
    orders = sorted(traj.deviations) if orders is None else orders
    period = traj.hierarchy.period()
    actions = dict(traj.actions)
    for k in orders:
        u = traj.deviations[k]
        if u.shape[-1] != 2:
            continue
        centred = u - measured_centers(traj, k)
        parts = [cycle_actions(traj.times[lo:hi], centred[lo:hi], period[lo:hi], k)
                 for lo, hi in _runs(traj.hierarchy.pivots)]
        actions[k] = CycleActions(
            k, np.concatenate([c.t_start for c in parts]), np.concatenate([c.t_end for c in parts]),
            np.concatenate([c.action for c in parts]), sum(c.rejected for c in parts))
    return replace(traj, actions=actions)


def measured_centers(traj: Trajectory, k: int, complete: bool = False) -> np.ndarray:
    """Moving-average centre of the order-k residual orbit.

    Windows do not straddle a change of chart pivot, since the residual
    coordinates change meaning there.  With ``complete``, samples whose
    window would be truncated are set to ``nan``.
    """
    track = traj.hierarchy
    period = track.period()
    u = traj.deviations[k]
    out = np.empty_like(u)
    for lo, hi in _runs(track.pivots):
        t = traj.times[lo:hi]
        out[lo:hi] = moving_center(t, u[lo:hi], period[lo:hi])
        if complete:
            half = 0.5 * period[lo:hi]
            cut = (np.abs(t - t[0]) < half) | (np.abs(t[-1] - t) < half)
            out[lo:hi][cut] = np.nan
    return out


def center_agreement(measured, predicted, floor: float = 0.1) -> float:
    """Time mean of ``|measured - predicted| / |predicted|`` where ``|predicted|`` exceeds
    ``floor`` times its maximum; ``nan`` if the prediction vanishes identically."""
    measured = np.asarray(measured, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    size = np.linalg.norm(predicted, axis=-1)
    peak = float(np.max(size, initial=0.0))
    if peak == 0.0:
        return float("nan")
    use = size > floor * peak
    return float(np.mean(np.linalg.norm(measured[use] - predicted[use], axis=-1) / size[use]))


def adiabatic_initial_state(h: ParametricHamiltonian, protocol: Protocol, t0: float, K: int,
                            branch: int) -> ChartState:
    """Chart state ``z_bar + S_1 + ... + S_K`` at ``t0``, which starts the run on the shifted orbit."""
    track = hierarchy_along(h, protocol, np.array([float(t0)]), K, branch)
    z = track.zbar[0] + sum(track.shifts[k][0] for k in range(1, K + 1))
    return ChartState.from_z(z, int(track.pivots[0]))
