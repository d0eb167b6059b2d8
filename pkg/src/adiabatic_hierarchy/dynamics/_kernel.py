"""Compiled Dormand-Prince 5(4) integrator for one smooth protocol piece.

The Butcher tableau and dense-output polynomial are the ones scipy's ``RK45``
uses.  One call integrates from ``ta`` to ``tb`` (either direction), fills the
requested samples from the dense output, and stops early on a chart or norm
event so the Python driver can react.

Modes: 0 Schrodinger in ``(Re psi, Im psi)``; ``1 + pivot`` Hamilton flow in
the chart of that pivot.  The two-level right-hand side reads the segment
polynomial ``(origin, c0, c1, c2)`` and the model vector
``(a, phi0, phi1, e0, e1, g0, g1)``.
"""
from __future__ import annotations

import types

import numpy as np
from numba import njit
from scipy.integrate import RK45

_A = np.ascontiguousarray(RK45.A)
_B = np.ascontiguousarray(RK45.B)
_C = np.ascontiguousarray(RK45.C)
_E = np.ascontiguousarray(RK45.E)
_P = np.ascontiguousarray(RK45.P)

OK, UNDERFLOW, CHART_SINGULAR, REPIVOT, NORM_DRIFT, MAX_STEPS = 0, 1, 2, 3, 4, 5
SCHRODINGER = 0


@njit(cache=True)
def two_level_rhs(t, y, seg, margs, mode, out):
    tau = t - seg[0]
    R = seg[1] + tau * (seg[2] + tau * seg[3])
    a = margs[0]
    theta = margs[1] + margs[2] * R
    d1 = margs[3] + margs[4] * R
    d2 = margs[5] + margs[6] * R
    if mode == SCHRODINGER:
        hc = 0.5 * a * np.cos(theta)
        hs = 0.5 * a * np.sin(theta)
        u0, u1, v0, v1 = y[0], y[1], y[2], y[3]
        out[0] = d1 * v0 + hc * v1 - hs * u1
        out[1] = hc * v0 + d2 * v1 + hs * u0
        out[2] = -(d1 * u0 + hc * u1) - hs * v1
        out[3] = -(hc * u0 + d2 * u1) + hs * v0
        return
    p, q = y[0], y[1]
    if mode == 2:
        p, q = -p, 1.0 - q
    f = np.sqrt(q - q * q)
    fp = (1.0 - 2.0 * q) / (2.0 * f)
    u = p - theta
    Hp = -a * f * np.sin(u)
    Hq = a * fp * np.cos(u) + (d2 - d1)
    if mode == 1:
        out[0] = -Hq
        out[1] = Hp
    else:
        out[0] = Hq
        out[1] = -Hp


# Right-hand side seen by integrate_piece; piece_integrator rebinds it.
rhs = two_level_rhs


@njit(cache=True)
def integrate_piece(y0, ta, tb, t_eval, out, seg, margs, mode, rtol, atol, h0,
                    q_floor, pivot_floor, max_drift, max_steps):
    """Integrate one smooth piece.

    Returns
    -------
    status, t_end, y_end, n_filled, n_steps, max_drift_seen, h_next
    """
    n = y0.size
    m = n // 2
    direction = 1.0 if tb >= ta else -1.0
    t = ta
    y = y0.copy()
    y_new = np.empty(n)
    stage = np.empty(n)
    K = np.empty((7, n))
    rhs(t, y, seg, margs, mode, K[0])
    n_eval = t_eval.size
    i_eval = 0
    while i_eval < n_eval and (t_eval[i_eval] - ta) * direction <= 0.0:
        out[i_eval] = y
        i_eval += 1
    h = abs(h0)
    if h == 0.0:
        d0 = 0.0
        d1 = 0.0
        for i in range(n):
            sc = atol + rtol * abs(y[i])
            d0 += (y[i] / sc) ** 2
            d1 += (K[0, i] / sc) ** 2
        d0 = np.sqrt(d0 / n)
        d1 = np.sqrt(d1 / n)
        h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    status = OK
    steps = 0
    drift_seen = 0.0
    rejected = False
    while (tb - t) * direction > 0.0:
        if steps >= max_steps:
            status = MAX_STEPS
            break
        floor = max(1e-15, 10.0 * abs(np.nextafter(t, t + direction) - t))
        if h < floor:
            status = UNDERFLOW
            break
        t_new = t + direction * h
        if (t_new - tb) * direction > 0.0 or abs(tb - t_new) < floor:
            t_new = tb
        hs = t_new - t
        for s in range(1, 6):
            for i in range(n):
                acc = 0.0
                for j in range(s):
                    acc += _A[s, j] * K[j, i]
                stage[i] = y[i] + hs * acc
            rhs(t + _C[s] * hs, stage, seg, margs, mode, K[s])
        for i in range(n):
            acc = 0.0
            for j in range(6):
                acc += _B[j] * K[j, i]
            y_new[i] = y[i] + hs * acc
        rhs(t_new, y_new, seg, margs, mode, K[6])
        en = 0.0
        for i in range(n):
            acc = 0.0
            for j in range(7):
                acc += _E[j] * K[j, i]
            sc = atol + rtol * max(abs(y[i]), abs(y_new[i]))
            en += (hs * acc / sc) ** 2
        en = np.sqrt(en / n)
        if not np.isfinite(en) or en > 1.0:
            factor = 0.2 if not np.isfinite(en) else max(0.2, 0.9 * en ** -0.2)
            h = abs(hs) * factor
            rejected = True
            continue
        while i_eval < n_eval and (t_eval[i_eval] - t_new) * direction <= 0.0:
            x = (t_eval[i_eval] - t) / hs
            for i in range(n):
                acc = 0.0
                xp = 1.0
                for c in range(4):
                    xp *= x
                    qc = 0.0
                    for j in range(7):
                        qc += K[j, i] * _P[j, c]
                    acc += qc * xp
                out[i_eval, i] = y[i] + hs * acc
            i_eval += 1
        factor = 10.0 if en == 0.0 else min(10.0, 0.9 * en ** -0.2)
        if rejected:
            factor = min(1.0, factor)
        rejected = False
        h = abs(hs) * factor
        t = t_new
        for i in range(n):
            y[i] = y_new[i]
            K[0, i] = K[6, i]
        steps += 1
        if mode == SCHRODINGER:
            nrm2 = 0.0
            for i in range(n):
                nrm2 += y[i] * y[i]
            drift = abs(nrm2 - 1.0)
            drift_seen = max(drift_seen, drift)
            if drift > max_drift:
                status = NORM_DRIFT
                break
            inv = 1.0 / np.sqrt(nrm2)
            for i in range(n):
                y[i] *= inv
                K[0, i] *= inv
        else:
            # angles stay in [-pi, pi) so the relative tolerance on p does not loosen
            pop = 1.0
            qmin = 1.0
            for i in range(m):
                y[i] = (y[i] + np.pi) % (2.0 * np.pi) - np.pi
                pop -= y[m + i]
                qmin = min(qmin, y[m + i])
            if qmin < q_floor:
                status = CHART_SINGULAR
                break
            if pop < pivot_floor:
                status = REPIVOT
                break
    return status, t, y, i_eval, steps, drift_seen, h


def piece_integrator(rhs):
    """Pure-Python :func:`integrate_piece` driven by ``rhs(t, y, seg, margs, mode, dydt)``."""
    namespace = dict(integrate_piece.py_func.__globals__, rhs=rhs)
    return types.FunctionType(integrate_piece.py_func.__code__, namespace, "integrate_piece")
