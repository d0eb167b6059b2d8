"""Central finite differences with two-level Richardson extrapolation.

Stencils are 4th-order accurate central formulas for any derivative order;
mixed partials use tensor products of the per-axis stencils.  Raw estimates at
``h``, ``h/2`` and ``h/4`` give two Richardson values
``D(h/2) + (D(h/2) - D(h)) / 15`` and ``D(h/4) + (D(h/4) - D(h/2)) / 15``; the
finer one is returned and their disagreement serves as the error estimate.
"""
from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from itertools import product
from math import factorial

import numpy as np

from .errors import DerivativeUnstable

ACCURACY = 4
EPS = np.finfo(float).eps
UNSTABLE_RTOL = 1e-6


@lru_cache(maxsize=None)
def central_weights(order: int, accuracy: int = ACCURACY) -> tuple[tuple[int, float], ...]:
    """Offsets and weights of the central stencil for ``d^order/dx^order``.

    Solved exactly in rational arithmetic; zero weights are dropped.
    """
    if order < 1 or accuracy % 2:
        raise ValueError("order must be >= 1 and accuracy even")
    half = (order + 1) // 2 - 1 + accuracy // 2
    offsets = list(range(-half, half + 1))
    size = len(offsets)
    # Vandermonde system sum_i w_i x_i^k = k! delta_{k, order}
    rows = [[Fraction(x) ** k for x in offsets] + [Fraction(factorial(order) if k == order else 0)]
            for k in range(size)]
    for col in range(size):
        pivot = next(r for r in range(col, size) if rows[r][col] != 0)
        rows[col], rows[pivot] = rows[pivot], rows[col]
        lead = rows[col][col]
        rows[col] = [v / lead for v in rows[col]]
        for r in range(size):
            if r != col and rows[r][col] != 0:
                factor = rows[r][col]
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[col])]
    weights = [rows[i][-1] for i in range(size)]
    return tuple((x, float(w)) for x, w in zip(offsets, weights) if w != 0)


def stencil_reach(order: int, accuracy: int = ACCURACY) -> int:
    """Largest offset (in units of h) used by :func:`central_weights`."""
    return max(abs(x) for x, _ in central_weights(order, accuracy))


def _expand(denom: np.ndarray, like: np.ndarray) -> np.ndarray:
    return denom.reshape(denom.shape + (1,) * (like.ndim - denom.ndim))


def mixed_partial(f, x, counts, steps, accuracy: int = ACCURACY):
    """Richardson-extrapolated mixed partial derivative.

    Parameters
    ----------
    f : callable
        Maps points of shape ``(..., d)`` to values of shape ``(...)`` or ``(..., k)``.
    x : ndarray, shape (..., d)
        Evaluation points.
    counts : sequence of int, length d
        Derivative order along each axis.
    steps : ndarray, shape (..., d)
        Base step per axis; only axes with nonzero count are used.

    Returns
    -------
    value, error, scale : ndarray
        The finer Richardson value, its disagreement with the coarser one, and the largest
        absolute function value seen on the stencil.
    """
    x = np.asarray(x, dtype=float)
    steps = np.asarray(steps, dtype=float)
    axes = [a for a, c in enumerate(counts) if c]
    if not axes:
        val = np.asarray(f(x), dtype=float)
        return val, np.zeros_like(val), np.abs(val)
    stencils = [central_weights(counts[a], accuracy) for a in axes]

    def estimate(hs):
        total = None
        fmax = None
        for combo in product(*stencils):
            shift = np.zeros_like(x)
            weight = 1.0
            for a, (off, w) in zip(axes, combo):
                shift[..., a] += off * hs[..., a]
                weight *= w
            val = np.asarray(f(x + shift), dtype=float)
            total = weight * val if total is None else total + weight * val
            fmax = np.abs(val) if fmax is None else np.maximum(fmax, np.abs(val))
        denom = np.ones(hs.shape[:-1])
        for a in axes:
            denom = denom * hs[..., a] ** counts[a]
        return total / _expand(denom, total), fmax

    ratio = 2.0 ** accuracy - 1.0
    d1, s1 = estimate(steps)
    d2, s2 = estimate(steps / 2.0)
    d4, s4 = estimate(steps / 4.0)
    r1 = d2 + (d2 - d1) / ratio
    r2 = d4 + (d4 - d2) / ratio
    return r2, np.abs(r2 - r1), np.maximum(np.maximum(s1, s2), s4)


def derivative(f, x, h, order: int = 1, accuracy: int = ACCURACY):
    """Richardson-extrapolated derivative of a scalar-parameter batch function.

    ``f`` maps an array of parameters ``(N,)`` to values ``(N, ...)``.
    Returns ``(value, error, scale)`` like :func:`mixed_partial`.
    """
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    return mixed_partial(lambda pts: f(pts[..., 0]), x[..., None], (order,), h[..., None], accuracy)


def check_stable(value, error, scale, what: str, rtol: float = UNSTABLE_RTOL):
    """Raise :class:`DerivativeUnstable` if the Richardson levels disagree.

    The disagreement is compared with ``rtol`` times the larger of the
    derivative magnitude and the function scale on the stencil.
    """
    ref = np.maximum(np.abs(value), scale)
    bad = error > rtol * ref
    if np.any(bad):
        worst = float(np.max(np.where(bad, error / np.where(ref > 0, ref, 1.0), 0.0)))
        raise DerivativeUnstable(f"{what}: Richardson levels disagree (relative gap {worst:.2e})")
    return value
