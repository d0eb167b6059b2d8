"""Canonical phase-space charts of projective Hilbert space.

A normalized state ``psi = (c_0, ..., c_{n-1})`` is represented relative to a
pivot component ``P`` by ``n - 1`` canonical pairs

    p_j = arg(c_j) - arg(c_P),    q_j = |c_j|**2,    j != P,

ordered by ``j``.  Pivot indices are zero-based.  Every function here accepts
batches: wavefunctions of shape ``(..., n)`` and coordinates of shape
``(..., n - 1)``, with a scalar or per-sample pivot.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidPopulations, InvalidWavefunction, PivotDegenerate

PIVOT_THRESHOLD = 0.1
PIVOT_SWITCH_TARGET = 0.2
NORM_TOLERANCE = 1e-12
TWO_PI = 2.0 * np.pi


def wrap_angle(x):
    """Map angles into [-pi, pi)."""
    return (np.asarray(x, dtype=float) + np.pi) % TWO_PI - np.pi


@lru_cache(maxsize=None)
def _other_indices(n: int) -> np.ndarray:
    idx = np.arange(n)
    table = np.array([np.delete(idx, k) for k in range(n)])
    table.flags.writeable = False
    return table


@dataclass(frozen=True)
class ChartState:
    """Canonical coordinates ``(p, q)`` of a pure state relative to ``pivot``."""

    p: np.ndarray
    q: np.ndarray
    pivot: int = 0

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError(f"p and q must be 1-d of equal length, got {p.shape} and {q.shape}")
        object.__setattr__(self, "p", wrap_angle(p))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "pivot", int(self.pivot))

    @property
    def dim(self) -> int:
        """Hilbert-space dimension n."""
        return self.p.size + 1

    @property
    def z(self) -> np.ndarray:
        """Phase-space vector ``(p..., q...)``."""
        return np.concatenate([self.p, self.q])

    @classmethod
    def from_z(cls, z, pivot: int = 0) -> "ChartState":
        z = np.asarray(z, dtype=float)
        m = z.size // 2
        return cls(z[:m], z[m:], pivot)


def as_wavefunction(amplitudes, tol: float = NORM_TOLERANCE) -> np.ndarray:
    """Validate and return a normalized amplitude vector."""
    psi = np.asarray(amplitudes, dtype=complex)
    if psi.ndim != 1 or psi.size < 2:
        raise InvalidWavefunction(f"need a 1-d amplitude vector with n >= 2, got shape {psi.shape}")
    norm2 = float(np.vdot(psi, psi).real)
    if abs(norm2 - 1.0) > tol:
        raise InvalidWavefunction(f"state is not normalized: sum |c|^2 = {norm2!r}")
    return psi


def chart_coordinates(psi, pivot, threshold: float = PIVOT_THRESHOLD):
    """Batch chart map.

    Parameters
    ----------
    psi : array_like, shape (..., n)
        Complex amplitudes.  Populations are normalized internally.
    pivot : int or array_like of int, shape (...)
        Pivot component per sample.
    threshold : float
        Minimum pivot population.

    Returns
    -------
    p, q : ndarray, shape (..., n - 1)
    """
    psi = np.asarray(psi, dtype=complex)
    n = psi.shape[-1]
    pivot = np.broadcast_to(np.asarray(pivot, dtype=np.intp), psi.shape[:-1])
    others = _other_indices(n)[pivot]
    c_piv = np.take_along_axis(psi, pivot[..., None], axis=-1)
    c_oth = np.take_along_axis(psi, others, axis=-1)
    norm2 = np.sum(np.abs(psi) ** 2, axis=-1, keepdims=True)
    pop_piv = np.abs(c_piv) ** 2 / norm2
    if np.any(pop_piv <= threshold):
        worst = float(np.min(pop_piv))
        raise PivotDegenerate(f"pivot population {worst:.3e} <= threshold {threshold}")
    q = np.abs(c_oth) ** 2 / norm2
    p = wrap_angle(np.angle(c_oth * np.conj(c_piv)))
    return p, q


def wavefunction_from_chart(p, q, pivot) -> np.ndarray:
    """Batch inverse chart map; the pivot amplitude is real and non-negative."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    total = q.sum(axis=-1)
    if np.any(total > 1.0 + NORM_TOLERANCE) or np.any(q < -NORM_TOLERANCE):
        raise InvalidPopulations(f"populations outside the simplex (max sum {float(np.max(total))!r})")
    q = np.clip(q, 0.0, 1.0)
    n = q.shape[-1] + 1
    pivot = np.broadcast_to(np.asarray(pivot, dtype=np.intp), q.shape[:-1])
    psi = np.empty(q.shape[:-1] + (n,), dtype=complex)
    np.put_along_axis(psi, pivot[..., None], np.sqrt(np.clip(1.0 - total, 0.0, None))[..., None] + 0j, axis=-1)
    np.put_along_axis(psi, _other_indices(n)[pivot], np.sqrt(q) * np.exp(1j * p), axis=-1)
    return psi


def to_chart(psi, pivot: int = 0, threshold: float = PIVOT_THRESHOLD) -> ChartState:
    """Chart coordinates of a single normalized state.

    Raises
    ------
    PivotDegenerate
        If ``|c_pivot|^2 <= threshold``; the caller should re-pivot.
    """
    psi = as_wavefunction(psi)
    if not 0 <= pivot < psi.size:
        raise ValueError(f"pivot {pivot} out of range for n = {psi.size}")
    p, q = chart_coordinates(psi, pivot, threshold)
    return ChartState(p, q, pivot)


def to_wavefunction(chart: ChartState) -> np.ndarray:
    """Normalized state with a real, non-negative pivot amplitude."""
    return wavefunction_from_chart(chart.p, chart.q, chart.pivot)


def repivot(chart: ChartState, new_pivot: int, threshold: float = PIVOT_THRESHOLD) -> ChartState:
    """Re-express the same projective ray relative to another pivot."""
    return to_chart(to_wavefunction(chart), new_pivot, threshold)


def choose_pivot(populations, current: int | None = None,
                 threshold: float = PIVOT_THRESHOLD, target: float = PIVOT_SWITCH_TARGET) -> int:
    """Pivot selection with hysteresis.

    Keeps ``current`` while its population stays at or above ``threshold``.
    Otherwise switches to the most populated component, provided that one
    exceeds ``target``.
    """
    populations = np.asarray(populations, dtype=float)
    if current is None:
        current = 0
    if populations[current] >= threshold:
        return int(current)
    best = int(np.argmax(populations))
    return best if populations[best] > target else int(current)


def chart_distance(a: ChartState, b: ChartState) -> float:
    """Euclidean distance in chart coordinates with angles compared modulo 2 pi.

    ``b`` is re-expressed in the pivot of ``a`` when the pivots differ.
    """
    if a.pivot != b.pivot:
        b = repivot(b, a.pivot, threshold=0.0)
    return float(np.sqrt(np.sum(wrap_angle(a.p - b.p) ** 2) + np.sum((a.q - b.q) ** 2)))


def chart_distance_arrays(p1, q1, p2, q2) -> np.ndarray:
    """Batch chart distance between coordinates sharing a pivot."""
    dp = wrap_angle(np.asarray(p1) - np.asarray(p2))
    dq = np.asarray(q1) - np.asarray(q2)
    return np.sqrt(np.sum(dp ** 2, axis=-1) + np.sum(dq ** 2, axis=-1))


def projective_overlap(psi_a, psi_b) -> np.ndarray:
    """``|<a|b>|`` for normalized states, batched over leading axes."""
    return np.abs(np.sum(np.conj(psi_a) * psi_b, axis=-1))
