"""Driving protocols ``R(t)`` with time derivatives and discontinuity bookkeeping.

Built-in kinds are piecewise quadratic in time,

    R(t) = c0 + c1 (t - t_s) + c2 (t - t_s)**2   on segment s,

which gives closed-form derivatives of every order and lets the compiled
integrator evaluate ``R`` without calling back into Python.  Segment ``s``
covers ``[breaks[s-1], breaks[s])``; the first and last segments extend to
minus and plus infinity.  Arbitrary schedules go through
:meth:`Protocol.from_callable`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numdiff import derivative

DERIVATIVE_AGREEMENT = 1e-8
DEFAULT_FD_STEP = 1e-2
PROTOCOL_KINDS = ("linear", "quadratic", "square-wave-rate", "lz-sweep", "piecewise")


@dataclass(frozen=True)
class Protocol:
    """Schedule of the adiabatic parameter.

    Attributes
    ----------
    kind : str
        Protocol family label.
    breaks : ndarray, shape (S - 1,)
        Sorted, duplicate-free times at which some derivative jumps.
    origins : ndarray, shape (S,)
        Local time origin of each segment.
    coeffs : ndarray, shape (S, 3)
        ``(c0, c1, c2)`` of each segment.
    params : dict
        Constructor parameters, kept for reports.
    """

    kind: str
    breaks: np.ndarray
    origins: np.ndarray
    coeffs: np.ndarray
    params: dict = field(default_factory=dict)
    R_of_t: object = field(default=None, repr=False)
    derivative_fns: tuple = field(default=(), repr=False)
    fd_step: float = DEFAULT_FD_STEP

    def __post_init__(self):
        breaks = np.asarray(self.breaks, dtype=float).reshape(-1)
        if np.any(np.diff(breaks) <= 0):
            raise ValueError("discontinuity times must be strictly increasing")
        object.__setattr__(self, "breaks", breaks)
        if self.R_of_t is None:
            origins = np.asarray(self.origins, dtype=float).reshape(-1)
            coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1, 3)
            if origins.size != breaks.size + 1 or coeffs.shape[0] != origins.size:
                raise ValueError("need one origin and one coefficient row per segment")
            object.__setattr__(self, "origins", origins)
            object.__setattr__(self, "coeffs", coeffs)

    # constructors

    @classmethod
    def from_segments(cls, starts, coeffs, kind: str = "piecewise", params=None) -> "Protocol":
        """Piecewise quadratic with segment ``s`` starting at ``starts[s]`` (``starts[0]`` is its origin only)."""
        starts = np.asarray(starts, dtype=float)
        return cls(kind, starts[1:], starts, np.asarray(coeffs, dtype=float), dict(params or {}))

    @classmethod
    def linear(cls, rate: float, R0: float = 0.0, t0: float = 0.0) -> "Protocol":
        """``R = R0 + rate (t - t0)``; protocol (i) of the rotating spin."""
        return cls.from_segments([t0], [[R0, rate, 0.0]], "linear",
                                 {"rate": rate, "R0": R0, "t0": t0})

    @classmethod
    def quadratic(cls, accel: float, R0: float = 0.0, rate0: float = 0.0, t0: float = 0.0) -> "Protocol":
        """``R = R0 + rate0 (t - t0) + accel (t - t0)**2 / 2``; protocol (ii)."""
        return cls.from_segments([t0], [[R0, rate0, 0.5 * accel]], "quadratic",
                                 {"accel": accel, "R0": R0, "rate0": rate0, "t0": t0})

    @classmethod
    def square_wave_rate(cls, rate: float, nu: float, t_end: float, R0: float = 0.0,
                         t0: float = 0.0) -> "Protocol":
        """Continuous ``R`` whose rate alternates between ``+rate`` and ``-rate``; protocol (iii).

        ``nu`` is an angular frequency: the sign flips every ``pi / nu``.
        Flips are tabulated up to ``t_end``; the last segment continues beyond.
        """
        if nu <= 0:
            raise ValueError("nu must be positive")
        half = np.pi / nu
        count = max(1, int(np.ceil((t_end - t0) / half)))
        starts = t0 + half * np.arange(count)
        signs = np.where(np.arange(count) % 2 == 0, 1.0, -1.0)
        values = R0 + np.concatenate([[0.0], np.cumsum(signs[:-1] * rate * half)])
        coeffs = np.stack([values, signs * rate, np.zeros(count)], axis=-1)
        return cls.from_segments(starts, coeffs, "square-wave-rate",
                                 {"rate": rate, "nu": nu, "t_end": t_end, "R0": R0, "t0": t0})

    @classmethod
    def lz_sweep(cls, V: float, Z0: float) -> "Protocol":
        """``z = -Z0 + V t`` for ``t`` in ``[0, 2 Z0 / V]``."""
        if V == 0:
            raise ValueError("sweep rate must be nonzero")
        return cls.from_segments([0.0], [[-Z0, V, 0.0]], "lz-sweep",
                                 {"V": V, "Z0": Z0, "t_end": 2.0 * Z0 / abs(V)})

    @classmethod
    def piecewise(cls, times, values) -> "Protocol":
        """Piecewise-linear interpolation of a table; the end slopes continue outward."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.size < 2 or times.shape != values.shape:
            raise ValueError("need matching 1-d tables with at least two entries")
        if np.any(np.diff(times) <= 0):
            raise ValueError("table times must be strictly increasing")
        slopes = np.diff(values) / np.diff(times)
        coeffs = np.stack([values[:-1], slopes, np.zeros_like(slopes)], axis=-1)
        return cls.from_segments(times[:-1], coeffs, "piecewise",
                                 {"times": times.tolist(), "values": values.tolist()})

    @classmethod
    def from_callable(cls, R_of_t, derivatives=(), discontinuities=(), fd_step: float = DEFAULT_FD_STEP,
                      probe=None) -> "Protocol":
        """Protocol from a callable; missing derivatives fall back to finite differences.

        Supplied derivative functions are checked against finite differences of
        ``R_of_t`` on ``probe`` times (default: 11 points in ``[0, 10]``) away
        from the discontinuities.
        """
        proto = cls("callable", np.asarray(discontinuities, dtype=float), np.zeros(0), np.zeros((0, 3)),
                    {}, R_of_t, tuple(derivatives), float(fd_step))
        if proto.derivative_fns:
            probe = np.linspace(0.0, 10.0, 11) if probe is None else np.asarray(probe, dtype=float)
            far = np.min(np.abs(probe[:, None] - proto.breaks[None, :]), axis=1, initial=np.inf) \
                > 8 * fd_step
            probe = probe[far]
            for m, fn in enumerate(proto.derivative_fns, start=1):
                given = np.asarray(fn(probe), dtype=float)
                fd = proto._fd_derivative(probe, m)
                err = np.max(np.abs(given - fd) / np.maximum(1.0, np.abs(fd)), initial=0.0)
                if err > DERIVATIVE_AGREEMENT:
                    raise ValueError(f"supplied derivative of order {m} disagrees with finite "
                                     f"differences by {err:.2e}")
        return proto

    # evaluation

    @property
    def is_polynomial(self) -> bool:
        return self.R_of_t is None

    @property
    def discontinuities(self) -> np.ndarray:
        return self.breaks

    @property
    def n_segments(self) -> int:
        return self.breaks.size + 1

    def segment_index(self, t) -> np.ndarray:
        """Segment of each time; a time on a break belongs to the later segment."""
        return np.searchsorted(self.breaks, np.asarray(t, dtype=float), side="right")

    def segment_params(self, s: int) -> np.ndarray:
        """``(origin, c0, c1, c2)`` of one segment, as consumed by the compiled integrator."""
        return np.concatenate([[self.origins[s]], self.coeffs[s]])

    def R(self, t) -> np.ndarray:
        return self.derivative(t, 0)

    def derivative(self, t, m: int, segment=None) -> np.ndarray:
        """``d^m R / dt^m``; ``segment`` pins the polynomial piece (for one-sided limits)."""
        t = np.asarray(t, dtype=float)
        if not self.is_polynomial:
            if m == 0:
                return np.asarray(self.R_of_t(t), dtype=float) + np.zeros_like(t)
            if m <= len(self.derivative_fns):
                return np.asarray(self.derivative_fns[m - 1](t), dtype=float) + np.zeros_like(t)
            return self._fd_derivative(t, m)
        s = self.segment_index(t) if segment is None else np.broadcast_to(segment, t.shape)
        tau = t - self.origins[s]
        c0, c1, c2 = (self.coeffs[s, i] for i in range(3))
        if m == 0:
            return c0 + tau * (c1 + tau * c2)
        if m == 1:
            return c1 + 2.0 * c2 * tau
        if m == 2:
            return 2.0 * c2 + 0.0 * tau
        return np.zeros_like(tau)

    def derivatives(self, t, K: int, segment=None) -> tuple:
        """``(R, R', ..., R^(K))`` at ``t``."""
        return tuple(self.derivative(t, m, segment) for m in range(K + 1))

    def _fd_derivative(self, t, m: int) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        f = lambda x: np.asarray(self.R_of_t(x), dtype=float) + np.zeros_like(x)
        val, _, _ = derivative(f, t, self.fd_step, order=m)
        return val

    def pieces(self, t0: float, t1: float) -> list[tuple[float, float, int]]:
        """Smooth pieces ``(ta, tb, segment)`` covering ``[t0, t1]`` in integration order.

        Works for ``t1 < t0`` (backward integration).
        """
        lo, hi = min(t0, t1), max(t0, t1)
        edges = np.concatenate([[lo], self.breaks_inside(lo, hi), [hi]])
        if self.is_polynomial:
            segs = self.segment_index(0.5 * (edges[:-1] + edges[1:])).tolist()
        else:
            segs = [-1] * (edges.size - 1)
        out = list(zip(edges[:-1].tolist(), edges[1:].tolist(), segs))
        if t1 < t0:
            out = [(b, a, s) for a, b, s in reversed(out)]
        return out

    def breaks_inside(self, t0: float, t1: float) -> np.ndarray:
        """Discontinuity times strictly inside ``(t0, t1)``."""
        lo, hi = np.searchsorted(self.breaks, [t0, t1], side="right")
        inner = self.breaks[lo:hi]
        return inner[inner < t1]

    def max_rate(self, t0: float, t1: float) -> float:
        """Largest ``|R'|`` over ``[t0, t1]`` (exact for polynomial protocols)."""
        if self.is_polynomial:
            a, b, s = (np.array(col) for col in zip(*self.pieces(t0, t1)))
            rates = self.derivative(np.concatenate([a, b]), 1, segment=np.concatenate([s, s]))
            return float(np.max(np.abs(rates)))
        ts = np.linspace(t0, t1, 1001)
        return float(np.max(np.abs(self.derivative(ts, 1))))
