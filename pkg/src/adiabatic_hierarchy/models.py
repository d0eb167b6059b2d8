"""Built-in two-level models with closed-form classical expressions.

Both models are instances of the family

    H(R) = [[d1(R), conj(c(R))], [c(R), d2(R)]],
    c = (a/2) exp(i (phi0 + phi1 R)),   d1 = e0 + e1 R,   d2 = g0 + g1 R,

whose classical form in the pivot-0 chart is

    H0(p, q) = a sqrt(q - q^2) cos(p - phi) + (d2 - d1) q        (+ d1, dropped).

Branch 0 is the lower eigenvalue, branch 1 the upper one.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .chart import wrap_angle
from .classical import ParametricHamiltonian


def sqrt_population_derivatives(q, order: int) -> list[np.ndarray]:
    """Derivatives ``f, f', ..., f^(order)`` of ``f(q) = sqrt(q - q^2)``.

    From ``f^2 = q - q^2`` and Leibniz:
    ``2 f f^(n) = g^(n) - sum_{k=1}^{n-1} C(n, k) f^(k) f^(n-k)``.
    """
    q = np.asarray(q, dtype=float)
    g = [q - q * q, 1.0 - 2.0 * q, np.full_like(q, -2.0)]
    f = [np.sqrt(np.clip(g[0], 0.0, None))]
    with np.errstate(divide="ignore", invalid="ignore"):
        for n in range(1, order + 1):
            acc = g[n] if n < len(g) else np.zeros_like(q)
            for k in range(1, n):
                acc = acc - comb(n, k) * f[k] * f[n - k]
            f.append(acc / (2.0 * f[0]))
    return f


class TwoLevelModel(ParametricHamiltonian):
    """Two-level Hamiltonian with affine parameter dependence and analytic derivatives."""

    has_analytic = True

    def __init__(self, a: float, phi0: float = 0.0, phi1: float = 0.0, e0: float = 0.0,
                 e1: float = 0.0, g0: float = 0.0, g1: float = 0.0, *, name: str = "two-level"):
        if not a > 0:
            raise ValueError("coupling must be positive")
        self.a = float(a)
        self.phi0, self.phi1 = float(phi0), float(phi1)
        self.e0, self.e1, self.g0, self.g1 = float(e0), float(e1), float(g0), float(g1)
        super().__init__(self._matrix, 2, name=name, vectorized=True)

    def kernel_params(self) -> np.ndarray:
        """Parameter vector consumed by the compiled right-hand sides."""
        return np.array([self.a, self.phi0, self.phi1, self.e0, self.e1, self.g0, self.g1])

    def _matrix(self, R):
        R = np.asarray(R, dtype=float)
        c = 0.5 * self.a * np.exp(1j * (self.phi0 + self.phi1 * R))
        M = np.empty(R.shape + (2, 2), dtype=complex)
        M[..., 0, 0] = self.e0 + self.e1 * R
        M[..., 1, 1] = self.g0 + self.g1 * R
        M[..., 0, 1] = np.conj(c)
        M[..., 1, 0] = c
        return M

    def phase(self, R):
        return self.phi0 + self.phi1 * np.asarray(R, dtype=float)

    def bias(self, R):
        """``d2 - d1``, the coefficient of q in H0."""
        R = np.asarray(R, dtype=float)
        return (self.g0 - self.e0) + (self.g1 - self.e1) * R

    def dropped_constant(self, R):
        return self.e0 + self.e1 * np.asarray(R, dtype=float)

    def analytic_tensor(self, z, R, pivot, order):
        z = np.asarray(z, dtype=float)
        p, q = z[..., 0], z[..., 1]
        sign = 1.0
        if int(pivot) == 1:
            p, q = -p, 1.0 - q
            sign = (-1.0) ** order
        R = np.broadcast_to(np.asarray(R, dtype=float), p.shape)
        u = p - self.phase(R)
        b = self.bias(R)
        f = sqrt_population_derivatives(q, order)
        if order == 0:
            return self.a * f[0] * np.cos(u) + b * q
        out = np.empty(p.shape + (2,) * order)
        for idx in np.ndindex(*(2,) * order):
            j = sum(idx)          # number of q derivatives
            i = order - j         # number of p derivatives
            val = self.a * f[j] * np.cos(u + 0.5 * np.pi * i)
            if i == 0 and j == 1:
                val = val + b
            out[(Ellipsis,) + idx] = val
        return sign * out

    def fixed_point(self, R, branch: int, pivot: int = 0) -> np.ndarray:
        """Closed-form fixed point ``(p_bar, q_bar)`` of a branch."""
        R = np.asarray(R, dtype=float)
        b = self.bias(R)
        r = np.hypot(self.a, b)
        if branch == 0:
            p, q = self.phase(R) + np.pi, 0.5 - 0.5 * b / r
        else:
            p, q = self.phase(R), 0.5 + 0.5 * b / r
        if pivot == 1:
            p, q = -p, 1.0 - q
        return np.stack([wrap_angle(p), q], axis=-1)

    def fixed_point_slope(self, R, branch: int, pivot: int):
        R = np.asarray(R, dtype=float)
        b = self.bias(R)
        r = np.hypot(self.a, b)
        db = self.g1 - self.e1
        dq = 0.5 * db * self.a ** 2 / r ** 3
        dq = -dq if branch == 0 else dq
        dp = np.full_like(R, self.phi1)
        slope = np.stack([dp, np.broadcast_to(dq, R.shape)], axis=-1)
        return -slope if pivot == 1 else slope

    def gap(self, R):
        return np.hypot(self.a, self.bias(R))


class SpinRotatingField(TwoLevelModel):
    """Spin-1/2 in a rotating field: ``H = (L/2) [[0, e^{-i alpha}], [e^{i alpha}, 0]]``, R = alpha."""

    def __init__(self, L: float = 1.0):
        self.L = float(L)
        super().__init__(L, phi0=0.0, phi1=1.0, name="spin")


class LandauZener(TwoLevelModel):
    """Landau-Zener model ``H = (1/2) [[z, x], [x, -z]]``, R = z.

    The classical form drops the additive constant ``z/2``.
    """

    def __init__(self, x: float = 1.0):
        self.x = float(x)
        super().__init__(x, e1=0.5, g1=-0.5, name="lz")


def spin_analytic_solution(L: float, omega: float, t) -> np.ndarray:
    """First-order analytic state under ``alpha = omega t`` from the equal superposition.

    Components ``(1 - eps, (1 + eps) exp(i(omega t + (omega/L) sin Lt))) / sqrt 2``
    with ``eps = (omega/2L)(1 - cos Lt)``, renormalized (the raw form is
    normalized only to first order).  Batched over ``t``.
    """
    t = np.asarray(t, dtype=float)
    eps = 0.5 * omega / L * (1.0 - np.cos(L * t))
    phase = omega * t + omega / L * np.sin(L * t)
    psi = np.stack([(1.0 - eps) + 0j, (1.0 + eps) * np.exp(1j * phase)], axis=-1) / np.sqrt(2.0)
    return psi / np.linalg.norm(psi, axis=-1, keepdims=True)


@dataclass(frozen=True)
class SpinClosedForms:
    """Closed forms for the branch with ``p_bar = alpha`` (upper eigenvalue)."""

    fixed_points: tuple[tuple[float, float], tuple[float, float]]
    h1: tuple[float, float, float]        # (c_qq, c_qp, c_pp)
    shift1: tuple[float, float]           # (A1, B1)
    action1: float


def spin_closed_forms(L: float, alpha: float, alphadot: float) -> SpinClosedForms:
    """Fixed points, H1 coefficients, first-order shift and action for a step in alphadot."""
    return SpinClosedForms(
        fixed_points=((float(alpha), 0.5), (float(alpha) + np.pi, 0.5)),
        h1=(-2.0 * L, 0.0, -0.5 * L),
        shift1=(0.0, alphadot / (2.0 * L)),
        action1=alphadot ** 2 / (4.0 * L ** 2),
    )


@dataclass(frozen=True)
class LZClosedForms:
    """Closed forms for the lower Landau-Zener branch."""

    fixed_points: tuple[tuple[float, float], tuple[float, float]]   # (lower, upper)
    h1: tuple[float, float, float]
    shift1: tuple[float, float]
    h2: tuple[float, float, float]
    shift2: tuple[float, float]


def lz_closed_forms(x: float, z: float, V: float) -> LZClosedForms:
    """Quoted closed forms; ``h1``/``h2`` are Hessian entries ``(c_qq, c_qp, c_pp)``."""
    r2 = x * x + z * z
    r = np.sqrt(r2)
    c_qq = 2.0 * r * (1.0 + z * z / (x * x))
    c_pp = 0.5 * x * x / r
    return LZClosedForms(
        fixed_points=((np.pi, 0.5 + z / (2 * r)), (0.0, 0.5 - z / (2 * r))),
        h1=(c_qq, 0.0, c_pp),
        shift1=(V / r2, 0.0),
        h2=(c_qq, -z * V / r2, c_pp),
        shift2=(0.0, 5.0 * x * x * z * V * V / (4.0 * r2 ** 3.5)),
    )


def lz_b2_peak(x: float = 1.0) -> float:
    """Location ``z > 0`` of the maximum of ``z / (x^2 + z^2)^{7/2}``, i.e. ``x / sqrt 6``."""
    return x / np.sqrt(6.0)


def lz_exact_tunneling_reference(x: float, V: float) -> float:
    """``exp(-pi x^2 / V)``, quoted as a qualitative reference only."""
    if x <= 0 or V <= 0:
        raise ValueError("x and V must be positive")
    return float(np.exp(-np.pi * x * x / V))


BUILTIN_MODELS = {"spin": SpinRotatingField, "lz": LandauZener}
