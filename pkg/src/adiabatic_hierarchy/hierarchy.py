"""Order-by-order deviation hierarchy: shifted fixed points, deviation Hamiltonians, actions.

Let ``S_k = (A_k, B_k)`` be the k-th order shift and ``S_0 = z_bar(R)`` the
instantaneous fixed point.  The shifts obey

    Gamma_0 S_k = sum_{j=0}^{k-1} dS_{k-1}/dR^(j) R^(j+1)
                  - sum_{j=1}^{k-1} Delta^j Gamma S_{k-j},

where ``R^(j)`` is the j-th time derivative of the parameter and

    Delta^j Gamma = T^j { sum_i 1/(i+1)! D^i Gamma [w, ..., w] },   w = S_1 + S_2 + ...

with ``D^i Gamma = J d^{i+2} H0`` contracted ``i`` times and ``T^j`` keeping the
terms of grade ``j`` (a factor ``S_r`` carries grade ``r``).  ``k = 1`` gives
``Gamma_0^{-1} dz_bar/dR Rdot`` and ``Delta^1 Gamma = delta Gamma / 2``.

Shifts are evaluated in batches: every array carries a leading sample axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from math import factorial

import numpy as np

from .chart import ChartState
from .classical import (DEGENERACY_FLOOR, FixedPoint, ParametricHamiltonian, branch_chart,
                        gamma_at, gamma_from_hessian, r_step, symplectic, track_fixed_point,
                        zbar_slope)
from .errors import DegenerateSpectrum, DerivativeUnstable, GradeOverflow, OrbitNotClosed
from .numdiff import UNSTABLE_RTOL, derivative

K_MAX = 3
CLOSURE_TOLERANCE = 1e-3
SHIFT_FD_RTOL = 1e-6
NOISE_AMPLIFICATION = 30.0


@dataclass(frozen=True)
class OrderShift:
    """k-th order shift ``(A_k, B_k)`` of the adiabatic trajectory."""

    order: int
    A: np.ndarray
    B: np.ndarray
    evaluated_at: tuple = ()

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([np.atleast_1d(self.A), np.atleast_1d(self.B)])

    @classmethod
    def from_vector(cls, order: int, s, evaluated_at=()) -> "OrderShift":
        s = np.asarray(s, dtype=float)
        m = s.size // 2
        return cls(order, s[:m].copy(), s[m:].copy(), tuple(float(x) for x in evaluated_at))


@dataclass(frozen=True)
class DeviationHamiltonian:
    """Quadratic Hamiltonian ``H_k = u^T Hess u / 2`` with ``u = delta^k z - S_k``.

    ``hessian`` holds the second partials of H0 at the shifted expansion
    point ``z_bar + S_1 + ... + S_{k-1}``.
    """

    order: int
    hessian: np.ndarray
    center: OrderShift

    @property
    def coefficients(self) -> tuple[float, float, float]:
        """``(c_qq, c_qp, c_pp)`` for a single canonical pair."""
        H = self.hessian
        if H.shape != (2, 2):
            raise ValueError("coefficients are defined for two-level systems")
        return float(H[1, 1]), float(H[0, 1]), float(H[0, 0])

    @property
    def discriminant(self) -> float:
        """``det Hess``; equals ``c_qq c_pp - c_qp^2`` for one pair."""
        return float(np.linalg.det(self.hessian))

    @property
    def is_elliptic(self) -> bool:
        return self.discriminant > 0

    def __call__(self, delta_p, delta_q) -> float:
        u = np.concatenate([np.atleast_1d(delta_p), np.atleast_1d(delta_q)]) - self.center.vector
        return float(0.5 * u @ self.hessian @ u)

    def action_of_energy(self, energy: float) -> float:
        """Action of the level set ``H_k = energy`` for one canonical pair."""
        return abs(energy) / np.sqrt(self.discriminant)


@dataclass(frozen=True)
class GradedTerm:
    """A term tagged with its grade; products add grades."""

    value: object
    grade: int
    factors: tuple = field(default=())

    def __mul__(self, other: "GradedTerm") -> "GradedTerm":
        return GradedTerm(self.value * other.value, self.grade + other.grade,
                          tuple(sorted(self.factors + other.factors)))

    @classmethod
    def symbol(cls, name: str, order: int, value=1.0) -> "GradedTerm":
        return cls(value, order, ((name, order),))

    @property
    def monomial(self) -> str:
        if not self.factors:
            return "1"
        out = []
        for f in sorted(set(self.factors)):
            power = self.factors.count(f)
            label = "".join(str(x) for x in f)
            out.append(label if power == 1 else f"{label}^{power}")
        return "*".join(out)


def grade_select(terms, j: int) -> list[GradedTerm]:
    """``T^j``: the grade-j subset of ``terms``, order preserved."""
    return [t for t in terms if t.grade == j]


def graded_sum(terms, zero):
    total = zero
    for t in terms:
        total = total + t.value
    return total


def _component_label(a: int, m: int) -> str:
    return "A" if a < m else "B"


def _factor_label(r: int, a: int, m: int) -> tuple:
    name = _component_label(a, m)
    return (name, r) if m == 1 else (name, r, a % m)


def delta_gamma_terms(tensors: dict, shifts, max_grade: int) -> list[GradedTerm]:
    """Graded expansion ``sum_i 1/(i+1)! D^i Gamma [w^i]`` by monomials in the shift components.

    Parameters
    ----------
    tensors : dict
        ``order -> (N, d, ..., d)`` derivative tensors of H0 at ``z_bar`` for
        orders ``3 .. max_grade + 2``.
    shifts : list of ndarray
        ``[S_1, ..., S_r]`` each of shape ``(N, d)``.
    max_grade : int
        Highest number of factors to expand.

    Returns
    -------
    list of GradedTerm
        Values of shape ``(N, d, d)``; factors label ``(A|B, r)``.
    """
    d = shifts[0].shape[-1]
    m = d // 2
    J = symplectic(m)
    terms = []
    pairs = [(r, a) for r in range(1, len(shifts) + 1) for a in range(d)]
    for i in range(1, max_grade + 1):
        T = tensors[i + 2]
        weight = 1.0 / factorial(i + 1)
        for seq in product(pairs, repeat=i):
            coeff = weight * np.prod([shifts[r - 1][:, a] for r, a in seq], axis=0)
            index = (Ellipsis, slice(None), slice(None)) + tuple(a for _, a in seq)
            value = (J @ T[index]) * coeff[:, None, None]
            grade = sum(r for r, _ in seq)
            factors = tuple(sorted(_factor_label(r, a, m) for r, a in seq))
            terms.append(GradedTerm(value, grade, factors))
    return terms


def delta_j_gamma_from_tensors(tensors: dict, shifts, j: int) -> np.ndarray:
    """``Delta^j Gamma`` for a batch, from H0 tensors at the fixed point."""
    N, d = shifts[0].shape
    terms = grade_select(delta_gamma_terms(tensors, shifts[:j], j), j)
    return graded_sum(terms, np.zeros((N, d, d)))


class ShiftEngine:
    """Graded shifts of one tracked branch on a batch of parameter tuples.

    Parameters
    ----------
    h : ParametricHamiltonian
    R : array_like, shape (N,)
        Parameter values at which the branch is anchored.
    reference : ndarray, shape (N, n) or (n,)
        Eigenvectors identifying the branch (matched by overlap).
    pivot : int
        Chart in which shifts are expressed.
    branch : int, optional
        Ascending-eigenvalue label; enables closed-form fixed-point slopes.
    k_max : int
        Highest order that may be requested.
    """

    def __init__(self, h: ParametricHamiltonian, R, reference, pivot: int,
                 branch: int | None = None, k_max: int = K_MAX):
        self.h = h
        self.R0 = np.atleast_1d(np.asarray(R, dtype=float))
        self.reference = np.broadcast_to(np.asarray(reference, dtype=complex), (self.R0.size, h.dim))
        self.pivot = int(pivot)
        self.branch = branch
        self.k_max = int(k_max)
        self.z0 = branch_chart(h, self.R0, self.reference, self.pivot)
        self._memo: dict = {}

    @staticmethod
    def _key(tag, *arrays):
        return (tag,) + tuple(np.ascontiguousarray(a).tobytes() for a in arrays)

    def _cached(self, key, compute):
        if key not in self._memo:
            self._memo[key] = compute()
        return self._memo[key]

    def zbar(self, R) -> np.ndarray:
        R = np.asarray(R, dtype=float)
        return self._cached(self._key("zbar", R),
                            lambda: branch_chart(self.h, R, self.reference, self.pivot, self.z0, np.inf))

    def tensor(self, R, order: int) -> np.ndarray:
        R = np.asarray(R, dtype=float)
        return self._cached(self._key(("tensor", order), R),
                            lambda: self.h.tensor(self.zbar(R), R, self.pivot, order))

    def gamma0(self, R) -> np.ndarray:
        R = np.asarray(R, dtype=float)

        def compute():
            G = gamma_from_hessian(self.tensor(R, 2))
            det = np.linalg.det(G)
            if np.any(np.abs(det) <= DEGENERACY_FLOOR):
                raise DegenerateSpectrum(f"|det Gamma_0| = {float(np.min(np.abs(det))):.3e} at a fixed point")
            return G

        return self._cached(self._key("gamma0", R), compute)

    def zbar_slope(self, R) -> np.ndarray:
        R = np.asarray(R, dtype=float)
        return self._cached(self._key("slope", R),
                            lambda: zbar_slope(self.h, R, self.reference, self.pivot,
                                               self.branch, self.zbar(R)))

    def shift_partial(self, k: int, derivs: tuple, j: int) -> np.ndarray:
        """``dS_k / dR^(j)`` holding the other entries of the derivative tuple fixed.

        ``S_k`` is a polynomial in the rates, so only the parameter direction
        ``j = 0`` is checked for Richardson stability.  The check allows for
        the noise already carried by ``S_k`` (see :meth:`uncertainty`).
        """
        return self._partial(k, derivs, j)[0]

    def _partial(self, k: int, derivs: tuple, j: int):
        if k == 0:
            slope = self.zbar_slope(derivs[0])
            return slope, self.h.tensor_noise * np.linalg.norm(slope, axis=-1)
        x = derivs[j]
        h = r_step(x) * (2.0 ** k if j == 0 else 1.0)

        def f(values):
            tup = list(derivs[:k + 1])
            tup[j] = values
            return self.shift(k, tuple(tup))

        val, err, scale = derivative(f, x, h)
        gap = np.linalg.norm(err, axis=-1)
        if j == 0:
            _check_shift_derivative(val, gap, scale, self.uncertainty(k, derivs) / h, k)
        return val, gap

    def uncertainty(self, k: int, derivs: tuple) -> np.ndarray:
        """Noise estimate of ``S_k``: tensor noise on each contribution plus propagated FD gaps."""
        self.shift(k, derivs)
        return self._memo[self._key(("uncertainty", k), *derivs[:k + 1])]

    def terms(self, k: int, derivs: tuple) -> list[GradedTerm]:
        """Right-hand-side contributions to ``Gamma_0 S_k``, each of grade k."""
        return self._terms(k, derivs)[0]

    def _terms(self, k: int, derivs: tuple):
        out, noise = [], []
        for j in range(k):
            val, gap = self._partial(k - 1, derivs, j)
            rate = np.abs(derivs[j + 1])
            out.append(GradedTerm(val * derivs[j + 1][:, None], k, (("dS", k - 1, j),)))
            noise.append(gap * rate)
        if k > 1:
            R = derivs[0]
            shifts = [self.shift(r, derivs) for r in range(1, k)]
            tensors = {o: self.tensor(R, o) for o in range(3, k + 2)}
            for j in range(1, k):
                dG = delta_j_gamma_from_tensors(tensors, shifts, j)
                out.append(GradedTerm(-np.einsum("nij,nj->ni", dG, shifts[k - j - 1]), k,
                                      (("DeltaGamma", j), ("S", k - j))))
                noise.append(np.linalg.norm(dG, axis=(-2, -1)) * self.uncertainty(k - j, derivs))
        return out, noise

    def shift(self, k: int, derivs: tuple) -> np.ndarray:
        """``S_k`` at each sample, shape ``(N, d)``; ``derivs = (R, R', ..., R^(k))``."""
        if k > self.k_max:
            raise GradeOverflow(f"order {k} exceeds K_max = {self.k_max}")
        derivs = tuple(np.asarray(a, dtype=float) for a in derivs[:k + 1])
        if len(derivs) < k + 1:
            raise ValueError(f"order {k} needs {k + 1} protocol derivatives, got {len(derivs)}")
        if k == 0:
            return self.zbar(derivs[0])

        def compute():
            G = self.gamma0(derivs[0])
            terms, noise = self._terms(k, derivs)
            parts = [np.linalg.solve(G, t.value[..., None])[..., 0] for t in terms]
            inv_norm = np.linalg.norm(np.linalg.inv(G), ord=2, axis=(-2, -1))
            self._memo[self._key(("uncertainty", k), *derivs)] = (
                self.h.tensor_noise * sum(np.linalg.norm(v, axis=-1) for v in parts)
                + inv_norm * sum(noise))
            return sum(parts)

        return self._cached(self._key(("shift", k), *derivs), compute)

    def series(self, derivs: tuple, K: int) -> list[np.ndarray]:
        """``[S_1, ..., S_K]``."""
        return [self.shift(k, derivs) for k in range(1, K + 1)]

    def expansion_hessian(self, derivs: tuple, k: int) -> np.ndarray:
        """Second partials of H0 at ``z_bar + S_1 + ... + S_{k-1}``."""
        R = np.asarray(derivs[0], dtype=float)
        point = self.zbar(R) + sum((self.shift(r, derivs) for r in range(1, k)), np.zeros_like(self.z0))
        return self.h.tensor(point, R, self.pivot, 2)


def _check_shift_derivative(val, gap, scale, noise, k):
    """Richardson check for ``dS_k/dR`` with a floor for the noise carried by ``S_k``."""
    ref = np.maximum(np.linalg.norm(val, axis=-1), np.linalg.norm(scale, axis=-1))
    bad = gap > SHIFT_FD_RTOL * ref + NOISE_AMPLIFICATION * noise
    if np.any(bad):
        raise DerivativeUnstable(f"derivative of S_{k} over R: Richardson levels disagree "
                                 f"(gap {float(np.max(gap[bad])):.3e})")


# single-point operations

def _engine(h: ParametricHamiltonian, fp: FixedPoint, R, k_max: int = K_MAX) -> ShiftEngine:
    if R is not None and float(R) != fp.R:
        fp = track_fixed_point(h, fp, R)
    return ShiftEngine(h, [fp.R], fp.vector, fp.chart.pivot, fp.branch_id, k_max)


def _derivs(values) -> tuple:
    return tuple(np.array([float(v)]) for v in values)


def kth_order_shift(h: ParametricHamiltonian, fp: FixedPoint, protocol_derivs, k: int,
                    k_max: int = K_MAX) -> OrderShift:
    """k-th order shift by the general graded recursion.

    ``protocol_derivs`` lists ``R', R'', ..., R^(k)``; the parameter value is ``fp.R``.
    """
    if k < 1:
        raise ValueError("order must be >= 1")
    if k > k_max:
        raise GradeOverflow(f"order {k} exceeds K_max = {k_max}")
    values = (fp.R,) + tuple(protocol_derivs)[:k]
    if len(values) < k + 1:
        raise ValueError(f"order {k} needs derivatives up to R^({k})")
    eng = ShiftEngine(h, [fp.R], fp.vector, fp.chart.pivot, fp.branch_id, k_max)
    return OrderShift.from_vector(k, eng.shift(k, _derivs(values))[0], values)


def shift_series(h: ParametricHamiltonian, fp: FixedPoint, protocol_derivs, K: int,
                 k_max: int = K_MAX) -> list[OrderShift]:
    """``[S_1, ..., S_K]`` at ``fp.R`` sharing one evaluation cache."""
    if K > k_max:
        raise GradeOverflow(f"order {K} exceeds K_max = {k_max}")
    values = (fp.R,) + tuple(protocol_derivs)[:K]
    eng = ShiftEngine(h, [fp.R], fp.vector, fp.chart.pivot, fp.branch_id, k_max)
    return [OrderShift.from_vector(k, s[0], values[:k + 1])
            for k, s in enumerate(eng.series(_derivs(values), K), start=1)]


def _gamma0_checked(h, fp: FixedPoint):
    G = gamma_at(h, fp.chart, fp.R)
    if abs(G.det) <= DEGENERACY_FLOOR:
        raise DegenerateSpectrum(f"|det Gamma_0| = {abs(G.det):.3e} <= {DEGENERACY_FLOOR}")
    return G


def first_order_shift(h: ParametricHamiltonian, fp: FixedPoint, R=None, Rdot: float = 0.0) -> OrderShift:
    """``(A_1, B_1) = Gamma_0^{-1} dz_bar/dR Rdot``."""
    if R is not None and float(R) != fp.R:
        fp = track_fixed_point(h, fp, R)
    G = _gamma0_checked(h, fp)
    slope = zbar_slope(h, [fp.R], fp.vector, fp.chart.pivot, fp.branch_id, fp.chart.z[None, :])[0]
    return OrderShift.from_vector(1, np.linalg.solve(G.entries, slope * Rdot), (fp.R, Rdot))


def first_order_hamiltonian(h: ParametricHamiltonian, fp: FixedPoint, R=None,
                            Rdot: float = 0.0) -> DeviationHamiltonian:
    """H_1: second partials at the fixed point, centred at ``(A_1, B_1)``."""
    if R is not None and float(R) != fp.R:
        fp = track_fixed_point(h, fp, R)
    center = first_order_shift(h, fp, None, Rdot)
    return DeviationHamiltonian(1, gamma_at(h, fp.chart, fp.R).hessian, center)


def delta_gamma(h: ParametricHamiltonian, fp: FixedPoint, shift: OrderShift, R=None) -> np.ndarray:
    """Directional derivative of Gamma along the shift, by differencing :func:`gamma_at`."""
    if R is not None and float(R) != fp.R:
        fp = track_fixed_point(h, fp, R)
    s = shift.vector
    norm = float(np.linalg.norm(s))
    if norm == 0.0:
        d = s.size
        return np.zeros((d, d))
    direction = s / norm
    z0 = fp.chart.z
    pivot = fp.chart.pivot

    def gamma_along(eps):
        return np.array([gamma_at(h, ChartState.from_z(z0 + e * direction, pivot), fp.R).entries
                         for e in np.ravel(eps)])

    m = z0.size // 2
    room = min(float(np.min(z0[m:])), 1.0 - float(np.sum(z0[m:])))
    step = min(1e-3, 0.05 * room) / max(1.0, float(np.max(np.abs(direction[m:]))))
    val, err, scale = derivative(gamma_along, np.array([0.0]), np.array([step]))
    gap = float(np.linalg.norm(err))
    size = float(np.linalg.norm(scale))
    if gap > UNSTABLE_RTOL * max(float(np.linalg.norm(val)), size) \
            + NOISE_AMPLIFICATION * h.tensor_noise * size / step:
        raise DerivativeUnstable(f"directional derivative of Gamma: Richardson levels disagree "
                                 f"(gap {gap:.3e})")
    return val[0] * norm


def second_order_shift(h: ParametricHamiltonian, fp: FixedPoint, R=None, Rdot: float = 0.0,
                       Rddot: float = 0.0) -> OrderShift:
    """``Gamma_0^{-1}[(dS_1/dR) Rdot + (dS_1/dRdot) Rddot] - Gamma_0^{-1} delta Gamma S_1 / 2``.

    ``dS_1/dRdot = Gamma_0^{-1} dz_bar/dR`` exactly (S_1 is linear in Rdot);
    ``dS_1/dR`` differences :func:`first_order_shift` over the parameter.
    """
    if R is not None and float(R) != fp.R:
        fp = track_fixed_point(h, fp, R)
    G = _gamma0_checked(h, fp).entries
    s1 = first_order_shift(h, fp, None, Rdot)
    ds1_dRdot = first_order_shift(h, fp, None, 1.0).vector

    def s1_at(Rs):
        return np.array([first_order_shift(h, track_fixed_point(h, fp, r), None, Rdot).vector
                         for r in np.ravel(Rs)])

    hR = r_step(fp.R) * 2.0
    val, err, scale = derivative(s1_at, np.array([fp.R]), np.array([hR]))
    noise = h.tensor_noise * np.linalg.norm(s1.vector) / hR
    _check_shift_derivative(val, np.linalg.norm(err, axis=-1), scale, noise, 1)
    ds1_dR = val[0]
    rhs = ds1_dR * Rdot + ds1_dRdot * Rddot - 0.5 * delta_gamma(h, fp, s1) @ s1.vector
    return OrderShift.from_vector(2, np.linalg.solve(G, rhs), (fp.R, Rdot, Rddot))


def second_order_hamiltonian(h: ParametricHamiltonian, fp: FixedPoint, R=None, Rdot: float = 0.0,
                             Rddot: float = 0.0) -> DeviationHamiltonian:
    """H_2: second partials at ``z_bar + S_1``, centred at ``(A_2, B_2)``."""
    if R is not None and float(R) != fp.R:
        fp = track_fixed_point(h, fp, R)
    s1 = first_order_shift(h, fp, None, Rdot)
    center = second_order_shift(h, fp, None, Rdot, Rddot)
    point = ChartState.from_z(fp.chart.z + s1.vector, fp.chart.pivot)
    return DeviationHamiltonian(2, gamma_at(h, point, fp.R).hessian, center)


def deviation_hamiltonian(h: ParametricHamiltonian, fp: FixedPoint, protocol_derivs, k: int,
                          k_max: int = K_MAX) -> DeviationHamiltonian:
    """H_k by the general recursion."""
    values = (fp.R,) + tuple(protocol_derivs)[:k]
    eng = ShiftEngine(h, [fp.R], fp.vector, fp.chart.pivot, fp.branch_id, k_max)
    derivs = _derivs(values)
    center = OrderShift.from_vector(k, eng.shift(k, derivs)[0], values)
    return DeviationHamiltonian(k, eng.expansion_hessian(derivs, k)[0], center)


def delta_j_gamma(h: ParametricHamiltonian, fp: FixedPoint, shifts, j: int) -> np.ndarray:
    """``Delta^j Gamma`` at the fixed point for shifts ``[S_1, ..., S_j]``."""
    if j < 1:
        raise ValueError("j must be >= 1")
    if len(shifts) < j:
        raise ValueError(f"Delta^{j} Gamma needs shifts of orders 1..{j}")
    vecs = [np.atleast_2d(s.vector if isinstance(s, OrderShift) else np.asarray(s, dtype=float))
            for s in shifts[:j]]
    tensors = {o: h.tensor(fp.chart.z[None, :], np.array([fp.R]), fp.chart.pivot, o)
               for o in range(3, j + 3)}
    return delta_j_gamma_from_tensors(tensors, vecs, j)[0]


# actions

def signed_area(p, q) -> float:
    """Trapezoidal shoelace ``oint p dq`` over the closed polygon through the samples."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pc = np.append(p, p[0])
    qc = np.append(q, q[0])
    return float(0.5 * np.sum((pc[1:] + pc[:-1]) * (qc[1:] - qc[:-1])))


def orbit_diameter(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(np.hypot(np.ptp(p), np.ptp(q)))


def action(p, q, closure_tolerance: float = CLOSURE_TOLERANCE) -> float:
    """``|oint p dq| / 2 pi`` of one sampled cycle.

    Raises
    ------
    OrbitNotClosed
        If the gap between the first and last sample exceeds
        ``closure_tolerance`` times the orbit diameter.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    diameter = orbit_diameter(p, q)
    if diameter == 0.0:
        return 0.0
    gap = float(np.hypot(p[-1] - p[0], q[-1] - q[0]))
    if gap > closure_tolerance * diameter:
        raise OrbitNotClosed(f"closure gap {gap:.3e} exceeds {closure_tolerance} x diameter {diameter:.3e}")
    return abs(signed_area(p, q)) / (2.0 * np.pi)


def orientation(p, q) -> int:
    """+1 for counter-clockwise traversal in the (p, q) plane, -1 clockwise, 0 degenerate."""
    return int(np.sign(signed_area(p, q)))


def quadratic_action(hessian: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Action ``|u^T Hess u / 2| / sqrt(det Hess)`` of the ellipse through ``u`` (batched, one pair)."""
    energy = 0.5 * np.einsum("...i,...ij,...j->...", u, hessian, u)
    det = np.linalg.det(hessian)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.abs(energy) / np.sqrt(np.abs(det))
