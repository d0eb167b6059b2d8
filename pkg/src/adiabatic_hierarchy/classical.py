"""Classical Hamiltonian H0(p, q; R) = <psi|H(R)|psi>, its derivatives, and fixed points.

Phase-space vectors are ``z = (p_1..p_m, q_1..q_m)`` with ``m = n - 1``.  With
``dq/dt = dH/dp`` and ``dp/dt = -dH/dq`` the flow is ``dz/dt = J grad H`` for
``J = [[0, -I], [I, 0]]``, and the linearization matrix is ``Gamma = J Hess``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement, permutations

import numpy as np

from .chart import (PIVOT_THRESHOLD, ChartState, chart_coordinates, wavefunction_from_chart,
                    wrap_angle)
from .errors import BranchJump, DegenerateSpectrum, InvalidHamiltonian
from .numdiff import EPS, check_stable, derivative, mixed_partial, stencil_reach

DEGENERACY_FLOOR = 1e-8
FP_TOLERANCE = 1e-10
CONTINUITY_BOUND = 0.1
HERMITIAN_TOL = 1e-12
ANALYTIC_AGREEMENT = 1e-10
R_STEP = 1e-3


def r_step(R) -> np.ndarray:
    """Absolute step for differencing over the parameter, relative only for |R| > 1e3."""
    return R_STEP * np.maximum(1.0, 1e-3 * np.abs(np.asarray(R, dtype=float)))


def symplectic(m: int) -> np.ndarray:
    """``J = [[0, -I], [I, 0]]`` for m canonical pairs."""
    eye = np.eye(m)
    zero = np.zeros((m, m))
    return np.block([[zero, -eye], [eye, zero]])


class ParametricHamiltonian:
    """Parameter-dependent Hermitian matrix with its classical expectation form.

    Parameters
    ----------
    matrix_at : callable
        ``R -> (n, n)`` Hermitian matrix.  If ``vectorized`` it must accept an
        array of R values and return shape ``R.shape + (n, n)``.
    dim : int
        Hilbert-space dimension n.
    name : str
        Label used in reports.
    vectorized : bool
        Whether ``matrix_at`` broadcasts over arrays of R.
    probe : sequence of float
        Parameter values at which hermiticity is checked on construction.

    Subclasses with closed-form classical expressions set ``has_analytic`` and
    override :meth:`analytic_tensor`; those forms are cross-validated against
    the matrix expectation on construction.
    """

    has_analytic = False

    @property
    def tensor_noise(self) -> float:
        """Typical relative noise of :meth:`tensor` values."""
        return 1e-12 if self.has_analytic else 1e-9

    def __init__(self, matrix_at, dim: int, *, name: str = "generic",
                 vectorized: bool = False, probe=(-1.0, 0.0, 0.37, 1.0)):
        if dim < 2:
            raise InvalidHamiltonian("dimension must be at least 2")
        self._matrix_at = matrix_at
        self.dim = int(dim)
        self.name = name
        self.vectorized = vectorized
        self._check_hermitian(probe)
        if self.has_analytic:
            self._cross_validate(probe)

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim})"

    # matrix side

    def matrix(self, R) -> np.ndarray:
        """Hamiltonian matrices, shape ``R.shape + (n, n)``."""
        R = np.asarray(R, dtype=float)
        n = self.dim
        if self.vectorized:
            M = np.asarray(self._matrix_at(R), dtype=complex)
            return np.broadcast_to(M, R.shape + (n, n))
        flat = [np.asarray(self._matrix_at(float(r)), dtype=complex) for r in R.ravel()]
        return np.array(flat, dtype=complex).reshape(R.shape + (n, n))

    def _check_hermitian(self, probe):
        M = self.matrix(np.asarray(probe, dtype=float))
        if M.shape[-2:] != (self.dim, self.dim):
            raise InvalidHamiltonian(f"matrix_at returned shape {M.shape[-2:]}, expected {(self.dim,) * 2}")
        err = np.max(np.abs(M - np.conj(np.swapaxes(M, -1, -2))))
        if err > HERMITIAN_TOL * max(1.0, float(np.max(np.abs(M)))):
            raise InvalidHamiltonian(f"matrix_at is not Hermitian (deviation {err:.2e})")

    def _cross_validate(self, probe, samples: int = 16):
        rng = np.random.default_rng(20240611)
        m = self.dim - 1
        for R in probe:
            for pivot in range(self.dim):
                w = rng.dirichlet(np.ones(self.dim), size=samples)
                q = np.delete(w, pivot, axis=1)
                keep = 1.0 - q.sum(axis=1) > 0.05
                p = rng.uniform(-np.pi, np.pi, size=(samples, m))
                z = np.concatenate([p, q], axis=1)[keep]
                Rs = np.full(len(z), float(R))
                exact = self.expectation(z, Rs, pivot)
                closed = self.analytic_tensor(z, Rs, pivot, 0) + self.dropped_constant(Rs)
                err = float(np.max(np.abs(exact - closed)))
                if err > ANALYTIC_AGREEMENT:
                    raise InvalidHamiltonian(
                        f"analytic classical form disagrees with <psi|H|psi> by {err:.2e} at R={R}")

    # classical side

    def expectation(self, z, R, pivot, matrix=None) -> np.ndarray:
        """``<psi(z)|H(R)|psi(z)>`` for batches of chart vectors."""
        z = np.asarray(z, dtype=float)
        m = z.shape[-1] // 2
        psi = wavefunction_from_chart(z[..., :m], z[..., m:], pivot)
        M = self.matrix(R) if matrix is None else matrix
        return np.einsum("...i,...ij,...j->...", np.conj(psi), M, psi).real

    def dropped_constant(self, R) -> np.ndarray:
        """Additive constant removed from the analytic classical form."""
        return np.zeros_like(np.asarray(R, dtype=float))

    def analytic_tensor(self, z, R, pivot, order):
        raise NotImplementedError

    def fixed_point_slope(self, R, branch: int, pivot: int):
        """Closed-form ``dz_bar/dR`` if the model provides one, else ``None``."""
        return None

    def energy(self, z, R, pivot) -> np.ndarray:
        """Classical H0 (analytic form if available, without its dropped constant)."""
        if self.has_analytic:
            return self.analytic_tensor(z, R, pivot, 0)
        return self.expectation(z, R, pivot)

    def tensor(self, z, R, pivot, order: int) -> np.ndarray:
        """Symmetric derivative tensor of H0 of the given order, shape ``(..., d, ..., d)``."""
        if self.has_analytic:
            return self.analytic_tensor(z, R, pivot, order)
        return numerical_tensor(self, z, R, pivot, order)

    def generic(self) -> "ParametricHamiltonian":
        """Matrix-only copy that uses finite differences everywhere."""
        return ParametricHamiltonian(self._matrix_at, self.dim, name=f"{self.name}-generic",
                                     vectorized=self.vectorized)


# (stencil accuracy, base step, fraction of the distance to the simplex boundary,
#  Richardson tolerance) per derivative order.  Gradients use the relative step
# eps**(1/3); higher orders need wider steps and higher-accuracy stencils so
# roundoff stays below truncation.
_FD_PLAN = {
    1: (4, EPS ** (1.0 / 3.0), 0.05, 1e-6),
    2: (4, 4.0 * EPS ** (1.0 / 6.0), 0.05, 1e-6),
    3: (6, 0.2, 0.2, 1e-4),
    4: (6, 0.4, 0.2, 1e-4),
}


def _fd_plan(order: int):
    return _FD_PLAN.get(order, (6, 0.4, 0.2, 1e-4))


def _fd_steps(z: np.ndarray, order: int) -> np.ndarray:
    """Per-axis steps for finite differences of H0, kept inside the population simplex."""
    accuracy, rel, kappa, _ = _fd_plan(order)
    m = z.shape[-1] // 2
    steps = np.empty_like(z)
    steps[...] = rel * np.maximum(np.abs(z), 1.0) if order <= 1 else rel
    q = z[..., m:]
    room = np.minimum(q, (1.0 - q.sum(axis=-1))[..., None])
    reach = stencil_reach(order, accuracy) * m
    steps[..., m:] = np.minimum(steps[..., m:], kappa * room / reach)
    return steps


def numerical_tensor(h: ParametricHamiltonian, z, R, pivot, order: int) -> np.ndarray:
    """Derivative tensor of ``<psi|H|psi>`` by Richardson-extrapolated central differences."""
    z = np.asarray(z, dtype=float)
    R = np.broadcast_to(np.asarray(R, dtype=float), z.shape[:-1])
    M = h.matrix(R)
    f = lambda pts: h.expectation(pts, R, pivot, matrix=M)
    if order == 0:
        return f(z)
    accuracy, _, _, rtol = _fd_plan(order)
    d = z.shape[-1]
    steps = _fd_steps(z, order)
    out = np.empty(z.shape[:-1] + (d,) * order)
    for combo in combinations_with_replacement(range(d), order):
        counts = np.bincount(combo, minlength=d)
        val, err, scale = mixed_partial(f, z, counts, steps, accuracy)
        check_stable(val, err, scale, f"order-{order} partial {combo} of H0", rtol)
        for perm in set(permutations(combo)):
            out[(Ellipsis,) + perm] = val
    return out


def gamma_from_hessian(hess: np.ndarray) -> np.ndarray:
    """``Gamma = J Hess`` for batches of Hessians."""
    d = hess.shape[-1]
    return symplectic(d // 2) @ hess


@dataclass(frozen=True)
class GammaMatrix:
    """Linearization matrix ``Gamma = J Hess(H0)`` at a chart point."""

    entries: np.ndarray
    eval_point: ChartState
    R: float

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.entries))

    @property
    def frequency_scale(self) -> float:
        """``|det Gamma|**(1/(2m))``; equals ``sqrt|det Gamma|`` for two levels."""
        m = self.entries.shape[0] // 2
        return float(abs(self.det) ** (1.0 / (2 * m)))

    @property
    def hessian(self) -> np.ndarray:
        m = self.entries.shape[0] // 2
        return -symplectic(m) @ self.entries


@dataclass(frozen=True)
class FixedPoint:
    """Fixed point of the classical flow, i.e. the chart image of an eigenstate."""

    chart: ChartState
    R: float
    branch_id: int
    energy: float
    vector: np.ndarray = field(repr=False)


def classical_hamiltonian(h: ParametricHamiltonian, s: ChartState, R) -> float:
    """H0 at a chart state."""
    return float(h.energy(s.z, float(R), s.pivot))


def gradient(h: ParametricHamiltonian, s: ChartState, R):
    """``(dH0/dp, dH0/dq)`` at a chart state."""
    g = h.tensor(s.z, float(R), s.pivot, 1)
    m = s.p.size
    return g[:m].copy(), g[m:].copy()


def gamma_at(h: ParametricHamiltonian, s: ChartState, R) -> GammaMatrix:
    """Gamma matrix of second partials of H0 at a chart state."""
    hess = h.tensor(s.z, float(R), s.pivot, 2)
    return GammaMatrix(gamma_from_hessian(hess), s, float(R))


def _check_gaps(E: np.ndarray, R):
    if E.shape[-1] > 1:
        gap = np.min(np.diff(E, axis=-1))
        if gap <= DEGENERACY_FLOOR:
            raise DegenerateSpectrum(f"eigenvalue gap {gap:.3e} <= {DEGENERACY_FLOOR} near R={np.ravel(R)[0]!r}")


def _default_pivot(v: np.ndarray, threshold: float) -> int:
    pops = np.abs(v) ** 2
    return 0 if pops[0] > threshold else int(np.argmax(pops))


def find_fixed_points(h: ParametricHamiltonian, R, pivot: int | None = None,
                      threshold: float = PIVOT_THRESHOLD) -> list[FixedPoint]:
    """All fixed points at R, labelled by ascending eigenvalue.

    With ``pivot=None`` each eigenvector is read in pivot 0 when that pivot is
    well populated, else in its most populated component.
    """
    R = float(R)
    E, V = np.linalg.eigh(h.matrix(R))
    _check_gaps(E, R)
    points = []
    for b in range(h.dim):
        v = V[:, b]
        piv = _default_pivot(v, threshold) if pivot is None else int(pivot)
        p, q = chart_coordinates(v, piv, threshold)
        points.append(FixedPoint(ChartState(p, q, piv), R, b, float(E[b]), v))
    return points


def branch_states(h: ParametricHamiltonian, R, reference: np.ndarray):
    """Eigenvectors at each R matched to ``reference`` by maximal overlap.

    Parameters
    ----------
    R : array_like, shape (N,)
    reference : ndarray, shape (N, n) or (n,)

    Returns
    -------
    vectors : ndarray, shape (N, n)
        Phase-aligned with the reference.
    energies : ndarray, shape (N,)
    index : ndarray, shape (N,)
        Ascending-eigenvalue index of the matched branch.
    """
    R = np.atleast_1d(np.asarray(R, dtype=float))
    E, V = np.linalg.eigh(h.matrix(R))
    _check_gaps(E, R)
    ref = np.broadcast_to(reference, (R.size, h.dim))
    ov = np.einsum("ni,nij->nj", np.conj(ref), V)
    idx = np.argmax(np.abs(ov), axis=-1)
    rows = np.arange(R.size)
    best = np.abs(ov[rows, idx])
    if np.any(best < 1.0 / np.sqrt(2.0)):
        raise BranchJump(f"no eigenvector dominates the overlap with the tracked branch (min {best.min():.3f})")
    phase = ov[rows, idx] / best
    vec = V[rows, :, idx] * np.conj(phase)[:, None]
    return vec, E[rows, idx], idx


def track_fixed_point(h: ParametricHamiltonian, fp: FixedPoint, R_new) -> FixedPoint:
    """Continue a fixed point to a new parameter value by maximal overlap."""
    vec, E, _ = branch_states(h, [R_new], fp.vector)
    v = vec[0]
    pivot = fp.chart.pivot
    if np.abs(v[pivot]) ** 2 <= PIVOT_THRESHOLD:
        pivot = _default_pivot(v, PIVOT_THRESHOLD)
    p, q = chart_coordinates(v, pivot, PIVOT_THRESHOLD)
    return FixedPoint(ChartState(p, q, pivot), float(R_new), fp.branch_id, float(E[0]), v)


def branch_chart(h: ParametricHamiltonian, R, reference: np.ndarray, pivot: int,
                 z_ref: np.ndarray | None = None, bound: float = CONTINUITY_BOUND):
    """Chart coordinates of the tracked branch at each R, angles unwrapped near ``z_ref``.

    Raises :class:`BranchJump` when any point lies farther than ``bound`` from
    ``z_ref`` in chart distance.
    """
    vec, _, _ = branch_states(h, R, reference)
    p, q = chart_coordinates(vec, pivot, threshold=0.0)
    z = np.concatenate([p, q], axis=-1)
    if z_ref is not None:
        z_ref = np.broadcast_to(z_ref, z.shape)
        m = p.shape[-1]
        z[..., :m] = z_ref[..., :m] + wrap_angle(z[..., :m] - z_ref[..., :m])
        dist = np.sqrt(np.sum((z - z_ref) ** 2, axis=-1))
        if np.any(dist > bound):
            raise BranchJump(f"branch moved {float(dist.max()):.3e} in chart distance (bound {bound})")
    return z


def zbar_slope(h: ParametricHamiltonian, R, reference: np.ndarray, pivot: int,
               branch: int | None = None, z_ref: np.ndarray | None = None) -> np.ndarray:
    """``dz_bar/dR`` for the tracked branch, shape ``(N, d)``.

    Uses the model's closed form when available, else differences the branch
    chart over ``R +- h_R`` with continuity enforced.
    """
    R = np.atleast_1d(np.asarray(R, dtype=float))
    if branch is not None:
        slope = h.fixed_point_slope(R, branch, pivot)
        if slope is not None:
            return np.asarray(slope, dtype=float)
    ref = np.broadcast_to(reference, (R.size, h.dim))
    if z_ref is None:
        z_ref = branch_chart(h, R, ref, pivot)
    f = lambda Rs: branch_chart(h, Rs, ref, pivot, z_ref)
    val, err, scale = derivative(f, R, r_step(R))
    return check_stable(val, err, scale, "fixed-point slope")


def fixed_point_R_derivative(h: ParametricHamiltonian, fp: FixedPoint, R=None):
    """``(dp_bar/dR, dq_bar/dR)`` of a tracked fixed point."""
    R = fp.R if R is None else float(R)
    slope = zbar_slope(h, [R], fp.vector, fp.chart.pivot, fp.branch_id, fp.chart.z[None, :])[0]
    m = fp.chart.p.size
    return slope[:m], slope[m:]
