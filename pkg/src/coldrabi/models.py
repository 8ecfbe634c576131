"""Fock (x) spin Hamiltonians of the Rabi family and their position-space images.

All builders share one convention: for spin F the linear coupling is written
``2 g (a + a^dag) F_x`` and the splitting ``omega0 F_z``, so that at F = 1/2

    H = omega a^dag a + g (a + a^dag) sigma_x + (omega0 / 2) sigma_z

which is the Rabi Hamiltonian in units of hbar. Matrices carry the same
rate units as the :class:`~coldrabi.units.ModelParams` they were built from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, CoverageError, ValidationError
from .operators import (
    BasisSpec,
    OperatorMatrix,
    hermitian_eigensolve,
    quadrature_squared,
    spin_operators,
)
from .units import ModelParams

DEFAULT_CUTOFF_CAP = 4096


def _pieces(p: ModelParams):
    basis = BasisSpec(p.fock_cutoff, p.F)
    n = np.arange(p.fock_cutoff, dtype=float)
    x = np.diag(np.sqrt(n[1:]), 1)
    x = x + x.T
    Fx, _, Fz = (op.matrix for op in spin_operators(p.F))
    eye_f = np.eye(p.fock_cutoff)
    eye_s = np.eye(basis.spin_dim)
    return basis, n, x, Fx, Fz, eye_f, eye_s


def _qrm_matrix(p: ModelParams):
    basis, n, x, Fx, Fz, eye_f, eye_s = _pieces(p)
    H = (
        p.omega * np.kron(np.diag(n), eye_s)
        + p.omega0 * np.kron(eye_f, Fz)
        + 2.0 * p.g * np.kron(x, Fx)
    )
    return basis, H, Fx, eye_f


def build_qrm(p: ModelParams) -> OperatorMatrix:
    """Rabi Hamiltonian ``omega a^dag a + omega0 F_z + 2 g (a + a^dag) F_x``.

    ``g_eps`` and ``g2`` are ignored; see :func:`build_model` for the full form.
    """
    basis, H, _, _ = _qrm_matrix(p)
    return OperatorMatrix(H, basis=basis)


def build_driven_qrm(p: ModelParams) -> OperatorMatrix:
    """Rabi Hamiltonian plus the parity-breaking drive ``g_eps F_x``."""
    basis, H, Fx, eye_f = _qrm_matrix(p)
    if p.g_eps:
        H = H + p.g_eps * np.kron(eye_f, Fx)
    return OperatorMatrix(H, basis=basis)


def collapse_threshold(p: ModelParams) -> float:
    """Largest ``|g2|`` for which every F_x branch stays bounded below."""
    return p.omega / (4.0 * p.F)


def build_quadratic_qrm(p: ModelParams) -> OperatorMatrix:
    """Rabi Hamiltonian plus ``g2 (a + a^dag)^2 F_x``.

    Past the collapse threshold ``|g2| >= omega / (4F)`` the softest branch
    is unbounded below and the truncated spectrum depends on the cutoff; the
    result is then flagged with ``flags["beyond_collapse"] = True`` rather
    than rejected.
    """
    basis, H, Fx, _ = _qrm_matrix(p)
    if p.g2:
        H = H + p.g2 * np.kron(quadrature_squared(p.fock_cutoff), Fx)
    flags = {"beyond_collapse": abs(p.g2) >= collapse_threshold(p)}
    return OperatorMatrix(H, basis=basis, flags=flags)


def build_model(p: ModelParams) -> OperatorMatrix:
    """Every term at once: linear, drive and quadratic coupling."""
    basis, H, Fx, eye_f = _qrm_matrix(p)
    if p.g_eps:
        H = H + p.g_eps * np.kron(eye_f, Fx)
    if p.g2:
        H = H + p.g2 * np.kron(quadrature_squared(p.fock_cutoff), Fx)
    flags = {"beyond_collapse": abs(p.g2) >= collapse_threshold(p)}
    return OperatorMatrix(H, basis=basis, flags=flags)


def build_dicke(N, omega, omega0, g, fock_cutoff) -> OperatorMatrix:
    """Dicke Hamiltonian for N two-level systems in the symmetric manifold.

    Uses the collective spin F = N/2:
    ``omega a^dag a + omega0 F_z + (2 g / sqrt(N)) (a + a^dag) F_x``.
    """
    if int(N) != N or N < 1:
        raise ValidationError(f"number of spins must be a positive integer, got {N}")
    N = int(N)
    p = ModelParams(omega=omega, g=g / math.sqrt(N), omega0=omega0,
                    F=N / 2, fock_cutoff=fock_cutoff)
    op = build_qrm(p)
    op.flags["dicke_N"] = N
    return op


def solve_model(p: ModelParams, n_states=None):
    """Lowest ``n_states`` eigenpairs of :func:`build_model` at the given cutoff."""
    return hermitian_eigensolve(build_model(p), k=n_states)


def check_cutoff_convergence(p: ModelParams, n_states, tol=1e-10, cap=DEFAULT_CUTOFF_CAP) -> int:
    """Smallest cutoff on a doubling schedule at which the spectrum has settled.

    Starting from ``ceil(n_states / (2F+1)) + 1`` the cutoff is doubled until
    the lowest ``n_states`` energies at cutoffs ``c`` and ``2c`` differ by
    less than ``tol`` relative (floored at ``omega``); ``c`` is returned.
    Results are memoized per parameter set, independent of the cutoff
    stored on ``p``.
    """
    if int(n_states) != n_states or n_states < 1:
        raise ValidationError(f"n_states must be a positive integer, got {n_states}")
    base = replace(p, fock_cutoff=2)
    return _converged_cutoff(base, int(n_states), float(tol), int(cap))


@lru_cache(maxsize=256)
def _converged_cutoff(p, n_states, tol, cap):
    spin_dim = p.spin_dim
    cutoff = max(2, math.ceil(n_states / spin_dim) + 1)
    prev = _lowest_energies(replace(p, fock_cutoff=cutoff), n_states)
    while True:
        nxt_cutoff = 2 * cutoff
        if nxt_cutoff > cap:
            raise ConvergenceError(
                f"spectrum not converged to {tol:g} below the cutoff cap {cap}",
                iterations=int(math.log2(cap)),
            )
        nxt = _lowest_energies(replace(p, fock_cutoff=nxt_cutoff), n_states)
        scale = np.maximum(np.abs(nxt), p.omega)
        if np.all(np.abs(nxt - prev) < tol * scale):
            return cutoff
        cutoff, prev = nxt_cutoff, nxt


def _lowest_energies(p, n_states):
    H = build_model(p).matrix
    return scipy.linalg.eigh(H.real if not np.any(H.imag) else H, eigvals_only=True,
                             subset_by_index=(0, n_states - 1))


def converged_params(p: ModelParams, n_states, tol=1e-10, cap=DEFAULT_CUTOFF_CAP) -> ModelParams:
    return replace(p, fock_cutoff=check_cutoff_convergence(p, n_states, tol, cap))


def hermite_functions(n_max, u) -> np.ndarray:
    """Normalized Hermite functions ``phi_n(u)``, n = 0..n_max, as rows.

    ``phi_n(u) = (2^n n! sqrt(pi))^(-1/2) H_n(u) exp(-u^2/2)``. Evaluated by
    the three-term recurrence with a per-point running scale so neither the
    polynomial growth nor the Gaussian tail under- or overflows.
    """
    u = np.asarray(u, dtype=float)
    out = np.zeros((n_max + 1, u.size))
    log_scale = -0.5 * u**2 - 0.25 * math.log(math.pi)
    prev = np.zeros_like(u)
    cur = np.ones_like(u)
    big = 1e150
    for n in range(n_max + 1):
        if n > 0:
            nxt = math.sqrt(2.0 / n) * u * cur - math.sqrt((n - 1) / n) * prev
            prev, cur = cur, nxt
        mask = np.abs(cur) > big
        if np.any(mask):
            cur[mask] /= big
            prev[mask] /= big
            log_scale[mask] += math.log(big)
        with np.errstate(under="ignore", divide="ignore"):
            out[n] = np.sign(cur) * np.exp(np.minimum(np.log(np.abs(cur)) + log_scale, 700.0))
    return out


@dataclass
class PositionWavefunction:
    """A spinor wavefunction sampled on a uniform grid.

    ``amplitudes[i, s]`` is the amplitude at ``grid[i]`` for spin index
    ``s`` (``s = 0`` is ``m_F = -F``); normalization is ``sum |psi|^2 dx = 1``.
    """

    grid: np.ndarray
    amplitudes: np.ndarray

    @property
    def dx(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.dx)

    def inner(self, other: "PositionWavefunction") -> complex:
        if self.amplitudes.shape != other.amplitudes.shape or not np.allclose(
            self.grid, other.grid, rtol=0, atol=1e-12 * max(1.0, float(np.max(np.abs(self.grid))))
        ):
            raise ValidationError("wavefunctions live on different grids or spin spaces")
        return complex(np.vdot(self.amplitudes, other.amplitudes) * self.dx)


def check_uniform_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValidationError("grid must be a 1-D array with at least two points")
    steps = np.diff(grid)
    if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps.mean():
        raise ValidationError("grid must be strictly increasing and uniform")
    return grid


def required_extent(n_occupied, x0) -> float:
    """Half-width around the center needed to hold Fock states up to ``n_occupied``.

    The classical turning point ``sqrt(2 (2n + 1)) x0`` plus six oscillator
    lengths of Gaussian tail.
    """
    return math.sqrt(2.0) * x0 * (math.sqrt(2 * n_occupied + 1) + 6.0)


def synthesize_position_states(p: ModelParams, spectrum, x_center, x0, grid, indices=None,
                               weight_floor=1e-14):
    """Map Fock-space eigenvectors onto harmonic-oscillator eigenfunctions.

    ``psi(x, m) = sum_n c[n, m] phi_n((x - x_center) / (sqrt(2) x0))``, with
    ``x0 = sqrt(hbar / (2 M omega))`` the same length the coupling is built
    on. Raises :class:`CoverageError` if the grid cannot hold the occupied
    Fock states.
    """
    grid = check_uniform_grid(grid)
    if not x0 > 0:
        raise ValidationError(f"x0 must be positive, got {x0}")
    spin_dim = p.spin_dim
    states = spectrum.states
    if states.shape[0] != p.fock_cutoff * spin_dim:
        raise ValidationError("spectrum does not match the model basis")
    if indices is None:
        indices = range(states.shape[1])
    coeffs = [states[:, i].reshape(p.fock_cutoff, spin_dim) for i in indices]

    n_occ = 0
    for c in coeffs:
        weight = np.sum(np.abs(c) ** 2, axis=1)
        tail = np.cumsum(weight[::-1])[::-1]
        above = np.nonzero(tail > weight_floor)[0]
        n_occ = max(n_occ, int(above[-1]) if above.size else 0)
    need = required_extent(n_occ, x0)
    have = min(x_center - grid[0], grid[-1] - x_center)
    if have < need:
        raise CoverageError(
            f"grid half-width {have:.4g} m is below the required {need:.4g} m "
            f"for Fock states up to n={n_occ}",
            required_extent=need,
        )

    u = (grid - x_center) / (math.sqrt(2.0) * x0)
    phi = hermite_functions(p.fock_cutoff - 1, u) / math.sqrt(math.sqrt(2.0) * x0)
    return [PositionWavefunction(grid, phi.T @ c) for c in coeffs]
