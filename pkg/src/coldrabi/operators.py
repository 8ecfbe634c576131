"""Operator construction and the Hermitian eigensolver.

Fock (x) spin spaces use fock-major ordering, ``index = n * (2F+1) + s``,
where ``s = 0`` is ``m_F = -F``. Dense matrices are the default carrier;
lattice Hamiltonians are sparse and are solved for their lowest states with
shift-invert Lanczos.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, ValidationError
from .units import parse_spin

HERMITIAN_RTOL = 1e-12
ORTHO_TOL = 1e-10
RESIDUAL_RTOL = 1e-10


@dataclass(frozen=True)
class BasisSpec:
    """Truncated Fock space of ``fock_cutoff`` states times a spin-F multiplet."""

    fock_cutoff: int
    F: float

    def __post_init__(self):
        if int(self.fock_cutoff) != self.fock_cutoff or self.fock_cutoff < 2:
            raise ValidationError(f"fock_cutoff must be an integer >= 2, got {self.fock_cutoff}")
        object.__setattr__(self, "fock_cutoff", int(self.fock_cutoff))
        object.__setattr__(self, "F", parse_spin(self.F))

    @property
    def spin_dim(self) -> int:
        return int(round(2 * self.F)) + 1

    @property
    def dim(self) -> int:
        return self.fock_cutoff * self.spin_dim

    @property
    def tag(self) -> str:
        return f"fock{self.fock_cutoff}xF{self.F:g}"

    def index(self, n, spin_index) -> int:
        return n * self.spin_dim + spin_index


@dataclass
class OperatorMatrix:
    """A square operator together with the basis it is written in.

    ``matrix`` is a numpy array or a scipy sparse matrix. ``flags`` carries
    diagnostics attached by builders (for instance a spectral-collapse
    warning).
    """

    matrix: object
    basis: object = None
    hermitian: bool = True
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = self.matrix.shape
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ValidationError(f"operator must be square, got shape {shape}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def max_abs(self) -> float:
        if self.is_sparse:
            return float(abs(self.matrix).max()) if self.matrix.nnz else 0.0
        return float(np.max(np.abs(self.matrix))) if self.matrix.size else 0.0

    def hermiticity_error(self) -> float:
        """``max|H - H^dag|`` relative to ``max|H|``."""
        scale = self.max_abs()
        if scale == 0:
            return 0.0
        diff = self.matrix - self.matrix.conj().T
        if sp.issparse(diff):
            err = float(abs(diff).max()) if diff.nnz else 0.0
        else:
            err = float(np.max(np.abs(diff)))
        return err / scale

    def check_hermitian(self):
        err = self.hermiticity_error()
        if err > HERMITIAN_RTOL:
            raise ValidationError(f"operator is not Hermitian (relative asymmetry {err:.3e})")


def fock_ladder(N_f):
    """Annihilation and creation operators on ``N_f`` Fock states."""
    if int(N_f) != N_f or N_f < 2:
        raise ValidationError(f"Fock cutoff must be an integer >= 2, got {N_f}")
    N_f = int(N_f)
    a = np.diag(np.sqrt(np.arange(1, N_f, dtype=float)), k=1)
    tag = f"fock{N_f}"
    return (
        OperatorMatrix(a, basis=tag, hermitian=False),
        OperatorMatrix(a.T.copy(), basis=tag, hermitian=False),
    )


def quadrature_squared(N_f) -> np.ndarray:
    """Exact matrix elements of ``(a + a^dag)^2`` in the truncated space.

    Squaring the truncated ``a + a^dag`` would corrupt the last diagonal
    entry; this uses ``a^2 + a^dag^2 + 2 a^dag a + 1`` instead.
    """
    n = np.arange(N_f, dtype=float)
    two = np.sqrt(n[2:] * n[1:-1])
    return np.diag(2 * n + 1) + np.diag(two, 2) + np.diag(two, -2)


def spin_operators(F):
    """Dimensionless angular-momentum matrices ``(Fx, Fy, Fz)`` for spin ``F``.

    Rows and columns run over ``m = -F .. F``.
    """
    F = parse_spin(F)
    m = np.arange(-F, F + 1.0)
    # <m+1|F+|m>
    up = np.sqrt(F * (F + 1) - m[:-1] * (m[:-1] + 1))
    Fp = np.diag(up, k=-1)
    Fm = Fp.T
    Fx = (Fp + Fm) / 2
    Fy = (Fp - Fm) / 2j
    Fz = np.diag(m)
    tag = f"F{F:g}"
    return (
        OperatorMatrix(Fx, basis=tag),
        OperatorMatrix(Fy, basis=tag),
        OperatorMatrix(Fz.astype(float), basis=tag),
    )


def embed(fock_op, spin_op):
    """Kronecker product in fock-major order."""
    fock = fock_op.matrix if isinstance(fock_op, OperatorMatrix) else fock_op
    spin = spin_op.matrix if isinstance(spin_op, OperatorMatrix) else spin_op
    return np.kron(fock, spin)


def parity_operator(basis: BasisSpec) -> OperatorMatrix:
    """``exp(i pi a^dag a) (x) exp(i pi (Fz + F))`` as a diagonal +-1 matrix."""
    n = np.arange(basis.fock_cutoff)
    s = np.arange(basis.spin_dim)
    signs = (-1.0) ** np.add.outer(n, s).ravel()
    return OperatorMatrix(np.diag(signs), basis=basis)


@dataclass
class Spectrum:
    """Eigenpairs in ascending order with per-pair residuals ``||Hv - Ev||``."""

    energies: np.ndarray
    states: np.ndarray
    residuals: np.ndarray
    norm_estimate: float
    basis: object = None

    def __len__(self):
        return len(self.energies)

    def orthonormality_error(self) -> float:
        V = self.states
        G = V.conj().T @ V
        return float(np.max(np.abs(G - np.eye(G.shape[0])))) if G.size else 0.0

    def check(self):
        """Raise ``ConvergenceError`` if the accuracy contract is violated."""
        if np.any(np.diff(self.energies) < 0):
            raise ConvergenceError("eigenvalues are not sorted")
        ortho = self.orthonormality_error()
        if ortho > ORTHO_TOL:
            raise ConvergenceError(f"eigenvectors not orthonormal (error {ortho:.3e})")
        bound = RESIDUAL_RTOL * max(self.norm_estimate, np.finfo(float).tiny)
        worst = float(np.max(self.residuals)) if len(self.residuals) else 0.0
        if worst > bound:
            raise ConvergenceError(f"eigen-residual {worst:.3e} exceeds bound {bound:.3e}")

    def clusters(self, rel_tol=1e-9):
        """Index ranges of (near-)degenerate eigenvalues.

        Consecutive levels closer than ``rel_tol`` times the spread of the
        computed energies belong to one cluster.
        """
        return degenerate_clusters(self.energies, rel_tol)


def degenerate_clusters(energies, rel_tol):
    energies = np.asarray(energies)
    if len(energies) == 0:
        return []
    spread = float(energies[-1] - energies[0])
    if spread == 0:
        return [range(len(energies))]
    tol = rel_tol * spread
    groups, start = [], 0
    for i in range(1, len(energies)):
        if energies[i] - energies[i - 1] >= tol:
            groups.append(range(start, i))
            start = i
    groups.append(range(start, len(energies)))
    return groups


def fix_gauge(states: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real and positive."""
    states = np.array(states, copy=True)
    idx = np.argmax(np.abs(states), axis=0)
    pivots = states[idx, np.arange(states.shape[1])]
    phases = pivots / np.abs(pivots)
    states /= phases[np.newaxis, :]
    if np.iscomplexobj(states):
        states[idx, np.arange(states.shape[1])] = np.abs(pivots)
    return states


def _residuals(matrix, energies, states):
    HV = matrix @ states
    return np.linalg.norm(HV - states * energies[np.newaxis, :], axis=0)


def _reorthonormalize_clusters(energies, states, rel_tol=1e-9):
    for group in degenerate_clusters(energies, rel_tol):
        if len(group) > 1:
            sl = slice(group.start, group.stop)
            q, _ = np.linalg.qr(states[:, sl])
            states[:, sl] = q
    return states


def hermitian_eigensolve(H, k=None, lower_bound=None, check=True, maxiter=None) -> Spectrum:
    """Lowest ``k`` eigenpairs (all when ``k`` is None) of a Hermitian operator.

    Dense operators go through LAPACK. Sparse operators with ``k`` given use
    shift-invert Lanczos around ``lower_bound``, which should lie at or
    below the ground energy; when omitted a Gershgorin bound is used. The
    returned spectrum is gauge-fixed and, with ``check``, verified against
    the residual and orthonormality bounds.
    """
    if not isinstance(H, OperatorMatrix):
        H = OperatorMatrix(H)
    H.check_hermitian()
    dim = H.dim
    if k is not None:
        if int(k) != k or not 1 <= k <= dim:
            raise ValidationError(f"k must lie in 1..{dim}, got {k}")
        k = int(k)

    matrix = H.matrix
    if H.is_sparse and (k is None or k >= dim - 1 or dim <= 64):
        matrix = H.toarray()

    if sp.issparse(matrix):
        energies, states, norm_est = _sparse_lowest(matrix, k, lower_bound, maxiter)
    else:
        matrix = np.asarray(matrix)
        if not np.iscomplexobj(matrix) or not np.any(matrix.imag):
            matrix = matrix.real
        subset = None if k is None or k == dim else (0, k - 1)
        try:
            energies, states = scipy.linalg.eigh(matrix, subset_by_index=subset)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"dense eigensolver failed: {exc}") from exc
        if subset is None:
            norm_est = float(np.max(np.abs(energies)))
        else:
            norm_est = float(np.max(np.sum(np.abs(matrix), axis=1)))

    states = fix_gauge(states)
    spec = Spectrum(
        energies=np.asarray(energies, dtype=float),
        states=states,
        residuals=_residuals(H.matrix, energies, states),
        norm_estimate=norm_est,
        basis=H.basis,
    )
    if check:
        spec.check()
    return spec


def _sparse_lowest(matrix, k, lower_bound, maxiter):
    matrix = matrix.tocsc()
    absm = abs(matrix)
    row_abs = np.asarray(absm.sum(axis=1)).ravel()
    norm_est = float(row_abs.max()) if row_abs.size else 0.0
    if lower_bound is None:
        diag = matrix.diagonal().real
        lower_bound = float(np.min(diag + np.abs(diag) - row_abs))
    # a slightly lowered shift keeps (H - sigma) positive definite
    sigma = lower_bound - 1e-8 * max(norm_est, 1.0)
    n = matrix.shape[0]
    n_extra = min(n - 1, k + max(10, k // 2))
    v0 = np.random.default_rng(12345).standard_normal(n)
    if np.iscomplexobj(matrix.data):
        v0 = v0.astype(complex)
    try:
        energies, states = spla.eigsh(
            matrix, k=n_extra, sigma=sigma, which="LM", v0=v0,
            ncv=min(n, max(2 * n_extra + 1, 20)), maxiter=maxiter, tol=0,
        )
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(
            f"Lanczos did not converge ({len(exc.eigenvalues)} of {n_extra} pairs)",
            iterations=maxiter,
        ) from exc
    order = np.argsort(energies)[:k]
    energies = energies[order]
    states = _reorthonormalize_clusters(energies, states[:, order])
    return energies, states, norm_est


# Binary dump: 32-byte header (uint64 dim, 24-byte ASCII basis tag) followed
# by the matrix in column-major order as (real, imag) float64 pairs.
_HEADER = struct.Struct("<Q24s")


def dump_matrix(op: OperatorMatrix, path):
    tag = op.basis.tag if hasattr(op.basis, "tag") else str(op.basis or "")
    dense = np.asarray(op.toarray(), dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(op.dim, tag.encode("ascii")[:24]))
        fh.write(np.asfortranarray(dense).tobytes(order="F"))


def load_matrix(path):
    """Return ``(matrix, basis_tag)`` from a file written by :func:`dump_matrix`."""
    with open(path, "rb") as fh:
        dim, tag = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype=np.complex128)
    if data.size != dim * dim:
        raise ValidationError(f"matrix dump truncated: expected {dim * dim} entries, got {data.size}")
    return data.reshape((dim, dim), order="F").copy(), tag.rstrip(b"\0").decode("ascii")


def von_neumann_entropy(rho) -> float:
    w = np.linalg.eigvalsh(rho)
    w = w[w > 1e-15]
    return max(0.0, float(-np.sum(w * np.log(w))))
