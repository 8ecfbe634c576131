"""Independent reference computations shared by several test modules."""

import math
from functools import reduce

import numpy as np

from coldrabi.models import build_model
from coldrabi.operators import spin_operators


def quadratic_branches(p):
    """Energies of the F_x = -1/2 and +1/2 blocks of a model with omega0 = 0."""
    H = build_model(p).toarray()
    _, V = np.linalg.eigh(spin_operators(p.F)[0].matrix)
    U = np.kron(np.eye(p.fock_cutoff), V)
    Hr = U.conj().T @ H @ U
    out = []
    for s in range(p.spin_dim):
        idx = np.arange(s, p.dim, p.spin_dim)
        assert np.max(np.abs(np.delete(Hr[idx], idx, axis=1))) < 1e-12
        out.append(np.linalg.eigvalsh(Hr[np.ix_(idx, idx)]))
    return out


def qubit_dicke_spectrum(N, omega, omega0, g, cutoff, k):
    """Brute-force oracle: N explicit qubits, projected on maximal total spin."""
    sx = np.array([[0.0, 1.0], [1.0, 0.0]])
    sy = np.array([[0.0, -1j], [1j, 0.0]])
    sz = np.diag([1.0, -1.0])
    eye2 = np.eye(2)

    def site(op, i):
        return reduce(np.kron, [op if j == i else eye2 for j in range(N)])

    Sx = sum(site(sx, i) for i in range(N)) / 2
    Sy = sum(site(sy, i) for i in range(N)) / 2
    Sz = sum(site(sz, i) for i in range(N)) / 2
    S2 = Sx @ Sx + Sy @ Sy + Sz @ Sz
    w, v = np.linalg.eigh(S2)
    sym = v[:, np.isclose(w, N / 2 * (N / 2 + 1))]
    assert sym.shape[1] == N + 1

    n = np.arange(cutoff)
    a = np.diag(np.sqrt(n[1:]), 1)
    H = (omega * np.kron(np.diag(n), np.eye(2**N))
         + omega0 * np.kron(np.eye(cutoff), Sz)
         + (g / math.sqrt(N)) * np.kron(a + a.T, 2 * Sx))
    P = np.kron(np.eye(cutoff), sym)
    return np.linalg.eigvalsh(P.conj().T @ H @ P)[:k]




def bogoliubov_levels(omega, g2, n_levels, sign):
    """``Omega (n + 1/2) - omega / 2`` with ``Omega = sqrt(omega (omega + sign 2 g2))``."""
    big = math.sqrt(omega * (omega + sign * 2 * g2))
    return big * (np.arange(n_levels) + 0.5) - omega / 2
