"""Unitary evolution under piecewise-constant Hamiltonians.

Each constant segment is propagated exactly through its full
eigendecomposition, ``psi(t) = V exp(-i E t) V^dag psi0``, so there is no
step size to tune. Segments share one basis: either Fock (x) spin for the
model Hamiltonians or grid (x) spin for lattice sites.

Rates follow the Hamiltonian: model matrices are in rad/s (hbar = 1), and
lattice matrices carry ``flags["energy_unit"]`` in J, converted with hbar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, RabiError, ValidationError
from .lattice import Grid, LatticeBasis, LatticeConfig, build_lattice_hamiltonian, extract_effective_params
from .models import build_model, hermite_functions
from .operators import BasisSpec, OperatorMatrix, parity_operator, von_neumann_entropy
from .units import HBAR, ModelParams

NORM_TOL = 1e-9
DEFAULT_RAMP_STEPS = 200
DEFAULT_LATTICE_POINTS = 1024
DEFAULT_READOUT_LEVELS = 40


@dataclass(frozen=True)
class InitialState:
    """How the first state of a protocol is prepared.

    ``kind`` is one of

    * ``"fock"``: ``|n> (x) |m>`` with ``m`` the m_F value;
    * ``"coherent"``: ``|alpha> (x) |m>``;
    * ``"ground"``: lowest eigenvector of segment ``segment``'s Hamiltonian.

    For lattice protocols the motional states are Hermite functions of the
    effective oscillator of segment 0, centered on the site.
    """

    kind: str = "ground"
    n: int = 0
    m: float | None = None
    alpha: complex = 0.0
    segment: int = 0

    def __post_init__(self):
        if self.kind not in ("fock", "coherent", "ground"):
            raise ValidationError(f"unknown initial state kind {self.kind!r}")
        if int(self.n) != self.n or self.n < 0:
            raise ValidationError(f"Fock label must be a non-negative integer, got {self.n}")
        if self.kind in ("fock", "coherent") and self.m is None:
            raise ValidationError(f"initial state {self.kind!r} needs the spin projection m")

    def to_dict(self) -> dict:
        alpha = complex(self.alpha)
        return {"kind": self.kind, "n": int(self.n), "m": self.m,
                "alpha": [alpha.real, alpha.imag], "segment": self.segment}


@dataclass(frozen=True)
class Segment:
    duration: float
    hamiltonian: ModelParams | LatticeConfig

    def __post_init__(self):
        d = float(self.duration)
        if not (math.isfinite(d) and d >= 0):
            raise ValidationError(f"segment duration must be finite and >= 0, got {self.duration}")
        if not isinstance(self.hamiltonian, (ModelParams, LatticeConfig)):
            raise ValidationError("segment Hamiltonian must be ModelParams or LatticeConfig")
        object.__setattr__(self, "duration", d)


@dataclass(frozen=True)
class QuenchProtocol:
    """Ordered constant segments and an initial state.

    ``n_points`` and ``fd_order`` set the grid for lattice segments;
    ``readout_levels`` the number of effective-oscillator Fock levels
    reported for them.
    """

    segments: tuple
    initial_state: InitialState = InitialState()
    n_points: int = DEFAULT_LATTICE_POINTS
    fd_order: int = 2
    readout_levels: int = DEFAULT_READOUT_LEVELS

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValidationError("a protocol needs at least one segment")
        object.__setattr__(self, "segments", segs)
        if not 0 <= self.initial_state.segment < len(segs):
            raise ValidationError(f"initial state refers to missing segment {self.initial_state.segment}")

    @property
    def total_time(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def boundaries(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])


@dataclass
class EvolutionResult:
    """Observables sampled along a trajectory.

    ``populations[t, s]`` is the occupation of spin index ``s`` (m_F =
    ``spin_values[s]``), ``motional_dist[t, n]`` the Fock occupation.
    """

    times: np.ndarray
    populations: np.ndarray
    motional_dist: np.ndarray
    fidelity_t: np.ndarray
    parity_t: np.ndarray
    energy_t: np.ndarray
    norm_t: np.ndarray
    spin_values: np.ndarray
    final_state: np.ndarray
    extras: dict = field(default_factory=dict)

    def columns(self):
        """``(names, table)`` with one row per sample, in a fixed column order."""
        names = ["time", "norm", "fidelity", "parity", "energy"]
        names += [f"pop_m{_label(m)}" for m in self.spin_values]
        names += [f"fock_{n}" for n in range(self.motional_dist.shape[1])]
        table = np.column_stack([
            self.times, self.norm_t, self.fidelity_t, self.parity_t, self.energy_t,
            self.populations, self.motional_dist,
        ])
        return names, table

    def summary(self) -> dict:
        out = {"n_samples": int(self.times.size),
               "t_final": float(self.times[-1]) if self.times.size else 0.0,
               "max_norm_drift": float(np.max(np.abs(self.norm_t - 1.0))) if self.times.size else 0.0}
        out.update(self.extras)
        return out


def _label(m) -> str:
    frac = Fraction(m).limit_denominator(2)
    return f"{'+' if frac > 0 else ''}{frac}"


class _Frame:
    """A basis together with the observables evaluated in it."""

    def __init__(self, basis, spin_dim, motional, readout, parity):
        self.basis = basis
        self.spin_dim = spin_dim
        self.motional = motional
        self.readout = readout  # (levels, motional) projector rows, or None for Fock
        self.parity = parity  # callable psi -> <Pi>

    @property
    def dim(self):
        return self.motional * self.spin_dim

    def spin_values(self):
        F = (self.spin_dim - 1) / 2
        return np.arange(self.spin_dim) - F

    def observe(self, psi):
        """psi has shape (dim, n_samples)."""
        block = psi.reshape(self.motional, self.spin_dim, -1)
        populations = np.sum(np.abs(block) ** 2, axis=0).T
        if self.readout is None:
            motional = np.sum(np.abs(block) ** 2, axis=1).T
        else:
            coeff = np.einsum("nx,xst->nst", self.readout, block)
            motional = np.sum(np.abs(coeff) ** 2, axis=1).T
        return populations, motional, self.parity(block)


def _fock_frame(basis: BasisSpec):
    signs = np.diag(parity_operator(basis).matrix).reshape(basis.fock_cutoff, basis.spin_dim)

    def parity(block):
        return np.einsum("ns,nst->t", signs, np.abs(block) ** 2)

    return _Frame(basis, basis.spin_dim, basis.fock_cutoff, None, parity)


def _oscillator_rows(grid: Grid, x0, levels):
    """Discrete Hermite functions of length ``x0`` on the grid, rows orthonormal."""
    u = (grid.x - grid.center) / (math.sqrt(2.0) * x0)
    return hermite_functions(levels - 1, u) * math.sqrt(grid.spacing / (math.sqrt(2.0) * x0))


def _lattice_frame(basis: LatticeBasis, x0, levels):
    n = basis.grid.n_points
    spin_sign = (-1.0) ** np.arange(basis.spin_dim)

    def parity(block):
        mirrored = block[::-1] * spin_sign[None, :, None]
        return np.real(np.einsum("xst,xst->t", block.conj(), mirrored))

    return _Frame(basis, basis.spin_dim, n, _oscillator_rows(basis.grid, x0, levels), parity)


def _rate_scale(op: OperatorMatrix) -> float:
    unit = op.flags.get("energy_unit") if op.flags else None
    return 1.0 if unit is None else unit / HBAR


def _frame_for(op: OperatorMatrix, x0=None, levels=DEFAULT_READOUT_LEVELS):
    if isinstance(op.basis, BasisSpec):
        return _fock_frame(op.basis)
    if isinstance(op.basis, LatticeBasis):
        if x0 is None:
            raise ValidationError("lattice evolution needs the oscillator length for the Fock read-out")
        return _lattice_frame(op.basis, x0, levels)
    raise ValidationError("operator has no recognized basis")


@dataclass
class _Propagator:
    energies: np.ndarray  # rad/s
    vectors: np.ndarray
    matrix: np.ndarray

    @classmethod
    def from_operator(cls, op: OperatorMatrix):
        op.check_hermitian()
        H = op.toarray()
        if not np.any(H.imag):
            H = H.real
        E, V = scipy.linalg.eigh(H)
        return cls(E * _rate_scale(op), V, H)

    def coefficients(self, psi):
        return self.vectors.conj().T @ psi

    def apply(self, coeff, dt):
        dt = np.atleast_1d(np.asarray(dt, dtype=float))
        phases = np.exp(-1j * np.outer(self.energies, dt))
        return self.vectors @ (phases * coeff[:, None])

    def energy(self, coeff):
        return float(np.sum(self.energies * np.abs(coeff) ** 2))


def _check_normalized(psi):
    norm = float(np.linalg.norm(psi))
    if abs(norm - 1.0) > NORM_TOL:
        raise ValidationError(f"initial state is not normalized (norm {norm:.12g})")


class _Recorder:
    def __init__(self, frame, psi0):
        self.frame = frame
        self.psi0 = psi0
        self.rows = []

    def add(self, times, psi, energies):
        pops, motional, parity = self.frame.observe(psi)
        norms = np.linalg.norm(psi, axis=0)
        drift = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
        if drift > NORM_TOL:
            raise ConvergenceError(f"norm drifted by {drift:.3e} during propagation")
        fidelity = np.clip(np.abs(self.psi0.conj() @ psi) ** 2, 0.0, 1.0)
        self.rows.append((np.asarray(times, float), pops, motional, fidelity, parity,
                          np.broadcast_to(energies, np.shape(times)).astype(float), norms))

    def result(self, final_state, extras=None):
        if self.rows:
            cols = [np.concatenate([r[i] for r in self.rows]) for i in range(7)]
        else:
            m = self.frame.readout.shape[0] if self.frame.readout is not None else self.frame.motional
            cols = [np.zeros(0), np.zeros((0, self.frame.spin_dim)), np.zeros((0, m))] + [np.zeros(0)] * 4
        times, pops, motional, fid, parity, energy, norms = cols
        if pops.size and np.max(np.abs(pops.sum(axis=1) - 1.0)) > NORM_TOL:
            raise ConvergenceError("spin populations do not sum to one")
        return EvolutionResult(times, pops, motional, fid, parity, energy, norms,
                               self.frame.spin_values(), final_state, dict(extras or {}))


def evolve_constant(H: OperatorMatrix, psi0, times, x0=None, readout_levels=DEFAULT_READOUT_LEVELS):
    """Evolve ``psi0`` under a constant Hamiltonian and sample at ``times`` (s).

    ``x0`` is only needed for lattice operators, to read out Fock
    populations of the effective oscillator.
    """
    psi0 = np.asarray(psi0, dtype=complex).ravel()
    if psi0.size != H.dim:
        raise ValidationError(f"state has dimension {psi0.size}, Hamiltonian {H.dim}")
    _check_normalized(psi0)
    times = np.asarray(times, dtype=float).ravel()
    prop = _Propagator.from_operator(H)
    frame = _frame_for(H, x0, readout_levels)
    coeff = prop.coefficients(psi0)
    psi = prop.apply(coeff, times)
    rec = _Recorder(frame, psi0)
    rec.add(times, psi, prop.energy(coeff))
    final = psi[:, -1] if times.size else psi0
    return rec.result(final)


def _segment_operator(segment: Segment, protocol: QuenchProtocol):
    h = segment.hamiltonian
    if isinstance(h, ModelParams):
        return build_model(h)
    grid = Grid.for_site(h, protocol.n_points)
    return build_lattice_hamiltonian(h, grid, protocol.fd_order)


def _with_segment(exc, index):
    exc.args = (f"segment {index}: {exc.args[0] if exc.args else ''}",) + tuple(exc.args[1:])
    exc.segment = index
    return exc


def _basis_key(op):
    b = op.basis
    if isinstance(b, BasisSpec):
        return ("fock", b.fock_cutoff, b.spin_dim)
    return ("grid", b.grid.x_min, b.grid.x_max, b.grid.n_points, b.spin_dim)


def _fock_state(spin_dim, levels, n, m, alpha, kind):
    F = (spin_dim - 1) / 2
    s = m + F
    if abs(s - round(s)) > 1e-9 or not 0 <= round(s) < spin_dim:
        raise ValidationError(f"spin projection m={m} is not valid for F={F:g}")
    motional = np.zeros(levels, dtype=complex)
    if kind == "fock":
        if n >= levels:
            raise ValidationError(f"Fock label {n} exceeds the basis size {levels}")
        motional[n] = 1.0
    else:
        alpha = complex(alpha)
        k = np.arange(levels)
        log_mag = -0.5 * abs(alpha) ** 2 + k * (math.log(abs(alpha)) if alpha else 0.0)
        log_mag -= 0.5 * np.array([math.lgamma(j + 1) for j in k])
        if not alpha:
            log_mag[1:] = -np.inf
        motional = np.exp(log_mag) * np.exp(1j * k * np.angle(alpha))
        lost = 1.0 - float(np.sum(np.abs(motional) ** 2))
        if lost > 1e-10:
            raise ValidationError(
                f"coherent state alpha={alpha} loses {lost:.2e} of its norm to the truncation"
            )
        motional /= np.linalg.norm(motional)
    spin = np.zeros(spin_dim)
    spin[int(round(s))] = 1.0
    return motional, spin


def _initial_vector(protocol, ops, props, readout_x0):
    spec = protocol.initial_state
    if spec.kind == "ground":
        return props[spec.segment].vectors[:, 0].astype(complex)
    op = ops[0]
    spin_dim = op.basis.spin_dim
    if isinstance(op.basis, BasisSpec):
        motional, spin = _fock_state(spin_dim, op.basis.fock_cutoff, spec.n, spec.m, spec.alpha, spec.kind)
        return np.kron(motional, spin)
    levels = max(protocol.readout_levels, spec.n + 1)
    if spec.kind == "coherent":
        levels = max(levels, int(abs(complex(spec.alpha)) ** 2 + 12 * abs(complex(spec.alpha)) + 20))
    motional, spin = _fock_state(spin_dim, levels, spec.n, spec.m, spec.alpha, spec.kind)
    rows = _oscillator_rows(op.basis.grid, readout_x0, levels)
    psi = np.kron(rows.T @ motional, spin)
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > 1e-6:
        raise ValidationError("lattice grid too coarse or narrow for the requested initial state")
    return psi / norm


def _readout_length(protocol):
    first = protocol.segments[0].hamiltonian
    if isinstance(first, LatticeConfig):
        return extract_effective_params(first).x0_eff
    return None


def run_protocol(protocol: QuenchProtocol, sample_rate) -> EvolutionResult:
    """Propagate through every segment, sampling at ``k / sample_rate``.

    Samples fall on a uniform clock from t = 0 to the total duration. The
    state at the end of each segment is handed to the next; errors while
    building a segment are re-raised with its index.
    """
    if not (math.isfinite(sample_rate) and sample_rate > 0):
        raise ValidationError(f"sample_rate must be positive, got {sample_rate}")
    ops, props = [], []
    kinds = {isinstance(s.hamiltonian, ModelParams) for s in protocol.segments}
    if len(kinds) > 1:
        raise ValidationError("a protocol cannot mix model and lattice segments")
    for i, seg in enumerate(protocol.segments):
        try:
            op = _segment_operator(seg, protocol)
            if ops and _basis_key(op) != _basis_key(ops[0]):
                raise ValidationError("basis differs from segment 0 (cutoff, spin or grid)")
            ops.append(op)
            props.append(_Propagator.from_operator(op))
        except RabiError as exc:
            raise _with_segment(exc, i) from None

    x0 = _readout_length(protocol)
    frame = _frame_for(ops[0], x0, protocol.readout_levels)
    psi = _initial_vector(protocol, ops, props, x0)
    _check_normalized(psi)

    total = protocol.total_time
    n_samples = int(math.floor(total * sample_rate * (1 + 1e-12))) + 1
    times = np.arange(n_samples) / sample_rate
    edges = protocol.boundaries()
    rec = _Recorder(frame, psi.copy())
    taken = 0
    for i, prop in enumerate(props):
        start, stop = edges[i], edges[i + 1]
        last = i == len(props) - 1
        upper = times.size if last else int(np.searchsorted(times, stop, side="left"))
        local = times[taken:upper]
        coeff = prop.coefficients(psi)
        if local.size:
            rec.add(local, prop.apply(coeff, local - start), prop.energy(coeff))
            taken = upper
        psi = prop.apply(coeff, stop - start)[:, 0]
    return rec.result(psi, {"total_time": total, "n_segments": len(props)})


def _interpolate(p_from: ModelParams, p_to: ModelParams, s):
    values = {k: (1 - s) * getattr(p_from, k) + s * getattr(p_to, k)
              for k in ("omega", "g", "omega0", "g_eps", "g2")}
    return replace(p_from, **values)


def spin_entropy(state, spin_dim) -> float:
    """Entanglement entropy (nats) of the spin's reduced density matrix."""
    block = np.asarray(state).reshape(-1, spin_dim)
    return von_neumann_entropy(block.T @ block.conj())


def ground_state(p: ModelParams) -> np.ndarray:
    H = build_model(p).toarray()
    _, v = scipy.linalg.eigh(H.real if not np.any(H.imag) else H, subset_by_index=(0, 0))
    return v[:, 0].astype(complex)


def adiabatic_ramp(params_from: ModelParams, params_to: ModelParams, total_time, n_steps=DEFAULT_RAMP_STEPS):
    """Start in the ground state of ``params_from`` and ramp linearly to ``params_to``.

    The ramp is ``n_steps`` constant pieces, each using the parameters at
    its midpoint. Samples are taken at every piece boundary. ``extras``
    reports ``final_overlap`` with the target ground state and the spin
    entropy of the final state.
    """
    if int(n_steps) != n_steps or n_steps < 10:
        raise ValidationError(f"n_steps must be an integer >= 10, got {n_steps}")
    if params_from.F != params_to.F or params_from.fock_cutoff != params_to.fock_cutoff:
        raise ValidationError("ramp endpoints must share F and fock_cutoff")
    if not (math.isfinite(total_time) and total_time >= 0):
        raise ValidationError(f"total_time must be finite and >= 0, got {total_time}")
    n_steps = int(n_steps)
    dt = total_time / n_steps
    psi0 = ground_state(params_from)
    frame = _fock_frame(BasisSpec(params_from.fock_cutoff, params_from.F))
    rec = _Recorder(frame, psi0)
    psi = psi0
    for k in range(n_steps):
        try:
            prop = _Propagator.from_operator(build_model(_interpolate(params_from, params_to, (k + 0.5) / n_steps)))
        except RabiError as exc:
            raise _with_segment(exc, k) from None
        coeff = prop.coefficients(psi)
        if k == 0:
            rec.add([0.0], psi[:, None], prop.energy(coeff))
        psi = prop.apply(coeff, dt)[:, 0]
        rec.add([(k + 1) * dt], psi[:, None], prop.energy(prop.coefficients(psi)))
    target = ground_state(params_to)
    extras = {
        "final_overlap": float(min(abs(np.vdot(target, psi)) ** 2, 1.0)),
        "spin_entropy": spin_entropy(psi, params_from.spin_dim),
        "target_spin_entropy": spin_entropy(target, params_from.spin_dim),
    }
    return rec.result(psi, extras)
