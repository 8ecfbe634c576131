"""Single-site optical-lattice Hamiltonian and effective Rabi parameters.

Internally the lattice works in units of the trapping-lattice recoil energy
``E_r`` and the reduced coordinate ``xi = k_t x``. In those units

    H / E_r = -d^2/dxi^2 + (V0 / 2) (1 - cos 2 xi)
              + z [ (Bx sin(2 kappa xi + phase) + eps) F_x + Bz F_z ]

with ``kappa = k_c / k_t`` and ``z = gF mu_B / E_r`` per tesla. One trapping
site spans ``-pi/2 < xi < pi/2``; Dirichlet walls sit on the neighbouring
potential maxima and tunnelling is neglected.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .errors import ExtractionError, RangeError, ValidationError
from .operators import OperatorMatrix, hermitian_eigensolve, spin_operators
from .units import (
    HBAR,
    MU_B,
    TWO_PI,
    AtomSpecies,
    get_species,
    oscillator_length,
    recoil_energy,
    trap_frequency,
)

DEFAULT_N_POINTS = 2048
RATIO_TOL = 1e-9


class Configuration(str, enum.Enum):
    """Lattice geometries; the value is the ratio ``lambda_t / lambda_c``."""

    LIN_THETA_LIN = "LinThetaLin"
    TWO_LATTICE_2TO1 = "TwoLattice2to1"
    TWO_LATTICE_3TO2 = "TwoLattice3to2"

    @property
    def wavelength_ratio(self) -> float:
        return {"LinThetaLin": 1.0, "TwoLattice2to1": 2.0, "TwoLattice3to2": 1.5}[self.value]


@dataclass(frozen=True)
class LatticeConfig:
    """Experimental parameters of one lattice configuration.

    Wavelengths in m, fields in T, ``V0`` in units of the trapping recoil
    energy, ``phase`` in rad (0 puts field zero crossings on the trap minima).
    """

    species: AtomSpecies
    lambda_t: float
    lambda_c: float
    V0: float
    Bx: float = 0.0
    Bz: float = 0.0
    eps: float = 0.0
    phase: float = 0.0
    configuration: Configuration = Configuration.LIN_THETA_LIN

    def __post_init__(self):
        object.__setattr__(self, "species", get_species(self.species))
        try:
            object.__setattr__(self, "configuration", Configuration(self.configuration))
        except ValueError:
            raise ValidationError(f"unknown configuration {self.configuration!r}") from None
        for name in ("lambda_t", "lambda_c", "V0", "Bx", "Bz", "eps", "phase"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if self.lambda_t <= 0 or self.lambda_c <= 0:
            raise ValidationError("wavelengths must be positive")
        if self.V0 <= 0:
            raise ValidationError(f"V0 must be positive, got {self.V0}")
        expected = self.configuration.wavelength_ratio
        ratio = self.lambda_t / self.lambda_c
        if abs(ratio / expected - 1) > RATIO_TOL:
            raise ValidationError(
                f"lambda_t/lambda_c = {ratio:.9g} is inconsistent with "
                f"{self.configuration.value} (expects {expected:g})"
            )

    @classmethod
    def from_coupling_wavelength(cls, configuration, lambda_c, **kwargs):
        configuration = Configuration(configuration)
        return cls(lambda_t=configuration.wavelength_ratio * lambda_c, lambda_c=lambda_c,
                   configuration=configuration, **kwargs)

    @property
    def F(self) -> float:
        return self.species.F

    @property
    def spin_dim(self) -> int:
        return int(round(2 * self.F)) + 1

    @property
    def k_t(self) -> float:
        return TWO_PI / self.lambda_t

    @property
    def kappa(self) -> float:
        return self.lambda_t / self.lambda_c

    @property
    def E_r(self) -> float:
        return recoil_energy(self.lambda_t, self.species)

    @property
    def omega_trap(self) -> float:
        """Harmonic frequency of the bare trapping lattice (rad/s)."""
        return trap_frequency(self.V0, self.E_r)

    @property
    def zeeman_per_tesla(self) -> float:
        """``gF mu_B`` in units of ``E_r`` per tesla."""
        return self.species.gF * MU_B / self.E_r

    def to_dict(self) -> dict:
        return {
            "species": self.species.name,
            "lambda_t": self.lambda_t,
            "lambda_c": self.lambda_c,
            "V0": self.V0,
            "Bx": self.Bx,
            "Bz": self.Bz,
            "eps": self.eps,
            "phase": self.phase,
            "configuration": self.configuration.value,
        }


@dataclass(frozen=True)
class Grid:
    """``n_points`` interior nodes between Dirichlet walls at ``x_min`` and ``x_max``."""

    x_min: float
    x_max: float
    n_points: int = DEFAULT_N_POINTS

    def __post_init__(self):
        n = self.n_points
        if int(n) != n or n < 128 or (int(n) & (int(n) - 1)):
            raise ValidationError(f"n_points must be a power of two >= 128, got {n}")
        object.__setattr__(self, "n_points", int(n))
        if not self.x_max > self.x_min:
            raise ValidationError("grid requires x_max > x_min")

    @classmethod
    def for_site(cls, config: LatticeConfig, n_points=DEFAULT_N_POINTS, site=0):
        center = site * config.lambda_t / 2
        quarter = config.lambda_t / 4
        return cls(center - quarter, center + quarter, n_points)

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points + 1)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.spacing * np.arange(1, self.n_points + 1)

    @property
    def center(self) -> float:
        return 0.5 * (self.x_min + self.x_max)

    def refined(self, factor=2) -> "Grid":
        return Grid(self.x_min, self.x_max, self.n_points * factor)


@dataclass(frozen=True)
class LatticeBasis:
    """Position-major basis: ``index = i * (2F+1) + s`` for grid node ``i``."""

    grid: Grid
    F: float

    @property
    def spin_dim(self) -> int:
        return int(round(2 * self.F)) + 1

    @property
    def tag(self) -> str:
        return f"grid{self.grid.n_points}xF{self.F:g}"


@dataclass(frozen=True)
class EffectiveParams:
    """Rabi parameters read off the stretched-state branch potential.

    ``g_sign`` and ``omega0`` are signed so a reference Rabi model built from
    them reproduces the lattice eigenvectors, not just the eigenvalues.
    """

    omega_eff: float
    g_eff: float
    x_star: float
    curvature: float
    branch: float
    g_sign: int
    omega0: float
    x0_eff: float

    @property
    def ratio(self) -> float:
        return self.g_eff / self.omega_eff

    def to_dict(self) -> dict:
        return {
            "omega_eff": self.omega_eff,
            "g_eff": self.g_eff,
            "ratio": self.ratio,
            "x_star": self.x_star,
            "curvature": self.curvature,
            "branch": self.branch,
            "g_sign": self.g_sign,
            "omega0": self.omega0,
            "x0_eff": self.x0_eff,
        }


def potential_profile(config: LatticeConfig, x):
    """Scalar trap potential (J) and x-component of the total field (T) at ``x``."""
    x = np.asarray(x, dtype=float)
    scalar = 0.5 * config.V0 * config.E_r * (1.0 - np.cos(2.0 * config.k_t * x))
    field = config.Bx * np.sin(2.0 * config.kappa * config.k_t * x + config.phase) + config.eps
    return scalar, field


def _central_difference(order):
    """Second-derivative stencil coefficients at offsets 0, 1, 2, ..."""
    table = {
        2: [-2.0, 1.0],
        4: [-5.0 / 2, 4.0 / 3, -1.0 / 12],
        6: [-49.0 / 18, 3.0 / 2, -3.0 / 20, 1.0 / 90],
    }
    try:
        return table[order]
    except KeyError:
        raise ValidationError(f"finite-difference order must be 2, 4 or 6, got {order}") from None


def _check_site_alignment(config, grid):
    half = config.lambda_t / 2
    site = round(grid.center / half)
    tol = 1e-9 * config.lambda_t
    if abs(grid.x_min - (site * half - half / 2)) > tol or abs(grid.x_max - (site * half + half / 2)) > tol:
        raise ValidationError("grid must span exactly one trapping site between adjacent maxima")


def build_lattice_hamiltonian(config: LatticeConfig, grid: Grid | None = None, fd_order=2) -> OperatorMatrix:
    """Sparse lattice Hamiltonian in units of ``E_r``.

    The kinetic term uses central differences of ``fd_order`` (default
    second order); the result is block-banded with ``2F+1`` spin components
    per grid node.
    """
    if grid is None:
        grid = Grid.for_site(config)
    _check_site_alignment(config, grid)
    coeffs = _central_difference(fd_order)
    n = grid.n_points
    h = grid.spacing * config.k_t
    diagonals = [-coeffs[0] / h**2 * np.ones(n)]
    offsets = [0]
    for k, c in enumerate(coeffs[1:], start=1):
        diagonals += [-c / h**2 * np.ones(n - k)] * 2
        offsets += [k, -k]
    kinetic = sp.diags(diagonals, offsets, format="csr")

    scalar, field = potential_profile(config, grid.x)
    z = config.zeeman_per_tesla
    Fx, _, Fz = (op.matrix for op in spin_operators(config.F))
    spin_dim = config.spin_dim
    H = (
        sp.kron(kinetic + sp.diags(scalar / config.E_r), sp.identity(spin_dim))
        + sp.kron(sp.diags(z * field), sp.csr_matrix(Fx))
        + z * config.Bz * sp.kron(sp.identity(n), sp.csr_matrix(Fz))
    )
    H = sp.csr_matrix(H)
    H.eliminate_zeros()
    return OperatorMatrix(H, basis=LatticeBasis(grid, config.F), flags={"energy_unit": config.E_r})


def classical_lower_bound(config: LatticeConfig, grid: Grid) -> float:
    """Minimum over the grid of the local potential's lowest eigenvalue, in ``E_r``.

    The discrete kinetic operator is positive definite, so this bounds the
    ground energy from below.
    """
    scalar, field = potential_profile(config, grid.x)
    z = config.zeeman_per_tesla
    magnitude = np.sqrt((z * field) ** 2 + (z * config.Bz) ** 2)
    return float(np.min(scalar / config.E_r - config.F * magnitude))


def lattice_spectrum(config: LatticeConfig, grid: Grid | None = None, n_states=30, fd_order=2):
    """Lowest ``n_states`` eigenpairs of the site Hamiltonian (energies in ``E_r``)."""
    if grid is None:
        grid = Grid.for_site(config)
    H = build_lattice_hamiltonian(config, grid, fd_order)
    return hermitian_eigensolve(H, k=n_states, lower_bound=classical_lower_bound(config, grid))


def lattice_wavefunctions(spectrum, grid: Grid, F, indices=None):
    """Eigenvectors as grid-normalized spinor wavefunctions."""
    from .models import PositionWavefunction

    spin_dim = int(round(2 * F)) + 1
    if indices is None:
        indices = range(spectrum.states.shape[1])
    x = grid.x
    scale = 1.0 / math.sqrt(grid.spacing)
    return [
        PositionWavefunction(x, spectrum.states[:, i].reshape(grid.n_points, spin_dim) * scale)
        for i in indices
    ]


def grid_self_convergence(config: LatticeConfig, n_points=DEFAULT_N_POINTS, n_states=30, fd_order=2):
    """Discretization diagnostics from three successively doubled grids.

    Returns ``(max_relative_change, observed_order)``: the largest relative
    change of the lowest ``n_states`` energies between ``n_points`` and
    ``2 n_points``, and the convergence order estimated from the ratio of
    successive changes.
    """
    grid = Grid.for_site(config, n_points)
    e1 = lattice_spectrum(config, grid, n_states, fd_order).energies
    e2 = lattice_spectrum(config, grid.refined(), n_states, fd_order).energies
    e4 = lattice_spectrum(config, grid.refined(4), n_states, fd_order).energies
    d12 = np.abs(e2 - e1)
    d24 = np.abs(e4 - e2)
    rel = float(np.max(d12 / np.abs(e2)))
    order = float(np.log2(np.sum(d12) / np.sum(d24)))
    return rel, order


def _branch_derivatives(config, m):
    """Closed-form derivatives of the branch potential in reduced units."""
    V0, kap, ph = config.V0, config.kappa, config.phase
    c = config.zeeman_per_tesla * m * config.Bx

    def d1(xi):
        return V0 * np.sin(2 * xi) + 2 * kap * c * np.cos(2 * kap * xi + ph)

    def d2(xi):
        return 2 * V0 * np.cos(2 * xi) - 4 * kap**2 * c * np.sin(2 * kap * xi + ph)

    def value(xi):
        return 0.5 * V0 * (1 - np.cos(2 * xi)) + c * np.sin(2 * kap * xi + ph)

    return value, d1, d2


def stretched_branch(config: LatticeConfig) -> float:
    """The high-field-seeking stretched sub-state ``m = -F sign(gF Bx)`` along x."""
    s = np.sign(config.species.gF * config.Bx)
    return -config.F * (s if s != 0 else 1.0)


def _find_minimum(config, m, scan_points=8192):
    value, d1, d2 = _branch_derivatives(config, m)
    edge = math.pi / 2
    slope0 = d1(0.0)
    if slope0 == 0.0 and d2(0.0) > 0:
        return 0.0
    candidates = []
    directions = [1.0] if slope0 < 0 else [-1.0] if slope0 > 0 else [1.0, -1.0]
    for direction in directions:
        xs = direction * np.linspace(0.0, edge, scan_points + 1)[1:-1]
        ds = d1(xs) * direction
        # first downhill-to-uphill transition walking away from the center
        idx = np.nonzero(ds >= 0)[0]
        if idx.size == 0:
            continue
        j = idx[0]
        lo = 0.0 if j == 0 else xs[j - 1]
        hi = xs[j]
        if d1(lo) * d1(hi) > 0:
            candidates.append(hi)
            continue
        root = brentq(d1, min(lo, hi), max(lo, hi), xtol=1e-12 * TWO_PI, rtol=4 * np.finfo(float).eps)
        candidates.append(root)
    candidates = [xi for xi in candidates if d2(xi) > 0]
    if not candidates:
        raise ExtractionError(
            "branch potential has no interior minimum in the trapping site; "
            "the coupling merges the site with its neighbour"
        )
    return min(candidates, key=value)


def extract_effective_params(config: LatticeConfig) -> EffectiveParams:
    """Effective mode frequency and coupling of a lattice site.

    With ``Bz`` set to zero the Hamiltonian is diagonal in the F_x basis.
    The stretched high-field-seeking branch is located, its curvature at the
    minimum gives ``omega_eff`` and the displacement of the minimum gives
    ``g_eff = |x*| omega_eff / (4 F x0_eff)``, the displaced-oscillator
    relation of the reference Rabi model.
    """
    m = stretched_branch(config)
    xi_star = _find_minimum(config, m)
    _, _, d2 = _branch_derivatives(config, m)
    k = config.k_t
    curvature = float(d2(xi_star)) * config.E_r * k**2
    M = config.species.mass
    omega_eff = math.sqrt(curvature / M)
    x0_eff = oscillator_length(omega_eff, config.species)
    x_star = xi_star / k
    g_eff = abs(x_star) * omega_eff / (4.0 * config.F * x0_eff)
    gradient = config.species.gF * config.Bx * math.cos(config.phase)
    g_sign = int(np.sign(gradient)) if gradient != 0 else 1
    omega0 = config.species.gF * MU_B * config.Bz / HBAR
    return EffectiveParams(
        omega_eff=omega_eff,
        g_eff=g_eff,
        x_star=x_star,
        curvature=curvature,
        branch=m,
        g_sign=g_sign,
        omega0=omega0,
        x0_eff=x0_eff,
    )


def _linear_guess(config, g_target):
    """Bx giving ``g_target`` in the harmonic, linear-gradient approximation."""
    x0 = oscillator_length(config.omega_trap, config.species)
    k_c = TWO_PI / config.lambda_c
    return g_target * HBAR / (abs(config.species.gF) * MU_B * k_c * x0)


def _invert_monotone(config, target, quantity, guess, rtol):
    """Bisection for the Bx >= 0 at which ``quantity(extract(Bx)) == target``.

    ``quantity`` must increase with Bx. The bracket grows by doubling from
    ``guess``; if the site merges first, the largest attainable value is
    located and reported through :class:`RangeError`.
    """
    if target < 0:
        raise ValidationError(f"target must be non-negative, got {target}")
    if target == 0:
        return 0.0

    def evaluate(Bx):
        return quantity(extract_effective_params(replace(config, Bx=Bx, Bz=0.0)))

    lo, hi = 0.0, guess
    for _ in range(200):
        try:
            value = evaluate(hi)
        except ExtractionError:
            break
        if value >= target:
            return brentq(lambda b: evaluate(b) - target, lo, hi, xtol=1e-15, rtol=rtol)
        lo, hi = hi, 2.0 * hi
    else:
        raise RangeError("could not bracket the target amplitude", max_attainable=evaluate(lo))

    # hi merges the site: locate the merging threshold between lo and hi
    good, bad = lo, hi
    while bad - good > 1e-12 * bad:
        mid = 0.5 * (good + bad)
        try:
            evaluate(mid)
            good = mid
        except ExtractionError:
            bad = mid
    best = evaluate(good)
    if best < target:
        raise RangeError(
            f"target {target:.6g} unreachable before the site merges with its "
            f"neighbour; maximum attainable is {best:.6g}",
            max_attainable=best,
        )
    return brentq(lambda b: evaluate(b) - target, lo, good, xtol=1e-15, rtol=rtol)


def amplitude_for_target_g(config: LatticeConfig, g_target, rtol=1e-12) -> float:
    """Coupling-lattice amplitude Bx (T) at which the extracted ``g_eff`` hits ``g_target``."""
    return _invert_monotone(config, g_target, lambda e: e.g_eff,
                            _linear_guess(config, g_target), rtol)


def amplitude_for_target_ratio(config: LatticeConfig, ratio, rtol=1e-12) -> float:
    """Amplitude Bx (T) at which ``g_eff / omega_eff`` equals ``ratio``."""
    return _invert_monotone(config, ratio, lambda e: e.ratio,
                            _linear_guess(config, ratio * config.omega_trap), rtol)


def site_minima(config: LatticeConfig, n_sites):
    """Trap minima ``x_j = j lambda_t / 2`` with the sign of the local coupling.

    The sign is that of ``gF`` times the local fictitious-field gradient.
    """
    if int(n_sites) != n_sites or n_sites < 1:
        raise ValidationError(f"n_sites must be a positive integer, got {n_sites}")
    out = []
    amp_sign = np.sign(config.Bx) if config.Bx != 0 else 1.0
    for j in range(int(n_sites)):
        x = j * config.lambda_t / 2
        slope = math.cos(2 * config.kappa * config.k_t * x + config.phase)
        sign = np.sign(config.species.gF) * amp_sign * (np.sign(slope) if abs(slope) > 1e-9 else 0.0)
        out.append((x, int(sign)))
    return out
