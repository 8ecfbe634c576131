"""Physical constants, the atomic species registry and unit conversions.

Everything here works in SI. The other modules use dimensionless units
internally (recoil energy and trap wave number for the lattice, the mode
frequency for Fock-space models) and come back here to convert.

Spin operators are dimensionless throughout, so the Zeeman energy of a
spin-F atom is ``gF * MU_B * B . F``. At F = 1/2 this is exactly
``gL * MU_B * B . S / hbar`` with ``S = hbar * sigma / 2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from importlib import resources

from scipy import constants as _const

from .errors import ValidationError

HBAR = _const.hbar
H_PLANCK = _const.h
MU_B = _const.physical_constants["Bohr magneton"][0]
GAUSS = 1e-4  # tesla
NM = 1e-9
TWO_PI = 2.0 * math.pi

_ALLOWED_SPECIES_F = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


def parse_spin(F) -> float:
    """Return ``F`` as a float after checking it is a positive half-integer.

    Accepts numbers and strings such as ``"3/2"``.
    """
    try:
        value = float(Fraction(str(F))) if isinstance(F, str) else float(F)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValidationError(f"invalid spin F={F!r}") from exc
    if not math.isfinite(value) or value < 0.5 or abs(2 * value - round(2 * value)) > 1e-12:
        raise ValidationError(f"spin F must be a positive half-integer, got {F!r}")
    return round(2 * value) / 2


def spin_dimension(F) -> int:
    return int(round(2 * parse_spin(F))) + 1


@dataclass(frozen=True)
class AtomSpecies:
    """An atom in a given hyperfine level.

    ``gF`` is signed; ``mass`` is in kg.
    """

    name: str
    mass: float
    F: float
    gF: float

    def __post_init__(self):
        if not (math.isfinite(self.mass) and self.mass > 0):
            raise ValidationError(f"{self.name}: mass must be positive, got {self.mass}")
        F = parse_spin(self.F)
        if F not in _ALLOWED_SPECIES_F:
            raise ValidationError(f"{self.name}: F={F} outside the supported range 1/2..3")
        object.__setattr__(self, "F", F)
        if not math.isfinite(self.gF):
            raise ValidationError(f"{self.name}: gF must be finite")

    def to_dict(self) -> dict:
        return {"name": self.name, "mass": self.mass, "F": self.F, "gF": self.gF}


@lru_cache(maxsize=None)
def species_registry() -> dict[str, AtomSpecies]:
    """Load the bundled species table, keyed by name."""
    text = resources.files("coldrabi").joinpath("data/species.json").read_text()
    entries = json.loads(text)["species"]
    return {e["name"]: AtomSpecies(**e) for e in entries}


def get_species(name) -> AtomSpecies:
    if isinstance(name, AtomSpecies):
        return name
    registry = species_registry()
    try:
        return registry[name]
    except KeyError:
        raise ValidationError(
            f"unknown species {name!r}; available: {', '.join(sorted(registry))}"
        ) from None


@dataclass(frozen=True)
class ModelParams:
    """Parameters of a Fock (x) spin-F model Hamiltonian.

    All rates share one unit (rad/s for SI work, or multiples of the mode
    frequency when ``omega == 1``). ``omega`` is the mode frequency, ``g``
    the linear coupling, ``omega0`` the spin splitting, ``g_eps`` the drive
    along F_x and ``g2`` the quadratic coupling.
    """

    omega: float
    g: float = 0.0
    omega0: float = 0.0
    g_eps: float = 0.0
    g2: float = 0.0
    F: float = 0.5
    fock_cutoff: int = 64

    def __post_init__(self):
        for name in ("omega", "g", "omega0", "g_eps", "g2"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if self.omega <= 0:
            raise ValidationError(f"omega must be positive, got {self.omega}")
        object.__setattr__(self, "F", parse_spin(self.F))
        if int(self.fock_cutoff) != self.fock_cutoff or self.fock_cutoff < 2:
            raise ValidationError(f"fock_cutoff must be an integer >= 2, got {self.fock_cutoff}")
        object.__setattr__(self, "fock_cutoff", int(self.fock_cutoff))

    @property
    def spin_dim(self) -> int:
        return int(round(2 * self.F)) + 1

    @property
    def dim(self) -> int:
        return self.fock_cutoff * self.spin_dim

    def to_dict(self) -> dict:
        return {
            "omega": self.omega,
            "g": self.g,
            "omega0": self.omega0,
            "g_eps": self.g_eps,
            "g2": self.g2,
            "F": self.F,
            "fock_cutoff": self.fock_cutoff,
        }


def recoil_energy(lambda_t, species) -> float:
    """Recoil energy ``hbar^2 k_t^2 / 2M`` in J for a lattice of wavelength ``lambda_t``."""
    species = get_species(species)
    if not lambda_t > 0:
        raise ValidationError(f"wavelength must be positive, got {lambda_t}")
    k = TWO_PI / lambda_t
    return HBAR**2 * k**2 / (2.0 * species.mass)


def trap_frequency(V0, E_r) -> float:
    """Harmonic frequency (rad/s) of a lattice site of depth ``V0`` (in units of ``E_r``)."""
    if V0 < 0:
        raise ValidationError(f"lattice depth must be non-negative, got {V0}")
    if not E_r > 0:
        raise ValidationError(f"recoil energy must be positive, got {E_r}")
    return 2.0 * math.sqrt(V0) * E_r / HBAR


def oscillator_length(omega, species) -> float:
    """Ground-state position spread ``x0 = sqrt(hbar / (2 M omega))`` in m."""
    species = get_species(species)
    if not omega > 0:
        raise ValidationError(f"omega must be positive, got {omega}")
    return math.sqrt(HBAR / (2.0 * species.mass * omega))


def gradient_from_amplitude(Bx, lambda_c) -> float:
    """Field gradient (T/m) at a zero crossing of ``Bx * sin(2 k_c x)``."""
    if not lambda_c > 0:
        raise ValidationError(f"wavelength must be positive, got {lambda_c}")
    return 2.0 * Bx * TWO_PI / lambda_c


def curvature_from_amplitude(Bx, lambda_c) -> float:
    """Field curvature ``b_xx`` (T/m^2) at an extremum of ``Bx * cos(2 k_c x)``."""
    if not lambda_c > 0:
        raise ValidationError(f"wavelength must be positive, got {lambda_c}")
    k = TWO_PI / lambda_c
    return -2.0 * Bx * k**2


def coupling_strength(bx, gF, x0, signed=False) -> float:
    """Linear spin-motion coupling ``g = mu_B gF bx x0 / (2 hbar)`` in rad/s.

    The magnitude is returned unless ``signed`` is set; the sign carries no
    spectral information.
    """
    if not x0 > 0:
        raise ValidationError(f"x0 must be positive, got {x0}")
    g = MU_B * gF * bx * x0 / (2.0 * HBAR)
    return g if signed else abs(g)


def quadratic_coupling_strength(bxx, gF, x0) -> float:
    """Signed quadratic coupling ``g2`` (rad/s) multiplying ``(a + a^dag)^2 F_x``."""
    if not x0 > 0:
        raise ValidationError(f"x0 must be positive, got {x0}")
    return MU_B * gF * bxx * x0**2 / HBAR


def drive_strength(eps, gF) -> float:
    """Signed drive ``g_eps`` (rad/s) produced by a homogeneous x-field ``eps`` (T)."""
    return MU_B * gF * eps / HBAR


def tls_frequency(Bz, gF, signed=False) -> float:
    """Spin splitting ``omega0`` in rad/s.

    By default ``|mu_B gF| Bz / hbar``; with ``signed`` the sign of ``gF`` is kept.
    """
    factor = gF if signed else abs(gF)
    return MU_B * factor * Bz / HBAR


def field_for_tls_frequency(omega0, gF) -> float:
    """Inverse of the signed :func:`tls_frequency`: the Bz that yields ``omega0``."""
    if gF == 0:
        raise ValidationError("gF = 0 has no Zeeman response")
    return omega0 * HBAR / (MU_B * gF)
