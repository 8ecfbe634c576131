import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coldrabi.errors import ExtractionError, RangeError, ValidationError
from coldrabi.lattice import (
    Configuration,
    Grid,
    LatticeConfig,
    amplitude_for_target_g,
    amplitude_for_target_ratio,
    build_lattice_hamiltonian,
    extract_effective_params,
    grid_self_convergence,
    lattice_spectrum,
    potential_profile,
    site_minima,
)
from coldrabi.units import HBAR, TWO_PI, coupling_strength, gradient_from_amplitude, oscillator_length


def two_lattice(ratio_tag, V0=2e5, **kw):
    return LatticeConfig.from_coupling_wavelength(ratio_tag, 790.04e-9, species="Rb87-F1", V0=V0, **kw)


# ---------------------------------------------------------------- config and grid


def test_config_rejects_inconsistent_wavelengths():
    with pytest.raises(ValidationError, match="TwoLattice2to1"):
        LatticeConfig("Rb87-F1", 787e-9, 787e-9, 1e5, configuration="TwoLattice2to1")
    with pytest.raises(ValidationError):
        LatticeConfig("Rb87-F1", 787e-9, 787e-9, 0.0)
    with pytest.raises(ValidationError):
        LatticeConfig("Rb87-F1", 787e-9, 787e-9, 1e5, configuration="Square")
    ok = LatticeConfig("Rb87-F1", 787e-9 * (1 + 1e-12), 787e-9, 1e5)
    assert ok.configuration is Configuration.LIN_THETA_LIN


@pytest.mark.parametrize("n", [64, 1000, 127])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(ValidationError):
        Grid(0.0, 1.0, n)


def test_grid_nodes(rb_lin):
    grid = Grid.for_site(rb_lin, 256)
    x = grid.x
    assert x.size == 256
    assert np.allclose(np.diff(x), grid.spacing, rtol=1e-9)
    assert x[0] - grid.x_min == pytest.approx(grid.spacing)
    assert grid.center == pytest.approx(0.0, abs=1e-20)
    assert grid.x_max - grid.x_min == pytest.approx(rb_lin.lambda_t / 2)


# ---------------------------------------------------------------- potential


def test_potential_profile_examples(rb_lin):
    cfg = replace(rb_lin, Bx=1e-3, eps=2e-6)
    scalar, field = potential_profile(cfg, 0.0)
    assert scalar == 0.0
    assert field == pytest.approx(2e-6, abs=1e-18)
    scalar, _ = potential_profile(cfg, cfg.lambda_t / 4)
    assert scalar == pytest.approx(cfg.V0 * cfg.E_r, rel=1e-14)


def test_three_to_two_field_alternates():
    cfg = two_lattice("TwoLattice3to2", Bx=1e-3)
    h = 1e-3 * cfg.lambda_t
    signs = []
    for j in range(4):
        x = j * cfg.lambda_t / 2
        _, (lo, hi) = potential_profile(cfg, [x - h, x + h])
        signs.append(np.sign(hi - lo))
    assert signs == [1, -1, 1, -1]


def test_site_minima():
    cfg = two_lattice("TwoLattice3to2", Bx=1e-3)
    sites = site_minima(cfg, 4)
    assert [s for _, s in sites] == [-1, 1, -1, 1]  # gF < 0
    assert np.allclose(np.diff([x for x, _ in sites]), cfg.lambda_t / 2)
    lin = site_minima(LatticeConfig("Rb87-F1", 787e-9, 787e-9, 1e5, Bx=1e-3), 5)
    assert len({s for _, s in lin}) == 1
    with pytest.raises(ValidationError):
        site_minima(cfg, 0)


# ---------------------------------------------------------------- Hamiltonian


def test_hamiltonian_structure(rb_lin):
    cfg = replace(rb_lin, Bx=1e-3, Bz=1e-5, eps=1e-6)
    grid = Grid.for_site(cfg, 128)
    H = build_lattice_hamiltonian(cfg, grid)
    assert H.is_sparse and H.dim == 128 * 3
    M = H.toarray()
    assert np.max(np.abs(M - M.conj().T)) == 0.0
    rows, cols = np.nonzero(M)
    # nearest-neighbour position coupling only, spin mixing inside a node
    assert np.max(np.abs(rows // 3 - cols // 3)) == 1
    assert np.max(np.abs(rows - cols)) <= 2 * 3 - 1
    assert H.flags["energy_unit"] == cfg.E_r


def test_misaligned_grid_rejected(rb_lin):
    g = Grid.for_site(rb_lin, 256)
    with pytest.raises(ValidationError, match="site"):
        build_lattice_hamiltonian(rb_lin, Grid(g.x_min + 1e-9, g.x_max + 1e-9, 256))
    with pytest.raises(ValidationError):
        build_lattice_hamiltonian(rb_lin, g, fd_order=3)


def _mathieu_levels(V0, n, terms):
    """Asymptotic Mathieu levels of -d^2/dxi^2 + V0 sin^2(xi), in E_r."""
    s = 2 * n + 1
    q = V0 / 4
    out = 2 * s * np.sqrt(q) - (s**2 + 1) / 8
    if terms > 2:
        out = out - (s**3 + 3 * s) / (2**7 * np.sqrt(q))
    if terms > 3:
        out = out - (5 * s**4 + 34 * s**2 + 9) / (2**12 * q)
    return out


def test_deep_lattice_anharmonic_levels(rb_lin):
    spec = lattice_spectrum(rb_lin, Grid.for_site(rb_lin, 2048), 18, fd_order=6)
    hw = 2 * math.sqrt(rb_lin.V0)  # hbar omega in E_r
    n = np.arange(6)
    two_term = hw * (n + 0.5) - (2 * n**2 + 2 * n + 1) / 4
    assert np.allclose(two_term, _mathieu_levels(rb_lin.V0, n, 2))
    levels = spec.energies.reshape(6, 3)
    assert np.max(np.ptp(levels, axis=1)) <= 1e-8 * hw
    # the two-term form is off by the next asymptotic order, no more
    next_order = np.abs(_mathieu_levels(rb_lin.V0, n, 3) - two_term)
    assert np.all(np.abs(levels[:, 0] - two_term) <= 1.05 * next_order + 1e-4)
    assert np.max(np.abs(levels[:, 0] - _mathieu_levels(rb_lin.V0, n, 4))) <= 2e-4


def test_ground_energy_default_grid(rb_lin):
    e0 = lattice_spectrum(rb_lin, n_states=3).energies[0]
    hw = 2 * math.sqrt(rb_lin.V0)
    assert e0 == pytest.approx(hw / 2 - 0.25, rel=1e-3)


@pytest.mark.slow
def test_grid_convergence_order(rb_lin):
    rel2, order2 = grid_self_convergence(rb_lin, 1024, 30, fd_order=2)
    assert order2 >= 1.9
    rel4, order4 = grid_self_convergence(rb_lin, 2048, 30, fd_order=4)
    assert order4 >= 3.8
    assert rel4 < 1e-6


@given(st.floats(-3e-3, 3e-3), st.floats(-1e-5, 1e-5))
def test_spectrum_even_in_bx(bx, bz):
    cfg = replace(LatticeConfig("Rb87-F1", 787e-9, 787e-9, 2e3), Bx=bx, Bz=bz)
    grid = Grid.for_site(cfg, 256)
    e1 = np.linalg.eigvalsh(build_lattice_hamiltonian(cfg, grid).toarray())
    e2 = np.linalg.eigvalsh(build_lattice_hamiltonian(replace(cfg, Bx=-bx), grid).toarray())
    assert np.max(np.abs(e1 - e2)) <= 1e-10 * np.max(np.abs(e1))


def test_adjacent_three_to_two_sites_equivalent():
    cfg = two_lattice("TwoLattice3to2", V0=5e3, Bx=2e-3, Bz=1e-6)
    e = [np.linalg.eigvalsh(build_lattice_hamiltonian(cfg, Grid.for_site(cfg, 256, site=j)).toarray())
         for j in (0, 1)]
    assert np.max(np.abs(e[0] - e[1])) <= 1e-10 * np.max(np.abs(e[0]))


# ---------------------------------------------------------------- extraction


def test_extraction_without_coupling(rb_lin):
    eff = extract_effective_params(rb_lin)
    assert eff.x_star == 0.0
    assert eff.g_eff == 0.0
    assert eff.omega_eff == pytest.approx(2 * math.sqrt(rb_lin.V0) * rb_lin.E_r / HBAR, rel=1e-12)


@pytest.mark.parametrize("F_species", ["Rb87-F1", "Rb87-F2", "Li6-F1/2"])
def test_small_bx_linear_coupling(F_species):
    cfg = LatticeConfig(F_species, 787e-9, 787e-9, 1e5)
    x0 = oscillator_length(cfg.omega_trap, cfg.species)
    for bx in (1e-5, 1e-4):
        eff = extract_effective_params(replace(cfg, Bx=bx))
        analytic = coupling_strength(gradient_from_amplitude(bx, cfg.lambda_c), cfg.species.gF, x0)
        assert eff.ratio <= 0.1
        assert eff.g_eff == pytest.approx(analytic, rel=1e-2)
        assert eff.branch == -cfg.F * np.sign(cfg.species.gF * bx)


@pytest.mark.parametrize("V0", [1e3, 1e4, 1e5])
def test_lowest_spacing_matches_omega_eff(V0):
    cfg = LatticeConfig("Rb87-F1", 787e-9, 787e-9, V0)
    e = lattice_spectrum(cfg, n_states=4, fd_order=6).energies
    hw = HBAR * extract_effective_params(cfg).omega_eff / cfg.E_r
    # first gap is hbar omega - E_r (1 + 1 / (2 sqrt(V0))) + O(1 / V0)
    assert e[3] - e[0] - hw == pytest.approx(-1 - 0.5 / math.sqrt(V0), abs=2 / V0)


def test_table_config_a(rb_lin):
    bx = amplitude_for_target_g(rb_lin, TWO_PI * 8.5e6)
    eff = extract_effective_params(replace(rb_lin, Bx=bx))
    assert eff.g_eff / TWO_PI == pytest.approx(8.5e6, rel=1e-3)
    assert eff.omega_eff / TWO_PI == pytest.approx(2.9e6, rel=0.1)
    assert eff.ratio == pytest.approx(2.93, abs=0.15)


@pytest.mark.parametrize("ratio", [0.2, 1.0, 2.5])
def test_amplitude_round_trip(rb_lin, ratio):
    bx = amplitude_for_target_ratio(rb_lin, ratio)
    assert extract_effective_params(replace(rb_lin, Bx=bx)).ratio == pytest.approx(ratio, rel=1e-3)
    g = TWO_PI * 1e6 * ratio
    bx = amplitude_for_target_g(rb_lin, g)
    assert extract_effective_params(replace(rb_lin, Bx=bx)).g_eff == pytest.approx(g, rel=1e-3)


def test_amplitude_edge_cases(rb_lin):
    assert amplitude_for_target_g(rb_lin, 0.0) == 0.0
    with pytest.raises(ValidationError):
        amplitude_for_target_g(rb_lin, -1.0)
    # field extrema on the trap minima: the low-field-seeking curvature opens the site
    with pytest.raises(RangeError) as info:
        amplitude_for_target_ratio(replace(rb_lin, phase=-math.pi / 2), 0.5)
    assert 0 <= info.value.max_attainable < 1e-3


def test_site_merging_raises(rb_lin):
    with pytest.raises(ExtractionError):
        extract_effective_params(replace(rb_lin, phase=-math.pi / 2, Bx=1.0))
    # same-period coupling only shifts the minimum: never merges at phase 0
    assert extract_effective_params(replace(rb_lin, Bx=1.0)).ratio > 10
