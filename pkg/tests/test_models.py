import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coldrabi.errors import ConvergenceError, CoverageError, ValidationError
from coldrabi.models import (
    build_dicke,
    build_driven_qrm,
    build_qrm,
    build_quadratic_qrm,
    check_cutoff_convergence,
    collapse_threshold,
    converged_params,
    hermite_functions,
    solve_model,
    synthesize_position_states,
)
from coldrabi.operators import BasisSpec, hermitian_eigensolve, parity_operator, spin_operators
from coldrabi.units import ModelParams
from oracles import bogoliubov_levels, quadratic_branches, qubit_dicke_spectrum


def eig(op, k=None):
    return hermitian_eigensolve(op, k=k).energies


# ---------------------------------------------------------------- QRM limits


@pytest.mark.parametrize("F", [0.5, 1, 1.5, 2])
def test_uncoupled_spectrum(F):
    p = ModelParams(omega=1.3, g=0.0, omega0=0.55, F=F, fock_cutoff=12)
    m = np.arange(-F, F + 1)
    expected = np.sort([n * p.omega + mm * p.omega0 for n in range(12) for mm in m])
    assert np.max(np.abs(eig(build_qrm(p)) - expected)) <= 1e-10


@pytest.mark.parametrize("g", [0.3, 1.0, 2.0])
def test_zero_splitting_displaced_oscillator(g):
    p = converged_params(ModelParams(omega=1.0, g=g, omega0=0.0), 20)
    e = eig(build_qrm(p), 20)
    expected = np.repeat(np.arange(10) - g**2, 2)
    assert np.max(np.abs(e - expected) / np.maximum(np.abs(expected), 1.0)) <= 1e-8


def test_resonant_doublet_splitting():
    g = 0.05
    p = ModelParams(omega=1.0, g=g, omega0=1.0, fock_cutoff=30)
    e = eig(build_qrm(p), 3)
    assert abs((e[2] - e[1]) - 2 * g) / (2 * g) <= 5 * g**2


@given(st.floats(0.2, 3), st.floats(0, 3), st.floats(-2, 2), st.sampled_from([0.5, 1, 1.5]))
def test_sign_of_g_is_spectrally_invisible(omega, g, omega0, F):
    p = ModelParams(omega=omega, g=g, omega0=omega0, F=F, fock_cutoff=20)
    e1 = eig(build_qrm(p))
    e2 = eig(build_qrm(replace(p, g=-g)))
    assert np.max(np.abs(e1 - e2)) <= 1e-10 * max(1.0, np.max(np.abs(e1)))


def test_joint_sign_flip_with_drive():
    p = ModelParams(omega=1.0, g=0.8, omega0=0.3, g_eps=0.4, F=1, fock_cutoff=30)
    e1 = eig(build_driven_qrm(p))
    e2 = eig(build_driven_qrm(replace(p, g=-p.g, g_eps=-p.g_eps)))
    assert np.max(np.abs(e1 - e2)) <= 1e-10 * np.max(np.abs(e1))


def test_ground_energy_non_increasing_in_g():
    base = ModelParams(omega=1.0, omega0=1.0, fock_cutoff=80)
    energies = [eig(build_qrm(replace(base, g=g)), 1)[0] for g in np.linspace(0, 2.5, 26)]
    assert np.all(np.diff(energies) <= 1e-12)


# ---------------------------------------------------------------- driven


def test_driven_reduces_to_qrm_without_drive():
    p = ModelParams(omega=1.0, g=0.4, omega0=0.7, F=1, fock_cutoff=10)
    assert np.array_equal(build_driven_qrm(p).matrix, build_qrm(p).matrix)


def test_drive_breaks_parity():
    p = ModelParams(omega=1.0, g=0.4, omega0=0.7, g_eps=0.2, fock_cutoff=10)
    H = build_driven_qrm(p).matrix
    P = parity_operator(BasisSpec(10, 0.5)).matrix
    assert np.max(np.abs(P @ H - H @ P)) > 0.1 * p.g_eps


@pytest.mark.parametrize("g_eps", [1e-3, 0.05, 0.3])
def test_drive_two_level_oracle(g_eps):
    # at g = 0 the spin decouples: (omega0/2) sigma_z + (g_eps/2) sigma_x
    p = ModelParams(omega=1.0, g=0.0, omega0=0.8, g_eps=g_eps, fock_cutoff=6)
    e0 = eig(build_driven_qrm(p), 1)[0]
    assert e0 == pytest.approx(-0.5 * math.hypot(p.omega0, g_eps), abs=1e-13)


# ---------------------------------------------------------------- quadratic


def test_quadratic_reduces_to_qrm():
    p = ModelParams(omega=1.0, g=0.4, omega0=0.7, fock_cutoff=10)
    assert np.array_equal(build_quadratic_qrm(p).matrix, build_qrm(p).matrix)


@pytest.mark.parametrize("g2", [0.1, 0.2, 0.3, 0.4])
def test_quadratic_bogoliubov(g2):
    p = ModelParams(omega=1.0, g2=g2, fock_cutoff=300)
    soft, stiff = quadratic_branches(p)
    for branch, sign in ((soft, -1), (stiff, +1)):
        assert np.max(np.abs(branch[:15] - bogoliubov_levels(1.0, g2, 15, sign))) <= 1e-6
    assert not build_quadratic_qrm(p).flags["beyond_collapse"]


def test_spectral_collapse_trend():
    spacings = []
    for g2 in (0.1, 0.2, 0.3, 0.4, 0.45, 0.49):
        soft, _ = quadratic_branches(ModelParams(omega=1.0, g2=g2, fock_cutoff=400))
        spacings.append(np.diff(soft[:11]))
    spacings = np.array(spacings)
    assert np.all(np.diff(spacings, axis=0) < 0)
    assert np.max(spacings[-1]) < 0.15


def test_collapse_flag():
    p = ModelParams(omega=1.0, g2=0.6, fock_cutoff=20)
    assert collapse_threshold(p) == 0.5
    assert build_quadratic_qrm(p).flags["beyond_collapse"]
    assert collapse_threshold(replace(p, F=1)) == 0.25


# ---------------------------------------------------------------- Dicke


@pytest.mark.parametrize("N", [2, 3])
def test_dicke_matches_explicit_qubits(N):
    omega, omega0, g, cutoff = 1.0, 0.9, 0.6, 30
    ours = eig(build_dicke(N, omega, omega0, g, cutoff), 20)
    oracle = qubit_dicke_spectrum(N, omega, omega0, g, cutoff, 20)
    assert np.max(np.abs(ours - oracle)) <= 1e-10


def test_dicke_single_spin_is_qrm():
    p = ModelParams(omega=1.0, g=0.45, omega0=0.8, fock_cutoff=25)
    assert np.allclose(eig(build_dicke(1, 1.0, 0.8, 0.45, 25)), eig(build_qrm(p)), atol=1e-12)


def test_dicke_conserves_total_pseudospin():
    op = build_dicke(3, 1.0, 0.7, 0.5, 10)
    Fx, Fy, Fz = (s.matrix for s in spin_operators(1.5))
    F2 = np.kron(np.eye(10), Fx @ Fx + Fy @ Fy + Fz @ Fz)
    H = op.matrix
    assert np.max(np.abs(F2 @ H - H @ F2)) <= 1e-12 * np.max(np.abs(H))


def test_dicke_rejects_bad_n():
    with pytest.raises(ValidationError):
        build_dicke(0, 1.0, 1.0, 0.1, 10)
    with pytest.raises(ValidationError):
        build_dicke(1.5, 1.0, 1.0, 0.1, 10)


# ---------------------------------------------------------------- cutoff


def test_cutoff_uncoupled_minimal():
    p = ModelParams(omega=1.0, omega0=0.5, F=0.5)
    assert check_cutoff_convergence(p, 10) == math.ceil(10 / 2) + 1


def test_cutoff_deep_strong():
    p = ModelParams(omega=1.0, g=3.0, omega0=1.0, F=0.5)
    c = check_cutoff_convergence(p, 30)
    assert 100 <= c <= 1000
    p = replace(p, fock_cutoff=c)
    e = solve_model(p, 30).energies
    e2 = solve_model(replace(p, fock_cutoff=2 * c), 30).energies
    assert np.max(np.abs(e - e2) / np.maximum(np.abs(e2), 1.0)) < 1e-10


def test_cutoff_tolerance_monotone():
    p = ModelParams(omega=1.0, g=1.2, omega0=0.7, F=1)
    cutoffs = [check_cutoff_convergence(p, 12, tol) for tol in (1e-4, 1e-7, 1e-10, 1e-12)]
    assert cutoffs == sorted(cutoffs)


def test_cutoff_cap_raises():
    p = ModelParams(omega=1.0, g=6.0, omega0=1.0)
    with pytest.raises(ConvergenceError):
        check_cutoff_convergence(p, 10, cap=64)


# ---------------------------------------------------------------- position synthesis


def test_hermite_functions_orthonormal_to_high_order():
    u = np.linspace(-45, 45, 20001)
    phi = hermite_functions(300, u)
    gram = phi @ phi.T * (u[1] - u[0])
    assert np.all(np.isfinite(phi))
    assert np.max(np.abs(gram - np.eye(301))) < 1e-10


def test_hermite_low_orders_closed_form():
    u = np.linspace(-5, 5, 101)
    phi = hermite_functions(2, u)
    g0 = math.pi**-0.25 * np.exp(-u**2 / 2)
    assert np.allclose(phi[0], g0, atol=1e-15)
    assert np.allclose(phi[1], math.sqrt(2) * u * g0, atol=1e-14)
    assert np.allclose(phi[2], (2 * u**2 - 1) / math.sqrt(2) * g0, atol=1e-14)


def _grid(x0, half_width=30, n=4001):
    return np.linspace(-half_width * x0, half_width * x0, n)


def test_uncoupled_ground_state_gaussian():
    x0 = 2.5e-9
    p = ModelParams(omega=1.0, omega0=1.0, fock_cutoff=8)
    spec = solve_model(p, 4)
    x = _grid(x0)
    (psi,) = synthesize_position_states(p, spec, 0.0, x0, x, indices=[0])
    density = np.sum(np.abs(psi.amplitudes) ** 2, axis=1) * psi.dx
    mean = np.sum(density * x)
    rms = math.sqrt(np.sum(density * (x - mean) ** 2))
    assert psi.norm() == pytest.approx(1.0, abs=1e-10)
    assert abs(mean) < 1e-12 * x0
    assert rms == pytest.approx(x0, rel=1e-8)
    # spin-down (m = -1/2) Gaussian
    assert np.allclose(np.abs(psi.amplitudes[:, 1]), 0.0)


@given(st.floats(0.0, 2.0), st.floats(-1.5, 1.5), st.sampled_from([0.5, 1.0]))
def test_synthesized_norms(g, omega0, F):
    p = converged_params(ModelParams(omega=1.0, g=g, omega0=omega0, F=F), 8, tol=1e-8)
    spec = solve_model(p, 8)
    x0 = 1.0
    x = np.linspace(-60, 60, 6001)
    for psi in synthesize_position_states(p, spec, 0.0, x0, x):
        assert psi.norm() == pytest.approx(1.0, abs=1e-8)


def test_zero_splitting_ground_pair_displaced():
    g, x0 = 1.3, 1.0
    p = converged_params(ModelParams(omega=1.0, g=g, omega0=0.0), 2)
    spec = solve_model(p, 2)
    x = np.linspace(-40, 40, 8001)
    states = synthesize_position_states(p, spec, 0.0, x0, x)
    plus = sum(np.abs(s.amplitudes[:, 0] + s.amplitudes[:, 1]) ** 2 / 2 for s in states)
    minus = sum(np.abs(s.amplitudes[:, 0] - s.amplitudes[:, 1]) ** 2 / 2 for s in states)
    d = 2 * g * x0 / p.omega
    for density, center in ((plus, -d), (minus, +d)):
        density = density / np.sum(density)
        assert np.sum(density * x) == pytest.approx(center, abs=1e-8)
        expected = np.exp(-((x - center) ** 2) / (2 * x0**2))
        assert np.allclose(density, expected / expected.sum(), atol=1e-10)


def test_coverage_error_reports_extent():
    p = converged_params(ModelParams(omega=1.0, g=2.0, omega0=1.0), 10)
    spec = solve_model(p, 10)
    x = np.linspace(-5, 5, 1001)
    with pytest.raises(CoverageError) as info:
        synthesize_position_states(p, spec, 0.0, 1.0, x)
    assert info.value.required_extent > 5


def test_synthesis_rejects_bad_grid():
    p = ModelParams(omega=1.0, fock_cutoff=4)
    spec = solve_model(p, 2)
    with pytest.raises(ValidationError):
        synthesize_position_states(p, spec, 0.0, 1.0, np.array([0.0, 1.0, 3.0]))
