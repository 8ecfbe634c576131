"""State matching and the lattice-versus-ideal-model discrepancy metrics.

For one lattice configuration the reference is the spin-F Rabi model built
from the extracted effective parameters, with its eigenvectors mapped onto
the lattice position grid. Two numbers summarize the comparison over the
lowest N states:

* the mean relative energy discrepancy, with both spectra measured from
  their own ground state and the ground state itself left out;
* the mean state infidelity, ``1 - |<psi_th|psi_exp>|^2`` averaged over the
  N states, where near-degenerate clusters use the subspace fidelity.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import RabiError, ValidationError
from .lattice import (
    DEFAULT_N_POINTS,
    Grid,
    LatticeConfig,
    amplitude_for_target_ratio,
    extract_effective_params,
    lattice_spectrum,
    lattice_wavefunctions,
)
from .models import converged_params, solve_model, synthesize_position_states
from .units import HBAR, ModelParams, drive_strength, field_for_tls_frequency

DEFAULT_N_STATES = 30
CLUSTER_RTOL = 1e-6
EXTRA_STATES = 10


@dataclass
class StatePair:
    index: int
    E_th: float
    E_exp: float
    overlap2: float
    fidelity: float
    excluded: bool = False

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "E_th": self.E_th,
            "E_exp": self.E_exp,
            "overlap2": self.overlap2,
            "fidelity": self.fidelity,
            "excluded": self.excluded,
        }


@dataclass
class ComparisonReport:
    """Per-state pairing and the two summary metrics.

    Energies in ``pairs`` are ground-referenced and in units of
    ``hbar * omega_eff``.
    """

    n_states: int
    pairs: list
    delta_E_bar: float
    infidelity_bar: float
    config: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "delta_E_bar": self.delta_E_bar,
            "infidelity_bar": self.infidelity_bar,
            "config": self.config,
            "flags": self.flags,
            "pairs": [p.to_dict() for p in self.pairs],
        }


def _overlap_matrix(th_wfs, exp_wfs):
    a = np.stack([w.amplitudes.ravel() for w in th_wfs])
    b = np.stack([w.amplitudes.ravel() for w in exp_wfs])
    g0, g1 = th_wfs[0], exp_wfs[0]
    if g0.amplitudes.shape != g1.amplitudes.shape or not np.allclose(
        g0.grid, g1.grid, rtol=0, atol=1e-9 * g0.dx
    ):
        raise ValidationError("theory and lattice states are not on the same grid and spin basis")
    return (a.conj() @ b.T) * g0.dx


def _clusters(e_th, e_exp, rel_tol):
    span_th = e_th[-1] - e_th[0]
    span_exp = e_exp[-1] - e_exp[0]
    groups, start = [], 0
    for i in range(1, len(e_th)):
        joined = (e_th[i] - e_th[i - 1] < rel_tol * span_th) or (
            e_exp[i] - e_exp[i - 1] < rel_tol * span_exp
        )
        if not joined:
            groups.append(range(start, i))
            start = i
    groups.append(range(start, len(e_th)))
    return groups


def match_states(th_energies, th_wfs, exp_energies, exp_wfs, n, cluster_rtol=CLUSTER_RTOL):
    """Pair the lowest ``n`` theory states with lattice states.

    States are paired in energy order. Inside clusters of near-degenerate
    levels (gap below ``cluster_rtol`` times the energy span, in either
    spectrum) the pairing maximizes the summed squared overlap, and each
    member's fidelity is the cluster's subspace fidelity. Clusters straddling
    index ``n`` are resolved with every state available.

    Returns a list of :class:`StatePair` with ground-referenced energies.
    """
    m = min(len(th_energies), len(exp_energies), len(th_wfs), len(exp_wfs))
    if m < n:
        raise ValidationError(f"need {n} states in both sets, have {m}")
    e_th = np.asarray(th_energies[:m], dtype=float) - th_energies[0]
    e_exp = np.asarray(exp_energies[:m], dtype=float) - exp_energies[0]
    overlaps = np.abs(_overlap_matrix(th_wfs[:m], exp_wfs[:m])) ** 2
    amplitudes = _overlap_matrix(th_wfs[:m], exp_wfs[:m])

    pairs = []
    for group in _clusters(e_th, e_exp, cluster_rtol):
        if group.start >= n:
            break
        idx = np.arange(group.start, group.stop)
        block = overlaps[np.ix_(idx, idx)]
        rows, cols = linear_sum_assignment(-block)
        if len(idx) > 1:
            # the basis inside a cluster is arbitrary; report its principal overlaps
            principal = np.linalg.svd(amplitudes[np.ix_(idx, idx)], compute_uv=False) ** 2
            fid = float(np.sum(principal) / len(idx))
        else:
            principal = [overlaps[idx[0], idx[0]]]
            fid = float(principal[0])
        for k, (r, c) in enumerate(sorted(zip(rows, cols))):
            i, j = idx[r], idx[c]
            pairs.append(StatePair(
                index=int(i),
                E_th=float(e_th[i]),
                E_exp=float(e_exp[j]),
                overlap2=float(min(principal[k], 1.0)),
                fidelity=float(min(fid, 1.0)),
            ))
    pairs = sorted(pairs, key=lambda p: p.index)[:n]
    return pairs


def mean_energy_discrepancy(pairs, zero_rtol=CLUSTER_RTOL) -> float:
    """Mean of ``|1 - E_exp / E_th|`` over ground-referenced excited states.

    The ground state, and any state whose referenced energy is within
    ``zero_rtol`` of the energy span (so that the ratio is undefined), are
    excluded and marked as such on the pairs.
    """
    if not pairs:
        raise ValidationError("no state pairs")
    span = max(abs(p.E_th) for p in pairs)
    terms = []
    for p in pairs:
        p.excluded = p.index == 0 or abs(p.E_th) <= zero_rtol * span
        if not p.excluded:
            terms.append(abs(1.0 - p.E_exp / p.E_th))
    if not terms:
        raise ValidationError("every state was excluded from the energy discrepancy")
    return float(np.mean(terms))


def mean_infidelity(pairs) -> float:
    if not pairs:
        raise ValidationError("no state pairs")
    return float(np.clip(np.mean([1.0 - p.fidelity for p in pairs]), 0.0, 1.0))


def reference_params(config: LatticeConfig, eff=None) -> ModelParams:
    """Rabi-model parameters, in units of ``omega_eff``, matching a lattice config."""
    if eff is None:
        eff = extract_effective_params(config)
    w = eff.omega_eff
    return ModelParams(
        omega=1.0,
        g=eff.g_sign * eff.g_eff / w,
        omega0=eff.omega0 / w,
        g_eps=drive_strength(config.eps, config.species.gF) / w,
        F=config.F,
    )


def compare_point(config: LatticeConfig, n_states=DEFAULT_N_STATES, n_points=DEFAULT_N_POINTS,
                  fd_order=2, cutoff_tol=1e-10, grid_check=True) -> ComparisonReport:
    """Compare one lattice configuration with its effective Rabi model."""
    eff = extract_effective_params(config)
    n_solve = n_states + EXTRA_STATES
    grid = Grid.for_site(config, n_points)

    lat = lattice_spectrum(config, grid, n_solve, fd_order)
    exp_wfs = lattice_wavefunctions(lat, grid, config.F)

    p = converged_params(reference_params(config, eff), n_solve, cutoff_tol)
    th = solve_model(p, n_solve)
    th_wfs = synthesize_position_states(p, th, grid.center, eff.x0_eff, grid.x)

    e_exp = lat.energies * config.E_r / (HBAR * eff.omega_eff)
    pairs = match_states(th.energies, th_wfs, e_exp, exp_wfs, n_states)
    flags = {"fock_cutoff": p.fock_cutoff, "n_points": n_points, "fd_order": fd_order}
    if grid_check:
        fine = lattice_spectrum(config, grid.refined(), n_states, fd_order).energies
        fine = fine - fine[0]
        coarse = lat.energies[:n_states] - lat.energies[0]
        flags["grid_relative_change"] = float(np.max(np.abs(fine - coarse)) / (fine[-1] or 1.0))
    snapshot = config.to_dict()
    snapshot.update({k: v for k, v in eff.to_dict().items()})
    return ComparisonReport(
        n_states=n_states,
        pairs=pairs,
        delta_E_bar=mean_energy_discrepancy(pairs),
        infidelity_bar=mean_infidelity(pairs),
        config=snapshot,
        flags=flags,
    )


def configure_point(template: LatticeConfig, ratio, V0, omega0_ratio=1.0) -> LatticeConfig:
    """Lattice config at depth ``V0`` tuned to ``g_eff/omega_eff = ratio``.

    ``Bz`` is set so the spin splitting is ``omega0_ratio * omega_eff``
    (resonance by default).
    """
    base = replace(template, V0=V0, Bx=0.0, Bz=0.0)
    Bx = amplitude_for_target_ratio(base, ratio)
    tuned = replace(base, Bx=Bx)
    eff = extract_effective_params(tuned)
    Bz = field_for_tls_frequency(omega0_ratio * eff.omega_eff, template.species.gF)
    return replace(tuned, Bz=Bz)


def _sweep_job(args):
    template, ratio, V0, omega0_ratio, kwargs = args
    try:
        config = configure_point(template, ratio, V0, omega0_ratio)
        report = compare_point(config, **kwargs)
    except RabiError as exc:
        report = ComparisonReport(
            n_states=kwargs.get("n_states", DEFAULT_N_STATES), pairs=[],
            delta_E_bar=math.nan, infidelity_bar=math.nan,
            config=replace(template, V0=V0).to_dict(),
            flags={"error": f"{type(exc).__name__}: {exc}"},
        )
    report.config["V0"] = V0
    report.config["target_ratio"] = ratio
    return report


def sweep(template: LatticeConfig, ratios, depths, omega0_ratio=1.0, workers=1, **kwargs):
    """One :class:`ComparisonReport` per (depth, ratio), ordered depth-major.

    Failed points carry NaN metrics and an ``error`` flag; the sweep goes on.
    ``workers > 1`` fans points out to processes without changing results.
    """
    ratios = [float(r) for r in ratios]
    if any(r < 0 for r in ratios):
        raise ValidationError("coupling ratios must be non-negative")
    jobs = [(template, r, float(V0), omega0_ratio, kwargs) for V0 in depths for r in ratios]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_job, jobs))
    return [_sweep_job(job) for job in jobs]
