"""Command-line entry point.

    coldrabi <command> [--scenario FILE] [--key value ...]
    coldrabi run FILE

Exit codes: 0 success, 1 invalid input, 2 numerical non-convergence,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import io
from .compare import compare_point, sweep
from .dynamics import InitialState, QuenchProtocol, Segment, run_protocol
from .errors import ConvergenceError, RabiError, ValidationError
from .lattice import (
    Configuration,
    Grid,
    LatticeConfig,
    amplitude_for_target_g,
    amplitude_for_target_ratio,
    extract_effective_params,
    lattice_spectrum,
)
from .models import converged_params, solve_model
from .operators import parity_operator
from .units import (
    H_PLANCK,
    TWO_PI,
    ModelParams,
    coupling_strength,
    field_for_tls_frequency,
    gradient_from_amplitude,
    oscillator_length,
    tls_frequency,
)

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_IO = 0, 1, 2, 3


def model_params(s: dict) -> ModelParams:
    return ModelParams(**{k: s[k] for k in io.MODEL})


def lattice_config(s: dict) -> LatticeConfig:
    """LatticeConfig from resolved keys, with any target/resonance tuning applied."""
    kwargs = {k: s[k] for k in ("species", "lambda_t", "eps", "phase", "configuration")}
    kwargs["V0"] = s["V0"]
    lambda_c = s["lambda_c"]
    if lambda_c is None:
        lambda_c = s["lambda_t"] / Configuration(s["configuration"]).wavelength_ratio
    config = LatticeConfig(lambda_c=lambda_c, **kwargs)
    if "Bx" not in s:
        return config
    config = replace(config, Bx=s["Bx"], Bz=s["Bz"])
    if s.get("target_ratio") is not None:
        config = replace(config, Bx=amplitude_for_target_ratio(replace(config, Bz=0.0), s["target_ratio"]))
    elif s.get("target_g_hz") is not None:
        config = replace(config, Bx=amplitude_for_target_g(replace(config, Bz=0.0), TWO_PI * s["target_g_hz"]))
    if s.get("resonance"):
        eff = extract_effective_params(config)
        config = replace(config, Bz=field_for_tls_frequency(eff.omega_eff, config.species.gF))
    return config


def derived_quantities(config: LatticeConfig) -> dict:
    """Every conversion from the lattice inputs, in SI (frequencies in Hz)."""
    omega = config.omega_trap
    x0 = oscillator_length(omega, config.species)
    bx = gradient_from_amplitude(config.Bx, config.lambda_c)
    eff = extract_effective_params(config)
    return {
        "E_r_J": config.E_r,
        "E_r_hz": config.E_r / H_PLANCK,
        "omega_hz": omega / TWO_PI,
        "x0_m": x0,
        "bx_T_per_m": bx,
        "g_linear_hz": coupling_strength(bx, config.species.gF, x0) / TWO_PI,
        "omega0_hz": tls_frequency(config.Bz, config.species.gF) / TWO_PI,
        "omega_eff_hz": eff.omega_eff / TWO_PI,
        "g_eff_hz": eff.g_eff / TWO_PI,
        "ratio": eff.ratio,
        "x_star_m": eff.x_star,
        "x0_eff_m": eff.x0_eff,
        "branch_m": eff.branch,
        "g_sign": eff.g_sign,
        "Bx_T": config.Bx,
        "Bz_T": config.Bz,
    }


def cmd_params(s):
    config = lattice_config(s)
    values = derived_quantities(config)
    names = list(values)
    for name in names:
        print(f"{name} = {io.format_float(values[name])}")
    return [io.Table("params", names, [[values[n] for n in names]])], {"derived": values,
                                                                     "config": config.to_dict()}


def cmd_spectrum(s):
    p = model_params(s)
    if s["converge_cutoff"]:
        p = converged_params(p, s["n_states"], s["cutoff_tol"], s["cutoff_cap"])
    if s["n_states"] > p.dim:
        raise ValidationError(f"n_states={s['n_states']} exceeds the basis dimension {p.dim}")
    spec = solve_model(p, s["n_states"])
    P = np.diag(parity_operator(spec.basis).matrix) if spec.basis is not None else None
    parity = [float(np.real(np.vdot(v, P * v))) for v in spec.states.T]
    rows = [[i, e, par] for i, (e, par) in enumerate(zip(spec.energies, parity))]
    print(f"{len(rows)} eigenvalues at fock_cutoff={p.fock_cutoff}; E0 = {io.format_float(spec.energies[0])}")
    return [io.Table("spectrum", ["index", "energy", "parity"], rows)], {
        "params": p.to_dict(), "energies": spec.energies, "parity": parity,
        "max_residual": float(np.max(spec.residuals)),
    }


def cmd_lattice_spectrum(s):
    config = lattice_config(s)
    grid = Grid.for_site(config, s["n_points"])
    spec = lattice_spectrum(config, grid, s["n_states"], s["fd_order"])
    e_hz = spec.energies * config.E_r / H_PLANCK
    rows = [[i, e, h] for i, (e, h) in enumerate(zip(spec.energies, e_hz))]
    print(f"{len(rows)} lattice eigenvalues; E0 = {io.format_float(spec.energies[0])} E_r")
    return [io.Table("spectrum", ["index", "energy_Er", "energy_hz"], rows)], {
        "config": config.to_dict(), "effective": extract_effective_params(config).to_dict(),
        "energies_Er": spec.energies,
    }


STATE_COLUMNS = ["index", "E_th", "E_exp", "overlap2", "fidelity", "excluded"]


def cmd_compare(s):
    config = lattice_config(s)
    report = compare_point(config, s["n_states"], s["n_points"], s["fd_order"], s["cutoff_tol"],
                           s["grid_check"])
    rows = [[getattr(p, c) for c in STATE_COLUMNS] for p in report.pairs]
    eff = report.config
    summary_cols = ["V0", "ratio", "omega_eff", "g_eff", "delta_E_bar", "infidelity_bar"]
    summary = [config.V0, eff["ratio"], eff["omega_eff"], eff["g_eff"],
               report.delta_E_bar, report.infidelity_bar]
    print(f"g_eff/omega_eff = {eff['ratio']:.6g}: delta_E_bar = {report.delta_E_bar:.6g}, "
          f"infidelity_bar = {report.infidelity_bar:.6g}")
    return [io.Table("states", STATE_COLUMNS, rows),
            io.Table("summary", summary_cols, [summary])], {"report": report.to_dict()}


def cmd_sweep(s):
    template_keys = dict(s, V0=s["depths"][0], Bx=0.0, Bz=0.0)
    template = lattice_config({k: v for k, v in template_keys.items() if k not in ("Bx", "Bz")})
    kwargs = {k: s[k] for k in ("n_states", "n_points", "fd_order", "cutoff_tol", "grid_check")}
    reports = sweep(template, s["ratios"], s["depths"], s["omega0_ratio"], s["workers"], **kwargs)
    rows = [[r.config["V0"], r.config["target_ratio"], r.delta_E_bar, r.infidelity_bar] for r in reports]
    failed = sum(1 for r in reports if "error" in r.flags)
    print(f"{len(reports)} sweep points, {failed} failed")
    payload = {"points": [{k: v for k, v in r.to_dict().items() if k != "pairs"} for r in reports]}
    return [io.Table("sweep", ["V0", "ratio", "delta_E_bar", "infidelity_bar"], rows)], payload


def _protocol(s) -> QuenchProtocol:
    segments = []
    for seg in s["segments"]:
        if "model" in seg:
            segments.append(Segment(seg["duration"], model_params(seg["model"])))
        else:
            segments.append(Segment(seg["duration"], lattice_config(seg["lattice"])))
    init = dict(s["initial"])
    re, im = (init.pop("alpha") + [0.0, 0.0])[:2]
    initial = InitialState(alpha=complex(re, im), **init)
    return QuenchProtocol(tuple(segments), initial, s["n_points"], s["fd_order"], s["readout_levels"])


def cmd_evolve(s):
    result = run_protocol(_protocol(s), s["sample_rate"])
    names, table = result.columns()
    summary = result.summary()
    print(f"{summary['n_samples']} samples to t = {io.format_float(summary['t_final'])}")
    return [io.Table("timeseries", names, table.tolist())], {"summary": summary, "columns": names}


HANDLERS = {
    "params": cmd_params,
    "spectrum": cmd_spectrum,
    "lattice-spectrum": cmd_lattice_spectrum,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "evolve": cmd_evolve,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _describe(key: io.Key) -> str:
    parts = [key.help]
    if key.choices:
        parts.append(f"choices: {', '.join(key.choices)}")
    parts.append("required" if key.required else f"default: {io.canonical_json(key.default).strip()}")
    return "; ".join(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coldrabi", description="Rabi-model and optical-lattice workbench.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run the command named inside a scenario file")
    run.add_argument("scenario", help="scenario file (JSON or key = value lines)")
    for command in io.COMMANDS:
        p = sub.add_parser(command, help=f"{command} (see --help for every key)")
        p.add_argument("--scenario", help="scenario file; flags override its values")
        p.add_argument("--echo", action="store_true", help="print the resolved scenario and exit")
        for key in io.schema_for(command).values():
            p.add_argument(f"--{key.name}", dest=f"key_{key.name}", metavar="VALUE", help=_describe(key))
    return parser


def run_scenario(scenario: dict):
    tables, payload = HANDLERS[scenario["command"]](scenario)
    return io.emit(scenario, tables, payload)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "run":
            scenario = io.load_scenario(args.scenario)
        else:
            overrides = {k[4:]: io.parse_value(v) for k, v in vars(args).items()
                         if k.startswith("key_") and v is not None}
            scenario = io.load_scenario(args.scenario, overrides, args.command)
            if args.echo:
                sys.stdout.write(io.canonical_json(scenario))
                return EXIT_OK
        for path in run_scenario(scenario):
            print(f"wrote {path}")
        return EXIT_OK
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (RabiError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
