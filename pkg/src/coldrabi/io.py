"""Scenario files, their validation, and deterministic CSV/JSON output.

A scenario is a flat mapping of keys to values plus a ``command``. It can
be written as JSON or as ``key = value`` lines (values are parsed as JSON
when possible, otherwise kept as strings). Every command has a fixed key
schema; unknown keys and missing required keys are rejected by name, and
defaults are filled in so the resolved scenario can be echoed verbatim.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .units import parse_spin

COMMANDS = ("params", "spectrum", "lattice-spectrum", "compare", "sweep", "evolve")
FORMATS = ("csv", "json", "both")
REQUIRED = object()


@dataclass(frozen=True)
class Key:
    name: str
    kind: str
    default: object
    help: str
    choices: tuple = ()

    @property
    def required(self) -> bool:
        return self.default is REQUIRED

    def coerce(self, value, where=""):
        label = f"{where}{self.name}"
        if value is None:
            if self.kind.endswith("?"):
                return None
            raise ValidationError(f"key {label!r} may not be null")
        kind = self.kind.rstrip("?")
        try:
            if kind == "float":
                if isinstance(value, bool):
                    raise TypeError
                out = float(value)
                if not math.isfinite(out):
                    raise ValueError
            elif kind == "int":
                if isinstance(value, bool) or float(value) != int(float(value)):
                    raise ValueError
                out = int(float(value))
            elif kind == "bool":
                if isinstance(value, str) and value.lower() in ("true", "false"):
                    out = value.lower() == "true"
                elif isinstance(value, bool):
                    out = value
                else:
                    raise TypeError
            elif kind == "spin":
                out = parse_spin(value)
            elif kind == "str":
                if not isinstance(value, str):
                    raise TypeError
                out = value
            elif kind == "floats":
                if isinstance(value, (int, float)) and not isinstance(value, bool):
                    value = [value]
                out = [float(v) for v in value]
                if not out or not all(math.isfinite(v) for v in out):
                    raise ValueError
            elif kind in ("list", "dict"):
                if not isinstance(value, list if kind == "list" else dict):
                    raise TypeError
                out = value
            else:  # pragma: no cover
                raise AssertionError(kind)
        except ValidationError as exc:
            raise ValidationError(f"key {label!r}: {exc}") from None
        except (TypeError, ValueError):
            raise ValidationError(f"key {label!r}: expected {kind}, got {value!r}") from None
        if self.choices and out not in self.choices:
            raise ValidationError(f"key {label!r}: must be one of {', '.join(self.choices)}, got {out!r}")
        return out


def _keys(*items):
    return {k.name: k for k in items}


COMMON = _keys(
    Key("output", "str", "coldrabi_out", "path prefix for output files"),
    Key("format", "str", "both", "output format", FORMATS),
)

MODEL = _keys(
    Key("omega", "float", REQUIRED, "mode frequency (rad/s, or 1 for dimensionless runs)"),
    Key("g", "float", 0.0, "linear coupling, same unit as omega"),
    Key("omega0", "float", 0.0, "spin splitting, same unit as omega"),
    Key("g_eps", "float", 0.0, "drive along F_x, same unit as omega"),
    Key("g2", "float", 0.0, "quadratic coupling, same unit as omega"),
    Key("F", "spin", 0.5, "spin quantum number, e.g. 0.5 or \"3/2\""),
    Key("fock_cutoff", "int", 64, "number of Fock states"),
)

LATTICE_BASE = _keys(
    Key("species", "str", REQUIRED, "species name from the bundled registry, e.g. Rb87-F1"),
    Key("lambda_t", "float", REQUIRED, "trapping-lattice wavelength (m)"),
    Key("lambda_c", "float?", None, "coupling-lattice wavelength (m); null derives it from configuration"),
    Key("eps", "float", 0.0, "homogeneous x-field (T)"),
    Key("phase", "float", 0.0, "coupling-lattice phase offset (rad)"),
    Key("configuration", "str", "LinThetaLin", "lattice geometry",
        ("LinThetaLin", "TwoLattice2to1", "TwoLattice3to2")),
)

LATTICE = dict(LATTICE_BASE, **_keys(
    Key("V0", "float", REQUIRED, "trap depth in units of the recoil energy"),
    Key("Bx", "float", 0.0, "fictitious-field amplitude (T); ignored when a target is set"),
    Key("Bz", "float", 0.0, "bias field (T); ignored when resonance is true"),
    Key("target_ratio", "float?", None, "tune Bx so that g_eff/omega_eff equals this"),
    Key("target_g_hz", "float?", None, "tune Bx so that g_eff/2pi equals this (Hz)"),
    Key("resonance", "bool", False, "set Bz so that omega0 = omega_eff"),
))

LATTICE_NUMERICS = _keys(
    Key("n_points", "int", 2048, "grid points per site (power of two >= 128)"),
    Key("fd_order", "int", 2, "finite-difference order of the kinetic term", ),
)

COMPARE_NUMERICS = dict(LATTICE_NUMERICS, **_keys(
    Key("n_states", "int", 30, "number of states compared"),
    Key("cutoff_tol", "float", 1e-10, "relative tolerance of the Fock cutoff convergence"),
))

SCHEMAS = {
    "params": LATTICE,
    "spectrum": dict(MODEL, **_keys(
        Key("n_states", "int", 10, "number of eigenpairs reported"),
        Key("converge_cutoff", "bool", False, "replace fock_cutoff by the converged one"),
        Key("cutoff_tol", "float", 1e-10, "relative tolerance of the cutoff convergence"),
        Key("cutoff_cap", "int", 4096, "largest cutoff tried before giving up"),
    )),
    "lattice-spectrum": dict(LATTICE, **LATTICE_NUMERICS, **_keys(
        Key("n_states", "int", 30, "number of eigenpairs reported"),
    )),
    "compare": dict(LATTICE, **COMPARE_NUMERICS, **_keys(
        Key("grid_check", "bool", True, "also solve on a doubled grid and report the change"),
    )),
    "sweep": dict(LATTICE_BASE, **COMPARE_NUMERICS, **_keys(
        Key("ratios", "floats", REQUIRED, "list of g_eff/omega_eff values"),
        Key("depths", "floats", REQUIRED, "list of V0 values (units of E_r)"),
        Key("omega0_ratio", "float", 1.0, "omega0 / omega_eff at every point"),
        Key("workers", "int", 1, "worker processes"),
        Key("grid_check", "bool", False, "also solve on a doubled grid at every point"),
    )),
    "evolve": _keys(
        Key("segments", "list", REQUIRED,
            "list of {duration, model: {...}} or {duration, lattice: {...}}; "
            "durations in s, or in 1/omega for dimensionless models"),
        Key("initial", "dict?", None, "initial state {kind: fock|coherent|ground, n, m, alpha, segment}"),
        Key("sample_rate", "float", REQUIRED, "samples per unit time"),
        Key("n_points", "int", 1024, "grid points per site for lattice segments"),
        Key("fd_order", "int", 2, "finite-difference order for lattice segments"),
        Key("readout_levels", "int", 40, "Fock levels read out for lattice segments"),
    ),
}

INITIAL = _keys(
    Key("kind", "str", "ground", "initial state type", ("fock", "coherent", "ground")),
    Key("n", "int", 0, "Fock label"),
    Key("m", "float?", None, "spin projection m_F"),
    Key("alpha", "floats", [0.0, 0.0], "coherent amplitude as [re, im]"),
    Key("segment", "int", 0, "segment whose ground state is used"),
)


def schema_for(command):
    if command not in SCHEMAS:
        raise ValidationError(f"unknown command {command!r}; choose one of {', '.join(COMMANDS)}")
    return dict(COMMON, **SCHEMAS[command])


def _resolve(values: dict, schema: dict, where=""):
    unknown = sorted(set(values) - set(schema))
    if unknown:
        raise ValidationError(f"unknown key {where}{unknown[0]!r}")
    out = {}
    for name, key in schema.items():
        if name in values:
            out[name] = key.coerce(values[name], where)
        elif key.required:
            raise ValidationError(f"missing required key {where}{name!r}")
        else:
            out[name] = key.default
    return out


def _resolve_segments(segments):
    resolved = []
    for i, seg in enumerate(segments):
        where = f"segments[{i}]."
        if not isinstance(seg, dict):
            raise ValidationError(f"{where[:-1]} must be a mapping")
        kinds = [k for k in ("model", "lattice") if k in seg]
        unknown = sorted(set(seg) - {"duration", "model", "lattice"})
        if unknown:
            raise ValidationError(f"unknown key {where}{unknown[0]!r}")
        if len(kinds) != 1:
            raise ValidationError(f"{where[:-1]} needs exactly one of 'model' or 'lattice'")
        if "duration" not in seg:
            raise ValidationError(f"missing required key {where}'duration'")
        kind = kinds[0]
        schema = MODEL if kind == "model" else {k: v for k, v in LATTICE.items()}
        body = seg[kind]
        if not isinstance(body, dict):
            raise ValidationError(f"{where}{kind} must be a mapping")
        duration = Key("duration", "float", REQUIRED, "").coerce(seg["duration"], where)
        if duration < 0:
            raise ValidationError(f"key {where}'duration' must be >= 0")
        resolved.append({"duration": duration, kind: _resolve(body, schema, f"{where}{kind}.")})
    if not resolved:
        raise ValidationError("key 'segments' must list at least one segment")
    return resolved


def resolve_scenario(values: dict) -> dict:
    """Validate a raw mapping and fill in defaults. Returns a new dict."""
    if not isinstance(values, dict):
        raise ValidationError("a scenario must be a mapping of keys to values")
    values = dict(values)
    command = values.pop("command", None)
    if command is None:
        raise ValidationError("missing required key 'command'")
    schema = schema_for(command)
    out = _resolve(values, schema)
    if command == "evolve":
        out["segments"] = _resolve_segments(out["segments"])
        out["initial"] = _resolve(out["initial"] or {}, INITIAL, "initial.")
    if command in ("params", "lattice-spectrum", "compare"):
        if out["target_ratio"] is not None and out["target_g_hz"] is not None:
            raise ValidationError("set at most one of 'target_ratio' and 'target_g_hz'")
    out["command"] = command
    return out


def read_scenario_text(text: str, path="<scenario>") -> dict:
    """Parse JSON, or ``key = value`` lines (``#`` starts a comment)."""
    stripped = text.strip()
    if not stripped:
        return {}
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: top level must be an object")
        return data
    data = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in data:
            raise ValidationError(f"{path}:{lineno}: duplicate key {key!r}")
        data[key] = parse_value(raw)
    return data


def parse_value(raw: str):
    """JSON value if ``raw`` parses as one, else the bare string."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_scenario(path=None, overrides=None, command=None) -> dict:
    """Read ``path`` (may be None), apply ``overrides``, and resolve."""
    raw = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = read_scenario_text(fh.read(), str(path))
    if command is not None:
        if raw.get("command", command) != command:
            raise ValidationError(f"scenario file is for {raw['command']!r}, not {command!r}")
        raw["command"] = command
    raw.update(overrides or {})
    return resolve_scenario(raw)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def canonical_json(obj) -> str:
    """Sorted keys, two-space indent, trailing newline; non-finite floats become null."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def format_float(value) -> str:
    return format(float(value), ".17g")


def write_csv(path, columns, rows):
    """Write rows with a fixed header; floats at 17 significant digits."""
    _ensure_parent(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return "" if value is None else str(value)


def write_json(path, obj):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(obj))


def _ensure_parent(path):
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


@dataclass
class Table:
    """One CSV file's worth of output."""

    suffix: str
    columns: list
    rows: list


def emit(scenario: dict, tables, payload: dict):
    """Write ``tables`` as CSV and ``payload`` plus the scenario as JSON.

    Files are ``<output>_<suffix>.csv`` and ``<output>.json`` depending on
    ``format``. Returns the list of paths written.
    """
    prefix = scenario["output"]
    fmt = scenario["format"]
    written = []
    if fmt in ("csv", "both"):
        for table in tables:
            path = f"{prefix}_{table.suffix}.csv"
            write_csv(path, table.columns, table.rows)
            written.append(path)
    if fmt in ("json", "both"):
        path = f"{prefix}.json"
        doc = {"scenario": scenario}
        doc.update(payload)
        write_json(path, doc)
        written.append(path)
    return written
