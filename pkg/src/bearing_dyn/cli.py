"""Scenario runner: JSON config in, CSV trajectory and JSON drift report out.

Exit codes: 0 when every enabled check is within tolerance, 2 when a check
fails, 1 on a malformed config or a runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from . import geometry as geo
from . import integrators as it
from . import planar as pl
from . import spherical as sp
from . import verification as ver

SEED_ENV = "BEARING_DYN_SEED"
EXIT_OK, EXIT_ERROR, EXIT_CHECK_FAILED = 0, 1, 2

_num = {"type": "number"}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_vec2 = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_mat3 = {"type": "array", "items": _vec3, "minItems": 3, "maxItems": 3}

_CHECK = {
    "type": "object",
    "properties": {
        "enabled": {"type": "boolean"},
        "tolerance": {"type": "number", "minimum": 0},
        "density": {"enum": ["sqrt_det", "unit"]},
        "t_end": {"type": "number", "exclusiveMinimum": 0},
        "h": {"type": "number", "exclusiveMinimum": 0},
        "R": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["tolerance"],
    "additionalProperties": False,
}

# check name -> (extractor, kind); "max" checks pass when value <= tolerance,
# "min" checks when value >= tolerance
CHECKS = {
    "integrals": (lambda r: r.max_relative_drift, "max"),
    "constraints": (lambda r: r.max_constraint_residual, "max"),
    "kinematics": (lambda r: r.diagnostics.get("space_frame_residual"), "max"),
    "orthogonality": (lambda r: r.diagnostics.get("orthogonality_drift"), "max"),
    "measure_transport": (lambda r: r.measure_transport_deviation, "max"),
    "divergence": (lambda r: r.diagnostics.get("divergence_residual"), "max"),
    "levelset_divergence": (lambda r: r.diagnostics.get("levelset_divergence_residual"), "max"),
    "divergence_closed_form": (lambda r: r.diagnostics.get("divergence_closed_form_gap"), "max"),
    "triangle": (lambda r: r.triangle_drift, "max"),
    "closed_form": (lambda r: r.diagnostics.get("closed_form_deviation"), "max"),
    "v_phi": (lambda r: r.diagnostics.get("v_phi_drift"), "max"),
    "oracle_trajectory": (lambda r: r.diagnostics.get("oracle_trajectory_divergence"), "max"),
    "oracle_derivative": (lambda r: r.diagnostics.get("oracle_derivative_agreement"), "max"),
    "lr_evolution": (lambda r: r.diagnostics.get("gamma_operator_evolution_residual"), "max"),
    "epsilon_limit": (lambda r: r.diagnostics.get("epsilon_limit_gap"), "max"),
    "convergence_order": (lambda r: r.diagnostics.get("convergence_order"), "min"),
    "admissible": (lambda r: 0.0 if r.admissible.get("all_samples", False) else 1.0, "max"),
}

CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "criterion": {"type": ["string", "null"]},
        "system": {"enum": list(ver.SYSTEMS)},
        "seed": {"type": "integer"},
        "params": {"type": "object"},
        "initial": {"type": "object"},
        "integration": {
            "type": "object",
            "properties": {
                "h": {"type": "number", "exclusiveMinimum": 0},
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "sample_every": {"type": "integer", "minimum": 1},
            },
            "required": ["h", "t_end"],
            "additionalProperties": False,
        },
        "checks": {
            "type": "object",
            "propertyNames": {"enum": sorted(CHECKS)},
            "additionalProperties": _CHECK,
        },
        "output": {
            "type": "object",
            "properties": {
                "csv_path": {"type": ["string", "null"]},
                "report_path": {"type": ["string", "null"]},
            },
            "additionalProperties": False,
        },
    },
    "required": ["system", "params", "initial", "integration"],
    "additionalProperties": False,
}

SPHERICAL_PARAMS_SCHEMA = {
    "type": "object",
    "properties": {
        "R": {"type": "number", "exclusiveMinimum": 0},
        "r": {"type": "number", "exclusiveMinimum": 0},
        "A": {"type": "number", "exclusiveMinimum": 0},
        "B": {"type": "number", "exclusiveMinimum": 0},
        "C": {"type": "number", "exclusiveMinimum": 0},
        "epsilon_override": {"type": ["number", "null"]},
        "balls": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"inertia": _num, "mass": _num, "spin": _num},
                "required": ["inertia", "mass"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["A", "B", "C", "balls"],
    "additionalProperties": False,
}

SPHERICAL_INITIAL_SCHEMA = {
    "type": "object",
    "properties": {
        "random": {"type": "boolean"},
        "omega": _vec3,
        "gammas": {"type": "array", "items": _vec3},
        "full": {"type": "boolean"},
        "g": _mat3,
        "g_list": {"type": "array", "items": _mat3},
    },
    "additionalProperties": False,
}

PLANAR_PARAMS_SCHEMA = {
    "type": "object",
    "properties": {
        "r": {"type": "number", "exclusiveMinimum": 0},
        "m": {"type": "number", "exclusiveMinimum": 0},
        "I": {"type": "number", "exclusiveMinimum": 0},
        "balls": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {"mass": _num, "inertia": _num},
                "required": ["mass", "inertia"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["r", "m", "I", "balls"],
    "additionalProperties": False,
}

PLANAR_INITIAL_SCHEMA = {
    "type": "object",
    "properties": {
        "random": {"type": "boolean"},
        "pose": _vec3,
        "velocity": _vec3,
        "centers": {"type": "array", "items": _vec2},
        "spin_z": {"type": "array", "items": _num},
    },
    "additionalProperties": False,
}

LEVELSET_INITIAL_SCHEMA = {
    "type": "object",
    "properties": {"d": _vec3, "y": _vec3},
    "required": ["d", "y"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
        system = cfg["system"]
        if system == "spherical":
            jsonschema.validate(cfg["params"], SPHERICAL_PARAMS_SCHEMA)
            jsonschema.validate(cfg["initial"], SPHERICAL_INITIAL_SCHEMA)
        else:
            jsonschema.validate(cfg["params"], PLANAR_PARAMS_SCHEMA)
            schema = LEVELSET_INITIAL_SCHEMA if system == "planar-levelset" else PLANAR_INITIAL_SCHEMA
            jsonschema.validate(cfg["initial"], schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(k) for k in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply ``a.b.c=value``; the value is parsed as JSON when possible, else kept as a string."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    node: Any = cfg
    for part in parts[:-1]:
        if isinstance(node, list):
            node = node[int(part)]
        else:
            node = node.setdefault(part, {})
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


# --- bundled scenarios ------------------------------------------------------------------


def _scenario_dir():
    return resources.files("bearing_dyn") / "scenarios"


def bundled_scenarios() -> dict[str, dict]:
    out = {}
    for entry in sorted(_scenario_dir().iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            out[entry.name[:-5]] = json.loads(entry.read_text())
    return out


def load_config(ref: str) -> dict:
    """Load a config from a path, or a bundled scenario by name."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
    else:
        bundled = _scenario_dir() / f"{ref}.json"
        if not bundled.is_file():
            raise ConfigError(f"no config file or bundled scenario named {ref!r}")
        text = bundled.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None


# --- building objects from a config -----------------------------------------------------


def build_params(cfg: dict):
    prm = cfg["params"]
    if cfg["system"] == "spherical":
        if not prm["balls"]:
            return sp.SphericalParams.free_body(prm["A"], prm["B"], prm["C"])
        balls = [sp.Ball(b["inertia"], b["mass"], b.get("spin", 0.0)) for b in prm["balls"]]
        return sp.SphericalParams(prm["R"], prm["r"], prm["A"], prm["B"], prm["C"], balls,
                                  epsilon_override=prm.get("epsilon_override"))
    balls = [pl.PlanarBall(b["mass"], b["inertia"]) for b in prm["balls"]]
    return pl.PlanarParams(prm["r"], prm["m"], prm["I"], balls)


def build_initial(cfg: dict, params, rng: np.random.Generator):
    ini = cfg["initial"]
    system = cfg["system"]
    if system == "spherical":
        if ini.get("random"):
            s = ver.random_spherical_state(params, rng)
        else:
            s = sp.SphericalState.create(ini["omega"], np.array(ini.get("gammas", []), dtype=float).reshape(-1, 3))
        if s.n != params.n:
            raise ConfigError(f"initial state has {s.n} ball directions, params have {params.n} balls")
        if ini.get("full"):
            return sp.FullSphericalState.create(s, ini.get("g"), ini.get("g_list"))
        return s
    if system == "planar-levelset":
        return pl.LevelSetParams(*ini["d"]), np.array(ini["y"], dtype=float)
    if ini.get("random"):
        return ver.random_planar_full(params, rng)
    centers = np.array(ini["centers"], dtype=float)
    if centers.shape != (params.n, 2):
        raise ConfigError(f"expected {params.n} ball centres")
    return pl.PlanarFullState.consistent(params, ini["pose"], ini["velocity"], centers, ini.get("spin_z"))


def report_options(checks: dict) -> dict:
    """Translate enabled checks into the extra computations ``drift_report`` must run."""
    opts: dict[str, Any] = {}
    on = {k: v for k, v in checks.items() if v.get("enabled", True)}
    if "measure_transport" in on:
        opts["measure"] = on["measure_transport"].get("density", "sqrt_det")
        if "t_end" in on["measure_transport"]:
            opts["measure_t_end"] = on["measure_transport"]["t_end"]
    if "divergence" in on or "divergence_closed_form" in on:
        opts["divergence"] = True
    if "levelset_divergence" in on:
        opts["levelset_divergence"] = True
    if "lr_evolution" in on:
        opts["lr_evolution"] = True
    if "epsilon_limit" in on:
        opts["epsilon_limit_R"] = on["epsilon_limit"].get("R", 1e9)
    if "convergence_order" in on:
        opts["convergence_order"] = True
        opts["order_h"] = on["convergence_order"].get("h", 0.05)
        opts["order_t_end"] = on["convergence_order"].get("t_end", 2.0)
    return opts


def evaluate_checks(report: ver.DriftReport, checks: dict) -> dict[str, dict]:
    results = {}
    for name, spec in sorted(checks.items()):
        if not spec.get("enabled", True):
            continue
        extract, kind = CHECKS[name]
        value = extract(report)
        tol = spec["tolerance"]
        if value is None or not np.isfinite(value):
            passed = False
        else:
            passed = value <= tol if kind == "max" else value >= tol
        results[name] = {"value": None if value is None else float(value), "tolerance": tol,
                         "kind": kind, "passed": bool(passed)}
    return results


def format_csv(table: ver.Table) -> str:
    lines = [",".join(table.header)]
    for row in table.rows:
        lines.append(",".join(format(float(x), ".17g") for x in row))
    return "\n".join(lines) + "\n"


def run_config(cfg: dict, quiet: bool = False) -> tuple[int, Optional[ver.DriftReport], dict]:
    validate_config(cfg)
    seed = cfg.get("seed", 0)
    if os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    rng = np.random.default_rng(seed)
    try:
        params = build_params(cfg)
        initial = build_initial(cfg, params, rng)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    integ = cfg["integration"]
    checks = cfg.get("checks", {})
    report = ver.drift_report(cfg["system"], params, initial, integ["h"], integ["t_end"], seed=seed,
                              sample_every=integ.get("sample_every", 10), **report_options(checks))
    results = evaluate_checks(report, checks)
    report.metadata["name"] = cfg.get("name")
    report.metadata["checks"] = results
    out = cfg.get("output", {})
    if out.get("csv_path"):
        Path(out["csv_path"]).write_text(format_csv(report.table))
    if out.get("report_path"):
        Path(out["report_path"]).write_text(report.to_json() + "\n")
    failed = [k for k, v in results.items() if not v["passed"]]
    if not quiet:
        for name, res in results.items():
            value = "n/a" if res["value"] is None else f"{res['value']:.3e}"
            rel = "<=" if res["kind"] == "max" else ">="
            status = "PASS" if res["passed"] else "FAIL"
            print(f"{status} {name}: {value} {rel} {res['tolerance']:.1e}")
    return (EXIT_CHECK_FAILED if failed else EXIT_OK), report, results


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        for ov in args.override or []:
            apply_override(cfg, ov)
        code, _, _ = run_config(cfg, quiet=args.quiet)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (ValueError, np.linalg.LinAlgError, FloatingPointError, geo.GeometryError,
            it.IntegrationAborted, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
    return EXIT_ERROR


def cmd_list(args) -> int:
    for name, cfg in bundled_scenarios().items():
        tag = cfg.get("criterion") or "-"
        print(f"{name:34s} {tag:5s} {cfg.get('description', '')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bearing-dyn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario config (path or bundled name)")
    run.add_argument("config")
    run.add_argument("--override", action="append", metavar="KEY=VALUE",
                     help="dotted-path config override, repeatable")
    run.add_argument("--quiet", action="store_true", help="suppress per-check output")
    run.set_defaults(func=cmd_run)
    lst = sub.add_parser("list", help="list bundled scenarios")
    lst.set_defaults(func=cmd_list)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
