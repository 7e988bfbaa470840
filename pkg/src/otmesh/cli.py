"""Command-line driver: ``otmesh adapt --config run.json`` and ``otmesh sweep --config sweep.json``."""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import monitor as mon
from .errors import (
    ConfigError,
    ConvexityLossError,
    DivergenceError,
    NonconvergenceError,
    OTMeshError,
    StepFailureError,
)
from .io import load_checkpoint, save_checkpoint, write_history, write_vtk
from .linalg import KrylovConfig
from .mesh import build_cubed_sphere, build_icosahedral, build_periodic_plane, copy_with_coords
from .solver import NonlinearConfig, solve

log = logging.getLogger("otmesh")

EXIT_OK = 0
EXIT_NONCONVERGED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_STAGNATION = 4
EXIT_STEP_FAILURE = 5
EXIT_IO = 6

SCHEMA = {
    "domain": None,
    "mesh": {"family", "resolution", "coord_degree", "radius"},
    "monitor": {"name", "params", "grid_file", "floor"},
    "solver": {"method", "dt", "tol", "max_iters", "line_search_iters", "linear_tol", "restart", "warm_start"},
    "output": {"mesh_path", "csv_path", "checkpoint_path", "vtk"},
    "oracle": {"enabled"},
}
SWEEP_KEYS = {"base", "axis", "values", "summary_path"}
SWEEP_AXES = ("resolution", "dt", "gamma")

DEFAULTS = {
    "mesh": {"coord_degree": 1, "radius": 1.0},
    "monitor": {"params": {}, "grid_file": None, "floor": mon.DEFAULT_FLOOR},
    "solver": {"method": "relaxation", "dt": None, "tol": 1e-8, "max_iters": 2000, "line_search_iters": 5,
               "linear_tol": 1e-5, "restart": 30, "warm_start": None},
    "output": {"mesh_path": None, "csv_path": None, "checkpoint_path": None, "vtk": False},
    "oracle": {"enabled": False},
}
# pseudo-timesteps used when the config leaves dt unset
DEFAULT_DT = {"ring": 0.1, "bell": 0.04, "tanh": 2.0, "cross": 0.1, "uniform": 0.1, "gridded": 0.1}


def validate_config(raw: dict) -> dict:
    """Check keys against the schema and fill defaults. Unknown keys are an error."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("domain", "mesh", "monitor"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    cfg = {"domain": raw["domain"]}
    if cfg["domain"] not in ("plane", "sphere"):
        raise ConfigError(f"domain must be 'plane' or 'sphere', got {cfg['domain']!r}")
    for section, allowed in SCHEMA.items():
        if allowed is None:
            continue
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section {section!r} must be an object")
        extra = set(given) - allowed
        if extra:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(extra)}")
        merged = dict(DEFAULTS.get(section, {}))
        merged.update(given)
        cfg[section] = merged
    if "family" not in cfg["mesh"] or "resolution" not in cfg["mesh"]:
        raise ConfigError("mesh needs 'family' and 'resolution'")
    if "name" not in cfg["monitor"]:
        raise ConfigError("monitor needs 'name'")
    return cfg


def build_mesh(cfg: dict):
    m = cfg["mesh"]
    fam, n = m["family"], int(m["resolution"])
    if fam == "plane":
        if cfg["domain"] != "plane":
            raise ConfigError("plane mesh family requires domain 'plane'")
        return build_periodic_plane(n)
    if cfg["domain"] != "sphere":
        raise ConfigError(f"mesh family {fam!r} requires domain 'sphere'")
    if fam == "cubed_sphere":
        return build_cubed_sphere(n, int(m["coord_degree"]), float(m["radius"]))
    if fam == "icosahedral":
        return build_icosahedral(n, int(m["coord_degree"]), float(m["radius"]))
    raise ConfigError(f"unknown mesh family {fam!r}")


def build_monitor(cfg: dict) -> mon.MonitorSpec:
    m = cfg["monitor"]
    name, p = m["name"], dict(m["params"] or {})
    radius = float(cfg["mesh"]["radius"])
    try:
        if name == "ring":
            return mon.ring(**p)
        if name == "bell":
            return mon.bell(**p)
        if name == "tanh":
            if "k" in p:
                p["gamma"] = float(p.pop("k")) ** -4
            return mon.tanh_monitor(radius=radius, **p)
        if name == "cross":
            return mon.cross(radius=radius, **p)
        if name == "uniform":
            return mon.uniform(radius)
        if name == "gridded":
            if not m["grid_file"]:
                raise ConfigError("gridded monitor needs 'grid_file'")
            return mon.gridded(mon.read_grid(m["grid_file"]), floor=float(m["floor"]))
    except TypeError as exc:
        raise ConfigError(f"bad parameters for monitor {name!r}: {exc}") from exc
    raise ConfigError(f"unknown monitor {name!r}")


def nonlinear_config(cfg: dict) -> NonlinearConfig:
    s = cfg["solver"]
    dt = s["dt"] if s["dt"] is not None else DEFAULT_DT.get(cfg["monitor"]["name"], 0.1)
    try:
        return NonlinearConfig(
            method=s["method"], dt=float(dt), tol=float(s["tol"]), max_iters=int(s["max_iters"]),
            line_search_iters=int(s["line_search_iters"]),
            linear=KrylovConfig(rtol=float(s["linear_tol"]), restart=int(s["restart"])),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def make_problem(cfg: dict, mesh=None):
    from .plane import PlaneProblem
    from .sphere import SphereProblem

    mesh = mesh or build_mesh(cfg)
    spec = build_monitor(cfg)
    if cfg["domain"] == "plane":
        return PlaneProblem(mesh, spec)
    oracle = bool(cfg["oracle"]["enabled"])
    if oracle and spec.variant not in (mon.Variant.TANH, mon.Variant.UNIFORM):
        raise ConfigError("the exact-map oracle needs an axisymmetric monitor")
    return SphereProblem(mesh, spec, oracle=oracle)


@dataclass
class RunOutcome:
    status: int
    iterations: int
    final_cv: float
    wall_time: float
    converged: bool
    message: str = ""


def _final_coords(problem, state):
    """Full coordinate array of the physical mesh (all nodes)."""
    mesh = problem.mesh
    if mesh.is_sphere:
        return problem.recover_coordinates(state.phi.coefficients)
    return np.asarray(state.physical_coords)


def write_outputs(cfg, problem, state, history):
    out = cfg["output"]
    if out["csv_path"]:
        write_history(out["csv_path"], history)
    if state is None:
        return
    if out["checkpoint_path"]:
        save_checkpoint(out["checkpoint_path"], state, problem.mesh)
    if out["mesh_path"]:
        coords = _final_coords(problem, state)
        np.savetxt(out["mesh_path"], coords, fmt="%.17g")
        if out["vtk"]:
            physical = copy_with_coords(problem.mesh, coords)
            write_vtk(Path(out["mesh_path"]).with_suffix(".vtk"), physical,
                      point_data={"monitor": mon.eval_monitor(problem.monitor, coords),
                                  "phi": _nodal(problem, state.phi.coefficients)})


def _nodal(problem, phi):
    """Potential values at the mesh nodes (vertices, plus edge/centre nodes on degree-2 meshes)."""
    mesh = problem.mesh
    out = np.empty(mesh.n_nodes)
    k = mesh.cells.shape[1]
    out[mesh.cells] = phi[problem.V.dof_map[:, :k]]
    return out


def run(cfg: dict) -> RunOutcome:
    """Execute one adaptation; writes artifacts and maps failures to exit codes."""
    problem = make_problem(cfg)
    config = nonlinear_config(cfg)
    state = None
    if cfg["solver"]["warm_start"]:
        state = load_checkpoint(cfg["solver"]["warm_start"], problem)
    history, final = [], None
    try:
        result = solve(problem, config, state)
        history, final = result.history, result.state
        status, msg, wall = EXIT_OK, "converged", result.wall_time
    except (DivergenceError, ConvexityLossError, StepFailureError, NonconvergenceError) as exc:
        history = getattr(exc, "history", [])
        final = getattr(exc, "state", None)
        wall = getattr(exc, "wall_time", float("nan"))
        if isinstance(exc, DivergenceError):
            status = EXIT_DIVERGED
        elif isinstance(exc, ConvexityLossError):
            status = EXIT_STAGNATION
        elif isinstance(exc, StepFailureError):
            status = EXIT_STEP_FAILURE
        else:
            status = EXIT_NONCONVERGED
        msg = f"{type(exc).__name__}: {exc}"
    try:
        write_outputs(cfg, problem, final, history)
    except OSError as exc:
        return RunOutcome(EXIT_IO, len(history), float("nan"), wall, False, f"I/O failure: {exc}")
    final_cv = history[-1].equidistribution_cv if history else float("nan")
    iterations = history[-1].iteration if history else 0
    return RunOutcome(status, iterations, final_cv, wall, status == EXIT_OK, msg)


def _format_paths(output: dict, value) -> dict:
    out = dict(output)
    for key in ("mesh_path", "csv_path", "checkpoint_path"):
        if out.get(key):
            out[key] = str(out[key]).format(value=value)
    return out


def sweep(raw: dict) -> list[dict]:
    """Run the base config at each axis value; failures are recorded and the sweep continues."""
    unknown = set(raw) - SWEEP_KEYS
    if unknown:
        raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
    if raw.get("axis") not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    values = raw.get("values") or []
    if not values:
        raise ConfigError("sweep needs a nonempty 'values' list")
    base = validate_config(raw.get("base", {}))
    rows = []
    for v in values:
        cfg = copy.deepcopy(base)
        if raw["axis"] == "resolution":
            cfg["mesh"]["resolution"] = v
        elif raw["axis"] == "dt":
            cfg["solver"]["dt"] = v
        else:
            cfg["monitor"]["params"] = dict(cfg["monitor"]["params"], gamma=v)
        cfg["output"] = _format_paths(cfg["output"], v)
        t0 = time.perf_counter()
        try:
            outcome = run(cfg)
        except OTMeshError as exc:
            log.error("sweep point %s failed: %s", v, exc)
            outcome = RunOutcome(EXIT_NONCONVERGED, 0, float("nan"), time.perf_counter() - t0, False, str(exc))
        log.info("sweep %s=%s: %s in %d iterations", raw["axis"], v, outcome.message, outcome.iterations)
        rows.append({"axis_value": v, "iterations": outcome.iterations, "final_cv": outcome.final_cv,
                     "wall_time_seconds": outcome.wall_time, "converged": outcome.converged})
    if raw.get("summary_path"):
        with open(raw["summary_path"], "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["axis_value", "iterations", "final_cv", "wall_time_seconds",
                                               "converged"])
            w.writeheader()
            w.writerows(rows)
    return rows


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="otmesh", description="Optimal-transport mesh adaptation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("adapt", "run one adaptation"), ("sweep", "run a parameter sweep")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--threads", type=int, default=1, help="BLAS/LAPACK threads (default 1)")
        p.add_argument("--verbose", action="store_true", help="log per-iteration diagnostics")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        raw = _load_json(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    with threadpool_limits(limits=args.threads):
        try:
            if args.command == "adapt":
                outcome = run(validate_config(raw))
                stream = sys.stdout if outcome.status == EXIT_OK else sys.stderr
                print(f"{outcome.message} after {outcome.iterations} iterations "
                      f"(final equidistribution cv {outcome.final_cv:.3e})", file=stream)
                return outcome.status
            rows = sweep(raw)
            for r in rows:
                print(f"{r['axis_value']}: iterations={r['iterations']} cv={r['final_cv']:.3e} "
                      f"time={r['wall_time_seconds']:.2f}s converged={r['converged']}")
            return EXIT_OK
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except OSError as exc:
            print(f"error: I/O failure: {exc}", file=sys.stderr)
            return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
