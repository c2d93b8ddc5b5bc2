"""Command-line driver wiring a TOML config to the solver pipeline.

One entry point runs four batch modes: solve (DOF vector dump plus
summary), estimate (element indicators as CSV and VTK), uniform-study
and adapt (refinement studies logged to CSV, one VTK mesh per level).
Every run validates the full configuration before any compute, records
the resolved configuration in summary.json for provenance, and writes
no timing data to CSV or JSON summaries, so a rerun of the same config
is bitwise identical.

Exit codes: 0 success, 1 numerical failure (singular solve, divergent
quadrature), 2 configuration or input error.  Failures print one JSON
object {"error": {"code", "field", "message"}} to stdout and leave the
same object in <out>/error.json when the output directory is writable.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - py310 fallback
    import tomli as tomllib

import numpy as np

from .adapt import AdaptConfig, run_adaptive, run_uniform_study
from .assembly import IncidentWave, build_system, dump_system, solve
from .estimator import (
    compute_indicators,
    compute_residuals,
    global_summary,
    indicators_to_csv,
    indicators_to_vtk,
)
from .mesh import MeshError, SurfaceMesh, build_canonical, load_mesh, save_mesh
from .spaces import DiscreteFunction, RTSpace

__all__ = [
    "ConfigError",
    "RunConfig",
    "cmd_estimate",
    "cmd_solve",
    "cmd_study",
    "load_config",
    "main",
    "read_solution",
    "write_solution",
]

_MODES = ("solve", "estimate", "uniform-study", "adapt")
_CANONICAL = ("cube", "tetrahedron", "l_bracket")
_TOP_KEYS = {"geometry", "scale", "k", "mode", "theta", "levels",
             "max_iters", "max_dofs", "threads", "out"}
_WAVE_KEYS = {"polarization", "direction"}
_QUAD_KEYS = {"panel", "rhs", "residual"}


class ConfigError(ValueError):
    """Configuration or input problem; names the offending field."""

    def __init__(self, field, message):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class RunConfig:
    """Resolved run parameters.

    geometry is a canonical shape name (cube, tetrahedron, l_bracket) or
    a path to an OFF or Gmsh MSH file; polarization and direction are the
    plane-wave vectors p and d with p.d = 0 enforced to 1e-12.
    """

    geometry: str = "cube"
    scale: float = 1.0
    k: float = 1.0
    mode: str = "solve"
    theta: float = 0.5
    levels: int = 3
    max_iters: int = 4
    max_dofs: int = 20000
    threads: int = 1
    out: str = "out"
    polarization: tuple = (1.0, 0.0, 0.0)
    direction: tuple = (0.0, 0.0, 1.0)
    order_panel: int = 8
    order_rhs: int = 6
    order_residual: int = 4

    def wave(self) -> IncidentWave:
        try:
            return IncidentWave(np.asarray(self.polarization, dtype=float),
                                np.asarray(self.direction, dtype=float),
                                self.k)
        except ValueError as exc:
            raise ConfigError("wave", str(exc)) from exc

    def validate(self):
        """Check every module precondition before any compute."""
        if self.mode not in _MODES:
            raise ConfigError("mode", f"mode must be one of {_MODES}, "
                                      f"got {self.mode!r}")
        if not isinstance(self.geometry, str) or not self.geometry:
            raise ConfigError("geometry", "geometry must be a shape name "
                                          "or a mesh file path")
        if self.geometry not in _CANONICAL:
            path = Path(self.geometry)
            if not path.exists():
                raise ConfigError(
                    "geometry", f"mesh file not found: {path}")
            if path.suffix.lower() not in (".off", ".msh"):
                raise ConfigError(
                    "geometry", f"unsupported mesh format {path.suffix!r} "
                                f"for {path} (expected .off or .msh)")
        if not self.scale > 0.0:
            raise ConfigError("scale", "scale must be positive")
        if self.k < 0.0:
            raise ConfigError("k", "k must be nonnegative")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError("theta", "theta must be in (0, 1]")
        if self.levels < 1:
            raise ConfigError("levels", "levels must be at least 1")
        if self.max_iters < 0:
            raise ConfigError("max_iters", "max_iters must be nonnegative")
        if self.max_dofs < 1:
            raise ConfigError("max_dofs", "max_dofs must be positive")
        if self.threads < 1:
            raise ConfigError("threads", "threads must be at least 1")
        for name in ("order_panel", "order_rhs", "order_residual"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"{name} must be at least 1")
        for name in ("polarization", "direction"):
            vec = getattr(self, name)
            if len(vec) != 3:
                raise ConfigError(name, f"{name} must be a 3-vector")
        self.wave()
        return self


def _coerce(field, value, kind):
    try:
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float)
                                           and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind is tuple:
            return tuple(float(x) for x in value)
    except (TypeError, ValueError):
        pass
    raise ConfigError(field, f"{field} must be a {kind.__name__}, "
                             f"got {value!r}")


def _read_values(path):
    """Read a TOML config into RunConfig keyword values.

    Reading continues past the first bad key so that a later ``out``
    entry still tells the caller where to leave error.json; the first
    error is returned for the caller to raise.  A missing file or
    malformed TOML aborts immediately.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("config", f"config file not found: {path}") \
            from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"malformed TOML in {path}: {exc}") \
            from exc

    values, errors = {}, []

    def read_into(target, field, value, kind):
        try:
            values[target] = _coerce(field, value, kind)
        except ConfigError as exc:
            errors.append(exc)

    for key, val in raw.items():
        if key == "wave" and isinstance(val, dict):
            for sub, sval in val.items():
                if sub in _WAVE_KEYS:
                    read_into(sub, f"wave.{sub}", sval, tuple)
                else:
                    errors.append(ConfigError(f"wave.{sub}",
                                              "unknown configuration key"))
        elif key == "quadrature" and isinstance(val, dict):
            for sub, sval in val.items():
                if sub in _QUAD_KEYS:
                    read_into(f"order_{sub}", f"quadrature.{sub}", sval, int)
                else:
                    errors.append(ConfigError(f"quadrature.{sub}",
                                              "unknown configuration key"))
        elif key in ("wave", "quadrature"):
            errors.append(ConfigError(key, f"{key} must be a table"))
        elif key in _TOP_KEYS:
            kind = RunConfig.__dataclass_fields__[key].type
            kind = {"str": str, "float": float, "int": int}[kind]
            read_into(key, key, val, kind)
        else:
            errors.append(ConfigError(key, "unknown configuration key"))
    return values, (errors[0] if errors else None)


def load_config(path=None, overrides=None) -> RunConfig:
    """Build a RunConfig from an optional TOML file plus flag overrides.

    Unknown keys are rejected with the key name; all values are type
    checked.  Flag overrides win over file values.
    """
    values, error = ({}, None) if path is None else _read_values(path)
    if error is not None:
        raise error
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return RunConfig(**values).validate()


def _load_geometry(cfg: RunConfig) -> SurfaceMesh:
    if cfg.geometry in _CANONICAL:
        return build_canonical(cfg.geometry, scale=cfg.scale)
    path = Path(cfg.geometry)
    fmt = "off" if path.suffix.lower() == ".off" else "gmsh"
    try:
        return load_mesh(path, fmt=fmt)
    except MeshError as exc:
        raise ConfigError("geometry", f"invalid mesh {path}: {exc}") from exc


_SOLUTION_FORMAT = "efiebem-solution"


def write_solution(path, x, k):
    """Dump a DOF vector as one JSON header line plus raw bytes.

    The payload is little-endian complex128 (interleaved re/im float64);
    DOF ordering is the mesh's sorted edge list, as documented in the
    header.
    """
    x = np.ascontiguousarray(x, dtype="<c16")
    header = {
        "format": _SOLUTION_FORMAT,
        "version": 1,
        "dofs": int(len(x)),
        "dtype": "complex128 little-endian (interleaved re/im float64)",
        "dof_ordering": "edges sorted lexicographically by vertex index "
                        "pair",
        "k": float(k),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        fh.write(x.tobytes())


def read_solution(path):
    """Read a dump written by write_solution; returns (header, vector)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        raw = fh.read()
    if header.get("format") != _SOLUTION_FORMAT:
        raise ValueError(f"not a solution dump: {path}")
    x = np.frombuffer(raw, dtype="<c16", count=header["dofs"])
    return header, x.astype(np.complex128)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _summary_base(cfg: RunConfig) -> dict:
    return {"mode": cfg.mode, "config": asdict(cfg)}


def _adapt_config(cfg: RunConfig) -> AdaptConfig:
    return AdaptConfig(wave=cfg.wave(), k=cfg.k, theta=cfg.theta,
                       max_iters=cfg.max_iters, max_dofs=cfg.max_dofs,
                       order=cfg.order_panel, order_rhs=cfg.order_rhs,
                       order_residual=cfg.order_residual,
                       threads=cfg.threads)


def _solve_pipeline(cfg: RunConfig, mesh: SurfaceMesh):
    rt = RTSpace(mesh)
    system = build_system(mesh, rt, cfg.k, cfg.wave(), order=cfg.order_panel,
                          order_rhs=cfg.order_rhs, threads=cfg.threads)
    solve(system)
    return rt, system


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    """Assemble and solve once; write solution.bin, system.bin and
    summary.json."""
    mesh = _load_geometry(cfg)
    rt, system = _solve_pipeline(cfg, mesh)
    write_solution(out / "solution.bin", system.x, cfg.k)
    dump_system(system, out / "system.bin")
    summary = _summary_base(cfg)
    summary.update({
        "dofs": rt.ndof,
        "triangles": len(mesh.triangles),
        "h_max": float(mesh.h.max()),
        "residual": system.residual,
        "cond_estimate": system.cond_estimate,
    })
    _write_json(out / "summary.json", summary)
    return 0


def cmd_estimate(cfg: RunConfig, out: Path) -> int:
    """Solve, then write element indicators as CSV and VTK plus
    summary.json."""
    mesh = _load_geometry(cfg)
    rt, system = _solve_pipeline(cfg, mesh)
    U = DiscreteFunction(rt, system.x)
    res = compute_residuals(mesh, rt, U, cfg.wave(), cfg.k,
                            order=cfg.order_residual, threads=cfg.threads)
    ind = compute_indicators(res, provenance={
        "k": cfg.k, "order": cfg.order_panel, "order_rhs": cfg.order_rhs,
        "order_residual": cfg.order_residual})
    indicators_to_csv(ind, out / "indicators.csv")
    indicators_to_vtk(ind, out / "indicators.vtk")
    summary = _summary_base(cfg)
    summary.update(global_summary(ind))
    summary.update({"residual": system.residual,
                    "cond_estimate": system.cond_estimate})
    _write_json(out / "summary.json", summary)
    return 0


def cmd_study(cfg: RunConfig, out: Path) -> int:
    """Run a uniform or adaptive refinement study; write study.csv,
    study.json, one VTK mesh per level and summary.json."""
    mesh = _load_geometry(cfg)
    acfg = _adapt_config(cfg)

    def snapshot(level, m, ind):
        save_mesh(m, out / f"mesh_{level:03d}.vtk", fmt="vtk",
                  cell_data={"eta": ind.eta_T, "osc_R": ind.osc_R,
                             "osc_r": ind.osc_r})

    if cfg.mode == "uniform-study":
        log = run_uniform_study(mesh, cfg.levels, acfg, on_level=snapshot)
    else:
        log = run_adaptive(mesh, acfg, on_iteration=snapshot).log
    log.to_csv(out / "study.csv")
    log.to_json(out / "study.json")
    last = log.rows[-1]
    summary = _summary_base(cfg)
    summary.update({
        "iterations": len(log.rows),
        "final_dofs": last["dofs"],
        "final_eta": last["eta"],
        "final_osc": last["osc"],
        "final_h_max": last["h_max"],
    })
    _write_json(out / "summary.json", summary)
    return 0


def _emit_error(out: Path, code: str, field, message: str):
    payload = {"error": {"code": code, "field": field, "message": message}}
    print(json.dumps(payload, sort_keys=True))
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "error.json", payload)
    except OSError:
        pass


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="efiebem",
        description="Galerkin EFIE solver with a posteriori error "
                    "estimation on closed triangulated surfaces.")
    parser.add_argument("--config", type=Path, default=None,
                        help="TOML configuration file")
    parser.add_argument("--mode", choices=_MODES, default=None,
                        help="override the configured run mode")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for assembly stages")
    parser.add_argument("--k", type=float, default=None,
                        help="override the wavenumber")
    parser.add_argument("--theta", type=float, default=None,
                        help="override the marking bulk fraction")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    values, error = {}, None
    if args.config is not None:
        try:
            values, error = _read_values(args.config)
        except ConfigError as exc:
            error = exc
    for key, val in {"mode": args.mode, "out": args.out,
                     "threads": args.threads, "k": args.k,
                     "theta": args.theta}.items():
        if val is not None:
            values[key] = val
    out = Path(values.get("out", "out"))
    cfg = None
    if error is None:
        try:
            cfg = RunConfig(**values).validate()
        except ConfigError as exc:
            error = exc
    if error is not None:
        _emit_error(out, "config", error.field, str(error))
        return 2
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        _emit_error(Path("."), "config", "out",
                    f"cannot create output directory {out}: {exc}")
        return 2
    try:
        if cfg.mode == "solve":
            return cmd_solve(cfg, out)
        if cfg.mode == "estimate":
            return cmd_estimate(cfg, out)
        return cmd_study(cfg, out)
    except ConfigError as exc:
        _emit_error(out, "config", exc.field, str(exc))
        return 2
    except MeshError as exc:
        _emit_error(out, "config", "geometry", str(exc))
        return 2
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        _emit_error(out, "numerical", None, str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
