"""Command-line front end.

Configs are INI files::

    [surface]
    preset = paraboloid          ; or kind = parametric / implicit with x, y, z or f

    [trace.1]
    family = rns                 ; rns | general-helix | isophote
    d = 0, 0, 1
    theta = pi/3
    start = 1, 0                 ; (u, v) or (x, y, z)
    branch = both                ; plus | minus | both
    step = 1e-3
    s_max = 3

    [verify]
    thm7_1 = yes

    [output]
    dir = out

Exit codes: 0 success, 2 config or input error, 3 inadmissible initial
point, 4 trace failure, 5 curve off the surface.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis
from .expr import ExprError, constant
from .frame import (
    CurveError,
    CurveSamples,
    DarbouxFrames,
    OffSurface,
    darboux_frames,
    rowdot,
    sigma_v,
    spread,
    unit,
    with_scalars,
)
from .surface import (
    PRESETS,
    ImplicitSurface,
    ParametricSurface,
    SurfaceError,
    describe,
    implicit,
    normal_implicit,
    normal_parametric,
    parametric,
    preset,
)
from .tracer import InadmissibleStart, LevelSetError, TraceConfig, TraceError, trace, unit_speed_residual

EXIT_OK, EXIT_CONFIG, EXIT_INADMISSIBLE, EXIT_RUNTIME, EXIT_OFF_SURFACE = 0, 2, 3, 4, 5

VERIFY_DEFAULTS = {
    "axis": True,
    "thm6_1": True,
    "thm6_2": True,
    "thm6_3": True,
    "thm7_1": False,
    "thm7_2": False,
    "classify": True,
}
FRAME_COLUMNS = ("Tx", "Ty", "Tz", "Vx", "Vy", "Vz", "Ux", "Uy", "Uz")
SCALAR_COLUMNS = ("kg", "kn", "tg", "sigma_v")


class ConfigError(ValueError):
    pass


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class TraceBlock:
    name: str
    family: str
    d: tuple[float, float, float]
    theta: float
    start: tuple[float, ...]
    branches: tuple[str, ...]
    step: float = 1e-3
    s_max: float = 1.0
    options: dict = field(default_factory=dict)

    def config(self, branch: str) -> TraceConfig:
        return TraceConfig(
            d=self.d,
            theta=self.theta,
            initial=self.start,
            family=self.family,
            branch=branch,
            h=self.step,
            s_max=self.s_max,
            **self.options,
        )


@dataclass
class RunConfig:
    surface: ParametricSurface | ImplicitSurface
    traces: list[TraceBlock]
    verify: dict[str, bool]
    out_dir: Path
    fmt: str = "csv"


# --------------------------------------------------------------------------
# Config parsing
# --------------------------------------------------------------------------


def _number(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        return constant(text)


def _numbers(text: str, n: int | None = None, what: str = "value") -> tuple[float, ...]:
    parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
    values = tuple(_number(p) for p in parts)
    if n is not None and len(values) != n:
        raise ConfigError(f"{what} needs {n} numbers, got {len(values)}")
    return values


def parse_surface(section) -> ParametricSurface | ImplicitSurface:
    eps = float(section.get("eps_reg", "1e-10"))
    if "preset" in section:
        return preset(section["preset"].strip(), eps_reg=eps)
    kind = section.get("kind", "").strip()
    if kind == "parametric":
        missing = [k for k in ("x", "y", "z") if k not in section]
        if missing:
            raise ConfigError(f"[surface] missing {', '.join(missing)}")
        return parametric(
            section["x"],
            section["y"],
            section["z"],
            u_range=_numbers(section.get("u_range", "-inf, inf"), 2, "u_range"),
            v_range=_numbers(section.get("v_range", "-inf, inf"), 2, "v_range"),
            eps_reg=eps,
            name=section.get("name", ""),
        )
    if kind == "implicit":
        if "f" not in section:
            raise ConfigError("[surface] missing f")
        bbox = None
        if "bbox" in section:
            b = _numbers(section["bbox"], 6, "bbox")
            bbox = (b[:3], b[3:])
        return implicit(section["f"], bbox=bbox, eps_reg=eps, name=section.get("name", ""))
    raise ConfigError("[surface] needs 'preset' or kind = parametric | implicit")


_TRACE_OPTIONS = ("surface_residual", "constraint_residual", "discriminant_floor")


def parse_trace(name: str, section) -> TraceBlock:
    for key in ("d", "theta", "start"):
        if key not in section:
            raise ConfigError(f"[{name}] missing '{key}'")
    branch = section.get("branch", "plus").strip()
    if branch not in ("plus", "minus", "both"):
        raise ConfigError(f"[{name}] branch must be plus, minus or both")
    return TraceBlock(
        name=name,
        family=section.get("family", "rns").strip(),
        d=_numbers(section["d"], 3, "d"),
        theta=_number(section["theta"]),
        start=_numbers(section["start"], None, "start"),
        branches=("plus", "minus") if branch == "both" else (branch,),
        step=_number(section.get("step", "1e-3")),
        s_max=_number(section.get("s_max", "1")),
        options={k: _number(section[k]) for k in _TRACE_OPTIONS if k in section},
    )


def load_config(path: str | Path) -> RunConfig:
    """Parse an INI run config; any problem raises :class:`ConfigError`."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
        if "surface" not in parser:
            raise ConfigError("config has no [surface] section")
        surface = parse_surface(parser["surface"])
        traces = [parse_trace(s, parser[s]) for s in parser.sections() if s.startswith("trace")]
        verify = dict(VERIFY_DEFAULTS)
        if "verify" in parser:
            for key in parser["verify"]:
                if key not in VERIFY_DEFAULTS:
                    raise ConfigError(f"unknown verification toggle {key!r}")
                verify[key] = parser["verify"].getboolean(key)
        out = parser["output"] if "output" in parser else {}
        fmt = out.get("format", "csv").strip()
        if fmt != "csv":
            raise ConfigError(f"unsupported output format {fmt!r}")
        for block in traces:
            block.config(block.branches[0])  # validates the values
        return RunConfig(surface, traces, verify, Path(out.get("dir", ".").strip()), fmt)
    except (OSError, configparser.Error, ExprError, SurfaceError, TraceError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# Curve files
# --------------------------------------------------------------------------


def curve_header(with_uv: bool) -> list[str]:
    return ["s", "x", "y", "z"] + (["u", "v"] if with_uv else []) + list(FRAME_COLUMNS) + list(SCALAR_COLUMNS)


def write_curve(path: Path, curve: CurveSamples) -> None:
    """CSV with the frames and Darboux scalars; scalars are NaN when undefined."""
    n = len(curve)
    cols = [curve.s[:, None], curve.points]
    if curve.uv is not None:
        cols.append(curve.uv)
    fr = curve.frames
    cols += [fr.T, fr.V, fr.U]
    scal = np.full((n, 4), np.nan)
    try:
        c = with_scalars(curve)
        scal[:, 0], scal[:, 1], scal[:, 2] = c.scalars.kappa_g, c.scalars.kappa_n, c.scalars.tau_g
        scal[:, 3] = sigma_v(c.scalars)
    except CurveError:
        pass
    cols.append(scal)
    data = np.hstack(cols)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(curve_header(curve.uv is not None)) + "\n")
        for row in data:
            fh.write(",".join("%.17g" % x for x in row) + "\n")


def read_curve(path: str | Path) -> tuple[CurveSamples, np.ndarray | None]:
    """Samples and, when the file has T columns, the stored tangents."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(str(exc)) from exc
    if not rows:
        raise ConfigError(f"{path}: empty curve file")
    header = [h.strip() for h in rows[0]]
    missing = [k for k in ("s", "x", "y", "z") if k not in header]
    if missing:
        raise ConfigError(f"{path}: missing columns {', '.join(missing)}")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ConfigError(f"{path}: rows do not match the header")
    col = {name: data[:, i] for i, name in enumerate(header)}
    uv = np.column_stack([col["u"], col["v"]]) if "u" in col and "v" in col else None
    try:
        curve = CurveSamples(col["s"], np.column_stack([col["x"], col["y"], col["z"]]), uv=uv)
    except CurveError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    T = np.column_stack([col[k] for k in FRAME_COLUMNS[:3]]) if all(k in col for k in FRAME_COLUMNS[:3]) else None
    return curve, T


def frames_from_file(curve: CurveSamples, T: np.ndarray | None, surface, tol: float = 1e-6) -> CurveSamples:
    """Attach frames using U from the surface and, when stored, the file's T."""
    if T is None:
        return curve.with_frames(darboux_frames(curve, surface, tol))
    n = len(curve)
    U = np.empty((n, 3))
    if isinstance(surface, ParametricSurface):
        if curve.uv is None:
            raise ConfigError("a curve on a parametric surface needs u, v columns")
        for i, (u, v) in enumerate(curve.uv):
            gap = float(np.linalg.norm(surface.point(u, v) - curve.points[i]))
            if gap > tol:
                raise OffSurface(f"sample {i} is {gap:.3g} away from X(u, v)")
            U[i] = normal_parametric(surface, u, v)
    else:
        for i, p in enumerate(curve.points):
            f = surface.value(p)
            if abs(f) > tol:
                raise OffSurface(f"sample {i} has |f| = {abs(f):.3g}")
            U[i] = normal_implicit(surface, p)
    T = unit(T - rowdot(T, U)[:, None] * U)
    return curve.with_frames(DarbouxFrames(T, np.cross(U, T), U))


# --------------------------------------------------------------------------
# Diagnostics
# --------------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _surface_residuals(curve: CurveSamples, surface) -> np.ndarray:
    if isinstance(surface, ImplicitSurface):
        return np.abs([surface.value(p) for p in curve.points])
    return np.array([np.linalg.norm(surface.point(u, v) - p) for (u, v), p in zip(curve.uv, curve.points)])


def diagnose(curve: CurveSamples, surface, verify: dict[str, bool], family: str | None = None,
             d: Sequence[float] | None = None, theta: float | None = None) -> dict:
    """Residuals and verification reports for a curve with frames attached.

    The constraint drift is measured against ``(d, theta)`` when given and
    against the recovered axis otherwise.
    """
    out: dict = {"samples": len(curve)}
    try:
        curve = with_scalars(curve)
    except CurveError as exc:
        out["error"] = str(exc)
        curve = None
    axis = None
    if curve is not None:
        try:
            axis = analysis.recover_axis(curve)
        except CurveError as exc:
            out["axis_error"] = str(exc)
    if curve is not None and verify.get("axis") and axis is not None:
        out["axis"] = axis.to_dict()
    fr = curve.frames if curve is not None else None
    if fr is not None:
        fam = family or "rns"
        if d is None and axis is not None:
            d, theta = axis.d_hat, axis.theta_hat
        if d is not None:
            probe = {"rns": fr.V, "general-helix": fr.T, "isophote": fr.U}[fam]
            out["constraint_drift_max"] = float(np.max(np.abs(probe @ np.asarray(d) - math.cos(theta))))
        out["surface_residual_max"] = float(np.max(_surface_residuals(curve, surface)))
        out["unit_speed_residual_max"] = float(np.max(unit_speed_residual(curve)))
        try:
            out["sigma_v_spread"] = spread(sigma_v(curve.scalars))
        except CurveError as exc:
            out["sigma_v_spread"] = None
            out["sigma_v_error"] = str(exc)
        jobs = {
            "thm6_1": analysis.verify_thm_6_1,
            "thm6_2": analysis.verify_thm_6_2,
            "thm6_3": analysis.verify_thm_6_3,
            "thm7_1": lambda c: analysis.verify_thm_7(c, "7.1"),
            "thm7_2": lambda c: analysis.verify_thm_7(c, "7.2"),
            "classify": analysis.classify,
        }
        for key, fn in jobs.items():
            if verify.get(key):
                try:
                    out[key] = fn(curve).to_dict()
                except CurveError as exc:
                    out[key] = {"error": str(exc)}
    return _clean(out)


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_trace(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out_dir) if args.out_dir else cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    if not cfg.traces:
        raise ConfigError("config has no [trace.N] sections")
    doc = {"surface": _clean(describe(cfg.surface)), "traces": {}}
    code, errors = EXIT_OK, []
    for block in cfg.traces:
        if args.step is not None:
            block.step = args.step
        if args.s_max is not None:
            block.s_max = args.s_max
        branches = block.branches
        if args.branch:
            branches = ("plus", "minus") if args.branch == "both" else (args.branch,)
        for branch in branches:
            key = f"{block.name}.{branch}"
            try:
                tcfg = block.config(branch)
            except TraceError as exc:
                raise ConfigError(f"[{block.name}] {exc}") from exc
            try:
                result = trace(cfg.surface, tcfg)
            except (InadmissibleStart, LevelSetError) as exc:
                errors.append(f"{key}: {exc}")
                doc["traces"][key] = {"error": str(exc), "termination": "inadmissible-start"}
                code = code or EXIT_INADMISSIBLE
                continue
            except (TraceError, SurfaceError, ArithmeticError) as exc:
                errors.append(f"{key}: {exc}")
                doc["traces"][key] = {"error": str(exc), "termination": "step-failure"}
                code = code or EXIT_RUNTIME
                continue
            name = f"{block.name.replace('.', '_')}_{branch}.csv"
            entry = {
                "file": name,
                "family": tcfg.family,
                "branch": branch,
                "d": list(tcfg.d),
                "theta": tcfg.theta,
                "termination": result.termination,
                "message": result.message,
            }
            if len(result) < 2:
                errors.append(f"{key}: trace stopped after {len(result)} sample(s): {result.message}")
                code = code or EXIT_RUNTIME
                doc["traces"][key] = _clean(entry)
                continue
            write_curve(out_dir / name, result.curve)
            entry.update(diagnose(result.curve, cfg.surface, cfg.verify, tcfg.family, tcfg.d, tcfg.theta))
            entry["constraint_drift_max"] = float(np.max(np.abs(result.constraint_residual)))
            entry["surface_residual_max"] = float(np.max(result.surface_residual))
            doc["traces"][key] = _clean(entry)
            print(f"{key}: {len(result)} samples, {result.termination} -> {out_dir / name}")
    _write_json(out_dir / "diagnostics.json", doc)
    for line in errors:
        print(line, file=sys.stderr)
    return code


def cmd_analyze(args) -> int:
    cfg = load_config(args.surface)
    curve, T = read_curve(args.curve)
    if len(curve) < 3:
        raise ConfigError(f"{args.curve}: need at least 3 samples")
    block = None
    if args.trace is not None:
        names = {b.name: b for b in cfg.traces}
        block = names.get(args.trace) or names.get(f"trace.{args.trace}")
        if block is None:
            raise ConfigError(f"no trace block {args.trace!r} in {args.surface}")
    elif len(cfg.traces) == 1:
        block = cfg.traces[0]
    try:
        curve = frames_from_file(curve, T, cfg.surface)
    except OffSurface as exc:
        raise CliFailure(EXIT_OFF_SURFACE, f"{args.curve}: curve is off the surface: {exc}") from exc
    except (SurfaceError, CurveError) as exc:
        raise ConfigError(f"{args.curve}: {exc}") from exc
    if block is not None:
        doc = diagnose(curve, cfg.surface, cfg.verify, block.family, block.d, block.theta)
    else:
        doc = diagnose(curve, cfg.surface, cfg.verify)
    doc["file"] = str(args.curve)
    out_dir = Path(args.out_dir) if args.out_dir else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / (Path(args.curve).stem + ".diagnostics.json")
    _write_json(path, doc)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def catalog_text() -> str:
    lines = []
    for name, entry in PRESETS.items():
        if entry["kind"] == "parametric":
            expr = f"X(u, v) = ({entry['x']}, {entry['y']}, {entry['z']})"
            u = entry.get("u_range", (-math.inf, math.inf))
            v = entry.get("v_range", (-math.inf, math.inf))
            dom = f"u in [{u[0]:g}, {u[1]:g}], v in [{v[0]:g}, {v[1]:g}]"
        else:
            expr = f"f(x, y, z) = {entry['f']} = 0"
            dom = "implicit"
        lines.append(f"{name:20s} {expr}\n{'':20s} {dom}; {entry['description']}")
    return "\n".join(lines)


def cmd_catalog(args) -> int:
    print(catalog_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rnshelix", description="Trace and analyze constant-angle curves on surfaces.")
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("trace", help="trace the curves described by a config")
    t.add_argument("config")
    t.add_argument("--out-dir")
    t.add_argument("--step", type=float)
    t.add_argument("--s-max", type=float, dest="s_max")
    t.add_argument("--branch", choices=("plus", "minus", "both"))
    t.add_argument("--format", choices=("csv",), default="csv")
    t.set_defaults(func=cmd_trace)
    a = sub.add_parser("analyze", help="classify and verify a curve file")
    a.add_argument("curve")
    a.add_argument("--surface", required=True, help="config whose [surface] the curve lies on")
    a.add_argument("--trace", help="trace block supplying d and theta for the constraint drift")
    a.add_argument("--out-dir")
    a.add_argument("--format", choices=("csv",), default="csv")
    a.set_defaults(func=cmd_analyze)
    c = sub.add_parser("catalog", help="list surface presets")
    c.set_defaults(func=cmd_catalog)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
