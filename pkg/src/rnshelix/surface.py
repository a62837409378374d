"""Parametric and implicit surfaces built from expressions.

Orientation is fixed: a parametric surface has normal ``X_u x X_v`` and an
implicit surface ``f = 0`` has normal ``+grad f``. Flipping either (with
``V = U x T`` recomputed) negates the geodesic and normal curvatures and
``sigma_v`` of every curve on it; the geodesic torsion is unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .expr import ExprAst, compile_jets, parse_expr

EPS_REG = 1e-10
INF = math.inf


class SurfaceError(ValueError):
    pass


class RegularityError(SurfaceError):
    """The surface has no well-defined tangent plane at the point."""


class OutOfDomain(SurfaceError):
    pass


class ProjectionError(SurfaceError):
    pass


class FirstFundamentalForm(NamedTuple):
    E: float
    F: float
    G: float

    @property
    def det(self) -> float:
        return self.E * self.G - self.F * self.F


def _range(bounds) -> tuple[float, float]:
    lo, hi = (float(b) for b in bounds)
    if not lo < hi:
        raise SurfaceError(f"empty parameter range [{lo}, {hi}]")
    return lo, hi


@dataclass(frozen=True)
class ParametricSurface:
    """``X(u, v) = (x, y, z)`` over a (possibly unbounded) parameter rectangle."""

    x: ExprAst
    y: ExprAst
    z: ExprAst
    u_range: tuple[float, float] = (-INF, INF)
    v_range: tuple[float, float] = (-INF, INF)
    eps_reg: float = EPS_REG
    name: str = ""
    _fn: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    kind = "parametric"

    def __post_init__(self):
        for ast in (self.x, self.y, self.z):
            if len(ast.variables) != 2:
                raise SurfaceError("parametric components must be expressions in two variables")
        object.__setattr__(self, "u_range", _range(self.u_range))
        object.__setattr__(self, "v_range", _range(self.v_range))

    def _jets(self, order: int):
        fn = self._fn.get(order)
        if fn is None:
            fn = self._fn[order] = compile_jets([self.x, self.y, self.z], order)
        return fn

    def contains(self, u: float, v: float) -> bool:
        return self.u_range[0] <= u <= self.u_range[1] and self.v_range[0] <= v <= self.v_range[1]

    def check_domain(self, u: float, v: float) -> None:
        if not self.contains(u, v):
            raise OutOfDomain(f"(u, v) = ({u:.6g}, {v:.6g}) outside {self.u_range} x {self.v_range}")

    def raw_partials(self, u: float, v: float) -> tuple:
        """Flat ``(x, x_u, x_v, y, y_u, y_v, z, z_u, z_v)`` with no checks."""
        return self._jets(1)(u, v)

    def point(self, u: float, v: float) -> np.ndarray:
        r = self._jets(1)(u, v)
        return np.array([r[0], r[3], r[6]])

    def partials(self, u: float, v: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Position, ``X_u`` and ``X_v``."""
        self.check_domain(u, v)
        r = self._jets(1)(u, v)
        return (
            np.array([r[0], r[3], r[6]]),
            np.array([r[1], r[4], r[7]]),
            np.array([r[2], r[5], r[8]]),
        )

    def second_partials(self, u: float, v: float):
        """Position, ``X_u``, ``X_v``, ``X_uu``, ``X_uv``, ``X_vv``."""
        self.check_domain(u, v)
        r = self._jets(2)(u, v)
        c = [r[0:6], r[6:12], r[12:18]]
        return tuple(np.array([c[0][k], c[1][k], c[2][k]]) for k in range(6))


@dataclass(frozen=True)
class ImplicitSurface:
    """Zero set of ``f(x, y, z)``; ``bbox`` optionally bounds tracing."""

    f: ExprAst
    bbox: tuple[tuple[float, float, float], tuple[float, float, float]] | None = None
    eps_reg: float = EPS_REG
    name: str = ""
    _fn: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    kind = "implicit"

    def __post_init__(self):
        if len(self.f.variables) != 3:
            raise SurfaceError("implicit surface needs an expression in three variables")
        if self.bbox is not None:
            lo, hi = (tuple(float(c) for c in corner) for corner in self.bbox)
            if any(a >= b for a, b in zip(lo, hi)):
                raise SurfaceError(f"degenerate bounding box {self.bbox}")
            object.__setattr__(self, "bbox", (lo, hi))

    def _jets(self, order: int):
        fn = self._fn.get(order)
        if fn is None:
            fn = self._fn[order] = compile_jets([self.f], order)
        return fn

    def contains(self, p: Sequence[float]) -> bool:
        if self.bbox is None:
            return True
        lo, hi = self.bbox
        return all(a <= x <= b for a, x, b in zip(lo, p, hi))

    def raw_gradient(self, x: float, y: float, z: float) -> tuple:
        """Flat ``(f, f_x, f_y, f_z)`` with no checks."""
        return self._jets(1)(x, y, z)

    def value(self, p: Sequence[float]) -> float:
        return self._jets(1)(*(float(c) for c in p))[0]

    def gradient(self, p: Sequence[float]) -> np.ndarray:
        r = self._jets(1)(*(float(c) for c in p))
        return np.array(r[1:4])


# --------------------------------------------------------------------------
# Constructors and presets
# --------------------------------------------------------------------------


def parametric(
    x: str,
    y: str,
    z: str,
    u_range=(-INF, INF),
    v_range=(-INF, INF),
    eps_reg: float = EPS_REG,
    name: str = "",
    variables: Sequence[str] = ("u", "v"),
) -> ParametricSurface:
    asts = [parse_expr(text, variables) for text in (x, y, z)]
    return ParametricSurface(*asts, u_range=u_range, v_range=v_range, eps_reg=eps_reg, name=name)


def implicit(f: str, bbox=None, eps_reg: float = EPS_REG, name: str = "",
             variables: Sequence[str] = ("x", "y", "z")) -> ImplicitSurface:
    return ImplicitSurface(parse_expr(f, variables), bbox=bbox, eps_reg=eps_reg, name=name)


PRESETS: dict[str, dict] = {
    "plane": dict(kind="parametric", x="u", y="v", z="0", description="the plane z = 0"),
    "plane-implicit": dict(kind="implicit", f="z", description="the plane z = 0"),
    "sphere": dict(
        kind="parametric",
        x="cos(u)*cos(v)",
        y="sin(u)*cos(v)",
        z="sin(v)",
        v_range=(-math.pi / 2, math.pi / 2),
        description="unit sphere, longitude u and latitude v, outward normal",
    ),
    "sphere-implicit": dict(kind="implicit", f="x^2 + y^2 + z^2 - 1", description="unit sphere"),
    "cylinder": dict(
        kind="parametric", x="cos(u)", y="sin(u)", z="v", description="unit circular cylinder about the z-axis"
    ),
    "cylinder-implicit": dict(kind="implicit", f="x^2 + y^2 - 1", description="unit circular cylinder"),
    "paraboloid": dict(
        kind="parametric",
        x="u*cos(v)",
        y="u*sin(v)",
        z="u^2",
        u_range=(0.0, INF),
        description="paraboloid of revolution (u cos v, u sin v, u^2), singular at u = 0",
    ),
    "paraboloid-implicit": dict(
        kind="implicit", f="z - x^2 - y^2", description="paraboloid z = x^2 + y^2, same orientation as 'paraboloid'"
    ),
    "quartic": dict(
        kind="implicit",
        f="(x^2 + y^2)*z^2 + (x^2 + y^2)/4 - 1/4",
        description="quartic of revolution (x^2+y^2) z^2 + (x^2+y^2)/4 - 1/4 = 0",
    ),
    "torus": dict(
        kind="parametric",
        x="(2 + cos(v))*cos(u)",
        y="(2 + cos(v))*sin(u)",
        z="sin(v)",
        description="torus with radii 2 and 1",
    ),
}


def preset(name: str, eps_reg: float = EPS_REG) -> ParametricSurface | ImplicitSurface:
    try:
        entry = PRESETS[name]
    except KeyError:
        raise SurfaceError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
    if entry["kind"] == "parametric":
        return parametric(
            entry["x"],
            entry["y"],
            entry["z"],
            u_range=entry.get("u_range", (-INF, INF)),
            v_range=entry.get("v_range", (-INF, INF)),
            eps_reg=eps_reg,
            name=name,
        )
    return implicit(entry["f"], eps_reg=eps_reg, name=name)


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def first_form(S: ParametricSurface, u: float, v: float) -> FirstFundamentalForm:
    _, Xu, Xv = S.partials(u, v)
    form = FirstFundamentalForm(float(Xu @ Xu), float(Xu @ Xv), float(Xv @ Xv))
    if np.linalg.norm(np.cross(Xu, Xv)) <= S.eps_reg:
        raise RegularityError(f"|X_u x X_v| <= {S.eps_reg:g} at (u, v) = ({u:.6g}, {v:.6g})")
    return form


def normal_parametric(S: ParametricSurface, u: float, v: float) -> np.ndarray:
    _, Xu, Xv = S.partials(u, v)
    n = np.cross(Xu, Xv)
    norm = np.linalg.norm(n)
    if norm <= S.eps_reg:
        raise RegularityError(f"|X_u x X_v| = {norm:.3g} at (u, v) = ({u:.6g}, {v:.6g})")
    return n / norm


def normal_implicit(S: ImplicitSurface, p: Sequence[float]) -> np.ndarray:
    g = S.gradient(p)
    norm = np.linalg.norm(g)
    if norm <= S.eps_reg:
        raise RegularityError(f"|grad f| = {norm:.3g} at {tuple(p)}")
    return g / norm


def project_implicit(S: ImplicitSurface, p: Sequence[float], tol: float = 1e-12, max_iter: int = 20) -> np.ndarray:
    """Newton projection onto ``f = 0`` along the gradient.

    Iterates ``p <- p - f grad f / |grad f|^2`` until ``|f| <= tol``.
    """
    jets = S._jets(1)
    x, y, z = (float(c) for c in p)
    for _ in range(max_iter + 1):
        f, fx, fy, fz = jets(x, y, z)
        if abs(f) <= tol:
            return np.array([x, y, z])
        g2 = fx * fx + fy * fy + fz * fz
        if g2 <= S.eps_reg * S.eps_reg:
            raise RegularityError(f"|grad f| vanishes while projecting from {tuple(p)}")
        k = f / g2
        x, y, z = x - k * fx, y - k * fy, z - k * fz
    raise ProjectionError(f"projection from {tuple(p)} did not reach |f| <= {tol:g} in {max_iter} iterations")


def surface_residual(S: ParametricSurface | ImplicitSurface, p: Sequence[float], uv=None) -> float:
    """``|f(p)|`` for implicit surfaces, ``|X(u, v) - p|`` for parametric ones."""
    if isinstance(S, ImplicitSurface):
        return abs(S.value(p))
    if uv is None:
        raise SurfaceError("parametric surface residual needs (u, v)")
    return float(np.linalg.norm(S.point(*uv) - np.asarray(p, dtype=float)))


def describe(S: ParametricSurface | ImplicitSurface) -> dict:
    if isinstance(S, ParametricSurface):
        return {
            "kind": "parametric",
            "x": str(S.x),
            "y": str(S.y),
            "z": str(S.z),
            "u_range": list(S.u_range),
            "v_range": list(S.v_range),
        }
    return {"kind": "implicit", "f": str(S.f), "bbox": S.bbox}
