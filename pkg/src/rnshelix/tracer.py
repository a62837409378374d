"""Constant-angle curves on surfaces as initial-value problems.

Three curve families are traced, each defined by a fixed unit axis ``d`` and
angle ``theta``:

* ``rns`` (relatively normal-slant helix): ``<V, d> = cos(theta)``
* ``general-helix``: ``<T, d> = cos(theta)``
* ``isophote``: ``<U, d> = cos(theta)`` (parametric surfaces only)

For the first two the constraint, tangency and unit speed leave at most two
admissible unit tangents at a point. The right-hand sides return all of them;
the integrator picks one at the start according to ``branch`` and afterwards
follows it by continuity of the 3D tangent. ``plus`` is the candidate with the
larger ``<T, d>`` (rns) or the larger ``<T, d x U>`` (general helix); the two
candidates always differ in that component unless they coincide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .frame import EPS_DEG, CurveSamples, DarbouxFrames, chord_residual
from .surface import (
    ImplicitSurface,
    OutOfDomain,
    ParametricSurface,
    ProjectionError,
    RegularityError,
    project_implicit,
)

FAMILIES = ("rns", "general-helix", "isophote")
_FAMILY_ALIASES = {
    "relatively-normal-slant": "rns",
    "relatively-normal-slant-helix": "rns",
    "general": "general-helix",
    "helix": "general-helix",
}
BRANCHES = ("plus", "minus")
TERMINATIONS = ("budget-exhausted", "discriminant-negative", "regularity-lost", "domain-exit", "step-failure")

RESIDUAL_TOL = 1e-10
PAIRING_TOL = 1e-6
CLAMP = 1e-12
PROJECTION_TOL = 1e-12


class TraceError(ValueError):
    pass


class NoSolution(TraceError):
    """A discriminant is negative: no curve of the family passes through here."""

    def __init__(self, which: Sequence[str], where: str = "here"):
        self.which = tuple(which)
        label = " and ".join(self.which)
        noun = "discriminants" if len(self.which) > 1 else "discriminant"
        super().__init__(f"{noun} {label} negative {where}")


class DegenerateAxis(TraceError):
    """The axis is (nearly) normal to the surface, so the constraint does not pick directions."""


class StepFailure(TraceError):
    pass


class LevelSetError(TraceError):
    pass


class InadmissibleStart(TraceError):
    def __init__(self, message: str, which: Sequence[str] = ()):
        self.which = tuple(which)
        super().__init__(message)


@dataclass(frozen=True)
class TraceConfig:
    d: tuple[float, float, float]
    theta: float
    initial: tuple[float, ...]
    family: str = "rns"
    branch: str = "plus"
    h: float = 1e-3
    s_max: float = 1.0
    surface_residual: float = 1e-8
    constraint_residual: float = RESIDUAL_TOL
    discriminant_floor: float = 0.0
    start_tol: float = 1e-8

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        if d.shape != (3,) or not np.all(np.isfinite(d)):
            raise TraceError(f"axis must be a finite 3-vector, got {self.d!r}")
        norm = float(np.linalg.norm(d))
        if norm < 1e-12:
            raise TraceError("axis must be nonzero")
        object.__setattr__(self, "d", tuple(float(x) for x in d / norm))
        family = _FAMILY_ALIASES.get(self.family, self.family)
        if family not in FAMILIES:
            raise TraceError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", family)
        if self.branch not in BRANCHES:
            raise TraceError(f"branch must be 'plus' or 'minus', got {self.branch!r}")
        if not 0.0 < self.theta < math.pi:
            raise TraceError(f"theta must lie in (0, pi), got {self.theta!r}")
        if not 0.0 < self.h <= self.s_max:
            raise TraceError(f"need 0 < h <= s_max, got h={self.h!r}, s_max={self.s_max!r}")
        object.__setattr__(self, "initial", tuple(float(x) for x in self.initial))

    @property
    def cos_theta(self) -> float:
        return math.cos(self.theta)


@dataclass
class TraceResult:
    curve: CurveSamples
    termination: str
    config: TraceConfig
    message: str = ""
    velocity: np.ndarray | None = None  # (du/ds, dv/ds) or (dx/ds, dy/ds, dz/ds) per sample
    constraint_residual: np.ndarray = field(default_factory=lambda: np.zeros(0))
    surface_residual: np.ndarray = field(default_factory=lambda: np.zeros(0))
    unit_speed_residual: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.curve)


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------


def _clamp(value: float, floor: float, scale: float, label: str, negative: list) -> float:
    if value < 0.0 and value > -CLAMP * scale:
        value = 0.0
    if value < floor:
        negative.append(label)
    return value


def _dedupe(cands: list, width: int) -> list:
    out = []
    for c in cands:
        size = sum(abs(x) for x in c[:width]) + 1e-300
        if all(sum(abs(a - b) for a, b in zip(c[:width], o[:width])) > 1e-9 * size for o in out):
            out.append(c)
    return out


def _order(cands: list, key: Callable) -> list:
    """Sort candidates so that index 0 is ``plus``."""
    if len(cands) == 1:
        return cands
    if len(cands) == 2:
        return cands if key(cands[0]) >= key(cands[1]) else [cands[1], cands[0]]
    return sorted(cands, key=key, reverse=True)


def _uv_partials(S: ParametricSurface, u: float, v: float):
    lo, hi = S.u_range
    vlo, vhi = S.v_range
    if not (lo <= u <= hi and vlo <= v <= vhi):
        raise OutOfDomain(f"(u, v) = ({u:.6g}, {v:.6g}) left the parameter domain")
    r = S.raw_partials(u, v)
    xu = (r[1], r[4], r[7])
    xv = (r[2], r[5], r[8])
    E = xu[0] * xu[0] + xu[1] * xu[1] + xu[2] * xu[2]
    F = xu[0] * xv[0] + xu[1] * xv[1] + xu[2] * xv[2]
    G = xv[0] * xv[0] + xv[1] * xv[1] + xv[2] * xv[2]
    W2 = E * G - F * F
    if not W2 > S.eps_reg * S.eps_reg:
        raise RegularityError(f"|X_u x X_v| <= {S.eps_reg:g} at (u, v) = ({u:.6g}, {v:.6g})")
    return r, xu, xv, E, F, G, W2


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _pairs(us, vs, E, F, G, L1, L2, rhs, xu, xv):
    """Pair the closed-form roots for du/ds and dv/ds, then polish them.

    Of the two ways to match the roots, the one with the smaller residual in
    the linear constraint ``L1 du + L2 dv = rhs`` and in unit speed is kept.
    Each matched root is then replaced by the exact intersection of that line
    with the unit ellipse of the first fundamental form on the same side,
    which stays accurate where a discriminant is close to zero.
    """
    scores = []
    for du in us:
        row = []
        for dv in vs:
            a = L1 * du
            b = L2 * dv
            lin = abs(a + b - rhs) / (abs(a) + abs(b) + abs(rhs) + 1e-300)
            e = E * du * du
            f = 2.0 * F * du * dv
            g = G * dv * dv
            row.append(max(lin, abs(e + f + g - 1.0) / (e + abs(f) + g + 1.0)))
        scores.append(row)
    straight = max(scores[0][0], scores[1][1])
    crossed = max(scores[0][1], scores[1][0])
    if min(straight, crossed) > PAIRING_TOL:
        raise StepFailure("no sign pairing satisfies the constraint and unit speed")
    pairs = ((us[0], vs[0]), (us[1], vs[1])) if straight <= crossed else ((us[0], vs[1]), (us[1], vs[0]))
    return _line_ellipse(E, F, G, L1, L2, rhs, xu, xv, pairs)


def _line_ellipse(E, F, G, L1, L2, rhs, xu, xv, seeds=None):
    """Intersections of ``L1 du + L2 dv = rhs`` with ``|(du, dv)|_I = 1``.

    With ``seeds``, one intersection per seed (the one on the seed's side of
    the line's closest point to the origin); otherwise both.
    """
    w0, w1 = -L2, L1
    Iw0 = E * w0 + F * w1
    Iw1 = F * w0 + G * w1
    ww = w0 * Iw0 + w1 * Iw1
    if not ww > 0.0:
        raise StepFailure("constraint line is degenerate")
    x00 = rhs * (G * L1 - F * L2) / ww
    x01 = rhs * (E * L2 - F * L1) / ww
    disc = 1.0 - rhs * rhs * (E * G - F * F) / ww
    if disc < 0.0:
        if disc < -PAIRING_TOL:
            raise StepFailure("constraint line misses the unit ellipse")
        disc = 0.0
    t = math.sqrt(disc / ww)
    if seeds is None:
        signs = (1.0, -1.0) if t > 0.0 else (1.0,)
    else:
        signs = tuple(1.0 if (du - x00) * Iw0 + (dv - x01) * Iw1 >= 0.0 else -1.0 for du, dv in seeds)
        if signs[0] == signs[-1]:
            signs = signs[:1]
    cands = []
    for sign in signs:
        du = x00 + sign * t * w0
        dv = x01 + sign * t * w1
        T = (xu[0] * du + xv[0] * dv, xu[1] * du + xv[1] * dv, xu[2] * du + xv[2] * dv)
        cands.append((du, dv, T))
    return cands


# --------------------------------------------------------------------------
# Parametric right-hand sides
# --------------------------------------------------------------------------


def parametric_rns_candidates(S: ParametricSurface, u: float, v: float, d, cos_theta: float, floor: float = 0.0,
                              fast: bool = False):
    """All admissible ``(du/ds, dv/ds, T)`` for ``<V, d> = cos(theta)``, ``plus`` first.

    ``fast`` skips the closed-form roots and their pairing and returns the
    polished intersections directly (same set, same discriminant checks).
    """
    r, xu, xv, E, F, G, W2 = _uv_partials(S, u, v)
    d0, d1, d2 = d
    p = xu[0] * d0 + xu[1] * d1 + xu[2] * d2
    q = xv[0] * d0 + xv[1] * d1 + xv[2] * d2
    A = E * q * q - 2.0 * F * p * q + G * p * p
    if A <= EPS_DEG * W2:
        raise DegenerateAxis(f"A = {A:.3g}: axis is normal to the surface at (u, v) = ({u:.6g}, {v:.6g})")
    W = math.sqrt(W2)
    c = cos_theta
    L1 = E * q - F * p
    L2 = F * q - G * p
    c2w4 = 4.0 * c * c * W2 * W2
    Delta = c2w4 * (q * q * W2 - A * G) + 4.0 * A * W2 * L2 * L2
    Dstar = c2w4 * (p * p * W2 - A * E) + 4.0 * A * W2 * L1 * L1
    scale = (E + G) ** 3.5
    negative: list = []
    Delta = _clamp(Delta, floor, scale, "Δ", negative)
    Dstar = _clamp(Dstar, floor, scale, "Δ*", negative)
    if negative:
        raise NoSolution(negative, f"at (u, v) = ({u:.6g}, {v:.6g})")
    if fast:
        cands = _line_ellipse(E, F, G, L1, L2, c * W, xu, xv)
    else:
        den = 2.0 * A * W2
        cw3 = 2.0 * c * W2 * W
        sD = math.sqrt(Delta)
        sDs = math.sqrt(Dstar)
        us = ((cw3 * q + sD) / den, (cw3 * q - sD) / den)
        vs = ((-cw3 * p - sDs) / den, (-cw3 * p + sDs) / den)
        cands = _pairs(us, vs, E, F, G, L1, L2, c * W, xu, xv)
    return _order(cands, lambda k: k[2][0] * d0 + k[2][1] * d1 + k[2][2] * d2)


def parametric_helix_candidates(S: ParametricSurface, u: float, v: float, d, cos_theta: float, floor: float = 0.0,
                                fast: bool = False):
    """All admissible ``(du/ds, dv/ds, T)`` for ``<T, d> = cos(theta)``, ``plus`` first."""
    r, xu, xv, E, F, G, W2 = _uv_partials(S, u, v)
    d0, d1, d2 = d
    p = xu[0] * d0 + xu[1] * d1 + xu[2] * d2
    q = xv[0] * d0 + xv[1] * d1 + xv[2] * d2
    A = E * q * q - 2.0 * F * p * q + G * p * p
    if A <= EPS_DEG * W2:
        raise DegenerateAxis(f"A = {A:.3g}: axis is normal to the surface at (u, v) = ({u:.6g}, {v:.6g})")
    c = cos_theta
    Mu = G * p - F * q
    Mv = E * q - F * p
    Du = 4.0 * c * c * Mu * Mu - 4.0 * A * (G * c * c - q * q)
    Dv = 4.0 * c * c * Mv * Mv - 4.0 * A * (E * c * c - p * p)
    scale = (E + G) ** 3
    negative: list = []
    Du = _clamp(Du, floor, scale, "Δ", negative)
    Dv = _clamp(Dv, floor, scale, "Δ*", negative)
    if negative:
        raise NoSolution(negative, f"at (u, v) = ({u:.6g}, {v:.6g})")
    if fast:
        cands = _line_ellipse(E, F, G, p, q, c, xu, xv)
    else:
        sDu = math.sqrt(Du)
        sDv = math.sqrt(Dv)
        us = ((2.0 * c * Mu + sDu) / (2.0 * A), (2.0 * c * Mu - sDu) / (2.0 * A))
        vs = ((2.0 * c * Mv + sDv) / (2.0 * A), (2.0 * c * Mv - sDv) / (2.0 * A))
        cands = _pairs(us, vs, E, F, G, p, q, c, xu, xv)
    n = _cross(xu, xv)
    side = _cross(d, n)
    return _order(cands, lambda k: _dot(k[2], side))


# --------------------------------------------------------------------------
# Implicit right-hand sides
# --------------------------------------------------------------------------

_PERMS = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


def _implicit_grad(S: ImplicitSurface, x: float, y: float, z: float):
    if S.bbox is not None and not S.contains((x, y, z)):
        raise OutOfDomain(f"({x:.6g}, {y:.6g}, {z:.6g}) left the bounding box")
    f, fx, fy, fz = S.raw_gradient(x, y, z)
    g2 = fx * fx + fy * fy + fz * fz
    if not g2 > S.eps_reg * S.eps_reg:
        raise RegularityError(f"|grad f| <= {S.eps_reg:g} at ({x:.6g}, {y:.6g}, {z:.6g})")
    return (fx, fy, fz), g2


def _unpermute(perm, a, b, c):
    out = [0.0, 0.0, 0.0]
    out[perm[0]] = a
    out[perm[1]] = b
    out[perm[2]] = c
    return tuple(out)


def _finish_implicit(raw, grad, gn, m, rhs, d, key):
    cands = []
    for w in raw:
        tang = abs(_dot(grad, w)) / gn
        norm2 = _dot(w, w)
        con = abs(_dot(m, w) - rhs) / (abs(rhs) + math.sqrt(_dot(m, m)) + 1e-300)
        if tang <= RESIDUAL_TOL * math.sqrt(norm2) and abs(norm2 - 1.0) <= RESIDUAL_TOL * 4 and con <= RESIDUAL_TOL:
            k = 1.0 / math.sqrt(norm2)
            w = (w[0] * k, w[1] * k, w[2] * k)
            cands.append((w[0], w[1], w[2], w))
    cands = _dedupe(cands, 3)
    if not cands:
        raise StepFailure("no root satisfies the constraint system")
    return _order(cands, key)


def implicit_rns_candidates(S: ImplicitSurface, point, d, cos_theta: float, floor: float = 0.0):
    """All admissible unit tangents for ``<V, d> = cos(theta)`` on ``f = 0``, ``plus`` first.

    Solves for dx/ds, dy/ds in terms of dz/ds and the quadratic for dz/ds, in
    whichever cyclic relabelling of the axes has the largest ``|Omega|``.
    """
    x, y, z = point
    grad, g2 = _implicit_grad(S, x, y, z)
    gn = math.sqrt(g2)
    K = gn * cos_theta
    best = None
    for perm in _PERMS:
        fx, fy, fz = grad[perm[0]], grad[perm[1]], grad[perm[2]]
        a, b, c = d[perm[0]], d[perm[1]], d[perm[2]]
        Om = c * fx * fx - a * fx * fz - b * fy * fz + c * fy * fy
        if best is None or abs(Om) > abs(best[0]) * (1.0 + 1e-12):
            best = (Om, perm, fx, fy, fz, a, b, c)
    Om, perm, fx, fy, fz, a, b, c = best
    if abs(Om) <= EPS_DEG * g2:
        raise DegenerateAxis(f"Omega vanishes in every axis labelling at ({x:.6g}, {y:.6g}, {z:.6g})")
    fx2, fy2, fz2 = fx * fx, fy * fy, fz * fz
    Om2 = Om * Om
    q1 = (
        b * b * fx2 * fx2
        + a * a * fy2 * fy2
        + (a * a + b * b) * fz2 * fz2
        - 2.0 * a * b * fx * fy2 * fy
        - 2.0 * a * c * fx * fz2 * fz
        - 2.0 * b * c * fy * fz2 * fz
        - 2.0 * a * b * fy * fx2 * fx
        + (a * a + b * b) * fx2 * fy2
        + (c * c + 2.0 * b * b) * fx2 * fz2
        + (2.0 * a * a + c * c) * fy2 * fz2
        - 4.0 * a * b * fx * fy * fz2
    ) / Om2 + 1.0
    q2 = (
        2.0
        * K
        * (b * fx * fz2 - a * fy * fx2 + b * fx * fy2 - a * fy * fz2 + b * fx2 * fx - a * fy2 * fy)
        / Om2
    )
    q3 = K * K * (fx2 + fy2) / Om2 - 1.0
    disc = q2 * q2 - 4.0 * q1 * q3
    negative: list = []
    disc = _clamp(disc, floor, q2 * q2 + abs(4.0 * q1 * q3) + 1.0, "q2^2-4*q1*q3", negative)
    if negative:
        raise NoSolution(negative, f"at ({x:.6g}, {y:.6g}, {z:.6g})")
    sq = math.sqrt(disc)
    P = b * fz - c * fy
    Q = c * fx - a * fz
    R = a * fy - b * fx
    raw = []
    for sign in (1.0, -1.0):
        dz = (-q2 + sign * sq) / (2.0 * q1)
        dx = ((fy * R - fz * Q) * dz - fy * K) / Om
        dy = ((fz * P - fx * R) * dz + fx * K) / Om
        raw.append(_unpermute(perm, dx, dy, dz))
    m = _cross(d, grad)
    return _finish_implicit(raw, grad, gn, m, K, d, lambda k: _dot(k[3], d))


def implicit_helix_candidates(S: ImplicitSurface, point, d, cos_theta: float, floor: float = 0.0):
    """All admissible unit tangents for ``<T, d> = cos(theta)`` on ``f = 0``, ``plus`` first."""
    x, y, z = point
    grad, g2 = _implicit_grad(S, x, y, z)
    gn = math.sqrt(g2)
    k = cos_theta
    best = None
    for perm in _PERMS:
        fx, fy, fz = grad[perm[0]], grad[perm[1]], grad[perm[2]]
        a, b, c = d[perm[0]], d[perm[1]], d[perm[2]]
        Om = fx * b - fy * a
        if best is None or abs(Om) > abs(best[0]) * (1.0 + 1e-12):
            best = (Om, perm, fx, fy, fz, a, b, c)
    Om, perm, fx, fy, fz, a, b, c = best
    if abs(Om) <= EPS_DEG * gn:
        raise DegenerateAxis(f"axis is normal to the surface at ({x:.6g}, {y:.6g}, {z:.6g})")
    al1 = (fy * c - fz * b) / Om
    be1 = -fy * k / Om
    al2 = (a * fz - fx * c) / Om
    be2 = fx * k / Om
    q1 = al1 * al1 + al2 * al2 + 1.0
    q2 = 2.0 * (al1 * be1 + al2 * be2)
    q3 = be1 * be1 + be2 * be2 - 1.0
    negative: list = []
    disc = _clamp(q2 * q2 - 4.0 * q1 * q3, floor, q2 * q2 + abs(4.0 * q1 * q3) + 1.0, "q2^2-4*q1*q3", negative)
    if negative:
        raise NoSolution(negative, f"at ({x:.6g}, {y:.6g}, {z:.6g})")
    sq = math.sqrt(disc)
    raw = []
    for sign in (1.0, -1.0):
        dz = (-q2 + sign * sq) / (2.0 * q1)
        raw.append(_unpermute(perm, al1 * dz + be1, al2 * dz + be2, dz))
    side = _cross(d, grad)
    return _finish_implicit(raw, grad, gn, tuple(d), k, d, lambda c_: _dot(c_[3], side))


# --------------------------------------------------------------------------
# Public single-point right-hand sides
# --------------------------------------------------------------------------


def _pick(cands: list, branch: str):
    return cands[0] if branch == "plus" else cands[-1]


def rhs_parametric_rns(S: ParametricSurface, u: float, v: float, cfg: TraceConfig) -> tuple[float, float]:
    c = _pick(parametric_rns_candidates(S, u, v, cfg.d, cfg.cos_theta, cfg.discriminant_floor), cfg.branch)
    return c[0], c[1]


def rhs_implicit_rns(S: ImplicitSurface, p, cfg: TraceConfig) -> np.ndarray:
    c = _pick(implicit_rns_candidates(S, tuple(map(float, p)), cfg.d, cfg.cos_theta, cfg.discriminant_floor), cfg.branch)
    return np.array(c[3])


def rhs_general_helix(S, state, cfg: TraceConfig) -> np.ndarray:
    if isinstance(S, ParametricSurface):
        c = _pick(parametric_helix_candidates(S, *map(float, state), cfg.d, cfg.cos_theta, cfg.discriminant_floor), cfg.branch)
        return np.array(c[:2])
    c = _pick(implicit_helix_candidates(S, tuple(map(float, state)), cfg.d, cfg.cos_theta, cfg.discriminant_floor), cfg.branch)
    return np.array(c[3])


# --------------------------------------------------------------------------
# Integration
# --------------------------------------------------------------------------


def _kernel(S, cfg: TraceConfig):
    """``(candidates, stage_candidates, velocity, tangent)`` for the configured family."""
    d, c, floor = cfg.d, cfg.cos_theta, cfg.discriminant_floor
    if isinstance(S, ParametricSurface):
        fn = parametric_rns_candidates if cfg.family == "rns" else parametric_helix_candidates
        return (
            (lambda y: fn(S, y[0], y[1], d, c, floor)),
            (lambda y: fn(S, y[0], y[1], d, c, floor, True)),
            (lambda k: (k[0], k[1])),
            (lambda k: k[2]),
        )
    if isinstance(S, ImplicitSurface):
        fn = implicit_rns_candidates if cfg.family == "rns" else implicit_helix_candidates
        full = lambda y: fn(S, y, d, c, floor)  # noqa: E731
        return full, full, (lambda k: k[3]), (lambda k: k[3])
    raise TraceError(f"not a surface: {S!r}")


def _nearest(cands, tangent, ref):
    if len(cands) == 1:
        return cands[0]
    best, score = cands[0], -2.0
    r0, r1, r2 = ref
    for k in cands:
        t = tangent(k)
        s = t[0] * r0 + t[1] * r1 + t[2] * r2
        if s > score:
            score, best = s, k
    return best


_REASON = (
    (NoSolution, "discriminant-negative"),
    (RegularityError, "regularity-lost"),
    (OutOfDomain, "domain-exit"),
)


def _reason(exc: Exception) -> str:
    for cls, reason in _REASON:
        if isinstance(exc, cls):
            return reason
    return "step-failure"


def _start(candidates, y0, branch):
    try:
        return _pick(candidates(y0), branch)
    except NoSolution as exc:
        raise InadmissibleStart(f"{exc.args[0].split(' at ')[0]} at initial point", exc.which) from exc
    except (RegularityError, OutOfDomain, DegenerateAxis, StepFailure) as exc:
        raise InadmissibleStart(f"initial point inadmissible: {exc}") from exc


def _rk4(y, h, field, k1=None):
    if k1 is None:
        k1 = field(y)
    y2 = tuple(a + 0.5 * h * b for a, b in zip(y, k1))
    k2 = field(y2)
    y3 = tuple(a + 0.5 * h * b for a, b in zip(y, k2))
    k3 = field(y3)
    y4 = tuple(a + h * b for a, b in zip(y, k3))
    k4 = field(y4)
    return tuple(a + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))


def _steps(cfg: TraceConfig) -> int:
    return int(math.floor(cfg.s_max / cfg.h + 1e-9))


def trace(S, cfg: TraceConfig) -> TraceResult:
    """Integrate the family's ODE from ``cfg.initial`` with fixed-step RK4.

    The candidate nearest (in 3D tangent) to the tangent at the start of the
    step is used at every stage, so the branch never switches silently.
    Implicit traces are projected back onto ``f = 0`` after every step.
    Integration stops at ``s_max`` or at the first failure, whose kind is
    recorded in ``termination``; a failure at the initial point raises
    :class:`InadmissibleStart` instead.
    """
    if cfg.family == "isophote":
        return trace_isophote(S, cfg)
    candidates, stage, velocity, tangent = _kernel(S, cfg)
    implicit = isinstance(S, ImplicitSurface)
    y = cfg.initial
    if len(y) != (3 if implicit else 2):
        raise TraceError(f"initial point needs {3 if implicit else 2} coordinates, got {len(y)}")
    if implicit:
        f0 = S.value(y)
        if abs(f0) > cfg.surface_residual:
            raise InadmissibleStart(f"initial point is off the surface (|f| = {abs(f0):.3g})")
    k = _start(candidates, y, cfg.branch)
    states = [y]
    picks = [k]
    termination, message = "budget-exhausted", ""
    h = cfg.h
    for _ in range(_steps(cfg)):
        ref = tangent(k)

        def field(state, ref=ref):
            return velocity(_nearest(stage(state), tangent, ref))

        try:
            y_new = _rk4(y, h, field, velocity(k))
            if implicit:
                y_new = tuple(project_implicit(S, y_new, PROJECTION_TOL))
            k = _nearest(candidates(y_new), tangent, ref)
        except (TraceError, RegularityError, OutOfDomain, ProjectionError, ArithmeticError) as exc:
            termination, message = _reason(exc), str(exc)
            break
        y = y_new
        states.append(y)
        picks.append(k)
    return _assemble(S, cfg, states, picks, velocity, tangent, termination, message)


def _assemble(S, cfg, states, picks, velocity, tangent, termination, message) -> TraceResult:
    n = len(states)
    s = cfg.h * np.arange(n)
    T = np.array([tangent(k) for k in picks])
    vel = np.array([velocity(k) for k in picks])
    if isinstance(S, ParametricSurface):
        uv = np.array(states)
        raw = np.array([S.raw_partials(u, v) for u, v in states])
        pts = raw[:, [0, 3, 6]]
        U = np.cross(raw[:, [1, 4, 7]], raw[:, [2, 5, 8]])
        surf = np.zeros(n)
    else:
        uv = None
        pts = np.array(states)
        U = np.array([S.gradient(p) for p in pts])
        surf = np.abs([S.value(p) for p in pts])
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    V = np.cross(U, T)
    curve = CurveSamples(s, pts, uv=uv, frames=DarbouxFrames(T, V, U))
    d = np.array(cfg.d)
    probe = {"rns": V, "general-helix": T, "isophote": U}[cfg.family]
    constraint = probe @ d - cfg.cos_theta
    return TraceResult(
        curve=curve,
        termination=termination,
        config=cfg,
        message=message,
        velocity=vel,
        constraint_residual=constraint,
        surface_residual=surf,
        unit_speed_residual=unit_speed_residual(curve),
    )


def unit_speed_residual(curve: CurveSamples) -> np.ndarray:
    """Per-sample deviation of the local speed from 1.

    Compares each chord with the chord length ``h (1 - kappa^2 h^2 / 24)`` a
    unit-speed curve of curvature ``kappa`` would have, so the residual is
    not dominated by the O(h^2) chord-versus-arc discrepancy.
    """
    n = len(curve)
    out = np.zeros(n)
    if n < 2:
        return out
    chords = np.linalg.norm(np.diff(curve.points, axis=0), axis=1)
    ds = np.diff(curve.s)
    if curve.frames is not None and n >= 3:
        dT = np.gradient(curve.frames.T, curve.s, axis=0, edge_order=2)
        k2 = np.einsum("ij,ij->i", dT, dT)
        k2 = 0.5 * (k2[1:] + k2[:-1])
        out[1:] = np.abs(chords / (ds * (1.0 - k2 * ds * ds / 24.0)) - 1.0)
    else:
        out[1:] = chord_residual(curve)
    return out


# --------------------------------------------------------------------------
# Isophotes (parametric surfaces)
# --------------------------------------------------------------------------


def _isophote_g(S: ParametricSurface, u: float, v: float, d, c: float):
    X, Xu, Xv, Xuu, Xuv, Xvv = S.second_partials(u, v)
    N = np.cross(Xu, Xv)
    nn = float(np.linalg.norm(N))
    if nn <= S.eps_reg:
        raise RegularityError(f"|X_u x X_v| <= {S.eps_reg:g} at (u, v) = ({u:.6g}, {v:.6g})")
    U = N / nn
    Nu = np.cross(Xuu, Xv) + np.cross(Xu, Xuv)
    Nv = np.cross(Xuv, Xv) + np.cross(Xu, Xvv)
    Uu = (Nu - U * (U @ Nu)) / nn
    Uv = (Nv - U * (U @ Nv)) / nn
    return float(U @ d) - c, float(Uu @ d), float(Uv @ d), Xu, Xv


def _isophote_correct(S, u, v, d, c, tol=1e-13, max_iter=20):
    for _ in range(max_iter + 1):
        g, gu, gv, _, _ = _isophote_g(S, u, v, d, c)
        if abs(g) <= tol:
            return u, v
        n2 = gu * gu + gv * gv
        if n2 <= EPS_DEG * EPS_DEG:
            raise LevelSetError("gradient of <U, d> vanishes: degenerate level set")
        u, v = u - g * gu / n2, v - g * gv / n2
    raise StepFailure("corrector did not return to the level set")


def trace_isophote(S: ParametricSurface, cfg: TraceConfig) -> TraceResult:
    """Follow the level set ``<U, d> = cos(theta)`` in the parameter domain.

    RK4 predictor along the unit-speed level-set tangent, then Newton
    corrector back onto the level set. ``plus`` moves along
    ``(g_v, -g_u)`` in parameter space at the start.
    """
    if not isinstance(S, ParametricSurface):
        raise TraceError("isophote tracing is implemented for parametric surfaces only")
    if cfg.family != "isophote":
        cfg = replace(cfg, family="isophote")
    d = np.array(cfg.d)
    c = cfg.cos_theta
    if len(cfg.initial) != 2:
        raise TraceError("isophote tracing needs an initial (u, v)")
    u, v = cfg.initial
    try:
        g, gu, gv, Xu, Xv = _isophote_g(S, u, v, d, c)
    except (RegularityError, OutOfDomain) as exc:
        raise InadmissibleStart(f"initial point inadmissible: {exc}") from exc
    if abs(g) > cfg.start_tol:
        raise LevelSetError(f"initial point is not on the level set (|<U, d> - cos(theta)| = {abs(g):.3g})")
    if gu * gu + gv * gv <= EPS_DEG * EPS_DEG:
        raise LevelSetError("gradient of <U, d> vanishes at the initial point: degenerate level set")
    u, v = _isophote_correct(S, u, v, d, c)
    sign = 1.0 if cfg.branch == "plus" else -1.0

    def direction(state, ref):
        g, gu, gv, Xu, Xv = _isophote_g(S, state[0], state[1], d, c)
        n2 = gu * gu + gv * gv
        if n2 <= EPS_DEG * EPS_DEG:
            raise LevelSetError("gradient of <U, d> vanishes: degenerate level set")
        t = np.array([gv, -gu])
        T = Xu * t[0] + Xv * t[1]
        speed = float(np.linalg.norm(T))
        t /= speed
        T /= speed
        if ref is not None and T @ ref < 0:
            t, T = -t, -T
        return t, T

    t, T = direction((u, v), None)
    t, T = t * sign, T * sign
    states, tangents, vels = [(u, v)], [T], [t]
    termination, message = "budget-exhausted", ""
    h = cfg.h
    for _ in range(_steps(cfg)):
        ref = T
        try:
            y = _rk4((u, v), h, lambda st: tuple(direction(st, ref)[0]))
            S.check_domain(*y)
            un, vn = _isophote_correct(S, y[0], y[1], d, c)
            t, T = direction((un, vn), ref)
        except (TraceError, RegularityError, OutOfDomain, ArithmeticError) as exc:
            termination, message = _reason(exc), str(exc)
            break
        u, v = un, vn
        states.append((u, v))
        tangents.append(T)
        vels.append(t)
    tangents_arr = tangents

    def tangent_of(i):
        return tangents_arr[i]

    idx = list(range(len(states)))
    return _assemble(S, cfg, states, idx, lambda i: tuple(vels[i]), tangent_of, termination, message)


# --------------------------------------------------------------------------
# Parameter lines (reference curves that are not constant-angle curves)
# --------------------------------------------------------------------------


def trace_parameter_line(S: ParametricSurface, direction: Sequence[float], start: Sequence[float],
                         h: float = 1e-3, s_max: float = 1.0) -> CurveSamples:
    """Arc-length samples of the straight parameter line ``(u0, v0) + t (a, b)``.

    The unit-speed field ``(a, b) / |(a, b)|_I`` is integrated with RK4, so the
    samples are uniform in arc length; frames are attached.
    """
    a, b = (float(x) for x in direction)

    def field(y):
        _, xu, xv, E, F, G, _ = _uv_partials(S, y[0], y[1])
        k = 1.0 / math.sqrt(E * a * a + 2.0 * F * a * b + G * b * b)
        return (a * k, b * k)

    y = tuple(float(x) for x in start)
    states = [y]
    for _ in range(int(math.floor(s_max / h + 1e-9))):
        y = _rk4(y, h, field)
        states.append(y)
    uv = np.array(states)
    n = len(uv)
    pts = np.empty((n, 3))
    T = np.empty((n, 3))
    U = np.empty((n, 3))
    for i, (u, v) in enumerate(uv):
        r, xu, xv, *_ = _uv_partials(S, u, v)
        du, dv = field((u, v))
        pts[i] = (r[0], r[3], r[6])
        T[i] = np.add(np.multiply(xu, du), np.multiply(xv, dv))
        U[i] = np.cross(xu, xv)
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    return CurveSamples(h * np.arange(n), pts, uv=uv, frames=DarbouxFrames(T, np.cross(U, T), U))
