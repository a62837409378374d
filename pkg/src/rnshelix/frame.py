"""Darboux and Frenet apparatus along sampled curves.

Every derivative along a curve is a central difference on the sample grid
(second-order one-sided stencils at the two ends), so errors are O(h^2) in
the sample spacing. Quantities that difference twice are unreliable in the
first and last few samples; :func:`interior` gives the trusted slice.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .surface import ImplicitSurface, ParametricSurface, SurfaceError, normal_implicit, normal_parametric

EPS_DEG = 1e-8
EDGE = 3


class CurveError(ValueError):
    pass


class DegenerateCurve(CurveError):
    """A quotient in an invariant has a (near) zero denominator."""


class OffSurface(CurveError):
    pass


@dataclass(frozen=True)
class DarbouxFrames:
    T: np.ndarray
    V: np.ndarray
    U: np.ndarray


@dataclass(frozen=True)
class DarbouxScalars:
    s: np.ndarray
    kappa_g: np.ndarray
    kappa_n: np.ndarray
    tau_g: np.ndarray
    edge: np.ndarray  # True where one-sided differences were used


@dataclass(frozen=True)
class FrenetApparatus:
    T: np.ndarray
    N: np.ndarray
    B: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray
    defined: np.ndarray  # False where kappa < EPS_DEG (N, B, tau are NaN there)


@dataclass(frozen=True)
class CurveSamples:
    s: np.ndarray
    points: np.ndarray
    uv: np.ndarray | None = None
    frames: DarbouxFrames | None = None
    scalars: DarbouxScalars | None = None

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        points = np.asarray(self.points, dtype=float)
        if s.ndim != 1 or points.shape != (len(s), 3):
            raise CurveError(f"expected s of shape (n,) and points (n, 3), got {s.shape} and {points.shape}")
        if len(s) > 1 and not np.all(np.diff(s) > 0):
            raise CurveError("arc-length column must be strictly increasing")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "points", points)
        if self.uv is not None:
            uv = np.asarray(self.uv, dtype=float)
            if uv.shape != (len(s), 2):
                raise CurveError(f"uv must have shape ({len(s)}, 2)")
            object.__setattr__(self, "uv", uv)

    def __len__(self) -> int:
        return len(self.s)

    def with_frames(self, frames: DarbouxFrames) -> "CurveSamples":
        return replace(self, frames=frames, scalars=None)


def derivative(y: np.ndarray, s: np.ndarray) -> np.ndarray:
    """d/ds along axis 0."""
    return np.gradient(y, s, axis=0, edge_order=2)


def interior(n: int, k: int = EDGE) -> slice:
    if n <= 2 * k:
        raise CurveError(f"need more than {2 * k} samples, got {n}")
    return slice(k, n - k)


def rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, b)


def unit(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def chord_residual(curve: CurveSamples) -> np.ndarray:
    """Relative mismatch between consecutive chord lengths and arc-length steps."""
    chords = np.linalg.norm(np.diff(curve.points, axis=0), axis=1)
    return np.abs(chords / np.diff(curve.s) - 1.0)


# --------------------------------------------------------------------------
# Darboux apparatus
# --------------------------------------------------------------------------


def darboux_frames(curve: CurveSamples, surface, tol: float = 1e-6) -> DarbouxFrames:
    """Frames ``{T, V, U}`` at every sample.

    T is the differenced position projected into the tangent plane and
    renormalized; U comes from the surface; V = U x T.
    """
    n = len(curve)
    if n < 3:
        raise CurveError("darboux_frames needs at least 3 samples")
    U = np.empty((n, 3))
    if isinstance(surface, ParametricSurface):
        if curve.uv is None:
            raise CurveError("curve on a parametric surface needs its (u, v) path")
        for i, (u, v) in enumerate(curve.uv):
            gap = np.linalg.norm(surface.point(u, v) - curve.points[i])
            if gap > tol:
                raise OffSurface(f"sample {i} is {gap:.3g} away from X(u, v)")
            U[i] = normal_parametric(surface, u, v)
    elif isinstance(surface, ImplicitSurface):
        for i, p in enumerate(curve.points):
            f = surface.value(p)
            if abs(f) > tol:
                raise OffSurface(f"sample {i} has |f| = {abs(f):.3g}")
            U[i] = normal_implicit(surface, p)
    else:
        raise SurfaceError(f"not a surface: {surface!r}")
    T = derivative(curve.points, curve.s)
    T -= rowdot(T, U)[:, None] * U
    T = unit(T)
    V = np.cross(U, T)
    return DarbouxFrames(T, V, U)


def attach_frames(curve: CurveSamples, surface, tol: float = 1e-6) -> CurveSamples:
    return curve.with_frames(darboux_frames(curve, surface, tol))


def darboux_scalars(curve: CurveSamples) -> DarbouxScalars:
    """Darboux scalars ``kappa_g``, ``kappa_n`` and ``tau_g`` per sample."""
    if curve.frames is None:
        raise CurveError("attach frames before computing Darboux scalars")
    n = len(curve)
    if n < 5:
        raise CurveError(f"need at least 5 samples, got {n}")
    fr = curve.frames
    dT = derivative(fr.T, curve.s)
    dV = derivative(fr.V, curve.s)
    edge = np.zeros(n, dtype=bool)
    edge[[0, -1]] = True
    return DarbouxScalars(curve.s, rowdot(dT, fr.V), rowdot(dT, fr.U), rowdot(dV, fr.U), edge)


def with_scalars(curve: CurveSamples) -> CurveSamples:
    if curve.scalars is not None:
        return curve
    return replace(curve, scalars=darboux_scalars(curve))


def sigma_v(sc: DarbouxScalars, eps: float = EPS_DEG) -> np.ndarray:
    """The invariant that is constant exactly on relatively normal-slant helices.

    ``(tau_g' kappa_g - kappa_g' tau_g - kappa_n rho^2) / rho^3`` with
    ``rho^2 = kappa_g^2 + tau_g^2``.
    """
    rho2 = sc.kappa_g**2 + sc.tau_g**2
    bad = np.flatnonzero(rho2 < eps * eps)
    if bad.size:
        raise DegenerateCurve(f"(kappa_g, tau_g) vanishes at {bad.size} samples (first index {bad[0]})")
    dkg = derivative(sc.kappa_g, sc.s)
    dtg = derivative(sc.tau_g, sc.s)
    return (dtg * sc.kappa_g - dkg * sc.tau_g - sc.kappa_n * rho2) / rho2**1.5


def darboux_fields(sc: DarbouxScalars, fr: DarbouxFrames) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The Darboux vector fields ``(D_n, D_r, D_o)``."""
    kg = sc.kappa_g[:, None]
    kn = sc.kappa_n[:, None]
    tg = sc.tau_g[:, None]
    Dn = -kn * fr.V + kg * fr.U
    Dr = tg * fr.T + kg * fr.U
    Do = tg * fr.T - kn * fr.V
    return Dn, Dr, Do


# --------------------------------------------------------------------------
# Frenet apparatus
# --------------------------------------------------------------------------


def frenet_apparatus(curve: CurveSamples, velocity: np.ndarray | None = None, eps: float = EPS_DEG) -> FrenetApparatus:
    """Frenet apparatus per sample.

    The parameter need not be arc length: derivatives with respect to the
    sample parameter are divided by the speed. ``velocity`` (the exact first
    derivative, when known) saves one level of differencing; otherwise the
    attached tangent or the differenced positions are used.
    """
    n = len(curve)
    if n < 5:
        raise CurveError(f"need at least 5 samples, got {n}")
    t = curve.s
    if velocity is None:
        if curve.frames is not None:
            velocity = curve.frames.T
        else:
            velocity = derivative(curve.points, t)
    velocity = np.asarray(velocity, dtype=float)
    speed = np.linalg.norm(velocity, axis=1)
    if np.any(speed < eps):
        raise DegenerateCurve("curve is stationary at some samples")
    T = velocity / speed[:, None]
    dT = derivative(T, t) / speed[:, None]
    kappa = np.linalg.norm(dT, axis=1)
    defined = kappa >= eps
    with np.errstate(invalid="ignore", divide="ignore"):
        N = np.where(defined[:, None], dT / kappa[:, None], np.nan)
    B = np.cross(T, N)
    dB = derivative(B, t) / speed[:, None]
    tau = -rowdot(dB, N)
    return FrenetApparatus(T, N, B, kappa, tau, defined)


def slant_sigma(fr: FrenetApparatus, s: np.ndarray, eps: float = EPS_DEG) -> np.ndarray:
    """``kappa^2 / (kappa^2 + tau^2)^(3/2) * (tau / kappa)'`` (constant on slant helices)."""
    if not np.all(fr.defined) or np.any(fr.kappa < eps):
        raise DegenerateCurve("curvature vanishes on part of the curve")
    ratio = fr.tau / fr.kappa
    return fr.kappa**2 / (fr.kappa**2 + fr.tau**2) ** 1.5 * derivative(ratio, s)


def phi_consistency(sc: DarbouxScalars, fr: FrenetApparatus, eps: float = EPS_DEG) -> dict[str, np.ndarray]:
    """Residuals of ``kappa_g = kappa sin(phi)``, ``kappa_n = kappa cos(phi)``, ``tau_g = tau + phi'``.

    ``phi`` is the angle from U to N measured towards V, taken as
    ``atan2(kappa_g, kappa_n)`` and unwrapped along the curve.
    """
    if np.any(fr.kappa < eps):
        raise DegenerateCurve("curvature vanishes on part of the curve; phi is undefined")
    phi = np.unwrap(np.arctan2(sc.kappa_g, sc.kappa_n))
    return {
        "phi": phi,
        "kappa_g": np.abs(sc.kappa_g - fr.kappa * np.sin(phi)),
        "kappa_n": np.abs(sc.kappa_n - fr.kappa * np.cos(phi)),
        "tau_g": np.abs(sc.tau_g - fr.tau - derivative(phi, sc.s)),
    }


# --------------------------------------------------------------------------
# Constancy gates
# --------------------------------------------------------------------------

CONST_TOL = 1e-3
ZERO_TOL = 1e-6


def spread(series: np.ndarray, k: int = EDGE) -> float:
    """``(max - min) / max(1, |mean|)`` over interior samples."""
    x = np.asarray(series, dtype=float)[interior(len(series), k)]
    if not np.all(np.isfinite(x)):
        return float("nan")
    return float((x.max() - x.min()) / max(1.0, abs(x.mean())))


def is_constant(series: np.ndarray, tol: float = CONST_TOL) -> tuple[bool, float]:
    r = spread(series)
    return bool(r <= tol), r


def is_zero(series: np.ndarray, scale: float = 0.0, tol: float = ZERO_TOL, k: int = EDGE) -> tuple[bool, float]:
    x = np.abs(np.asarray(series, dtype=float)[interior(len(series), k)])
    r = float(x.max())
    return bool(r <= tol * (1.0 + scale)), r
