"""Axis recovery and numerical checks of the helix characterizations.

All checks work on sampled curves with Darboux frames attached (as produced by
the tracer, or via :func:`rnshelix.frame.attach_frames`). Each verdict is a
:class:`Check` holding the boolean outcome and the residual it was based on,
using the constancy and zero gates of :mod:`rnshelix.frame`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .frame import (
    CONST_TOL,
    EDGE,
    EPS_DEG,
    CurveError,
    CurveSamples,
    DegenerateCurve,
    derivative,
    darboux_fields,
    frenet_apparatus,
    interior,
    is_constant,
    is_zero,
    rowdot,
    sigma_v,
    slant_sigma,
    spread,
    with_scalars,
)

IDENTITY_TOL = 1e-3
# Frenet quantities of integral curves difference an already differenced field.
TRIM = 2 * EDGE
# Torsion is only compared where the curvature is at least this fraction of its maximum;
# near an inflection the differenced binormal is dominated by rounding.
TORSION_FLOOR = 0.05


@dataclass(frozen=True)
class Check:
    passed: bool
    residual: float

    def to_dict(self) -> dict:
        return {"passed": self.passed, "residual": self.residual}


@dataclass
class Report:
    theorem: str
    checks: dict[str, Check]
    agreement: bool
    values: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "agreement": self.agreement,
            "checks": {k: v.to_dict() for k, v in self.checks.items()},
            "values": dict(self.values),
        }


@dataclass(frozen=True)
class AxisEstimate:
    d_hat: np.ndarray
    theta_hat: float
    spread: float  # max angle (radians) between per-sample axes and d_hat
    sigma_v_spread: float
    flagged: bool  # sigma_v is not constant, so the axis is only an average

    def to_dict(self) -> dict:
        return {
            "d_hat": [float(x) for x in self.d_hat],
            "theta_hat": self.theta_hat,
            "spread": self.spread,
            "sigma_v_spread": self.sigma_v_spread,
            "flagged": self.flagged,
        }


@dataclass(frozen=True)
class CircleFit:
    center: np.ndarray
    normal: np.ndarray
    radius: float
    plane_residual: float  # max distance from the fitted plane
    radial_spread: float  # max deviation of the in-plane distance from the radius

    @property
    def residual(self) -> float:
        return max(self.plane_residual, self.radial_spread)


@dataclass(frozen=True)
class CurveClassification:
    is_geodesic: Check
    is_asymptotic: Check
    is_line_of_curvature: Check
    is_rns_helix: Check
    is_general_helix: Check
    is_slant_helix: Check
    is_isophote: Check
    cross_checks: dict[str, Check] = field(default_factory=dict)
    ratios: dict[str, float] = field(default_factory=dict)

    FLAGS = (
        "is_geodesic",
        "is_asymptotic",
        "is_line_of_curvature",
        "is_rns_helix",
        "is_general_helix",
        "is_slant_helix",
        "is_isophote",
    )

    def to_dict(self) -> dict:
        out = {name: getattr(self, name).to_dict() for name in self.FLAGS}
        out["cross_checks"] = {k: v.to_dict() for k, v in self.cross_checks.items()}
        out["ratios"] = dict(self.ratios)
        return out


def _prepared(curve: CurveSamples) -> CurveSamples:
    if curve.frames is None:
        raise CurveError("attach Darboux frames first (rnshelix.frame.attach_frames)")
    return with_scalars(curve)


def _identity(actual: np.ndarray, expected: np.ndarray, k: int = TRIM, where: np.ndarray | None = None) -> Check:
    sl = interior(len(actual), k)
    a, e = np.asarray(actual)[sl], np.asarray(expected)[sl]
    if where is not None:
        a, e = a[where[sl]], e[where[sl]]
        if a.size == 0:
            return Check(False, math.inf)
    r = float(np.max(np.abs(a - e) / np.maximum(1.0, np.abs(e))))
    return Check(bool(r <= IDENTITY_TOL), r)


def _constant(series: np.ndarray, k: int = EDGE) -> Check:
    x = np.asarray(series, dtype=float)
    if not np.all(np.isfinite(x[interior(len(x), k)])):
        return Check(False, math.inf)
    r = spread(x, k)
    return Check(bool(r <= CONST_TOL), r)


def _torsion_mask(kappa: np.ndarray, k: int = TRIM) -> np.ndarray:
    return kappa >= TORSION_FLOOR * float(np.max(kappa[interior(len(kappa), k)]))


def _mean(series: np.ndarray, k: int = EDGE) -> float:
    return float(np.mean(np.asarray(series)[interior(len(series), k)]))


# --------------------------------------------------------------------------
# Axis recovery
# --------------------------------------------------------------------------


def _canonical_axis(d: np.ndarray, theta: float) -> tuple[np.ndarray, float]:
    if theta > math.pi / 2 or (theta == math.pi / 2 and tuple(-d) > tuple(d)):
        return -d, math.pi - theta
    return d, theta


def recover_axis(curve: CurveSamples) -> AxisEstimate:
    """Axis ``d`` and angle ``theta`` with ``<V, d> = cos(theta)``.

    Per sample, ``cot(theta) = sigma_v`` and
    ``d = sin(theta) (tau_g T + kappa_g U) / rho + cos(theta) V``; the other
    integration sign gives ``(-d, pi - theta)``, the same axis. The estimate
    is the normalized mean of the per-sample axes, reported with
    ``theta <= pi/2``; ``spread`` is their largest angle to it.
    """
    curve = _prepared(curve)
    sc, fr = curve.scalars, curve.frames
    sv = sigma_v(sc)
    sl = interior(len(curve))
    rho = np.sqrt(sc.kappa_g**2 + sc.tau_g**2)
    theta_i = np.arctan2(1.0, sv)
    d_i = (
        np.sin(theta_i)[:, None] * (sc.tau_g[:, None] * fr.T + sc.kappa_g[:, None] * fr.U) / rho[:, None]
        + np.cos(theta_i)[:, None] * fr.V
    )[sl]
    mean = d_i.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < EPS_DEG:
        raise DegenerateCurve("per-sample axes cancel; no common axis")
    d_hat = mean / norm
    ang = float(np.max(np.arctan2(np.linalg.norm(np.cross(d_i, d_hat), axis=1), d_i @ d_hat)))
    theta = float(math.atan2(1.0, _mean(sv)))
    d_hat, theta = _canonical_axis(d_hat, theta)
    sv_spread = spread(sv)
    return AxisEstimate(d_hat, theta, ang, sv_spread, bool(sv_spread > CONST_TOL))


# --------------------------------------------------------------------------
# Derived curves
# --------------------------------------------------------------------------


def rn_indicatrix(curve: CurveSamples) -> CurveSamples:
    """``V(s)`` as a curve on the unit sphere (same parameter, not unit speed)."""
    if curve.frames is None:
        raise CurveError("attach Darboux frames first")
    return CurveSamples(curve.s, curve.frames.V.copy())


def integral_curve(field: np.ndarray, s: np.ndarray) -> CurveSamples:
    """``beta`` with ``beta' = field`` and ``beta(s_0) = 0`` by 4th-order quadrature.

    Each interval uses the cubic through four neighbouring samples, so the
    grid must be uniform.
    """
    f = np.asarray(field, dtype=float)
    s = np.asarray(s, dtype=float)
    if f.ndim != 2 or f.shape != (len(s), 3):
        raise CurveError(f"field of shape {f.shape} does not match a grid of {len(s)} samples")
    if len(s) < 4:
        raise CurveError("integral_curve needs at least 4 samples")
    ds = np.diff(s)
    h = float(ds.mean())
    if not np.allclose(ds, h, rtol=1e-8, atol=0.0):
        raise CurveError("integral_curve needs a uniform arc-length grid")
    inc = np.empty((len(s) - 1, 3))
    inc[1:-1] = h / 24.0 * (-f[:-3] + 13.0 * f[1:-2] + 13.0 * f[2:-1] - f[3:])
    inc[0] = h / 24.0 * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
    inc[-1] = h / 24.0 * (9.0 * f[-1] + 19.0 * f[-2] - 5.0 * f[-3] + f[-4])
    beta = np.vstack([np.zeros(3), np.cumsum(inc, axis=0)])
    return CurveSamples(s, beta)


def fit_circle(points: np.ndarray) -> CircleFit:
    """Least-squares plane, then least-squares circle within it."""
    p = np.asarray(points, dtype=float)
    c = p.mean(axis=0)
    _, _, vt = np.linalg.svd(p - c)
    e1, e2, n = vt
    plane = float(np.max(np.abs((p - c) @ n)))
    x, y = (p - c) @ e1, (p - c) @ e2
    A = np.column_stack([2.0 * x, 2.0 * y, np.ones_like(x)])
    (a, b, k), *_ = np.linalg.lstsq(A, x * x + y * y, rcond=None)
    radius = math.sqrt(max(k + a * a + b * b, 0.0))
    radial = float(np.max(np.abs(np.hypot(x - a, y - b) - radius)))
    return CircleFit(c + a * e1 + b * e2, n, radius, plane, radial)


def _frenet_of_integral(field: np.ndarray, s: np.ndarray):
    beta = integral_curve(field, s)
    return beta, frenet_apparatus(beta, velocity=field)


# --------------------------------------------------------------------------
# Theorem checks
# --------------------------------------------------------------------------


def verify_thm_6_1(curve: CurveSamples) -> Report:
    """The V-direction curve is a general helix exactly when ``sigma_v`` is constant.

    Also checks its curvature ``sqrt(kappa_g^2 + tau_g^2)``, its torsion
    ``-kappa_n + (kappa_g tau_g' - kappa_g' tau_g) / (kappa_g^2 + tau_g^2)``
    and that their ratio equals ``sigma_v``, sample by sample.
    """
    curve = _prepared(curve)
    sc, fr = curve.scalars, curve.frames
    sv = sigma_v(sc)
    rho2 = sc.kappa_g**2 + sc.tau_g**2
    tau_pred = -sc.kappa_n + (sc.kappa_g * derivative(sc.tau_g, sc.s) - derivative(sc.kappa_g, sc.s) * sc.tau_g) / rho2
    _, fa = _frenet_of_integral(fr.V, curve.s)
    ratio = fa.tau / fa.kappa
    helix = _constant(ratio, TRIM)
    sv_const = _constant(sv)
    checks = {
        "kappa_bar": _identity(fa.kappa, np.sqrt(rho2)),
        "tau_bar": _identity(fa.tau, tau_pred, where=_torsion_mask(fa.kappa)),
        "ratio_is_sigma_v": _identity(ratio, sv),
        "v_curve_general_helix": helix,
        "sigma_v_constant": sv_const,
    }
    values = {"kappa_bar": _mean(fa.kappa, TRIM), "tau_bar": _mean(fa.tau, TRIM), "sigma_v": _mean(sv)}
    return Report("6.1", checks, helix.passed == sv_const.passed, values)


def verify_thm_6_2(curve: CurveSamples) -> Report:
    """The integral curve of ``D_r`` is a circular helix exactly when ``sigma_v`` is constant.

    Its torsion is 1 and its curvature ``|sigma_v|`` for every curve, which
    is checked sample by sample.
    """
    curve = _prepared(curve)
    sc, fr = curve.scalars, curve.frames
    _, Dr, _ = darboux_fields(sc, fr)
    if np.any(np.linalg.norm(Dr, axis=1) < EPS_DEG):
        raise DegenerateCurve("D_r vanishes on part of the curve (kappa_g = tau_g = 0)")
    sv = sigma_v(sc)
    _, fa = _frenet_of_integral(Dr, curve.s)
    helix = Check(*_both_constant(fa.kappa, fa.tau))
    sv_const = _constant(sv)
    checks = {
        "tau_beta_is_one": _identity(fa.tau, np.ones_like(fa.tau), where=_torsion_mask(fa.kappa)),
        "kappa_beta_is_abs_sigma_v": _identity(fa.kappa, np.abs(sv)),
        "d_r_curve_circular_helix": helix,
        "sigma_v_constant": sv_const,
    }
    values = {"kappa_beta": _mean(fa.kappa, TRIM), "tau_beta": _mean(fa.tau, TRIM), "sigma_v": _mean(sv)}
    return Report("6.2", checks, helix.passed == sv_const.passed, values)


def _both_constant(kappa: np.ndarray, tau: np.ndarray) -> tuple[bool, float]:
    a = _constant(kappa, TRIM)
    b = _constant(tau, TRIM)
    return a.passed and b.passed, max(a.residual, b.residual)


def verify_thm_6_3(curve: CurveSamples) -> Report:
    """Six equivalent characterizations of a relatively normal-slant helix.

    ``agreement`` is true when all six verdicts coincide. The report also
    carries the curvature of the indicatrix, which should be
    ``sqrt(1 + sigma_v^2)`` whenever ``sigma_v`` is constant.
    """
    curve = _prepared(curve)
    sc, fr = curve.scalars, curve.frames
    axis = recover_axis(curve)
    sv = sigma_v(sc)
    _, Dr, _ = darboux_fields(sc, fr)
    Dr_unit = Dr / np.linalg.norm(Dr, axis=1, keepdims=True)
    circle = fit_circle(fr.V[interior(len(curve))])
    _, fv = _frenet_of_integral(fr.V, curve.s)
    _, fb = _frenet_of_integral(Dr, curve.s)
    checks = {
        "v_constant_angle": _constant(fr.V @ axis.d_hat),
        "indicatrix_circle": Check(bool(circle.residual <= CONST_TOL), circle.residual),
        "sigma_v_constant": _constant(sv),
        "d_r_constant_angle": _constant(Dr_unit @ axis.d_hat),
        "v_curve_general_helix": _constant(fv.tau / fv.kappa, TRIM),
        "d_r_curve_circular_helix": Check(*_both_constant(fb.kappa, fb.tau)),
    }
    verdicts = {c.passed for c in checks.values()}
    # The indicatrix velocity is V' = -kappa_g T + tau_g U.
    dV = -sc.kappa_g[:, None] * fr.T + sc.tau_g[:, None] * fr.U
    fi = frenet_apparatus(rn_indicatrix(curve), velocity=dV)
    values = {
        "sigma_v": _mean(sv),
        "indicatrix_kappa_residual": float(
            np.max(np.abs(fi.kappa - np.sqrt(1.0 + sv**2))[interior(len(curve), TRIM)])
        ),
        "indicatrix_tau_max": float(
            np.max(np.abs(fi.tau)[interior(len(curve), TRIM)][_torsion_mask(np.linalg.norm(dV, axis=1))[interior(len(curve), TRIM)]])
        ),
    }
    return Report("6.3", checks, len(verdicts) == 1, values)


def isophote_axis(curve: CurveSamples) -> tuple[np.ndarray, Check]:
    """Axis making the most constant angle with U, and the spread of that angle."""
    if curve.frames is None:
        raise CurveError("attach Darboux frames first")
    U = curve.frames.U[interior(len(curve))]
    d = fit_circle(U).normal
    if float(np.mean(U @ d)) < 0:
        d = -d
    return d, _constant(curve.frames.U @ d)


def verify_thm_7(curve: CurveSamples, which: str) -> Report:
    """``'7.1'``: general helix iff the ``D_n`` integral curve is a circular helix.
    ``'7.2'``: isophote iff the ``D_o`` integral curve is a circular helix.
    """
    curve = _prepared(curve)
    sc, fr = curve.scalars, curve.frames
    Dn, _, Do = darboux_fields(sc, fr)
    if which == "7.1":
        fld, label = Dn, "d_n"
        fc = frenet_apparatus(curve)
        member = _constant(fc.tau / fc.kappa)
        member_name = "general_helix"
    elif which == "7.2":
        fld, label = Do, "d_o"
        _, member = isophote_axis(curve)
        member_name = "isophote"
    else:
        raise ValueError(f"which must be '7.1' or '7.2', got {which!r}")
    if np.any(np.linalg.norm(fld, axis=1) < EPS_DEG):
        raise DegenerateCurve(f"{label.upper()} vanishes on part of the curve")
    _, fa = _frenet_of_integral(fld, curve.s)
    helix = Check(*_both_constant(fa.kappa, fa.tau))
    checks = {f"{label}_curve_circular_helix": helix, member_name: member}
    values = {"kappa": _mean(fa.kappa, TRIM), "tau": _mean(fa.tau, TRIM)}
    return Report(which, checks, helix.passed == member.passed, values)


# --------------------------------------------------------------------------
# Classification
# --------------------------------------------------------------------------


def _safe(fn) -> Check:
    try:
        return fn()
    except DegenerateCurve:
        return Check(False, math.inf)


def classify(curve: CurveSamples) -> CurveClassification:
    """Membership flags with residuals, plus the corollary cross-checks.

    ``cross_checks`` holds, for each corollary whose hypothesis holds, whether
    the rns-helix flag agrees with the simpler criterion the corollary gives.
    """
    curve = _prepared(curve)
    sc, fr = curve.scalars, curve.frames
    kappa = np.sqrt(sc.kappa_g**2 + sc.kappa_n**2)
    scale = float(np.max(kappa[interior(len(curve))]))
    geodesic = Check(*is_zero(sc.kappa_g, scale))
    asymptotic = Check(*is_zero(sc.kappa_n, scale))
    line = Check(*is_zero(sc.tau_g, scale))
    rns = _safe(lambda: _constant(sigma_v(sc)))
    fa = frenet_apparatus(curve)
    general = _safe(lambda: _constant(np.where(fa.defined, fa.tau / fa.kappa, np.nan)))
    slant = _safe(lambda: _constant(slant_sigma(fa, curve.s)))
    _, iso = isophote_axis(curve)

    cross: dict[str, Check] = {}
    ratios: dict[str, float] = {}
    with np.errstate(divide="ignore", invalid="ignore"):
        if geodesic.passed:
            r = sc.kappa_n / sc.tau_g
            c = _constant(r)
            ratios["kappa_n/tau_g"] = _mean(r)
            cross["cor_3_2"] = Check(c.passed == rns.passed, c.residual)
        if asymptotic.passed:
            cross["cor_3_1"] = Check(slant.passed == rns.passed, slant.residual)
        if line.passed:
            r = sc.kappa_n / sc.kappa_g
            c = _constant(r)
            ratios["kappa_n/kappa_g"] = _mean(r)
            cross["cor_3_3"] = Check(c.passed == rns.passed, c.residual)
    return CurveClassification(geodesic, asymptotic, line, rns, general, slant, iso, cross, ratios)


def report_dict(obj) -> dict:
    """JSON-ready dictionary for any report type of this module."""
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return asdict(obj)
