import json
import math

import numpy as np
import pytest

from oracles import cylinder_helix, plane_circle, sphere_latitude
from rnshelix.analysis import (
    classify,
    fit_circle,
    integral_curve,
    isophote_axis,
    recover_axis,
    report_dict,
    rn_indicatrix,
    verify_thm_6_1,
    verify_thm_6_2,
    verify_thm_6_3,
    verify_thm_7,
)
from rnshelix.frame import CurveError, CurveSamples, DarbouxFrames, DegenerateCurve, attach_frames, sigma_v
from rnshelix.surface import preset
from rnshelix.tracer import TraceConfig, trace, trace_isophote, trace_parameter_line

S_GRID = np.arange(0, 4001) * 1e-3
Z = np.array([0.0, 0.0, 1.0])


@pytest.fixture(scope="module")
def cylinder():
    return cylinder_helix(S_GRID)[0]


@pytest.fixture(scope="module")
def latitude():
    return sphere_latitude(S_GRID)[0]


@pytest.fixture(scope="module")
def torus_rns():
    d = np.array([0.0, 0.6, 0.8])
    # The indicatrix speed rho decays towards a cusp near s = 0.775, where sigma_v changes
    # sign; differenced torsion of the indicatrix degrades like 1/rho^3, so stop early.
    return trace(preset("torus"), TraceConfig(d, math.pi / 3, (0.3, 0.5), s_max=0.4)), d


@pytest.fixture(scope="module")
def generic_line():
    return trace_parameter_line(preset("paraboloid"), (1, 1), (0.5, 0.5), 1e-3, 3.0)


def _angle(a, b):
    return math.acos(min(1.0, abs(float(np.dot(a, b)))))


# --------------------------------------------------------------------------
# Axis recovery
# --------------------------------------------------------------------------


def test_axis_from_cylinder_oracle(cylinder):
    ax = recover_axis(cylinder)
    np.testing.assert_allclose(ax.d_hat, Z, atol=1e-12)
    assert ax.theta_hat == pytest.approx(math.pi / 4, abs=1e-12)
    assert not ax.flagged and ax.spread <= 1e-8


def test_axis_from_sphere_latitude(latitude):
    ax = recover_axis(latitude)
    np.testing.assert_allclose(ax.d_hat, Z, atol=1e-12)
    assert math.cos(ax.theta_hat) == pytest.approx(0.8, abs=1e-12)


def test_axis_from_traced_torus_curve(torus_rns):
    res, d = torus_rns
    ax = recover_axis(res.curve)
    assert _angle(ax.d_hat, d) <= 1e-4
    assert ax.theta_hat == pytest.approx(math.pi / 3, abs=1e-4)


def test_axis_is_normalized_to_acute_angle(cylinder):
    fr = cylinder.frames
    flipped = cylinder.with_frames(DarbouxFrames(fr.T, -fr.V, -fr.U))
    ax = recover_axis(flipped)
    assert ax.theta_hat <= math.pi / 2
    np.testing.assert_allclose(ax.d_hat, -Z, atol=1e-12)
    assert ax.theta_hat == pytest.approx(math.pi / 4, abs=1e-12)


def test_axis_flagged_for_generic_curve(generic_line):
    ax = recover_axis(generic_line)
    assert ax.flagged
    assert ax.spread > 1e-2


# --------------------------------------------------------------------------
# Derived curves
# --------------------------------------------------------------------------


@pytest.mark.parametrize("n", [401, 801])
def test_integral_curve_fourth_order(n):
    s = np.linspace(0, 2, n)
    field = np.column_stack([np.cos(s), np.sin(s), 2 * s])
    beta = integral_curve(field, s)
    exact = np.column_stack([np.sin(s), 1 - np.cos(s), s * s])
    err = np.max(np.abs(beta.points - exact))
    h = s[1] - s[0]
    assert err <= 0.05 * h**4


def test_integral_curve_errors():
    s = np.array([0.0, 0.1, 0.3, 0.4, 0.5])
    with pytest.raises(CurveError):
        integral_curve(np.zeros((5, 3)), s)
    with pytest.raises(CurveError):
        integral_curve(np.zeros((4, 3)), s)


def test_fit_circle_exact():
    t = np.linspace(0, 1, 50)
    pts = np.column_stack([1 + 2 * np.cos(t), -1 + 2 * np.sin(t), np.full_like(t, 3.0)])
    fit = fit_circle(pts)
    assert fit.radius == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(fit.center, [1, -1, 3], atol=1e-12)
    assert abs(abs(fit.normal[2]) - 1) <= 1e-12
    assert fit.residual <= 1e-12


def test_indicatrix_is_on_unit_sphere(latitude):
    ind = rn_indicatrix(latitude)
    np.testing.assert_allclose(np.linalg.norm(ind.points, axis=1), 1.0, atol=1e-15)
    with pytest.raises(CurveError):
        rn_indicatrix(CurveSamples(latitude.s, latitude.points))


# --------------------------------------------------------------------------
# Theorem checks
# --------------------------------------------------------------------------


def test_thm_6_1_on_cylinder(cylinder):
    rep = verify_thm_6_1(cylinder)
    assert rep.agreement
    assert all(c.passed for c in rep.checks.values())
    assert rep.values["kappa_bar"] == pytest.approx(0.5, abs=1e-3)
    assert rep.values["tau_bar"] == pytest.approx(0.5, abs=1e-3)


def test_thm_6_2_on_cylinder(cylinder):
    rep = verify_thm_6_2(cylinder)
    assert rep.agreement and all(c.passed for c in rep.checks.values())
    assert rep.values["kappa_beta"] == pytest.approx(1.0, abs=1e-3)
    assert rep.values["tau_beta"] == pytest.approx(1.0, abs=1e-3)


def test_thm_6_2_identities_hold_off_helices(generic_line):
    rep = verify_thm_6_2(generic_line)
    assert rep.checks["tau_beta_is_one"].passed
    assert rep.checks["kappa_beta_is_abs_sigma_v"].passed
    assert not rep.checks["sigma_v_constant"].passed
    assert rep.agreement


def test_thm_6_1_identities_hold_off_helices(generic_line):
    rep = verify_thm_6_1(generic_line)
    for name in ("kappa_bar", "tau_bar", "ratio_is_sigma_v"):
        assert rep.checks[name].passed, name
    assert rep.agreement


@pytest.mark.parametrize("name", ["cylinder", "latitude", "torus"])
def test_thm_6_3_all_pass_on_helices(name, cylinder, latitude, torus_rns):
    curve = {"cylinder": cylinder, "latitude": latitude, "torus": torus_rns[0].curve}[name]
    rep = verify_thm_6_3(curve)
    assert rep.agreement
    assert all(c.passed for c in rep.checks.values()), {k: c.residual for k, c in rep.checks.items()}
    assert rep.values["indicatrix_kappa_residual"] <= 1e-3
    assert rep.values["indicatrix_tau_max"] <= 1e-3


def test_thm_6_3_all_fail_on_generic_curve(generic_line):
    rep = verify_thm_6_3(generic_line)
    assert rep.agreement
    assert not any(c.passed for c in rep.checks.values())


def test_thm_7_2_on_sphere_isophote():
    res = trace_isophote(preset("sphere"), TraceConfig(Z, math.acos(0.6), (0.0, math.asin(0.6)), s_max=2 * math.pi * 0.8))
    rep = verify_thm_7(res.curve, "7.2")
    assert rep.agreement and all(c.passed for c in rep.checks.values())
    d, check = isophote_axis(res.curve)
    np.testing.assert_allclose(d, Z, atol=1e-9)


def test_thm_7_1_on_general_helix():
    # the trace ends at a fold near s = 0.77; stay clear of it
    res = trace(preset("torus"), TraceConfig(Z, math.pi / 3, (0.0, 0.5), family="general-helix", s_max=0.6))
    rep = verify_thm_7(res.curve, "7.1")
    assert rep.checks["general_helix"].passed
    assert rep.agreement


def test_thm_7_rejects_unknown(cylinder):
    with pytest.raises(ValueError):
        verify_thm_7(cylinder, "7.3")


def test_thm_6_2_degenerate_on_plane_line():
    s = np.linspace(0, 1, 101)
    line = CurveSamples(s, np.column_stack([s, 0 * s, 0 * s]), uv=np.column_stack([s, 0 * s]))
    with pytest.raises(DegenerateCurve):
        verify_thm_6_2(attach_frames(line, preset("plane")))


# --------------------------------------------------------------------------
# Classification
# --------------------------------------------------------------------------


def test_classify_cylinder_helix(cylinder):
    c = classify(cylinder)
    assert c.is_geodesic.passed and c.is_rns_helix.passed and c.is_general_helix.passed
    assert not c.is_asymptotic.passed and not c.is_line_of_curvature.passed
    assert c.ratios["kappa_n/tau_g"] == pytest.approx(-1.0, abs=1e-3)
    assert c.cross_checks["cor_3_2"].passed


def test_classify_sphere_latitude(latitude):
    c = classify(latitude)
    assert c.is_line_of_curvature.passed and c.is_rns_helix.passed and c.is_isophote.passed
    assert c.ratios["kappa_n/kappa_g"] == pytest.approx(-4 / 3, abs=1e-3)
    assert c.cross_checks["cor_3_3"].passed


def test_plane_circle_sigma_v_zero():
    circ = attach_frames(plane_circle(S_GRID, 2.0), preset("plane"))
    c = classify(circ)
    assert c.is_asymptotic.passed and c.is_line_of_curvature.passed and c.is_rns_helix.passed
    from rnshelix.frame import with_scalars

    assert np.max(np.abs(sigma_v(with_scalars(circ).scalars))) <= 1e-6


def test_classify_generic_curve(generic_line):
    c = classify(generic_line)
    assert not c.is_rns_helix.passed
    assert not c.is_geodesic.passed


def test_reports_serialize(cylinder):
    for obj in (verify_thm_6_1(cylinder), verify_thm_6_3(cylinder), classify(cylinder), recover_axis(cylinder)):
        text = json.dumps(report_dict(obj), default=lambda x: x.tolist() if hasattr(x, "tolist") else float(x))
        assert json.loads(text)
