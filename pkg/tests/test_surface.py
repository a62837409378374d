import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnshelix.surface import (
    PRESETS,
    OutOfDomain,
    ProjectionError,
    RegularityError,
    SurfaceError,
    first_form,
    implicit,
    normal_implicit,
    normal_parametric,
    parametric,
    preset,
    project_implicit,
    surface_residual,
)


@pytest.mark.parametrize(
    "name, uv, expected",
    [
        ("cylinder", (0.3, -1.2), (1.0, 0.0, 1.0)),
        ("paraboloid", (1.0, 0.0), (5.0, 0.0, 1.0)),
        ("sphere", (0.0, 0.0), (1.0, 0.0, 1.0)),
    ],
)
def test_first_form_examples(name, uv, expected):
    form = first_form(preset(name), *uv)
    assert form == pytest.approx(expected, abs=1e-15)


def test_parametric_normals():
    np.testing.assert_allclose(normal_parametric(preset("cylinder"), 0.0, 0.0), [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(
        normal_parametric(preset("paraboloid"), 1.0, 0.0), np.array([-2.0, 0.0, 1.0]) / math.sqrt(5), atol=1e-15
    )
    np.testing.assert_allclose(normal_parametric(preset("plane"), 3.0, -7.0), [0, 0, 1], atol=0)


def test_implicit_normals():
    S = preset("sphere-implicit")
    np.testing.assert_allclose(normal_implicit(S, (0, 0, 1)), [0, 0, 1])
    np.testing.assert_allclose(normal_implicit(S, (1, 0, 0)), [1, 0, 0])
    np.testing.assert_allclose(normal_implicit(preset("plane-implicit"), (4, -2, 0)), [0, 0, 1])


def test_paraboloid_apex_is_singular():
    S = preset("paraboloid")
    with pytest.raises(RegularityError):
        normal_parametric(S, 0.0, 1.0)
    with pytest.raises(RegularityError):
        first_form(S, 0.0, 1.0)


def test_domain_checks():
    with pytest.raises(OutOfDomain):
        first_form(preset("paraboloid"), -0.1, 0.0)
    with pytest.raises(OutOfDomain):
        normal_parametric(preset("sphere"), 0.0, 2.0)


def test_eps_reg_is_overridable():
    S = preset("sphere", eps_reg=0.5)
    with pytest.raises(RegularityError):
        normal_parametric(S, 0.0, 1.2)  # |X_u x X_v| = cos(1.2) < 0.5
    normal_parametric(preset("sphere"), 0.0, 1.2)


def test_implicit_regularity():
    with pytest.raises(RegularityError):
        normal_implicit(preset("sphere-implicit"), (0, 0, 0))


def test_projection_examples():
    S = preset("sphere-implicit")
    p = np.array([1.001, 0, 0])
    q = project_implicit(S, p, 1e-12)
    assert abs(S.value(q)) <= 1e-12
    assert np.linalg.norm(q - p) <= 1e-3
    on = np.array([0.6, 0.0, 0.8])
    np.testing.assert_array_equal(project_implicit(S, on, 1e-12), on)
    np.testing.assert_array_equal(project_implicit(preset("plane-implicit"), (3, 4, 0.5)), [3, 4, 0])


def test_projection_non_convergence():
    S = implicit("x^3 - 2*x + 2")  # Newton from 0 cycles between 0 and 1
    with pytest.raises(ProjectionError):
        project_implicit(S, (0.0, 0.0, 0.0), 1e-12)


def test_presets_cover_catalog():
    for name in ("plane", "sphere", "cylinder", "paraboloid", "quartic", "torus"):
        assert name in PRESETS
        preset(name)
    with pytest.raises(SurfaceError):
        preset("klein-bottle")


def test_custom_surface_and_residual():
    S = parametric("u", "v", "u*v", name="saddle")
    assert surface_residual(S, (1.0, 2.0, 2.0), uv=(1.0, 2.0)) == 0.0
    with pytest.raises(SurfaceError):
        surface_residual(S, (1.0, 2.0, 2.0))
    with pytest.raises(SurfaceError):
        parametric("u", "v", "0", u_range=(1, 1))


def test_orientations():
    # outward on both sphere forms
    Sp, Si = preset("sphere"), preset("sphere-implicit")
    u, v = 0.4, 0.3
    p = Sp.point(u, v)
    np.testing.assert_allclose(normal_parametric(Sp, u, v), p, atol=1e-15)
    np.testing.assert_allclose(normal_implicit(Si, p), p, atol=1e-15)
    # paraboloid: both forms point up
    Pp, Pi = preset("paraboloid"), preset("paraboloid-implicit")
    p = Pp.point(0.7, 1.1)
    np.testing.assert_allclose(normal_parametric(Pp, 0.7, 1.1), normal_implicit(Pi, p), atol=1e-15)


uv_points = st.tuples(st.floats(0.05, 3.0), st.floats(-3.0, 3.0))


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["sphere", "paraboloid", "torus", "cylinder"]), uv_points)
def test_normal_orthogonal_and_det_identity(name, uv):
    S = preset(name)
    u, v = uv
    if name == "sphere":
        v = v / 2.5
    _, Xu, Xv = S.partials(u, v)
    U = normal_parametric(S, u, v)
    assert abs(U @ Xu) <= 1e-12 and abs(U @ Xv) <= 1e-12
    assert abs(np.linalg.norm(U) - 1) <= 1e-14
    E, F, G = first_form(S, u, v)
    cross2 = float(np.sum(np.cross(Xu, Xv) ** 2))
    assert abs((E * G - F * F) - cross2) <= 1e-12 * cross2


@settings(max_examples=100, deadline=None)
@given(st.tuples(*[st.floats(-1.2, 1.2)] * 3).filter(lambda p: np.linalg.norm(p) > 0.3))
def test_projection_idempotent(p):
    S = preset("sphere-implicit")
    q = project_implicit(S, p, 1e-12)
    assert np.linalg.norm(project_implicit(S, q, 1e-12) - q) <= 1e-12


def test_second_partials_match_differences():
    S = preset("torus")
    u, v, h = 0.7, -0.4, 1e-5
    _, _, _, Xuu, Xuv, Xvv = S.second_partials(u, v)
    _, Xu_p, Xv_p = S.partials(u + h, v)
    _, Xu_m, Xv_m = S.partials(u - h, v)
    np.testing.assert_allclose(Xuu, (Xu_p - Xu_m) / (2 * h), atol=1e-9)
    np.testing.assert_allclose(Xuv, (Xv_p - Xv_m) / (2 * h), atol=1e-9)
    _, _, Xv_p = S.partials(u, v + h)
    _, _, Xv_m = S.partials(u, v - h)
    np.testing.assert_allclose(Xvv, (Xv_p - Xv_m) / (2 * h), atol=1e-9)
