import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helmscat.geometry import (
    StarShape,
    StarShapeError,
    build_quadrature,
    coefficient_distance,
    gauss_sphere_grid,
    min_surface_distance,
    principal_curvatures,
    read_shape,
    rotate_shape,
    shape_perturb,
    shape_sphere,
    surface_frame,
    write_shape,
)
from helmscat.specialfn import sh_index

SQRT_4PI = math.sqrt(4 * math.pi)


def test_sphere_has_single_coefficient():
    s = shape_sphere(2.0, (1.0, 0.0, -1.0))
    assert s.lmax == 0
    assert s.coeffs[0] == pytest.approx(2.0 * SQRT_4PI, rel=1e-15)
    theta, phi, _ = gauss_sphere_grid(8, 16)
    np.testing.assert_allclose(s.radius(theta, phi), 2.0, rtol=1e-15)


def test_gauss_grid_weights_sum_to_solid_angle():
    _, _, w = gauss_sphere_grid(10, 20)
    assert w.sum() == pytest.approx(4 * math.pi, rel=1e-14)


@pytest.mark.parametrize("a", [0.5, 1.0, 3.0])
def test_sphere_quadrature_area_and_normals(a):
    s = shape_sphere(a, (0.3, -0.2, 0.1))
    q = build_quadrature(s, 16, 32)
    assert q.area == pytest.approx(4 * math.pi * a * a, rel=1e-13)
    radial = (q.points - s.center) / a
    np.testing.assert_allclose(q.normals, radial, atol=1e-13)
    assert len(q) == 16 * 32


def test_perturbed_area_converges():
    s = shape_perturb(shape_sphere(1.0), 3, 1, 0.15)
    coarse = build_quadrature(s, 12, 24).area
    fine = build_quadrature(s, 40, 80).area
    assert abs(coarse - fine) < 1e-4 * fine
    # a non-trivial perturbation adds surface area at fixed mean radius
    assert fine > 4 * math.pi


def test_integration_of_smooth_function():
    q = build_quadrature(shape_sphere(1.0), 12, 24)
    z = q.points[:, 2]
    assert q.integrate(z**2) == pytest.approx(4 * math.pi / 3, rel=1e-13)


def test_quadrature_rejects_coarse_grids():
    with pytest.raises(ValueError):
        build_quadrature(shape_sphere(1.0), 4, 32)


def test_surface_frame_matches_quadrature():
    s = shape_perturb(shape_sphere(1.0), 2, -1, 0.2)
    q = build_quadrature(s, 10, 20)
    p, n = surface_frame(s, q.theta, q.phi)
    np.testing.assert_allclose(p, q.points, atol=1e-14)
    np.testing.assert_allclose(n, q.normals, atol=1e-14)


def test_normals_are_orthogonal_to_tangents():
    s = shape_perturb(shape_sphere(1.0), 3, 2, 0.12)
    th, ph, h = np.array([0.7, 1.9]), np.array([0.3, 4.0]), 1e-6
    _, n = surface_frame(s, th, ph)
    for dth, dph in ((h, 0.0), (0.0, h)):
        tangent = surface_frame(s, th + dth, ph + dph)[0] - surface_frame(s, th - dth, ph - dph)[0]
        cos = np.sum(tangent * n, axis=-1) / np.linalg.norm(tangent, axis=-1)
        assert np.all(np.abs(cos) < 1e-8)


def test_principal_curvatures_of_sphere():
    th, ph = np.array([0.2, 1.3, 2.9]), np.array([0.0, 2.0, 5.0])
    k1, k2 = principal_curvatures(shape_sphere(0.5), th, ph)
    np.testing.assert_allclose(k1, 2.0, rtol=1e-12)
    np.testing.assert_allclose(k2, 2.0, rtol=1e-12)


def test_principal_curvature_matches_meridian_circle():
    # axisymmetric body: the meridian curve at phi = 0 is a principal direction, so one
    # principal curvature equals the circumradius curvature of three nearby meridian points
    s = shape_perturb(shape_sphere(1.0), 2, 0, 0.2)
    th = 1.0
    k1, k2 = principal_curvatures(s, th, 0.0)
    h = 1e-4
    pts = surface_frame(s, np.array([th - h, th, th + h]), np.zeros(3))[0][:, [0, 2]]
    a, b, c = pts
    # circumradius of three nearby points
    ab, bc_, ca = np.linalg.norm(a - b), np.linalg.norm(b - c), np.linalg.norm(c - a)
    area = 0.5 * abs((b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0])
    kappa_meridian = 4 * area / (ab * bc_ * ca)
    assert min(abs(k1[0] - kappa_meridian), abs(k2[0] - kappa_meridian)) < 1e-5


def test_star_shape_violation_reports_location():
    c = np.zeros(4)
    c[0] = 0.1
    c[sh_index(1, 0)] = 1.0
    with pytest.raises(StarShapeError) as info:
        StarShape(1, c)
    err = info.value
    assert err.radius <= 0
    assert math.cos(err.theta) < 0  # the radius fails on the southern side


def test_constructor_validation():
    with pytest.raises(ValueError):
        StarShape(1, [1.0, 0.0])
    with pytest.raises(ValueError):
        StarShape(0, [float("nan")])
    with pytest.raises(ValueError):
        shape_sphere(0.0)
    with pytest.raises(ValueError):
        shape_sphere(1.0).scaled(-2.0)


def test_coefficients_are_immutable():
    s = shape_sphere(1.0)
    with pytest.raises(ValueError):
        s.coeffs[0] = 3.0


def test_rotation_maps_y10_to_y11():
    s = shape_perturb(shape_sphere(1.0), 1, 0, 0.2)
    # rotation taking e_z to e_x
    R = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    r = rotate_shape(s, R)
    expect = np.zeros(4)
    expect[0] = SQRT_4PI
    expect[sh_index(1, 1)] = 0.2
    np.testing.assert_allclose(r.coeffs, expect, atol=1e-14)


def test_rotation_preserves_surface_points():
    s = shape_perturb(shape_perturb(shape_sphere(1.0, (0.1, 0.2, 0.0)), 3, 1, 0.15), 2, -2, 0.1)
    rng = np.random.default_rng(7)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(Q) < 0:
        Q[:, 0] *= -1
    r = rotate_shape(s, Q)
    d = rng.normal(size=(20, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    # point of s in direction d maps to point of r in direction Q d
    np.testing.assert_allclose(r.points(d @ Q.T), s.points(d) @ Q.T, atol=1e-12)


def test_contains_and_radial_gap():
    s = shape_sphere(1.0, (1.0, 0.0, 0.0))
    x = np.array([[1.0, 0.0, 0.0], [1.5, 0.0, 0.0], [3.0, 0.0, 0.0]])
    assert list(s.contains(x)) == [True, True, False]
    np.testing.assert_allclose(s.radial_gap(x), [-1.0, -0.5, 1.0], atol=1e-15)


def test_translate_and_scale():
    s = shape_perturb(shape_sphere(1.0), 2, 1, 0.1)
    t = s.translated([0.0, 0.0, 2.0]).scaled(2.0)
    np.testing.assert_array_equal(t.center, [0.0, 0.0, 2.0])
    np.testing.assert_allclose(t.coeffs, 2.0 * s.coeffs)
    assert t.diameter() == pytest.approx(2.0 * s.diameter())


def test_coefficient_distance():
    a = shape_sphere(1.0)
    b = shape_perturb(a, 2, 0, 0.3)
    assert coefficient_distance(a, b) == pytest.approx(0.3)
    assert coefficient_distance(b, a) == coefficient_distance(a, b)
    assert coefficient_distance(a, a.translated([0.0, 0.4, 0.0])) == pytest.approx(0.4)
    assert coefficient_distance(a, a) == 0.0


def test_min_surface_distance_between_spheres():
    a = shape_sphere(1.0, (0.0, 0.0, 1.5))
    b = shape_sphere(1.0, (0.0, 0.0, -1.5))
    # quadrature nodes sit near, not on, the poles
    assert 1.0 <= min_surface_distance(a, b) < 1.02


def test_shape_file_round_trip_is_bit_exact(tmp_path):
    s = shape_perturb(shape_sphere(1.0 / 3.0, (0.1, 1 / 7, -2.0)), 4, -3, math.pi / 100)
    path = tmp_path / "shape.json"
    write_shape(s, path)
    back = read_shape(path)
    assert back == s
    assert back.coeffs.tobytes() == s.coeffs.tobytes()


def test_from_dict_rejects_unknown_and_missing_keys():
    with pytest.raises(ValueError):
        StarShape.from_dict({"lmax": 0, "coeffs": [1.0], "radius": 2})
    with pytest.raises(ValueError):
        StarShape.from_dict({"coeffs": [1.0]})
    s = StarShape.from_dict({"lmax": 0, "coeffs": [3.0]})
    np.testing.assert_array_equal(s.center, 0.0)


@settings(max_examples=40, deadline=None)
@given(coeffs=st.lists(st.floats(-0.05, 0.05), min_size=8, max_size=8),
       c0=st.floats(1.0, 5.0), center=st.tuples(*[st.floats(-3, 3)] * 3))
def test_dict_round_trip(coeffs, c0, center):
    s = StarShape(2, [c0] + coeffs, center)
    assert StarShape.from_dict(s.to_dict()) == s


def test_sphere_examples():
    q = build_quadrature(shape_sphere(2.0), 24, 48)
    assert q.area == pytest.approx(16 * math.pi, rel=1e-10)
    q1 = build_quadrature(shape_sphere(1.0), 24, 48)
    np.testing.assert_allclose(np.linalg.norm(q1.normals, axis=1), 1.0, atol=1e-12)
    assert abs(q1.integrate(q1.points[:, 2])) <= 1e-10


def test_normals_point_outward_and_flux_vanishes():
    s = shape_perturb(shape_perturb(shape_sphere(1.0, (0.5, 0, 0)), 3, 1, 0.15), 2, -2, 0.1)
    q = build_quadrature(s, 32, 64)
    assert np.all(np.sum((q.points - s.center) * q.normals, axis=1) > 0)
    flux = np.sum(q.weights[:, None] * q.normals, axis=0)
    assert np.max(np.abs(flux)) <= 1e-8


def test_area_refinement_at_48():
    s = shape_perturb(shape_sphere(1.0), 2, 0, 0.1)
    a48, a96 = build_quadrature(s, 48, 96).area, build_quadrature(s, 96, 192).area
    assert abs(a48 - a96) <= 1e-8 * a96


def test_solid_angle_quadrature_is_exact_to_half_the_grid():
    from helmscat.specialfn import real_sph_harm_all

    n = 24
    theta, phi, w = gauss_sphere_grid(n, 2 * n)
    Y = real_sph_harm_all(n // 2 - 1, theta, phi)
    np.testing.assert_allclose((Y * w) @ Y.T, np.eye(len(Y)), atol=1e-10)


def test_perturb_examples():
    base = shape_sphere(1.0)
    assert shape_perturb(base, 0, 0, 0.0) == base
    s = shape_perturb(base, 2, 0, 0.1)
    theta, phi, _ = gauss_sphere_grid(16, 32)
    y20 = np.sqrt(5 / (16 * np.pi)) * (3 * np.cos(theta) ** 2 - 1)
    assert np.max(np.abs(s.radius(theta, phi) - 1)) == pytest.approx(0.1 * np.max(np.abs(y20)), abs=1e-12)
    with pytest.raises(StarShapeError):
        shape_perturb(base, 0, 0, -SQRT_4PI)
