import math

import numpy as np
import pytest

from helmscat.forward import BoundaryCondition
from helmscat.geometry import gauss_sphere_grid, unit_vectors
from helmscat.mie import (
    SeriesTruncationError,
    extinction_residual,
    mie_coefficients,
    mie_far_field,
    mie_far_field_directions,
    mie_field,
)

D = BoundaryCondition.dirichlet()
N = BoundaryCondition.neumann()
H = BoundaryCondition.impedance(0.5 + 0.3j)

# A at cos(angle) = 1, 0, -1, frozen from an independent evaluation built on scipy.special
FROZEN = {
    (1.0, 2.0, "D"): [-1.3313709618351006 + 1.4995437321558696j, 0.498822270390057 + 0.3282783315126527j,
                      0.42156000417191825 - 0.33203476297206463j],
    (1.0, 2.0, "N"): [0.3843019943461603 + 0.39075002162712297j, -0.4617532069042065 + 0.26258818987567756j,
                      0.0388102982587884 + 0.378890706208916j],
    (1.0, 2.0, "H"): [0.8420848644866328 + 0.9432624680714901j, -0.46779787367994086 + 0.004560621079082283j,
                      -0.02200636553133095 + 0.3087702269412039j],
    (0.5, 1.0, "D"): [-0.5329965647953163 + 0.23381372403691333j, -0.4191023615834622 + 0.22984778013467508j,
                      -0.3150075454341056 + 0.22588823781997847j],
    (2.0, 5.0, "H"): [3.4461583724108573 + 9.780771174898064j, -0.08212259081245438 - 0.8873786601040351j,
                      0.419984747109821 - 0.6863317454604876j],
}
BCS = {"D": D, "N": N, "H": H}


@pytest.mark.parametrize("key", sorted(FROZEN))
def test_far_field_matches_frozen_values(key):
    a, k, tag = key
    series = mie_coefficients(a, k, BCS[tag])
    got = mie_far_field(series, np.array([1.0, 0.0, -1.0]))
    np.testing.assert_allclose(got, FROZEN[key], rtol=1e-12, atol=1e-13)


def test_small_sphere_limits():
    # Dirichlet: A = -a (1 - ika) + O((ka)^2); Neumann vanishes like (ka)^2
    a, k = 0.5, 1e-3
    assert mie_far_field(mie_coefficients(a, k, D), 0.3) == pytest.approx(-a * (1 - 1j * k * a), rel=1e-6)
    assert abs(mie_far_field(mie_coefficients(a, k, N), 0.3)) < 1e-6


def test_large_impedance_approaches_dirichlet():
    d = mie_far_field(mie_coefficients(1.0, 2.0, D), np.linspace(-1, 1, 7))
    h = mie_far_field(mie_coefficients(1.0, 2.0, BoundaryCondition.impedance(1e8j)), np.linspace(-1, 1, 7))
    np.testing.assert_allclose(h, d, atol=1e-6)


@pytest.mark.parametrize("bc", [D, N, BoundaryCondition.impedance(0.7)])
def test_optical_theorem_for_lossless_surfaces(bc):
    im_forward, power = extinction_residual(mie_coefficients(1.3, 3.0, bc))
    assert im_forward == pytest.approx(power, rel=1e-12)


def test_absorbing_surface_extinguishes_more_than_it_scatters():
    im_forward, power = extinction_residual(mie_coefficients(1.0, 2.0, H))
    assert im_forward > power * (1 + 1e-6)


def test_extinction_sum_matches_quadrature_of_pattern():
    series = mie_coefficients(1.0, 2.0, H)
    theta, phi, w = gauss_sphere_grid(40, 4)
    A = mie_far_field(series, np.cos(theta))
    _, power = extinction_residual(series)
    assert series.k / (4 * math.pi) * np.sum(w * np.abs(A) ** 2) == pytest.approx(power, rel=1e-12)


@pytest.mark.parametrize("bc", [D, N, H])
def test_near_field_satisfies_boundary_condition(bc):
    a, k, alpha = 1.2, 2.5, np.array([0.0, 0.6, 0.8])
    series = mie_coefficients(a, k, bc)
    theta, phi, _ = gauss_sphere_grid(10, 20)
    x = a * unit_vectors(theta, phi)
    u, grad = mie_field(series, x, alpha, with_gradient=True)
    un = np.sum(grad * x / a, axis=-1)
    assert np.max(np.abs(bc.apply(u, un))) < 1e-12


def test_near_field_gradient_matches_finite_differences():
    series = mie_coefficients(1.0, 2.0, H)
    alpha = np.array([0.0, 0.0, 1.0])
    x0 = np.array([[1.3, -0.4, 0.9]])
    _, grad = mie_field(series, x0, alpha, with_gradient=True)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (mie_field(series, x0 + e, alpha) - mie_field(series, x0 - e, alpha)) / (2 * h)
        assert abs(fd[0] - grad[0, i]) < 1e-7


def test_near_field_decays_to_far_field():
    series = mie_coefficients(1.0, 2.0, D)
    alpha = np.array([0.0, 0.0, 1.0])
    beta = np.array([0.48, 0.6, 0.64])
    r = 4000.0
    v = mie_field(series, r * beta[None, :], alpha, scattered_only=True)[0]
    A = mie_far_field(series, beta @ alpha)
    assert abs(v * r * np.exp(-1j * series.k * r) - A) < 1e-3 * abs(A)


def test_offset_center_adds_translation_phase():
    c = np.array([0.3, -0.2, 0.5])
    alpha = np.array([0.0, 0.0, 1.0])
    beta = np.array([[1.0, 0.0, 0.0], [0.0, 0.6, 0.8]])
    shifted = mie_coefficients(1.0, 2.0, D, center=c)
    plain = mie_coefficients(1.0, 2.0, D)
    ratio = mie_far_field_directions(shifted, beta, alpha) / mie_far_field_directions(plain, beta, alpha)
    np.testing.assert_allclose(ratio, np.exp(1j * 2.0 * ((alpha - beta) @ c)), rtol=1e-13)


def test_truncation_is_reported():
    with pytest.raises(SeriesTruncationError):
        mie_coefficients(1.0, 5.0, D, lmax=3)


def test_input_guards():
    with pytest.raises(ValueError):
        mie_coefficients(-1.0, 1.0, D)
    with pytest.raises(ValueError):
        mie_coefficients(10.0, 10.0, D)
    with pytest.raises(ValueError):
        mie_field(mie_coefficients(1.0, 1.0, D), [[0.5, 0.0, 0.0]], [0, 0, 1])


def test_impedance_coefficients_tend_to_dirichlet():
    # the relative gap behaves like (2l+1)/(a|h|), so a = 3 keeps l <= 10 under 1e-3
    d = mie_coefficients(3.0, 1.0, D).partial_coeffs[:11]
    h = mie_coefficients(3.0, 1.0, BoundaryCondition.impedance(1e4j)).partial_coeffs[:11]
    assert np.max(np.abs(h - d) / np.abs(d)) <= 1e-3


def test_amplitude_depends_only_on_inner_product():
    series = mie_coefficients(1.0, 2.0, H)
    a1, b1 = np.array([0.0, 0.0, 1.0]), np.array([0.6, 0.0, 0.8])
    a2, b2 = np.array([1.0, 0.0, 0.0]), np.array([0.8, 0.6, 0.0])
    A1 = mie_far_field_directions(series, b1, a1)[0]
    assert abs(A1 - mie_far_field_directions(series, b2, a2)[0]) <= 1e-14 * abs(A1)
    # reciprocity A(-alpha, -beta) = A(beta, alpha)
    assert mie_far_field_directions(series, -a1, -b1)[0] == A1


def test_series_near_field_has_the_far_field_remainder_rate():
    series = mie_coefficients(1.0, 2.0, H)
    alpha, beta = np.array([0.0, 0.0, 1.0]), np.array([0.48, 0.6, 0.64])
    radii = np.array([25.0, 50.0, 100.0, 200.0])
    v = mie_field(series, radii[:, None] * beta, alpha, scattered_only=True)
    resid = np.abs(v - mie_far_field(series, beta @ alpha) * np.exp(2j * radii) / radii)
    assert np.polyfit(np.log(radii), np.log(resid), 1)[0] == pytest.approx(-2.0, abs=0.15)
