"""Partial-wave solution for a sphere under Dirichlet, Neumann or impedance conditions.

With the incident wave expanded as ``sum_l i^l (2l+1) j_l(kr) P_l(cos t)``
(``t`` the angle to the incidence direction) the scattered wave is
``sum_l i^l (2l+1) c_l h_l(kr) P_l(cos t)``, and the boundary condition at
``r = a`` fixes each ``c_l`` separately.  Since
``h_l(kr) ~ (-i)^{l+1} exp(ikr)/(kr)``, the amplitude of ``exp(ikr)/r`` is
``A = (1/(ik)) sum_l (2l+1) c_l P_l(beta.alpha)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .forward import BoundaryCondition
from .specialfn import derivative_from_orders, legendre_all, spherical_h1_all, spherical_jn_all

KA_CAP = 60.0
TAIL_TOL = 1e-16


class SeriesTruncationError(ValueError):
    """The retained partial waves have not decayed to the tail tolerance."""


def default_lmax(ka: float) -> int:
    return int(math.ceil(ka + 8.0 * ka ** (1.0 / 3.0) + 20.0))


@dataclass(frozen=True, eq=False)
class MieSeries:
    a: float
    k: float
    bc: BoundaryCondition
    lmax_used: int
    partial_coeffs: np.ndarray
    center: np.ndarray = None

    def __post_init__(self):
        c = np.zeros(3) if self.center is None else np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", c)


def _coefficients(ka: float, k: float, bc: BoundaryCondition, lmax: int) -> np.ndarray:
    j = spherical_jn_all(lmax + 1, ka)
    h = spherical_h1_all(lmax + 1, ka)
    dj = derivative_from_orders(j, ka)
    dh = derivative_from_orders(h, ka)
    j, h = j[: lmax + 1], h[: lmax + 1]
    if bc.kind == "dirichlet":
        return -j / h
    if bc.kind == "neumann":
        return -dj / dh
    return -(k * dj + bc.h * j) / (k * dh + bc.h * h)


def mie_coefficients(a: float, k: float, bc: BoundaryCondition, lmax: int | None = None,
                     center=None) -> MieSeries:
    """Partial-wave coefficients ``c_l`` for a sphere of radius ``a``.

    Raises ``SeriesTruncationError`` if ``|c_l| (2l+1)`` is not below
    ``1e-16 * max`` over the last three retained orders.
    """
    if a <= 0 or k <= 0:
        raise ValueError("radius and wavenumber must be positive")
    ka = k * a
    if ka > KA_CAP:
        raise ValueError(f"ka = {ka:.3g} exceeds the series cap {KA_CAP}")
    lmax = default_lmax(ka) if lmax is None else int(lmax)
    c = _coefficients(ka, k, bc, lmax)
    size = np.abs(c) * (2 * np.arange(lmax + 1) + 1)
    tail = size[-3:] if lmax >= 2 else size
    if np.any(tail > TAIL_TOL * size.max()):
        raise SeriesTruncationError(
            f"partial waves not converged at lmax={lmax}: tail ratio {tail.max() / size.max():.3e}")
    return MieSeries(float(a), float(k), bc, lmax, c, center)


def mie_far_field(series: MieSeries, cos_angle) -> np.ndarray | complex:
    """Scattering amplitude as a function of ``beta . alpha``."""
    t = np.asarray(cos_angle, dtype=float)
    P = legendre_all(series.lmax_used, np.clip(t, -1.0, 1.0))
    l = np.arange(series.lmax_used + 1)
    A = np.tensordot((2 * l + 1) * series.partial_coeffs, P, axes=1) / (1j * series.k)
    return complex(A) if A.ndim == 0 else A


def mie_far_field_directions(series: MieSeries, beta, alpha) -> np.ndarray:
    """Far field for explicit directions, including the phase of an offset center."""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    alpha = np.asarray(alpha, dtype=float)
    A = mie_far_field(series, beta @ alpha)
    phase = np.exp(1j * series.k * ((alpha - beta) @ series.center))
    return A * phase


def mie_field(series: MieSeries, x, alpha, scattered_only: bool = False, with_gradient: bool = False):
    """Near field of the series at exterior points ``x`` (centred at ``series.center``).

    Returns the total field (or only the scattered part), and optionally its
    gradient, evaluated from the series in spherical coordinates about
    ``alpha``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float)) - series.center
    alpha = np.asarray(alpha, dtype=float)
    alpha = alpha / np.linalg.norm(alpha)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r < series.a * (1.0 - 1e-12)):
        raise ValueError("series evaluation point inside the sphere")
    L = series.lmax_used
    l = np.arange(L + 1)
    kr = series.k * r
    h_all = spherical_h1_all(L + 1, kr)
    h = h_all[: L + 1]
    pref = (1j ** l) * (2 * l + 1) * series.partial_coeffs
    t = np.clip(x @ alpha / r, -1.0, 1.0)
    P = legendre_all(L + 1, t)
    v = np.einsum("l,ln,ln->n", pref, h, P[: L + 1])
    u = v if scattered_only else v + np.exp(1j * series.k * (x + series.center) @ alpha)
    if not with_gradient:
        return u
    dh = derivative_from_orders(h_all, kr)
    # dP_l/dt = l (P_{l-1} - t P_l) / (1 - t^2), written via (t P_l - P_{l+1}) (l+1) / (1 - t^2)
    s2 = np.maximum(1.0 - t**2, 1e-300)
    dP = (l[:, None] + 1) * (t * P[: L + 1] - P[1: L + 2]) / s2
    dv_dr = series.k * np.einsum("l,ln,ln->n", pref, dh, P[: L + 1])
    dv_dt = np.einsum("l,ln,ln->n", pref, h, dP)
    xhat = x / r[:, None]
    # gradient of t = xhat.alpha is (alpha - t xhat)/r
    grad = dv_dr[:, None] * xhat + (dv_dt / r)[:, None] * (alpha - t[:, None] * xhat)
    if not scattered_only:
        grad = grad + 1j * series.k * np.exp(1j * series.k * (x + series.center) @ alpha)[:, None] * alpha
    return u, grad


def extinction_residual(series: MieSeries) -> tuple[float, float]:
    """``(Im A(alpha, alpha), k/(4pi) int |A|^2)`` from the series.

    Orthogonality of Legendre polynomials gives
    ``int |A|^2 dOmega = (4pi/k^2) sum (2l+1) |c_l|^2``.
    """
    l = np.arange(series.lmax_used + 1)
    forward = mie_far_field(series, 1.0)
    total = 4.0 * math.pi / series.k**2 * float(np.sum((2 * l + 1) * np.abs(series.partial_coeffs) ** 2))
    return float(np.imag(forward)), series.k / (4.0 * math.pi) * total
