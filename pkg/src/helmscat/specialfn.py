"""Spherical Bessel/Hankel functions, Legendre polynomials and real spherical harmonics.

Everything here is built from three-term recurrences; no special-function
library is used.  All routines are vectorised over the argument and return
every order up to ``lmax`` at once, which is what the series and quadrature
code needs anyway.  Scalar convenience wrappers are provided for single orders.
"""

from __future__ import annotations

import math

import numpy as np

L_CAP = 200

# rescale threshold for the Miller downward recurrence
_BIG = 1e250


class SpecialFunctionRangeError(ArithmeticError):
    """Raised when a requested value overflows or underflows double precision."""


def _as_positive_array(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x <= 0.0):
        raise ValueError("argument must be finite and strictly positive")
    return x


def _check_order(lmax: int) -> None:
    if lmax < 0 or lmax > L_CAP:
        raise ValueError(f"order must lie in [0, {L_CAP}], got {lmax}")


def spherical_jn_all(lmax: int, x) -> np.ndarray:
    """Spherical Bessel functions ``j_0 .. j_lmax`` at ``x``.

    Orders below the argument come from the upward recurrence started at the
    closed forms for ``j_0`` and ``j_1``.  Orders above the argument come from
    Miller's downward recurrence, scaled to agree with the upward value at
    ``l = floor(x)`` (where ``j_l`` cannot vanish).

    Returns an array of shape ``(lmax + 1,) + x.shape``.
    """
    _check_order(lmax)
    x = _as_positive_array(x)
    shape = x.shape
    x = x.ravel()

    s, c = np.sin(x), np.cos(x)
    out = np.empty((lmax + 1, x.size))
    out[0] = s / x
    if lmax >= 1:
        out[1] = s / x**2 - c / x
    # the upward sweep may overflow above l0; those entries are replaced below
    with np.errstate(over="ignore", invalid="ignore"):
        for l in range(1, lmax):
            out[l + 1] = (2 * l + 1) / x * out[l] - out[l - 1]

    # upward values are kept for l <= l0
    l0 = np.minimum(np.floor(x).astype(int), lmax)
    idx = np.flatnonzero(l0 < lmax)
    if idx.size:
        xd = x[idx]
        n_start = int(max(lmax, xd.max())) + 30 + int(math.sqrt(40.0 * max(lmax, 1)))
        f_next = np.zeros_like(xd)
        f_cur = np.full_like(xd, 1e-300)
        down = np.zeros((lmax + 1, xd.size))
        for l in range(n_start, 0, -1):
            f_next, f_cur = f_cur, (2 * l + 1) / xd * f_cur - f_next
            if l - 1 <= lmax:
                down[l - 1] = f_cur
            big = np.abs(f_cur) > _BIG
            if np.any(big):
                f_cur = np.where(big, f_cur / _BIG, f_cur)
                f_next = np.where(big, f_next / _BIG, f_next)
                down[:, big] /= _BIG
        cols = np.arange(idx.size)
        scale = out[l0[idx], idx] / down[l0[idx], cols]
        ls = np.arange(lmax + 1)[:, None]
        out[:, idx] = np.where(ls > l0[idx], down * scale, out[:, idx])
    out = out.reshape((lmax + 1,) + shape)

    _guard(out, "spherical Bessel j")
    return out


def spherical_yn_all(lmax: int, x) -> np.ndarray:
    """Spherical Neumann functions ``y_0 .. y_lmax`` by upward recurrence."""
    _check_order(lmax)
    x = _as_positive_array(x)
    out = np.empty((lmax + 1,) + x.shape)
    s, c = np.sin(x), np.cos(x)
    out[0] = -c / x
    if lmax >= 1:
        out[1] = -c / x**2 - s / x
    with np.errstate(over="ignore", invalid="ignore"):
        for l in range(1, lmax):
            out[l + 1] = (2 * l + 1) / x * out[l] - out[l - 1]
    _guard(out, "spherical Bessel y")
    return out


def spherical_h1_all(lmax: int, x) -> np.ndarray:
    """Spherical Hankel functions of the first kind ``h_l = j_l + i y_l``."""
    return spherical_jn_all(lmax, x) + 1j * spherical_yn_all(lmax, x)


def derivative_from_orders(values: np.ndarray, x) -> np.ndarray:
    """Argument derivative of a family of spherical cylinder functions.

    Uses ``f_0' = -f_1`` and ``f_l' = f_{l-1} - (l+1) f_l / x``, valid for
    ``j``, ``y`` and ``h``.  The highest order needs ``f_{lmax+1}``, so the
    returned array has one order fewer than ``values``.
    """
    x = np.asarray(x, dtype=float)
    lmax = values.shape[0] - 2
    if lmax < 0:
        raise ValueError("need at least two orders to differentiate")
    out = np.empty((lmax + 1,) + values.shape[1:], dtype=values.dtype)
    out[0] = -values[1]
    for l in range(1, lmax + 1):
        out[l] = values[l - 1] - (l + 1) / x * values[l]
    return out


def _guard(values: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(values)):
        raise SpecialFunctionRangeError(f"{name} overflowed for the requested order/argument")
    tiny = np.finfo(float).tiny
    nz = values != 0.0
    if np.any(np.abs(values[nz]) < tiny):
        raise SpecialFunctionRangeError(f"{name} underflowed to a subnormal value")


def sph_bessel_j(l: int, x: float) -> float:
    return float(spherical_jn_all(l, x)[l])


def sph_bessel_y(l: int, x: float) -> float:
    return float(spherical_yn_all(l, x)[l])


def sph_hankel1(l: int, x: float) -> complex:
    return complex(spherical_h1_all(l, x)[l])


def legendre_all(lmax: int, t) -> np.ndarray:
    """Legendre polynomials ``P_0 .. P_lmax`` at ``t`` (Bonnet recurrence)."""
    t = np.asarray(t, dtype=float)
    out = np.empty((lmax + 1,) + t.shape)
    out[0] = 1.0
    if lmax >= 1:
        out[1] = t
    for l in range(1, lmax):
        out[l + 1] = ((2 * l + 1) * t * out[l] - l * out[l - 1]) / (l + 1)
    return out


def legendre_p(l: int, t: float) -> float:
    if not -1.0 <= t <= 1.0:
        raise ValueError("t must lie in [-1, 1]")
    return float(legendre_all(l, t)[l])


def sh_index(l: int, m: int) -> int:
    """Flat position of ``Y_{l,m}``: ``l**2 + l + m``."""
    if abs(m) > l:
        raise ValueError(f"|m| must not exceed l (got l={l}, m={m})")
    return l * l + l + m


def sh_degree_order(lmax: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrays ``(l, m)`` for every flat index up to ``lmax``."""
    ls = np.concatenate([np.full(2 * l + 1, l) for l in range(lmax + 1)])
    ms = np.concatenate([np.arange(-l, l + 1) for l in range(lmax + 1)])
    return ls, ms


def _normalized_alp(lmax: int, theta: np.ndarray):
    """Orthonormal associated Legendre functions and their theta-derivatives.

    ``P[l, m]`` is normalised so that ``P[l, m] * cos(m phi) * sqrt(2)``
    (``m > 0``) and ``P[l, 0]`` have unit L2 norm on the sphere.  No
    Condon-Shortley phase.
    """
    t = np.cos(theta)
    st = np.sin(theta)
    P = np.zeros((lmax + 2, lmax + 2) + theta.shape)
    P[0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, lmax + 2):
        P[m, m] = math.sqrt((2 * m + 1) / (2.0 * m)) * st * P[m - 1, m - 1]
    for m in range(0, lmax + 1):
        P[m + 1, m] = math.sqrt(2 * m + 3) * t * P[m, m]
        for l in range(m + 2, lmax + 2):
            a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            P[l, m] = a * (t * P[l - 1, m] - b * P[l - 2, m])

    dP = np.zeros((lmax + 1, lmax + 1) + theta.shape)
    for l in range(lmax + 1):
        dP[l, 0] = -math.sqrt(l * (l + 1)) * P[l, 1] if l > 0 else 0.0
        for m in range(1, l + 1):
            lower = math.sqrt((l + m) * (l - m + 1)) * P[l, m - 1]
            upper = math.sqrt((l + m + 1) * (l - m)) * P[l, m + 1]
            dP[l, m] = 0.5 * (lower - upper)
    return P[: lmax + 1, : lmax + 1], dP


def real_sph_harm_all(lmax: int, theta, phi, derivatives: bool = False):
    """Real orthonormal spherical harmonics, flat-indexed by ``l**2 + l + m``.

    ``Y_{l,m}`` is ``sqrt(2) Pbar_l^m cos(m phi)`` for ``m > 0``,
    ``Pbar_l^0`` for ``m = 0`` and ``sqrt(2) Pbar_l^|m| sin(|m| phi)`` for
    ``m < 0``.  With ``derivatives=True`` also returns ``dY/dtheta`` and
    ``dY/dphi`` in closed form.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    theta, phi = np.broadcast_arrays(theta, phi)
    P, dP = _normalized_alp(lmax, theta)
    n = (lmax + 1) ** 2
    Y = np.empty((n,) + theta.shape)
    if derivatives:
        Yt = np.empty_like(Y)
        Yp = np.empty_like(Y)
    sqrt2 = math.sqrt(2.0)
    for l in range(lmax + 1):
        Y[sh_index(l, 0)] = P[l, 0]
        if derivatives:
            Yt[sh_index(l, 0)] = dP[l, 0]
            Yp[sh_index(l, 0)] = 0.0
        for m in range(1, l + 1):
            cm, sm = np.cos(m * phi), np.sin(m * phi)
            Y[sh_index(l, m)] = sqrt2 * P[l, m] * cm
            Y[sh_index(l, -m)] = sqrt2 * P[l, m] * sm
            if derivatives:
                Yt[sh_index(l, m)] = sqrt2 * dP[l, m] * cm
                Yt[sh_index(l, -m)] = sqrt2 * dP[l, m] * sm
                Yp[sh_index(l, m)] = -m * sqrt2 * P[l, m] * sm
                Yp[sh_index(l, -m)] = m * sqrt2 * P[l, m] * cm
    if derivatives:
        return Y, Yt, Yp
    return Y


def real_sph_harm_second(lmax: int, theta, phi):
    """``(Y, Y_t, Y_p, Y_tt, Y_tp, Y_pp)`` for all degrees up to ``lmax``.

    ``Y_tt`` comes from the associated Legendre equation, so ``theta`` must
    stay away from the poles.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    theta, phi = np.broadcast_arrays(theta, phi)
    Y, Yt, Yp = real_sph_harm_all(lmax, theta, phi, derivatives=True)
    l, m = sh_degree_order(lmax)
    shape = (-1,) + (1,) * theta.ndim
    l = l.reshape(shape)
    m = m.reshape(shape)
    Ypp = -(m**2) * Y
    # d/dphi swaps cos and sin partners: Y_{l,m} <-> Y_{l,-m}
    partner = np.array([sh_index(int(a), -int(b)) for a, b in zip(l.ravel(), m.ravel())])
    Ytp = -m * Yt[partner]
    s = np.sin(theta)
    c = np.cos(theta)
    Ytt = -l * (l + 1) * Y - (c / s) * Yt + (m**2) * Y / s**2
    return Y, Yt, Yp, Ytt, Ytp, Ypp


def real_sph_harm(l: int, m: int, theta, phi):
    """Single real spherical harmonic ``Y_{l,m}(theta, phi)``."""
    Y = real_sph_harm_all(l, theta, phi)[sh_index(l, m)]
    return Y if Y.ndim else float(Y)
