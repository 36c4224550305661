"""Star-shaped obstacle surfaces and their surface quadratures.

A surface is the radial graph ``x = center + r(theta, phi) * xhat`` where
``r`` is a finite expansion in real orthonormal spherical harmonics.  The
quadrature is tensor Gauss-Legendre (in ``cos theta``) times the trapezoid
rule (in ``phi``); normals and area elements use the analytic harmonic
derivatives of ``r``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .specialfn import real_sph_harm_all, sh_degree_order, sh_index

MIN_N_THETA = 8
MIN_N_PHI = 16
# density of the star-shapedness guard grid relative to a requested quadrature
GUARD_FACTOR = 2
GUARD_MIN_N_THETA = 48


class StarShapeError(ValueError):
    """The radial map is not strictly positive somewhere on the check grid."""

    def __init__(self, message: str, theta: float | None = None, phi: float | None = None,
                 radius: float | None = None):
        super().__init__(message)
        self.theta = theta
        self.phi = phi
        self.radius = radius


@lru_cache(maxsize=64)
def gauss_sphere_grid(n_theta: int, n_phi: int, phi_offset: float = 0.0):
    """Angles and solid-angle weights of the product grid on the unit sphere.

    Returns flattened ``(theta, phi, weights)`` with ``theta`` varying slowest.
    The weights integrate polynomials in ``cos theta`` of degree
    ``2 n_theta - 1`` and trigonometric polynomials of degree ``< n_phi``
    exactly.
    """
    t, wt = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(t)
    phi = phi_offset + 2.0 * np.pi * np.arange(n_phi) / n_phi
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    w = np.outer(wt, np.full(n_phi, 2.0 * np.pi / n_phi))
    out = th.ravel(), ph.ravel(), w.ravel()
    for a in out:
        a.setflags(write=False)
    return out


def unit_vectors(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def direction_angles(v) -> tuple[np.ndarray, np.ndarray]:
    """Polar and azimuthal angles of (not necessarily unit) vectors."""
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    theta = np.arccos(np.clip(v[..., 2] / r, -1.0, 1.0))
    phi = np.mod(np.arctan2(v[..., 1], v[..., 0]), 2.0 * np.pi)
    return theta, phi


def as_direction(v) -> np.ndarray:
    """Normalise a 3-vector to a unit direction."""
    v = np.asarray(v, dtype=float).reshape(3)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError("direction must be a finite nonzero 3-vector")
    return v / n


def direction_from_angles(theta: float, phi: float) -> np.ndarray:
    return unit_vectors(theta, phi)


@dataclass(frozen=True, eq=False)
class StarShape:
    """Radial map ``r = sum c_{l,m} Y_{l,m}`` about ``center``.

    Coefficients are flattened in ``l**2 + l + m`` order.  Construction checks
    the length of ``coeffs`` and that ``r > 0`` on a guard grid.
    """

    lmax: int
    coeffs: np.ndarray
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float).ravel()
        center = np.array(self.center, dtype=float).reshape(3)
        if self.lmax < 0:
            raise ValueError("lmax must be non-negative")
        if coeffs.size != (self.lmax + 1) ** 2:
            raise ValueError(
                f"expected {(self.lmax + 1) ** 2} coefficients for lmax={self.lmax}, got {coeffs.size}"
            )
        if not np.all(np.isfinite(coeffs)) or not np.all(np.isfinite(center)):
            raise ValueError("coefficients and center must be finite")
        coeffs.setflags(write=False)
        center.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "center", center)
        n_guard = max(GUARD_MIN_N_THETA, GUARD_FACTOR * (self.lmax + 2))
        self.check_star_shaped(n_guard, 2 * n_guard)

    def radius(self, theta, phi) -> np.ndarray:
        Y = real_sph_harm_all(self.lmax, theta, phi)
        return np.tensordot(self.coeffs, Y, axes=1)

    def radius_and_derivatives(self, theta, phi):
        Y, Yt, Yp = real_sph_harm_all(self.lmax, theta, phi, derivatives=True)
        return (np.tensordot(self.coeffs, Y, axes=1),
                np.tensordot(self.coeffs, Yt, axes=1),
                np.tensordot(self.coeffs, Yp, axes=1))

    def check_star_shaped(self, n_theta: int, n_phi: int) -> None:
        theta, phi, _ = gauss_sphere_grid(n_theta, n_phi)
        r = self.radius(theta, phi)
        i = int(np.argmin(r))
        if r[i] <= 0.0:
            raise StarShapeError(
                f"radial map is non-positive (r={r[i]:.3e}) at theta={theta[i]:.6f}, phi={phi[i]:.6f}",
                theta=float(theta[i]), phi=float(phi[i]), radius=float(r[i]),
            )

    def points(self, directions) -> np.ndarray:
        """Surface points in the given directions from the center."""
        d = np.asarray(directions, dtype=float)
        theta, phi = direction_angles(d)
        r = self.radius(theta, phi)
        return self.center + r[..., None] * unit_vectors(theta, phi)

    def contains(self, x) -> np.ndarray:
        """True where ``x`` lies strictly inside the obstacle."""
        rel = np.atleast_2d(np.asarray(x, dtype=float)) - self.center
        rho = np.linalg.norm(rel, axis=-1)
        theta, phi = direction_angles(np.where(rho[:, None] > 0, rel, [0.0, 0.0, 1.0]))
        return rho < self.radius(theta, phi)

    def radial_gap(self, x) -> np.ndarray:
        """``|x - center| - r(direction)``: positive outside, negative inside."""
        rel = np.atleast_2d(np.asarray(x, dtype=float)) - self.center
        rho = np.linalg.norm(rel, axis=-1)
        theta, phi = direction_angles(np.where(rho[:, None] > 0, rel, [0.0, 0.0, 1.0]))
        return rho - self.radius(theta, phi)

    def max_radius(self, n_theta: int = 48) -> float:
        theta, phi, _ = gauss_sphere_grid(n_theta, 2 * n_theta)
        return float(np.max(self.radius(theta, phi)))

    def diameter(self) -> float:
        """Bounding diameter estimate ``2 max r`` (exact for spheres about the center)."""
        return 2.0 * self.max_radius()

    def with_coeffs(self, coeffs, lmax: int | None = None) -> "StarShape":
        return StarShape(self.lmax if lmax is None else lmax, coeffs, self.center)

    def extended(self, lmax: int) -> "StarShape":
        """Same surface with the coefficient vector zero-padded (or truncated) to ``lmax``."""
        c = np.zeros((lmax + 1) ** 2)
        n = min(c.size, self.coeffs.size)
        c[:n] = self.coeffs[:n]
        return StarShape(lmax, c, self.center)

    def translated(self, offset) -> "StarShape":
        return StarShape(self.lmax, self.coeffs, self.center + np.asarray(offset, dtype=float))

    def scaled(self, factor: float) -> "StarShape":
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return StarShape(self.lmax, factor * self.coeffs, self.center)

    def __eq__(self, other):
        if not isinstance(other, StarShape):
            return NotImplemented
        return (self.lmax == other.lmax and np.array_equal(self.coeffs, other.coeffs)
                and np.array_equal(self.center, other.center))

    def __hash__(self):
        return hash((self.lmax, self.coeffs.tobytes(), self.center.tobytes()))

    def to_dict(self) -> dict:
        return {"lmax": int(self.lmax), "coeffs": [float(c) for c in self.coeffs],
                "center": [float(c) for c in self.center]}

    @classmethod
    def from_dict(cls, d: dict) -> "StarShape":
        missing = {"lmax", "coeffs"} - set(d)
        if missing:
            raise ValueError(f"shape record lacks {sorted(missing)}")
        extra = set(d) - {"lmax", "coeffs", "center"}
        if extra:
            raise ValueError(f"unknown shape keys {sorted(extra)}")
        return cls(int(d["lmax"]), d["coeffs"], d.get("center", [0.0, 0.0, 0.0]))


@dataclass(frozen=True, eq=False)
class SurfaceQuadrature:
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    resolution: tuple[int, int]
    theta: np.ndarray
    phi: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values) -> complex | float:
        return np.sum(self.weights * np.asarray(values), axis=-1)

    @property
    def area(self) -> float:
        return float(np.sum(self.weights))


def shape_sphere(radius: float, center=(0.0, 0.0, 0.0)) -> StarShape:
    if not radius > 0:
        raise ValueError("sphere radius must be positive")
    return StarShape(0, [radius * math.sqrt(4.0 * math.pi)], center)


def shape_perturb(base: StarShape, l: int, m: int, delta: float) -> StarShape:
    """Return ``base`` with ``c_{l,m}`` incremented by ``delta`` (extending lmax if needed)."""
    shape = base.extended(max(base.lmax, l)) if l > base.lmax else base
    c = np.array(shape.coeffs)
    c[sh_index(l, m)] += delta
    return StarShape(shape.lmax, c, shape.center)


def build_quadrature(shape: StarShape, n_theta: int, n_phi: int,
                     phi_offset: float = 0.0) -> SurfaceQuadrature:
    """Sample the surface on the Gauss x trapezoid grid.

    With ``x(theta, phi) = c + r e_r``, the tangent vectors are
    ``x_theta = r_theta e_r + r e_theta`` and
    ``x_phi = r_phi e_r + r sin(theta) e_phi``; the outward normal is along
    ``x_theta x x_phi`` and the area element is its norm divided by the
    solid-angle density ``sin(theta)``, so the solid-angle weights multiply it.
    """
    if n_theta < MIN_N_THETA or n_phi < MIN_N_PHI:
        raise ValueError(f"quadrature needs n_theta >= {MIN_N_THETA} and n_phi >= {MIN_N_PHI}")
    shape.check_star_shaped(max(GUARD_FACTOR * n_theta, GUARD_MIN_N_THETA),
                            max(GUARD_FACTOR * n_phi, 2 * GUARD_MIN_N_THETA))
    theta, phi, w = gauss_sphere_grid(n_theta, n_phi, phi_offset)
    r, rt, rp = shape.radius_and_derivatives(theta, phi)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    e_r = np.stack([st * cp, st * sp, ct], axis=-1)
    e_t = np.stack([ct * cp, ct * sp, -st], axis=-1)
    e_p = np.stack([-sp, cp, np.zeros_like(phi)], axis=-1)
    # (x_theta x x_phi) / sin(theta) = r^2 e_r - r r_theta e_theta - r r_phi / sin(theta) e_phi
    n_raw = (r**2)[:, None] * e_r - (r * rt)[:, None] * e_t - (r * rp / st)[:, None] * e_p
    jac = np.linalg.norm(n_raw, axis=-1)
    normals = n_raw / jac[:, None]
    points = shape.center + r[:, None] * e_r
    for a in (points, normals):
        a.setflags(write=False)
    return SurfaceQuadrature(points, normals, w * jac, (n_theta, n_phi), theta, phi)


def surface_frame(shape: StarShape, theta, phi):
    """Surface points and outward unit normals at the given angles."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    r, rt, rp = shape.radius_and_derivatives(theta, phi)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    e_r = np.stack([st * cp, st * sp, ct], axis=-1)
    e_t = np.stack([ct * cp, ct * sp, -st], axis=-1)
    e_p = np.stack([-sp, cp, np.zeros_like(phi)], axis=-1)
    n_raw = (r**2)[:, None] * e_r - (r * rt)[:, None] * e_t - (r * rp / st)[:, None] * e_p
    return shape.center + r[:, None] * e_r, n_raw / np.linalg.norm(n_raw, axis=-1, keepdims=True)


def principal_curvatures(shape: StarShape, theta, phi) -> tuple[np.ndarray, np.ndarray]:
    """Principal curvatures ``k1 >= k2`` at the given angles (a sphere of radius ``a`` gives ``1/a``).

    Computed from the first and second fundamental forms written in the
    local ``(e_r, e_theta, e_phi)`` frame, so no finite differences enter.
    """
    from .specialfn import real_sph_harm_second

    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    Y, Yt, Yp, Ytt, Ytp, Ypp = real_sph_harm_second(shape.lmax, theta, phi)
    r, rt, rp, rtt, rtp, rpp = (np.tensordot(shape.coeffs, A, axes=1) for A in (Y, Yt, Yp, Ytt, Ytp, Ypp))
    s, c = np.sin(theta), np.cos(theta)
    z = np.zeros_like(r)
    x_t = np.stack([rt, r, z], axis=-1)
    x_p = np.stack([rp, z, r * s], axis=-1)
    x_tt = np.stack([rtt - r, 2 * rt, z], axis=-1)
    x_tp = np.stack([rtp, rp, rt * s + r * c], axis=-1)
    x_pp = np.stack([rpp - r * s**2, -r * s * c, 2 * rp * s], axis=-1)
    n = np.stack([r**2, -r * rt, -r * rp / s], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    E, F, G = (np.sum(a * b, axis=-1) for a, b in ((x_t, x_t), (x_t, x_p), (x_p, x_p)))
    # outward normal: flip sign so convex patches have positive curvature
    L, M, N = (-np.sum(a * n, axis=-1) for a in (x_tt, x_tp, x_pp))
    det = E * G - F**2
    # shape operator I^{-1} II; its discriminant avoids the cancellation in H^2 - K at umbilics
    s11, s12 = (G * L - F * M) / det, (G * M - F * N) / det
    s21, s22 = (E * M - F * L) / det, (E * N - F * M) / det
    H = 0.5 * (s11 + s22)
    root = np.sqrt(np.maximum(0.25 * (s11 - s22) ** 2 + s12 * s21, 0.0))
    return H + root, H - root


def rotate_shape(shape: StarShape, R) -> StarShape:
    """Rotate a shape by the orthogonal matrix ``R`` about the origin.

    The new coefficients are ``c'_{lm} = int r(R^T xhat) Y_{lm}(xhat) dOmega``.
    Rotations act within each degree-``l`` block, so a product grid that
    integrates degree ``2 lmax`` exactly gives the block rotation exactly.
    """
    R = np.asarray(R, dtype=float)
    n = shape.lmax + 2
    theta, phi, w = gauss_sphere_grid(n, 2 * n + 2)
    xhat = unit_vectors(theta, phi)
    back = xhat @ R  # rows are R^T xhat
    th_b, ph_b = direction_angles(back)
    r_back = shape.radius(th_b, ph_b)
    Y = real_sph_harm_all(shape.lmax, theta, phi)
    coeffs = Y @ (w * r_back)
    return StarShape(shape.lmax, coeffs, R @ shape.center)


def coefficient_distance(a: StarShape, b: StarShape) -> float:
    """L2 distance between coefficient vectors (zero-padded), centers included."""
    lmax = max(a.lmax, b.lmax)
    ca = np.zeros((lmax + 1) ** 2)
    cb = np.zeros((lmax + 1) ** 2)
    ca[: a.coeffs.size] = a.coeffs
    cb[: b.coeffs.size] = b.coeffs
    return float(math.sqrt(np.sum((ca - cb) ** 2) + np.sum((a.center - b.center) ** 2)))


def min_surface_distance(a: StarShape, b: StarShape, n_theta: int = 32) -> float:
    qa = build_quadrature(a, n_theta, 2 * n_theta)
    qb = build_quadrature(b, n_theta, 2 * n_theta)
    d = np.linalg.norm(qa.points[:, None, :] - qb.points[None, :, :], axis=-1)
    return float(d.min())


def write_shape(shape: StarShape, path) -> None:
    from .report import dumps

    Path(path).write_text(dumps(shape.to_dict()) + "\n")


def read_shape(path) -> StarShape:
    return StarShape.from_dict(json.loads(Path(path).read_text()))


__all__ = [
    "StarShape", "StarShapeError", "SurfaceQuadrature", "as_direction", "build_quadrature",
    "coefficient_distance", "direction_angles", "direction_from_angles", "gauss_sphere_grid",
    "min_surface_distance", "principal_curvatures", "read_shape", "rotate_shape", "shape_perturb", "shape_sphere",
    "sh_degree_order", "surface_frame", "unit_vectors", "write_shape",
]
