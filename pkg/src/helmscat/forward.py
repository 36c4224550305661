"""Exterior Helmholtz scattering by the method of fundamental solutions.

The scattered field is a sum of free-space point sources placed on a shrunken
copy of the obstacle surface,

    v(x) = sum_j c_j g(x, y_j),    g(x, y) = exp(ik|x - y|) / (4 pi |x - y|),

so every term radiates and the Sommerfeld condition holds by construction.
The weights ``c_j`` are fitted in the least-squares sense to the boundary
condition at about twice as many surface quadrature nodes, using an SVD with a
relative singular-value cutoff.  The far field follows from the kernel
asymptotics ``g(x, y) ~ exp(ik|x|)/(4 pi |x|) exp(-ik beta.y)``, i.e. the
amplitude of ``exp(ikr)/r`` is ``(1/4pi) sum_j c_j exp(-ik beta.y_j)``.

Factorisations are cached per (shape, boundary condition, k, options), so
repeated solves with different incident fields cost one back-substitution.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import report
from .geometry import (
    StarShape,
    SurfaceQuadrature,
    as_direction,
    build_quadrature,
    direction_angles,
    gauss_sphere_grid,
    principal_curvatures,
    surface_frame,
    unit_vectors,
)

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi
# upper limit on k * diameter
KD_CAP = 40.0
EVAL_CHUNK = 4096
# far-field accuracy the default discretisation is held to
FARFIELD_TOL = 1e-6


class SolveError(RuntimeError):
    """The MFS fit failed its boundary-residual test."""

    def __init__(self, message: str, boundary_residual: float, condition_estimate: float):
        super().__init__(message)
        self.boundary_residual = boundary_residual
        self.condition_estimate = condition_estimate


class ExteriorPointError(ValueError):
    """A point that must lie outside the obstacle does not."""


@dataclass(frozen=True)
class BoundaryCondition:
    """``kind`` is ``dirichlet`` (u = 0), ``neumann`` (u_N = 0) or ``impedance`` (u_N + h u = 0)."""

    kind: str
    h: complex = 0j

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann", "impedance"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        h = complex(self.h)
        if self.kind != "impedance" and h != 0:
            raise ValueError("impedance value only allowed for impedance conditions")
        if self.kind == "impedance":
            if not (math.isfinite(h.real) and math.isfinite(h.imag)):
                raise ValueError("impedance must be finite")
            if h.imag < 0:
                raise ValueError("impedance must satisfy Im h >= 0")
        object.__setattr__(self, "h", h)

    @classmethod
    def dirichlet(cls):
        return cls("dirichlet")

    @classmethod
    def neumann(cls):
        return cls("neumann")

    @classmethod
    def impedance(cls, h: complex):
        return cls("impedance", h)

    def apply(self, u, u_n):
        """Boundary operator applied to traces ``u`` and ``u_N``."""
        if self.kind == "dirichlet":
            return u
        if self.kind == "neumann":
            return u_n
        return u_n + self.h * u

    def to_dict(self) -> dict:
        d = {"type": self.kind}
        if self.kind == "impedance":
            d["h"] = [self.h.real, self.h.imag]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryCondition":
        if isinstance(d, str):
            return cls(d.lower())
        kind = str(d.get("type", "")).lower()
        if kind == "impedance":
            h = d.get("h")
            if h is None:
                raise ValueError("impedance condition needs 'h' as [re, im]")
            h = complex(h[0], h[1]) if isinstance(h, (list, tuple)) else complex(h)
            return cls.impedance(h)
        return cls(kind)


@dataclass(frozen=True)
class WaveContext:
    k: float

    def __post_init__(self):
        if not (self.k > 0 and math.isfinite(self.k)):
            raise ValueError("wavenumber must be positive and finite")


@dataclass(frozen=True, eq=False)
class PlaneWave:
    alpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_direction(self.alpha))

    def field(self, x, k):
        return np.exp(1j * k * (np.asarray(x) @ self.alpha))

    def gradient(self, x, k):
        return (1j * k * self.field(x, k))[..., None] * self.alpha

    def describe(self) -> dict:
        return {"type": "plane_wave", "alpha": self.alpha}


@dataclass(frozen=True, eq=False)
class PointSource:
    """Incident field ``g(x, y)`` of a unit point source at ``y``."""

    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(3)
        object.__setattr__(self, "y", y)

    def field(self, x, k):
        return kernel(np.asarray(x), self.y[None, :], k)[..., 0]

    def gradient(self, x, k):
        return kernel_gradient(np.asarray(x), self.y[None, :], k)[..., 0, :]

    def describe(self) -> dict:
        return {"type": "point_source", "y": self.y}


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """No incident field; the scattered field itself must satisfy ``Gamma v = f`` on S.

    ``f`` maps ``(theta, phi, points)`` of surface nodes to complex values.
    """

    f: object
    label: str = "boundary_data"

    def field(self, x, k):
        return np.zeros(np.asarray(x).shape[:-1], dtype=complex)

    def gradient(self, x, k):
        return np.zeros(np.asarray(x).shape, dtype=complex)

    def describe(self) -> dict:
        return {"type": "boundary_data", "label": self.label}


@dataclass(frozen=True)
class SolveOptions:
    """Discretisation and acceptance settings.

    ``n_sources=None`` picks a count from ``k * max radius``; ``resolution``
    multiplies the source count (and with it the collocation grid).
    """

    n_sources: int | None = None
    dilation: float = 0.4
    oversampling: float = 2.0
    rcond: float = 1e-12
    tol: float = 1e-6
    resolution: float = 1.0
    check: bool = True

    def __post_init__(self):
        if not 0.3 <= self.dilation <= 0.9:
            raise ValueError("source dilation must lie in [0.3, 0.9]")
        if self.oversampling < 2.0:
            raise ValueError("need at least twice as many collocation nodes as sources")

    def scaled(self, factor: float) -> "SolveOptions":
        return replace(self, resolution=self.resolution * factor)


def default_source_count(ka: float) -> int:
    """Source count growing like the number of harmonics needed at ``ka``."""
    return int(math.ceil(400 * max(1.0, ((ka + 6.0) / 10.0) ** 2)))


def fibonacci_directions(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    rho = np.sqrt(1.0 - z**2)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


def kernel(x: np.ndarray, y: np.ndarray, k: float) -> np.ndarray:
    """``g(x_i, y_j)`` for point arrays of shape ``(..., 3)`` and ``(M, 3)``."""
    d = x[..., None, :] - y
    r = np.sqrt(np.einsum("...i,...i->...", d, d))
    return np.exp(1j * k * r) / (FOUR_PI * r)


def kernel_gradient(x: np.ndarray, y: np.ndarray, k: float) -> np.ndarray:
    """Gradient of ``g(x, y_j)`` with respect to ``x``: ``g (ik - 1/r) (x - y)/r``."""
    d = x[..., None, :] - y
    r = np.sqrt(np.einsum("...i,...i->...", d, d))
    g = np.exp(1j * k * r) / (FOUR_PI * r)
    return (g * (1j * k - 1.0 / r) / r)[..., None] * d


def _kernels(x, normals, y, k):
    d = x[:, None, :] - y[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", d, d))
    g = np.exp(1j * k * r) / (FOUR_PI * r)
    dn = g * (1j * k - 1.0 / r) / r * np.einsum("ijk,ik->ij", d, normals)
    return g, dn


def _boundary_matrix(bc: BoundaryCondition, x, normals, y, k):
    g, dn = _kernels(x, normals, y, k)
    return bc.apply(g, dn)


def _incident_boundary(bc, exc, quad: SurfaceQuadrature, k):
    if isinstance(exc, BoundaryData):
        return -np.asarray(exc.f(quad.theta, quad.phi, quad.points), dtype=complex)
    u = exc.field(quad.points, k)
    un = np.einsum("ij,ij->i", exc.gradient(quad.points, k), quad.normals)
    return bc.apply(u, un)


@dataclass(eq=False)
class _Discretization:
    sources: np.ndarray
    colloc: SurfaceQuadrature
    check: SurfaceQuadrature
    row_weights: np.ndarray
    Q: np.ndarray
    U: np.ndarray
    s: np.ndarray
    Vh: np.ndarray
    check_matrix: np.ndarray
    condition_estimate: float
    n_kept: int

    def coefficients(self, rhs: np.ndarray) -> np.ndarray:
        b = self.row_weights * rhs
        z = self.U.conj().T @ (self.Q.conj().T @ b)
        return self.Vh.conj().T @ (z / self.s)


_CACHE: "OrderedDict[tuple, _Discretization]" = OrderedDict()
_CACHE_SIZE = 8


def clear_cache() -> None:
    _CACHE.clear()


# automatic source counts grow by this factor until the residual gate passes
AUTO_GROWTH = 1.5
AUTO_SOURCE_CAP = 2000


def resolved_source_count(shape: StarShape, k: float, opts: SolveOptions) -> int:
    base = opts.n_sources or default_source_count(k * shape.max_radius())
    return int(math.ceil(base * opts.resolution))


def place_sources(shape: StarShape, m: int, dilation: float) -> np.ndarray:
    """Sources pushed inward along the normal from ``m`` near-uniform surface points.

    The depth is ``(1 - dilation)`` times the smaller of the mean radius and
    the local radius of curvature, so on a sphere this is the radial map
    ``x -> center + dilation (x - center)``.
    """
    dirs = fibonacci_directions(m)
    th, ph = direction_angles(dirs)
    pts, normals = surface_frame(shape, th, ph)
    mean_r = shape.coeffs[0] / math.sqrt(4.0 * math.pi)
    k1, _ = principal_curvatures(shape, th, ph)
    radius_of_curvature = 1.0 / np.maximum(k1, 1e-12)
    depth = (1.0 - dilation) * np.minimum(mean_r, radius_of_curvature)
    sources = pts - depth[:, None] * normals
    if np.any(shape.radial_gap(sources) >= 0):
        raise ValueError("an MFS source left the obstacle interior")
    return sources


def _discretize(shape: StarShape, bc: BoundaryCondition, k: float, opts: SolveOptions,
                m: int) -> _Discretization:
    key = (shape.lmax, shape.coeffs.tobytes(), shape.center.tobytes(), bc, float(k), opts, m)
    hit = _CACHE.get(key)
    if hit is not None:
        _CACHE.move_to_end(key)
        return hit

    kd = k * shape.diameter()
    if kd > KD_CAP:
        raise ValueError(f"k * diameter = {kd:.3g} exceeds the desk-scale cap {KD_CAP}")
    sources = place_sources(shape, m, opts.dilation)

    n_theta = max(8, int(math.ceil(math.sqrt(opts.oversampling * m / 2.0))))
    colloc = build_quadrature(shape, n_theta, 2 * n_theta)
    n_check = n_theta + 3
    check = build_quadrature(shape, n_check, 2 * n_check, phi_offset=math.pi / (2 * n_check))

    row_w = np.sqrt(colloc.weights / colloc.weights.mean())
    A = _boundary_matrix(bc, colloc.points, colloc.normals, sources, k) * row_w[:, None]
    Q, R = np.linalg.qr(A)
    U, s, Vh = np.linalg.svd(R)
    keep = s > opts.rcond * s[0]
    n_kept = int(keep.sum())
    disc = _Discretization(
        sources=sources,
        colloc=colloc,
        check=check,
        row_weights=row_w,
        Q=Q,
        U=U[:, keep],
        s=s[keep],
        Vh=Vh[keep],
        check_matrix=_boundary_matrix(bc, check.points, check.normals, sources, k),
        condition_estimate=float(s[0] / s[keep][-1]),
        n_kept=n_kept,
    )
    logger.debug("MFS: %d sources, %d collocation nodes, kept %d singular values, cond %.3e",
                 m, len(colloc), n_kept, disc.condition_estimate)
    _CACHE[key] = disc
    if len(_CACHE) > _CACHE_SIZE:
        _CACHE.popitem(last=False)
    return disc


@dataclass(frozen=True, eq=False)
class ScatterSolution:
    sources: np.ndarray
    coeffs: np.ndarray
    excitation: object
    bc: BoundaryCondition | None
    wave: WaveContext
    shape: StarShape | None
    boundary_residual: float
    condition_estimate: float

    @property
    def k(self) -> float:
        return self.wave.k


def _as_wave(wave) -> WaveContext:
    return wave if isinstance(wave, WaveContext) else WaveContext(float(wave))


def _check_exterior(shape: StarShape | None, x, what: str, rel_tol: float = 1e-10) -> None:
    if shape is None:
        return
    gap = shape.radial_gap(x)
    if np.any(gap < -rel_tol * shape.diameter()):
        raise ExteriorPointError(f"{what} lies inside the obstacle (radial gap {gap.min():.3e})")


def _fit(disc: _Discretization, bc: BoundaryCondition, exc, k: float):
    rhs = -_incident_boundary(bc, exc, disc.colloc, k)
    coeffs = disc.coefficients(rhs)
    inc_check = _incident_boundary(bc, exc, disc.check, k)
    total = inc_check + disc.check_matrix @ coeffs
    # scale of the boundary operator applied to the incident field (|u_inc| for Dirichlet)
    scale = max(1.0, float(np.max(np.abs(inc_check))))
    return coeffs, float(np.max(np.abs(total)) / scale)


def solve(shape: StarShape, bc: BoundaryCondition, exc, wave, opts: SolveOptions | None = None) -> ScatterSolution:
    """Fit the MFS weights so that ``Gamma (u_inc + v) = 0`` on the surface.

    With an automatic source count the discretisation is refined until the
    relative boundary residual on an independent check grid is below
    ``opts.tol``.  Raises ``SolveError`` if it still is not (unless
    ``opts.check`` is false).
    """
    opts = opts or SolveOptions()
    wave = _as_wave(wave)
    k = wave.k
    if isinstance(exc, PointSource):
        gap = float(shape.radial_gap(exc.y)[0])
        if gap < 1e-6 * shape.diameter():
            raise ExteriorPointError(
                f"point source at {exc.y.tolist()} is not strictly exterior (radial gap {gap:.3e})")
    m = resolved_source_count(shape, k, opts)
    while True:
        disc = _discretize(shape, bc, k, opts, m)
        coeffs, residual = _fit(disc, bc, exc, k)
        if residual <= opts.tol or opts.n_sources is not None or m >= AUTO_SOURCE_CAP:
            break
        m = min(AUTO_SOURCE_CAP, int(math.ceil(AUTO_GROWTH * m)))
        logger.debug("MFS residual %.3e above %.1e, retrying with %d sources", residual, opts.tol, m)
    coeffs.setflags(write=False)
    sol = ScatterSolution(disc.sources, coeffs, exc, bc, wave, shape, residual, disc.condition_estimate)
    if opts.check and residual > opts.tol:
        raise SolveError(
            f"boundary residual {residual:.3e} exceeds tolerance {opts.tol:.1e} "
            f"(condition estimate {disc.condition_estimate:.3e})",
            residual, disc.condition_estimate,
        )
    return sol


def vacuum_solution(exc, wave) -> ScatterSolution:
    """No obstacle: zero sources, the total field is the incident field."""
    return ScatterSolution(np.zeros((0, 3)), np.zeros(0, dtype=complex), exc, None,
                           _as_wave(wave), None, 0.0, 1.0)


def _chunks(x: np.ndarray):
    for i in range(0, len(x), EVAL_CHUNK):
        yield slice(i, i + EVAL_CHUNK)


def scattered_field(sol: ScatterSolution, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 3)
    out = np.empty(len(flat), dtype=complex)
    for sl in _chunks(flat):
        out[sl] = kernel(flat[sl], sol.sources, sol.k) @ sol.coeffs if len(sol.coeffs) else 0.0
    return out.reshape(x.shape[:-1])


def scattered_gradient(sol: ScatterSolution, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 3)
    out = np.zeros((len(flat), 3), dtype=complex)
    if len(sol.coeffs):
        for sl in _chunks(flat):
            out[sl] = np.einsum("ijk,j->ik", kernel_gradient(flat[sl], sol.sources, sol.k), sol.coeffs)
    return out.reshape(x.shape)


def eval_field(sol: ScatterSolution, x):
    """Total field ``u_inc(x) + v(x)`` at one point or an array of points."""
    x = np.asarray(x, dtype=float)
    _check_exterior(sol.shape, x.reshape(-1, 3), "evaluation point")
    u = sol.excitation.field(x, sol.k) + scattered_field(sol, x)
    return complex(u) if x.ndim == 1 else u


def eval_gradient(sol: ScatterSolution, x) -> np.ndarray:
    """Closed-form gradient of the total field."""
    x = np.asarray(x, dtype=float)
    _check_exterior(sol.shape, x.reshape(-1, 3), "evaluation point")
    return sol.excitation.gradient(x, sol.k) + scattered_gradient(sol, x)


def boundary_trace(sol: ScatterSolution, quad: SurfaceQuadrature):
    """Total field and its normal derivative at the nodes of ``quad``."""
    u = eval_field(sol, quad.points)
    grad = eval_gradient(sol, quad.points)
    return u, np.einsum("ij,ij->i", grad, quad.normals)


def far_field_at(sol: ScatterSolution, beta) -> complex:
    """Amplitude of ``exp(ikr)/r`` in direction ``beta``."""
    beta = as_direction(beta)
    return complex(np.exp(-1j * sol.k * (sol.sources @ beta)) @ sol.coeffs / FOUR_PI)


@dataclass(frozen=True, eq=False)
class DirectionGrid:
    """Product Gauss-Legendre x uniform grid on the unit sphere, or an explicit direction list."""

    directions: np.ndarray
    weights: np.ndarray | None = None
    n_theta: int | None = None
    n_phi: int | None = None

    @classmethod
    def gauss(cls, n_theta: int, n_phi: int) -> "DirectionGrid":
        theta, phi, w = gauss_sphere_grid(n_theta, n_phi)
        return cls(unit_vectors(theta, phi), w, n_theta, n_phi)

    @classmethod
    def explicit(cls, directions) -> "DirectionGrid":
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        return cls(d / np.linalg.norm(d, axis=-1, keepdims=True))

    @property
    def angles(self):
        if self.n_theta is not None:
            theta, phi, _ = gauss_sphere_grid(self.n_theta, self.n_phi)
            return theta, phi
        return direction_angles(self.directions)

    def __len__(self) -> int:
        return len(self.directions)


@dataclass(frozen=True, eq=False)
class FarFieldPattern:
    grid: DirectionGrid
    values: np.ndarray
    alpha: np.ndarray
    k: float
    bc: BoundaryCondition | None = None

    def __post_init__(self):
        if len(self.values) != len(self.grid):
            raise ValueError("far-field values and directions differ in length")

    @property
    def directions(self) -> np.ndarray:
        return self.grid.directions

    def l2_norm(self) -> float:
        if self.grid.weights is None:
            raise ValueError("explicit direction lists carry no quadrature weights")
        return float(np.sqrt(np.sum(self.grid.weights * np.abs(self.values) ** 2)))

    def l2_distance(self, other: "FarFieldPattern") -> float:
        if self.grid.weights is None or len(self.grid) != len(other.grid):
            raise ValueError("patterns must share a weighted direction grid")
        return float(np.sqrt(np.sum(self.grid.weights * np.abs(self.values - other.values) ** 2)))


def far_field_values(sol: ScatterSolution, directions) -> np.ndarray:
    d = np.asarray(directions, dtype=float)
    if not len(sol.coeffs):
        return np.zeros(len(d), dtype=complex)
    return np.exp(-1j * sol.k * (d @ sol.sources.T)) @ sol.coeffs / FOUR_PI


def far_field(sol: ScatterSolution, grid: DirectionGrid) -> FarFieldPattern:
    alpha = sol.excitation.alpha if isinstance(sol.excitation, PlaneWave) else np.full(3, np.nan)
    return FarFieldPattern(grid, far_field_values(sol, grid.directions), alpha, sol.k, sol.bc)


def greens_function(shape: StarShape, bc: BoundaryCondition, wave, x, y,
                    opts: SolveOptions | None = None) -> complex:
    """Obstacle Green's function ``G(x, y) = g(x, y) + scattered part``, ``Gamma G = 0`` on S."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.linalg.norm(x - y) == 0.0:
        raise ValueError("Green's function is singular at x = y")
    sol = solve(shape, bc, PointSource(y), wave, opts)
    return eval_field(sol, x)


def radiation_defect(sol: ScatterSolution, beta, radii) -> np.ndarray:
    """``|r (v_r - i k v)|`` of the scattered field along the ray ``r beta``."""
    beta = as_direction(beta)
    radii = np.asarray(radii, dtype=float)
    x = radii[:, None] * beta
    v = scattered_field(sol, x)
    v_r = scattered_gradient(sol, x) @ beta
    return np.abs(radii * (v_r - 1j * sol.k * v))


# --- far-field file format -----------------------------------------------------------------


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_far_field(pattern: FarFieldPattern, csv_path) -> Path:
    """Write ``theta,phi,re_A,im_A`` plus a JSON sidecar next to it."""
    theta, phi = pattern.grid.angles
    rows = zip(theta, phi, pattern.values.real, pattern.values.imag)
    Path(csv_path).write_text(report.table_csv(["theta", "phi", "re_A", "im_A"], rows))
    side = {
        "k": float(pattern.k),
        "alpha": [float(a) for a in pattern.alpha],
        "bc": pattern.bc.to_dict() if pattern.bc is not None else None,
        "grid": ({"n_theta": pattern.grid.n_theta, "n_phi": pattern.grid.n_phi}
                 if pattern.grid.n_theta is not None else None),
    }
    sp = sidecar_path(csv_path)
    sp.write_text(report.dumps(side) + "\n")
    return sp


def read_far_field(csv_path) -> FarFieldPattern:
    csv_path = Path(csv_path)
    side = report.loads(sidecar_path(csv_path).read_text())
    with csv_path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["theta", "phi", "re_A", "im_A"]:
            raise ValueError(f"unexpected far-field header {header}")
        data = np.array([[float(v) for v in row] for row in reader])
    values = data[:, 2] + 1j * data[:, 3]
    g = side.get("grid")
    if g:
        grid = DirectionGrid.gauss(int(g["n_theta"]), int(g["n_phi"]))
        theta, phi = grid.angles
        if len(theta) != len(data) or not (np.allclose(theta, data[:, 0], atol=1e-12)
                                           and np.allclose(phi, data[:, 1], atol=1e-12)):
            raise ValueError("far-field rows do not match the grid declared in the sidecar")
    else:
        grid = DirectionGrid.explicit(unit_vectors(data[:, 0], data[:, 1]))
    bc = BoundaryCondition.from_dict(side["bc"]) if side.get("bc") else None
    return FarFieldPattern(grid, values, np.asarray(side["alpha"], dtype=float), float(side["k"]), bc)


__all__ = [
    "BoundaryCondition", "BoundaryData", "DirectionGrid", "ExteriorPointError", "FarFieldPattern",
    "PlaneWave", "PointSource", "ScatterSolution", "SolveError", "SolveOptions", "WaveContext",
    "boundary_trace", "clear_cache", "eval_field", "eval_gradient", "far_field", "far_field_at",
    "far_field_values", "greens_function", "kernel", "kernel_gradient", "radiation_defect",
    "read_far_field", "scattered_field", "scattered_gradient", "solve", "vacuum_solution",
    "write_far_field",
]
