"""Shape and boundary-condition recovery from far-field data at one incidence and one frequency.

The unknown surface is a ``StarShape`` with coefficients up to
``lmax_recon``.  The optimizer sees a single ``FarFieldPattern`` (one
incident direction, one wavenumber) and nothing else.  Shapes are fitted by
Tikhonov-damped Gauss-Newton with a finite-difference Jacobian; the boundary
condition is chosen by fitting each family to the data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .forward import (
    FARFIELD_TOL,
    BoundaryCondition,
    DirectionGrid,
    FarFieldPattern,
    PlaneWave,
    SolveError,
    SolveOptions,
    boundary_trace,
    far_field,
    far_field_values,
    solve,
)
from .geometry import StarShape, StarShapeError, build_quadrature

logger = logging.getLogger(__name__)

LMAX_RECON_CAP = 6
FD_STEP = 1e-4
LAMBDA_FLOOR = 1e-10
ARMIJO_C = 1e-4
MAX_BACKTRACKS = 12


def synthesize_data(shape: StarShape, bc: BoundaryCondition, k: float, alpha,
                    grid: DirectionGrid | None = None, opts: SolveOptions | None = None,
                    resolution: float = 2.0) -> FarFieldPattern:
    """Far-field data from a forward solve at ``resolution`` times the default discretisation."""
    opts = (opts or SolveOptions()).scaled(resolution)
    grid = grid or DirectionGrid.gauss(16, 32)
    return far_field(solve(shape, bc, PlaneWave(alpha), k, opts), grid)


@dataclass
class InverseProblem:
    """Far-field data at fixed ``(alpha0, k0)`` plus the settings of the shape fit.

    ``lambda0=None`` starts the Tikhonov parameter at ``1e-2 ||J||^2`` of the
    first Jacobian; it is halved on every accepted step down to ``1e-10``.
    ``residual_tol=None`` means twice the forward far-field tolerance.
    """

    data: FarFieldPattern
    init: StarShape
    lmax_recon: int = 0
    bc_hypothesis: BoundaryCondition | None = None
    lambda0: float | None = None
    max_iters: int = 50
    step_tol: float = 1e-8
    residual_tol: float | None = None
    opts: SolveOptions = field(default_factory=SolveOptions)
    lmax_cap: int = LMAX_RECON_CAP

    def __post_init__(self):
        if self.lmax_recon < 0 or self.lmax_recon > self.lmax_cap:
            raise ValueError(f"lmax_recon must lie in [0, {self.lmax_cap}]")
        if self.data.grid.weights is None:
            raise ValueError("inverse data must sit on a weighted direction grid")
        if np.asarray(self.data.alpha).shape != (3,):
            raise ValueError("inverse data must come from a single incident direction")
        if self.bc_hypothesis is None:
            self.bc_hypothesis = BoundaryCondition.dirichlet()
        if self.residual_tol is None:
            self.residual_tol = 2.0 * FARFIELD_TOL
        if self.init.lmax != self.lmax_recon:
            self.init = self.init.extended(self.lmax_recon) if self.init.lmax < self.lmax_recon \
                else self.init.with_coeffs(self.init.coeffs[: (self.lmax_recon + 1) ** 2], self.lmax_recon)


def _model_values(shape: StarShape, bc: BoundaryCondition, problem: InverseProblem) -> np.ndarray:
    sol = solve(shape, bc, PlaneWave(problem.data.alpha), problem.data.k, problem.opts)
    return far_field_values(sol, problem.data.directions)


def misfit(shape: StarShape, bc: BoundaryCondition, problem: InverseProblem) -> tuple[np.ndarray, float]:
    """Weighted residual ``sqrt(w) (A_model - A_data)`` and its Euclidean norm."""
    r = np.sqrt(problem.data.grid.weights) * (_model_values(shape, bc, problem) - problem.data.values)
    return r, float(np.linalg.norm(r))


def _try_shape(shape: StarShape, coeffs) -> StarShape | None:
    try:
        return shape.with_coeffs(coeffs)
    except StarShapeError:
        return None


def jacobian(shape: StarShape, bc: BoundaryCondition, problem: InverseProblem,
             r0: np.ndarray | None = None) -> tuple[np.ndarray, list[int]]:
    """Central-difference Jacobian of the weighted residual in the shape coefficients.

    The step for coefficient ``j`` is ``1e-4 (1 + |c_j|)``.  If one of the
    two perturbed shapes is not star-shaped the column falls back to a
    one-sided difference and its index is returned in the second element.
    """
    c = shape.coeffs
    J = np.empty((len(problem.data.values), len(c)), dtype=complex)
    one_sided = []
    for j in range(len(c)):
        h = FD_STEP * (1.0 + abs(c[j]))
        e = np.zeros_like(c)
        e[j] = h
        plus, minus = _try_shape(shape, c + e), _try_shape(shape, c - e)
        if plus is not None and minus is not None:
            J[:, j] = (misfit(plus, bc, problem)[0] - misfit(minus, bc, problem)[0]) / (2 * h)
            continue
        one_sided.append(j)
        base = r0 if r0 is not None else misfit(shape, bc, problem)[0]
        if plus is not None:
            J[:, j] = (misfit(plus, bc, problem)[0] - base) / h
        elif minus is not None:
            J[:, j] = (base - misfit(minus, bc, problem)[0]) / h
        else:
            raise StarShapeError(f"coefficient {j} cannot be perturbed without losing star-shapedness")
        logger.warning("jacobian column %d uses a one-sided difference", j)
    return J, one_sided


@dataclass
class ReconstructionReport:
    final_shape: StarShape
    residual_history: list[float]
    step_norms: list[float]
    jacobian_conditioning: list[float]
    lambdas: list[float]
    converged: bool
    status: str
    one_sided_columns: list[list[int]] = field(default_factory=list)
    bc_result: "BCResult | None" = None

    @property
    def iterations(self) -> int:
        return len(self.step_norms)

    def to_dict(self) -> dict:
        out = {
            "converged": self.converged,
            "status": self.status,
            "iterations": self.iterations,
            "final_shape": self.final_shape.to_dict(),
            "residual_history": list(self.residual_history),
            "step_norms": list(self.step_norms),
            "jacobian_conditioning": list(self.jacobian_conditioning),
            "lambdas": list(self.lambdas),
            "one_sided_columns": [list(c) for c in self.one_sided_columns],
        }
        if self.bc_result is not None:
            out["bc_result"] = self.bc_result.to_dict()
        return out


def _stacked(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag], axis=0)


def reconstruct_shape(problem: InverseProblem) -> ReconstructionReport:
    """Damped Gauss-Newton on the real/imaginary stacked far-field residual.

    Each step minimises ``||J d + r||^2 + lam ||d||^2``; an Armijo
    backtracking search on the misfit accepts it, shrinking further while the
    trial surface is not star-shaped.
    """
    bc = problem.bc_hypothesis
    shape = problem.init
    r, f = misfit(shape, bc, problem)
    history, steps, conds, lambdas, flagged = [f], [], [], [], []
    lam = problem.lambda0
    status = "max_iters"
    converged = False
    for it in range(problem.max_iters):
        if f <= problem.residual_tol:
            status, converged = "residual_tol", True
            break
        Jc, one_sided = jacobian(shape, bc, problem, r)
        flagged.append(one_sided)
        J, rs = _stacked(Jc), _stacked(r)
        sv = np.linalg.svd(J, compute_uv=False)
        conds.append(float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf)
        if lam is None:
            lam = 1e-2 * float(sv[0]) ** 2
        n = J.shape[1]
        aug = np.vstack([J, math.sqrt(lam) * np.eye(n)])
        step = np.linalg.lstsq(aug, np.concatenate([-rs, np.zeros(n)]), rcond=None)[0]
        lambdas.append(lam)
        # directional derivative of f^2/2 along the step
        slope = float(rs @ (J @ step))
        t = 1.0
        accepted = None
        for _ in range(MAX_BACKTRACKS):
            trial = _try_shape(shape, shape.coeffs + t * step)
            if trial is not None:
                try:
                    r_new, f_new = misfit(trial, bc, problem)
                except SolveError as exc:
                    logger.info("trial shape rejected by the forward solver: %s", exc)
                else:
                    if 0.5 * f_new**2 <= 0.5 * f**2 + ARMIJO_C * t * slope:
                        accepted = (trial, r_new, f_new)
                        break
            t *= 0.5
        if accepted is None:
            step_norm = float(np.linalg.norm(step))
            status = "stalled" if step_norm <= problem.step_tol else "diverged"
            converged = status == "stalled"
            break
        shape, r, f = accepted
        step_norm = float(t * np.linalg.norm(step))
        steps.append(step_norm)
        history.append(f)
        lam = max(LAMBDA_FLOOR, 0.5 * lam)
        logger.info("gauss-newton %d: misfit %.3e, step %.3e, lambda %.2e", it, f, step_norm, lam)
        if step_norm <= problem.step_tol:
            status, converged = "step_tol", True
            break
    else:
        if f <= problem.residual_tol:
            status, converged = "residual_tol", True
    return ReconstructionReport(shape, history, steps, conds, lambdas, converged, status, flagged)


# --- boundary-condition identification ------------------------------------------------------

H_FD_STEP = 1e-6
H_MAX_ITERS = 60
# beyond this |h| / k the impedance fit is indistinguishable from a Dirichlet obstacle
H_LARGE = 1e6
DIRICHLET_LIKE = 1e3
NEUMANN_LIKE = 1e-3
FAMILY_RATIO = 2.0
AMBIGUITY = 0.1


@dataclass
class ImpedanceFit:
    h: complex
    misfit: float
    iterations: int
    history: list[float]


def fit_impedance(shape: StarShape, problem: InverseProblem, h0: complex = 1j,
                  max_iters: int = H_MAX_ITERS) -> ImpedanceFit:
    """Least-squares impedance ``h`` (``Im h >= 0``) for a known surface.

    ``A`` depends holomorphically on ``h``, so one complex difference gives
    the derivative and each Gauss-Newton step is a scalar complex division.
    The step is projected onto the closed upper half-plane.
    """
    k = problem.data.k

    def res(h):
        return misfit(shape, BoundaryCondition.impedance(h), problem)

    h = complex(h0)
    r, f = res(h)
    history = [f]
    it = 0
    for it in range(1, max_iters + 1):
        # a real-axis difference keeps Im h fixed and suffices for a holomorphic map
        eps = H_FD_STEP * (1.0 + abs(h))
        dA = (res(h + eps)[0] - res(h - eps)[0]) / (2 * eps)
        denom = np.vdot(dA, dA).real
        if denom == 0.0:
            break
        dh = -np.vdot(dA, r) / denom
        t = 1.0
        improved = False
        for _ in range(MAX_BACKTRACKS):
            cand = h + t * dh
            cand = complex(cand.real, max(cand.imag, 0.0))
            r_new, f_new = res(cand)
            if f_new < f:
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        moved = abs(cand - h)
        h, r, f = cand, r_new, f_new
        history.append(f)
        if moved <= 1e-10 * (1.0 + abs(h)) or abs(h) >= H_LARGE * k:
            break
    return ImpedanceFit(h, f, it, history)


@dataclass
class BCResult:
    bc: BoundaryCondition
    misfits: dict
    h_fit: complex
    ambiguous: bool
    mean_abs_u: float
    mean_abs_un_over_u: float
    mean_abs_un_over_max_u: float
    surface_ratio_mean: complex | None

    @property
    def tag(self) -> str:
        return self.bc.kind

    def to_dict(self) -> dict:
        return {
            "bc": self.bc.kind,
            "h": [self.h_fit.real, self.h_fit.imag] if self.bc.kind == "impedance" else None,
            "h_fit": [self.h_fit.real, self.h_fit.imag],
            "ambiguous": self.ambiguous,
            "misfits": dict(self.misfits),
            "mean_abs_u": self.mean_abs_u,
            "mean_abs_un_over_u": self.mean_abs_un_over_u,
            "mean_abs_un_over_max_u": self.mean_abs_un_over_max_u,
            "surface_ratio_mean": (None if self.surface_ratio_mean is None
                                   else [self.surface_ratio_mean.real, self.surface_ratio_mean.imag]),
        }


def surface_statistics(shape: StarShape, bc: BoundaryCondition, problem: InverseProblem,
                       n_theta: int = 24) -> tuple[float, float, float, complex | None]:
    """``(mean |u|, mean |u_N|/|u|, mean |u_N| / max |u|, mean of -u_N/u)`` over the surface.

    Means are area-weighted.  The ratio ``-u_N/u`` is only reported where
    ``u`` is not numerically zero.
    """
    sol = solve(shape, bc, PlaneWave(problem.data.alpha), problem.data.k, problem.opts)
    quad = build_quadrature(shape, n_theta, 2 * n_theta)
    u, un = boundary_trace(sol, quad)
    area = quad.area
    mean_u = float(quad.integrate(np.abs(u)) / area)
    max_u = float(np.max(np.abs(u)))
    mean_un_max = float(quad.integrate(np.abs(un)) / area / max(max_u, 1e-300))
    if mean_u <= 10 * problem.opts.tol:
        return mean_u, math.inf, mean_un_max, None
    ratio = -un / u
    return (mean_u, float(quad.integrate(np.abs(un) / np.abs(u)) / area), mean_un_max,
            complex(quad.integrate(ratio) / area))


def classify_boundary_condition(shape: StarShape, problem: InverseProblem) -> BCResult:
    """Pick the boundary-condition family that explains the data on a known surface.

    Dirichlet and Neumann obstacles are solved directly; the impedance
    family is fitted over ``h``.  A Dirichlet (Neumann) verdict needs its
    misfit within a factor two of the impedance optimum and a fitted ``h``
    that is itself Dirichlet-like, ``|h| >= 1e3 k`` (Neumann-like,
    ``|h| <= 1e-3 k``).  Otherwise the impedance fit is returned.  When the
    best two distinct families agree to 10 % the result is flagged ambiguous.
    """
    k = problem.data.k
    dirichlet, neumann = BoundaryCondition.dirichlet(), BoundaryCondition.neumann()
    m_d = misfit(shape, dirichlet, problem)[1]
    m_n = misfit(shape, neumann, problem)[1]
    fit = fit_impedance(shape, problem)
    m_i = fit.misfit
    misfits = {"dirichlet": m_d, "neumann": m_n, "impedance": m_i}
    h_dirichlet_like = abs(fit.h) >= DIRICHLET_LIKE * k
    h_neumann_like = abs(fit.h) <= NEUMANN_LIKE * k

    if m_d <= FAMILY_RATIO * m_i and h_dirichlet_like and m_d <= m_n:
        chosen = dirichlet
    elif m_n <= FAMILY_RATIO * m_i and h_neumann_like and m_n <= m_d:
        chosen = neumann
    else:
        chosen = BoundaryCondition.impedance(fit.h)

    # families that the impedance fit reproduces are not rivals of each other
    rivals = {"dirichlet": m_d, "neumann": m_n, "impedance": m_i}
    if chosen.kind == "dirichlet" or h_dirichlet_like:
        rivals.pop("impedance")
    if chosen.kind == "neumann" or h_neumann_like:
        rivals.pop("impedance", None)
    vals = sorted(rivals.values())
    ambiguous = len(vals) > 1 and vals[1] <= (1.0 + AMBIGUITY) * vals[0]

    stats = surface_statistics(shape, chosen, problem)
    return BCResult(chosen, misfits, fit.h, ambiguous, *stats)


def reconstruct_and_classify(problem: InverseProblem) -> ReconstructionReport:
    """Shape fit under the hypothesised condition followed by the family fit on the result."""
    rep = reconstruct_shape(problem)
    rep.bc_result = classify_boundary_condition(rep.final_shape, problem)
    return rep


__all__ = [
    "BCResult", "ImpedanceFit", "InverseProblem", "ReconstructionReport",
    "classify_boundary_condition", "fit_impedance", "jacobian", "misfit", "reconstruct_and_classify",
    "reconstruct_shape", "surface_statistics", "synthesize_data",
]
