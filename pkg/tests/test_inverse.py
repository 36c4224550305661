import math

import numpy as np
import pytest
from conftest import SQRT_4PI

import helmscat.inverse as inverse
from helmscat.forward import FARFIELD_TOL, BoundaryCondition, DirectionGrid, FarFieldPattern, PlaneWave, far_field_values, solve
from helmscat.geometry import shape_perturb, shape_sphere
from helmscat.inverse import (
    InverseProblem,
    fit_impedance,
    jacobian,
    misfit,
    reconstruct_shape,
    synthesize_data,
)
from helmscat.specialfn import sh_index

ALPHA = np.array([0.0, 0.0, 1.0])
K = 2.0
D = BoundaryCondition.dirichlet()


@pytest.fixture(scope="module")
def sphere_data():
    return synthesize_data(shape_sphere(1.0), D, K, ALPHA, resolution=1.0)


def test_misfit_vanishes_on_the_generating_shape(sphere_data):
    problem = InverseProblem(sphere_data, shape_sphere(1.0))
    r, f = misfit(shape_sphere(1.0), D, problem)
    assert f == 0.0 and r.shape == (len(sphere_data.values),)


def test_misfit_grows_away_from_truth(sphere_data):
    problem = InverseProblem(sphere_data, shape_sphere(1.0))
    assert misfit(shape_sphere(1.1), D, problem)[1] > misfit(shape_sphere(1.02), D, problem)[1] > 0


def test_misfit_against_empty_data_is_pattern_norm(sphere_data):
    empty = FarFieldPattern(sphere_data.grid, np.zeros_like(sphere_data.values), ALPHA, K)
    f = misfit(shape_sphere(1.0), D, InverseProblem(empty, shape_sphere(1.0)))[1]
    assert f == pytest.approx(sphere_data.l2_norm(), rel=1e-12)


def test_jacobian_translation_columns(sphere_data):
    # first-order c_{1m} perturbations of a sphere are translations by sqrt(3/4pi) per unit coefficient
    problem = InverseProblem(sphere_data, shape_sphere(1.0), lmax_recon=1)
    J, one_sided = jacobian(problem.init, D, problem)
    assert one_sided == []
    assert np.all(J @ np.zeros(J.shape[1]) == 0)
    beta = sphere_data.directions
    A = sphere_data.values * np.sqrt(sphere_data.grid.weights)
    for m, axis in ((-1, 1), (0, 2), (1, 0)):
        expect = math.sqrt(3 / (4 * math.pi)) * 1j * K * (ALPHA - beta)[:, axis] * A
        col = J[:, sh_index(1, m)]
        assert np.max(np.abs(col - expect)) <= 1e-6 * np.max(np.abs(expect))


def test_jacobian_directional_derivative():
    truth = shape_perturb(shape_sphere(1.0), 1, 1, 0.1)
    data = synthesize_data(truth, D, 1.0, ALPHA, grid=DirectionGrid.gauss(8, 16), resolution=1.0)
    problem = InverseProblem(data, shape_sphere(1.05), lmax_recon=1)
    J, _ = jacobian(problem.init, D, problem)
    d = np.array([0.3, -0.2, 0.5, 0.1])
    eps = 1e-4
    c = problem.init.coeffs
    fd = (misfit(problem.init.with_coeffs(c + eps * d), D, problem)[0]
          - misfit(problem.init.with_coeffs(c - eps * d), D, problem)[0]) / (2 * eps)
    assert np.max(np.abs(J @ d - fd)) <= 1e-6 * np.max(np.abs(fd))


def test_start_at_truth_converges_immediately():
    data = synthesize_data(shape_sphere(1.0), D, K, ALPHA, resolution=2.0)
    problem = InverseProblem(data, shape_sphere(1.0))
    assert misfit(shape_sphere(1.0), D, problem)[1] <= 2 * FARFIELD_TOL
    rep = reconstruct_shape(problem)
    assert rep.converged and rep.iterations <= 2
    assert all(s <= 1e-6 for s in rep.step_norms)
    assert max(rep.residual_history) == rep.residual_history[0]
    assert rep.final_shape.coeffs[0] == pytest.approx(SQRT_4PI, rel=1e-6)
    d = rep.to_dict()
    assert d["converged"] and d["iterations"] == rep.iterations and d["final_shape"]["lmax"] == 0


def test_optimizer_only_sees_the_data_regime(monkeypatch):
    data = synthesize_data(shape_sphere(1.0), D, K, ALPHA, grid=DirectionGrid.gauss(8, 16))
    seen = []
    real_solve = inverse.solve

    def spy(shape, bc, exc, wave, opts=None):
        seen.append((np.array(exc.alpha), float(wave)))
        return real_solve(shape, bc, exc, wave, opts)

    monkeypatch.setattr(inverse, "solve", spy)
    reconstruct_shape(InverseProblem(data, shape_sphere(1.2), max_iters=3))
    assert seen
    assert all(np.array_equal(a, ALPHA) and k == K for a, k in seen)


def test_problem_validation(sphere_data):
    with pytest.raises(ValueError):
        InverseProblem(sphere_data, shape_sphere(1.0), lmax_recon=7)
    explicit = FarFieldPattern(DirectionGrid.explicit(np.eye(3)), np.zeros(3, complex), ALPHA, K)
    with pytest.raises(ValueError):
        InverseProblem(explicit, shape_sphere(1.0))
    p = InverseProblem(sphere_data, shape_sphere(1.0), lmax_recon=2)
    assert p.init.lmax == 2 and np.all(p.init.coeffs[1:] == 0)
    q = InverseProblem(sphere_data, shape_perturb(shape_sphere(1.0), 3, 0, 0.1), lmax_recon=1)
    assert q.init.lmax == 1
    assert p.bc_hypothesis == D and p.residual_tol == pytest.approx(2e-6)


def test_impedance_fit_recovers_h():
    shape = shape_sphere(1.0)
    h_true = 1.0 + 0.5j
    data = synthesize_data(shape, BoundaryCondition.impedance(h_true), 1.0, ALPHA,
                           grid=DirectionGrid.gauss(8, 16))
    fit = fit_impedance(shape, InverseProblem(data, shape))
    assert abs(fit.h - h_true) < 1e-5
    assert fit.history[-1] <= fit.history[0]


def test_impedance_fit_stays_in_upper_half_plane():
    shape = shape_sphere(1.0)
    data = synthesize_data(shape, BoundaryCondition.impedance(2.0), 1.0, ALPHA, grid=DirectionGrid.gauss(8, 16))
    fit = fit_impedance(shape, InverseProblem(data, shape), h0=3.0 + 2.0j)
    assert fit.h.imag >= 0 and abs(fit.h - 2.0) < 1e-5


def test_classifier_result_reproduces_its_own_data():
    shape = shape_sphere(1.0)
    data = synthesize_data(shape, BoundaryCondition.neumann(), 1.0, ALPHA, grid=DirectionGrid.gauss(8, 16))
    res = inverse.classify_boundary_condition(shape, InverseProblem(data, shape))
    assert res.tag == "neumann" and not res.ambiguous
    assert res.mean_abs_un_over_max_u <= 10 * 1e-6
    again = far_field_values(solve(shape, res.bc, PlaneWave(ALPHA), 1.0), data.directions)
    assert np.max(np.abs(again - data.values)) < 1e-6 * np.max(np.abs(data.values))
    assert res.to_dict()["bc"] == "neumann"


def test_dirichlet_classification_has_vanishing_surface_field():
    shape = shape_sphere(1.0)
    data = synthesize_data(shape, D, 1.0, ALPHA, grid=DirectionGrid.gauss(8, 16))
    res = inverse.classify_boundary_condition(shape, InverseProblem(data, shape))
    assert res.tag == "dirichlet"
    assert res.mean_abs_u <= 10 * 1e-6


def test_perturbed_start_never_ends_above_its_misfit():
    truth = shape_perturb(shape_sphere(1.0), 1, 0, 0.05)
    data = synthesize_data(truth, D, K, ALPHA, grid=DirectionGrid.gauss(8, 16))
    rep = reconstruct_shape(InverseProblem(data, truth, lmax_recon=1, max_iters=2))
    assert rep.residual_history[-1] <= rep.residual_history[0]
