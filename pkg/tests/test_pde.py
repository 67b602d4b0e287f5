import numpy as np
import pytest

from conftest import central_diff, rel_err
from seqtrain.errors import ConfigurationError
from seqtrain.models import BoundaryMask, GaussianMixtureModel, MaskedModel
from seqtrain.pde import (Advection, GaussianBump, SineSeries, advection_operator,
                          advection_solution, check_reference_residual, eval_rhs, heat_operator,
                          reference_heat_solver, rhs_jacobian, sine_series_heat_solution,
                          smallest_dirichlet_eigenvalue)
from seqtrain.quadrature import gauss_legendre, norm

U0 = SineSeries(((1, 1.0), (3, 0.5)), (0.0,), (1.0,))


def test_dirichlet_eigenvalue():
    assert smallest_dirichlet_eigenvalue([0.0], [1.0]) == pytest.approx(np.pi**2)
    assert smallest_dirichlet_eigenvalue([0.0, 0.0], [1.0, 2.0]) == pytest.approx(
        np.pi**2 * 1.25)


def test_advection_rhs_is_minus_center_gradient():
    # for a shift ansatz d/d alpha = -d/dx, so f = -(d u / d alpha) . w
    model = GaussianMixtureModel(1, 0.1)
    adv = Advection((1.0,), (2.0,))
    op = advection_operator((1.0,), (2.0,))
    theta = np.array([0.3, 1.2])
    x = np.linspace(-1, 1, 41)[:, None]
    t = 0.37
    f = eval_rhs(op, t, model, theta, x)
    assert np.allclose(f, -model.grad_theta(theta, x)[0] * adv.w(t)[0], atol=1e-13)


def test_rhs_jacobian_matches_finite_differences():
    mask = BoundaryMask("homogeneous-dirichlet", (0.0,), (1.0,))
    model = MaskedModel(GaussianMixtureModel(3, 0.2), mask)
    rng = np.random.default_rng(0)
    x = rng.random((12, 1))
    for op in (heat_operator(-1.0), advection_operator((0.5,), (1.0,))):
        theta = model.random_params(rng)
        fd = central_diff(lambda th: eval_rhs(op, 0.2, model, th, x), theta, 1e-6)
        assert rel_err(rhs_jacobian(op, 0.2, model, theta, x), fd) < 1e-6


def test_operator_splitting_recomposes():
    model = GaussianMixtureModel(2, 0.2)
    theta = model.random_params(np.random.default_rng(1))
    x = np.linspace(0, 1, 9)
    op = heat_operator(-1.0)
    full = eval_rhs(op, 0.0, model, theta, x)
    parts = eval_rhs(op.stiff_only(), 0.0, model, theta, x) + eval_rhs(op.bounded_only(), 0.0,
                                                                       model, theta, x)
    assert np.allclose(full, parts, atol=1e-13)
    assert full == pytest.approx(model.laplacian(theta, x) - model.eval(theta, x))


def test_analytic_solutions_satisfy_their_equations():
    rng = np.random.default_rng(2)
    heat = sine_series_heat_solution(U0, -1.0)
    samples = [(rng.uniform(0.01, 0.2), rng.random((5, 1))) for _ in range(10)]
    assert check_reference_residual(heat, heat.rhs, samples) < 1e-5
    bump = GaussianBump((0.0,), 0.1)
    adv = Advection((1.0,), (2.0,))
    ref = advection_solution(bump, adv)
    # u_t = grad u . w(t) checked against the model-free formula
    samples = [(rng.uniform(0.05, 0.5), rng.uniform(-2, 0, (5, 1))) for _ in range(10)]
    err = check_reference_residual(
        ref, lambda t, x: adv.w(t)[0] * bump.gradient(x + adv.displacement(t))[0], samples)
    assert err < 1e-5


def test_crank_nicolson_reference_matches_closed_form():
    rule = gauss_legendre([0.0], [1.0], 64)
    exact = sine_series_heat_solution(U0, -1.0)
    ref = reference_heat_solver(U0, [0.0], [1.0], 0.1, n=1024, dt_ref=1e-4, reaction=-1.0,
                                save_times=np.linspace(0, 0.1, 11))
    for t in (0.0, 0.01, 0.05, 0.1):
        assert norm(rule, ref(t, rule.nodes) - exact(t, rule.nodes)) < 1e-5
        assert norm(rule, ref.rhs(t, rule.nodes) - exact.rhs(t, rule.nodes)) < 1e-2


def test_implicit_euler_reference_is_first_order():
    rule = gauss_legendre([0.0], [1.0], 64)
    exact = sine_series_heat_solution(U0, -1.0)
    errs = []
    for dt in (2e-3, 1e-3, 5e-4):
        ref = reference_heat_solver(U0, [0.0], [1.0], 0.02, n=512, dt_ref=dt, reaction=-1.0,
                                    method="implicit-euler")
        errs.append(norm(rule, ref(0.02, rule.nodes) - exact(0.02, rule.nodes)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 1.0) < 0.15)


def test_reference_between_snapshots_interpolates():
    ref = reference_heat_solver(U0, [0.0], [1.0], 0.01, n=256, dt_ref=1e-3)
    x = np.array([[0.3]])
    mid = ref(0.0015, x)
    assert mid == pytest.approx(0.5 * (ref(0.001, x) + ref(0.002, x)))
    with pytest.raises(ConfigurationError):
        ref(0.02, x)


def test_reference_validation():
    with pytest.raises(ConfigurationError, match="n >= 256"):
        reference_heat_solver(U0, [0.0], [1.0], 0.01, n=64)
    with pytest.raises(ConfigurationError, match="multiple"):
        reference_heat_solver(U0, [0.0], [1.0], 0.01, n=256, dt_ref=1e-3, save_times=[0.0015])
    with pytest.raises(ConfigurationError):
        reference_heat_solver(U0, [0.0], [1.0], 0.01, n=256, method="rk4")
    with pytest.raises(ConfigurationError):
        sine_series_heat_solution(U0).__class__("analytic", lambda t, p: 0).rhs(0, 0)


def test_two_dimensional_reference_matches_closed_form():
    u0 = SineSeries(((1, 1.0),), (0.0, 0.0), (1.0, 1.0))
    exact = sine_series_heat_solution(u0)
    ref = reference_heat_solver(u0, [0.0, 0.0], [1.0, 1.0], 0.01, n=64, dt_ref=1e-3)
    x = np.array([[0.3, 0.6], [0.5, 0.5]])
    assert np.allclose(ref(0.01, x), exact(0.01, x), atol=1e-3)
