import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from slmc.potential import (
    DomainTooSmallError,
    EvaluationError,
    HypothesisViolation,
    NonConvergenceError,
    ObservationSet,
    Potential,
    PotentialModel,
    PriorSpec,
    conjugate_posterior,
    eval_mean_potential,
    eval_potential,
    fd_hessian,
    find_minimizer,
    gaussian_model,
    gaussian_prior,
    grad_mean_potential,
    grad_potential,
    hessian_min_eig,
    model_from_dict,
    normalize,
    normalize_posterior,
    power_model,
    power_potential,
)

LOG2PI = math.log(2 * math.pi)


def central_diff(f, theta, eps=1e-5):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = eps
        g[j] = (f(theta + e) - f(theta - e)) / (2 * eps)
    return g


def builtin_models():
    rng = np.random.default_rng(3)
    return [
        gaussian_model(rng.standard_normal((5, 2)), lik_scale=1.3, prior_scale=2.0),
        power_model(rng.standard_normal((6, 2)), p=0.75),
        power_model(rng.standard_normal((4, 1)), p=0.5, weight=2.0),
    ]


# ------------------------------------------------------------ types


def test_observation_set_shape_checks():
    obs = ObservationSet(np.array([1.0, 2.0, 3.0]))
    assert obs.n == 3 and obs.m == 1
    with pytest.raises(ValueError):
        ObservationSet(np.empty((0, 2)))
    with pytest.raises(ValueError):
        ObservationSet(np.array([[np.nan, 0.0]]))


def test_prior_needs_positive_minimum():
    with pytest.raises(HypothesisViolation):
        PriorSpec(lambda t: 0 * t[..., 0], lambda t: 0 * t, lipschitz=1.0, min_value=0.0)
    # 2*pi*tau^2 <= 1 makes the Gaussian normalising constant non-positive
    with pytest.raises(HypothesisViolation):
        gaussian_prior(1, scale=0.3)


def test_gaussian_model_rejects_nonpositive_likelihood_minimum():
    with pytest.raises(HypothesisViolation):
        gaussian_model(np.zeros((2, 1)), lik_scale=0.3)


# ------------------------------------------------------------ evaluation


def test_eval_two_point_example(two_point_gaussian):
    assert eval_potential(two_point_gaussian, 0, np.array([0.0])) == pytest.approx(1.5 * LOG2PI,
                                                                                  rel=1e-15)
    assert 1.5 * LOG2PI == pytest.approx(2.7568, abs=1e-4)


def test_eval_power_unit_value_at_minimizer():
    m = power_model(np.zeros((1, 1)), p=1.0)
    # prior -log N(0; 0, 1) plus n * (1 + 0)^1
    assert eval_potential(m, 0, np.array([0.0])) == pytest.approx(0.5 * LOG2PI + 1.0, rel=1e-15)


@pytest.mark.parametrize("model", builtin_models())
def test_eval_definitional_identity(model, rng):
    theta = rng.standard_normal((50, model.d))
    for i in range(model.n):
        want = model.prior.neg_log_density(theta) + model.n * model.neg_log_lik(theta, model.X[i])
        np.testing.assert_array_equal(eval_potential(model, i, theta), want)


def test_grad_two_point_examples(two_point_gaussian):
    m = two_point_gaussian
    np.testing.assert_array_equal(grad_potential(m, 0, np.array([0.0])), [0.0])
    # d/dtheta [2 * (theta - 2)^2 / 2] at 0 is 2 * (0 - 2)
    g = grad_potential(m, 1, np.array([0.0]))
    assert g[0] == pytest.approx(-4.0, rel=1e-15)
    fd = central_diff(lambda t: eval_potential(m, 1, t), np.array([0.0]))
    assert fd[0] == pytest.approx(-4.0, rel=1e-8)


@pytest.mark.parametrize("model", builtin_models())
def test_grad_matches_central_differences(model, rng):
    for _ in range(100):
        theta = rng.normal(scale=2.0, size=model.d)
        i = int(rng.integers(model.n))
        g = grad_potential(model, i, theta)
        fd = central_diff(lambda t: eval_potential(model, i, t), theta)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))
        gm = grad_mean_potential(model, theta)
        fdm = central_diff(lambda t: eval_mean_potential(model, t), theta)
        assert np.linalg.norm(gm - fdm) <= 1e-5 * max(1.0, np.linalg.norm(gm))


def test_nonfinite_evaluation_reports_theta():
    m = gaussian_model(np.zeros((1, 1)))
    with pytest.raises(EvaluationError) as exc:
        eval_potential(m, 0, np.array([np.inf]))
    assert np.isinf(exc.value.theta).all()


def test_mean_potential_single_observation():
    m = gaussian_model(np.array([[0.7]]))
    theta = np.linspace(-3, 3, 11)[:, None]
    np.testing.assert_array_equal(eval_mean_potential(m, theta), eval_potential(m, 0, theta))


def test_mean_potential_two_point_example(two_point_gaussian):
    # U_0(0) = 1.5 log 2pi, U_1(0) = 0.5 log 2pi + 2 (2 + 0.5 log 2pi)
    want = 0.5 * (1.5 * LOG2PI + 1.5 * LOG2PI + 4.0)
    assert eval_mean_potential(two_point_gaussian, np.array([0.0])) == pytest.approx(want,
                                                                                    rel=1e-15)


@pytest.mark.parametrize("model", builtin_models())
def test_mean_is_average_within_8_ulps(model, rng):
    theta = rng.normal(size=(40, model.d))
    avg = np.mean([eval_potential(model, i, theta) for i in range(model.n)], axis=0)
    mean = eval_mean_potential(model, theta)
    assert np.all(np.abs(mean - avg) <= 8 * np.spacing(np.abs(avg)))


def test_mean_potential_even_for_symmetric_data():
    for m in (gaussian_model(np.array([[-1.5], [1.5]])), power_model(np.array([[-1.5], [1.5]]))):
        theta = np.linspace(0, 4, 9)[:, None]
        np.testing.assert_allclose(eval_mean_potential(m, theta), eval_mean_potential(m, -theta),
                                   rtol=1e-15)


@pytest.mark.parametrize("model", builtin_models())
def test_midpoint_convexity(model, rng):
    a = rng.normal(scale=3.0, size=(100, model.d))
    b = rng.normal(scale=3.0, size=(100, model.d))
    for i in range(model.n):
        u = lambda t: eval_potential(model, i, t)  # noqa: E731
        assert np.all(u((a + b) / 2) <= (u(a) + u(b)) / 2 + 1e-10)
    u = lambda t: eval_mean_potential(model, t)  # noqa: E731
    assert np.all(u((a + b) / 2) <= (u(a) + u(b)) / 2 + 1e-10)


def test_concurrent_evaluation_is_reentrant(rng):
    m = builtin_models()[1]
    thetas = [rng.normal(size=(20, 2)) for _ in range(16)]
    serial = [eval_mean_potential(m, t) for t in thetas]
    with ThreadPoolExecutor(4) as pool:
        parallel = list(pool.map(lambda t: eval_mean_potential(m, t), thetas))
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a, b)


# ------------------------------------------------------------ Hessians


def test_hessian_min_eig_quadratic_any_dimension(rng):
    for d in (1, 3, 6):
        V = power_potential(1.0, d)
        theta = rng.normal(size=(5, d))
        np.testing.assert_allclose(hessian_min_eig(V, None, theta), 2.0, rtol=1e-14)


def test_hessian_min_eig_power_three_quarters_at_zero():
    V = power_potential(0.75, 1)
    assert hessian_min_eig(V, None, np.array([[0.0]]))[0] == pytest.approx(1.5, rel=1e-14)
    # finite-difference path agrees to its noise floor
    V_fd = Potential(V.value, V.grad, 1)
    assert hessian_min_eig(V_fd, None, np.array([[0.0]]))[0] == pytest.approx(1.5, rel=1e-6)


def test_hessian_min_eig_quadratic_form_against_dense_eigensolver(rng):
    B = rng.normal(size=(4, 4))
    A = B @ B.T + 0.5 * np.eye(4)
    V = Potential(lambda t: 1 + 0.5 * np.einsum("...i,ij,...j->...", t, A, t),
                  lambda t: t @ A.T, 4)
    # independent oracle: smallest root of the characteristic polynomial
    roots = np.sort(np.roots(np.poly(A)).real)
    got = hessian_min_eig(V, None, rng.normal(size=(3, 4)))
    np.testing.assert_allclose(got, roots[0], rtol=1e-6)


def test_model_hessian_min_eig_gaussian(two_point_gaussian):
    # 1/tau^2 + n/s^2 = 3 for every observation and for the mean
    theta = np.array([[0.3]])
    assert hessian_min_eig(two_point_gaussian, 1, theta)[0] == pytest.approx(3.0)
    assert hessian_min_eig(two_point_gaussian, None, theta)[0] == pytest.approx(3.0)


def test_fd_hessian_rejects_asymmetric_jacobian():
    skew = np.array([[1.0, 5.0], [-5.0, 1.0]])
    with pytest.raises(np.linalg.LinAlgError, match="asymmetric"):
        fd_hessian(lambda t: t @ skew.T, np.array([[0.1, 0.2]]))


# ------------------------------------------------------------ minimiser


def test_find_minimizer_shifted_quadratic():
    b = np.array([1.5, -2.0, 0.25])
    res = find_minimizer(lambda t: 1 + np.sum((t - b) ** 2, axis=-1), lambda t: 2 * (t - b),
                         np.zeros(3), tol=1e-10)
    np.testing.assert_allclose(res.argmin, b, atol=1e-10)
    assert res.min_value == pytest.approx(1.0, abs=1e-15)
    assert res.grad_norm_at_argmin <= 1e-10


def test_find_minimizer_power_from_five():
    V = power_potential(0.75, 1)
    res = find_minimizer(V.value, V.grad, np.array([5.0]), tol=1e-10)
    assert abs(res.argmin[0]) <= 1e-9
    assert res.min_value == pytest.approx(1.0, abs=1e-15)


def test_find_minimizer_matches_conjugate_mode():
    rng = np.random.default_rng(0)
    m = gaussian_model(rng.normal(size=(12, 2)), lik_scale=1.5, prior_mean=[0.5, -1],
                       prior_scale=2.0)
    res = find_minimizer(lambda t: eval_mean_potential(m, t), lambda t: grad_mean_potential(m, t),
                         np.zeros(2), tol=1e-11)
    mean, _ = conjugate_posterior(m)
    np.testing.assert_allclose(res.argmin, mean, atol=1e-10)


def test_find_minimizer_iteration_cap_carries_best():
    V = power_potential(0.75, 2)
    with pytest.raises(NonConvergenceError) as exc:
        find_minimizer(V.value, V.grad, np.array([5.0, 5.0]), tol=1e-12, max_iter=2)
    best = exc.value.best
    assert best.min_value < float(V.value(np.array([5.0, 5.0])))


# ------------------------------------------------------------ normaliser


def test_normalize_gaussian_integral():
    c0 = 0.8
    est = normalize(lambda t: 0.5 * t[..., 0] ** 2 + c0, 1)
    assert est.method == "tensor-quadrature"
    assert est.Z_n == pytest.approx(math.sqrt(2 * math.pi) * math.exp(-c0), rel=1e-10)


def test_normalize_laplace_like():
    est = normalize(lambda t: 1 + np.abs(t[..., 0]), 1, npts=4001)
    # the kink at 0 limits the trapezoid rule to about 1e-5 relative here
    assert est.Z_n == pytest.approx(2 / math.e, rel=2e-5)
    assert abs(est.Z_n - 2 / math.e) <= est.error_estimate


def test_normalize_refinement_stability():
    U = lambda t: 0.5 * np.sum(t * t, axis=-1) + 0.3  # noqa: E731
    a = normalize(U, 2, npts=201)
    b = normalize(U, 2, npts=401)
    assert abs(a.Z_n - b.Z_n) / b.Z_n < 1e-6
    assert abs(a.Z_n - b.Z_n) <= a.error_estimate


def test_normalize_box_too_small_suggests_larger():
    with pytest.raises(DomainTooSmallError) as exc:
        normalize(lambda t: 0.5 * t[..., 0] ** 2, 1, half_width=2.0)
    assert exc.value.suggested_half_width > 2.0


def test_normalize_importance_sampling_three_dims():
    U = lambda t: 0.5 * np.sum(t * t, axis=-1)  # noqa: E731
    est = normalize(U, 3, proposal=(np.zeros(3), 1.5 * np.eye(3)), n_samples=100_000)
    assert est.method == "importance-sampling"
    assert abs(est.Z_n - (2 * math.pi) ** 1.5) <= 4 * est.error_estimate
    with pytest.raises(ValueError):
        normalize(U, 3)


def test_normalize_posterior_conjugate():
    rng = np.random.default_rng(1)
    m = gaussian_model(rng.normal(size=(6, 2)))
    mean, cov = conjugate_posterior(m)
    # Z = exp(-U(mode)) * sqrt(det(2 pi cov)) exactly for a quadratic U
    want = math.exp(-float(eval_mean_potential(m, mean))) * math.sqrt(np.linalg.det(2 * np.pi * cov))
    assert normalize_posterior(m).Z_n == pytest.approx(want, rel=1e-9)


# ------------------------------------------------------------ configs


def test_model_from_dict_kinds_and_strictness():
    g = model_from_dict({"kind": "gaussian", "observations": [[0.0], [2.0]]})
    assert g.n == 2 and g.d == 1 and g.kind == "gaussian"
    p = model_from_dict({"kind": "power", "n": 7, "d": 3, "p": 0.6, "seed": 4})
    assert p.n == 7 and p.d == 3 and p.params["r"] == pytest.approx(0.4 / 0.6)
    same = model_from_dict({"kind": "power", "n": 7, "d": 3, "p": 0.6, "seed": 4})
    np.testing.assert_array_equal(p.X, same.X)
    with pytest.raises(ValueError, match="unknown model keys"):
        model_from_dict({"kind": "gaussian", "n": 2, "colour": "red"})
    with pytest.raises(ValueError, match="unknown model kind"):
        model_from_dict({"kind": "cauchy", "n": 2})


def test_potential_model_is_custom_capable():
    prior = gaussian_prior(1)
    m = PotentialModel(ObservationSet(np.array([[1.0]])), prior,
                       lambda t, x: 1 + np.sum((t - x) ** 2, axis=-1),
                       lambda t, x: 2 * (t - x), 1)
    assert m.kind == "custom"
    assert eval_potential(m, 0, np.array([1.0])) == pytest.approx(prior.min_value + 0.5 + 1.0)
