import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from matchcal.errors import FitError, ParameterError, RankError
from matchcal.regress import check_rank, logistic_irls, solve_normal, weighted_deviance, weighted_ls


def test_wls_intercept_only_is_weighted_mean():
    y = np.array([1.0, 4.0, 7.0])
    fit = weighted_ls(np.ones(3), y, np.ones(3))
    assert fit.coefficients[0] == pytest.approx(4.0)
    assert fit.residuals.sum() == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("w", [[1, 1, 1], [0.2, 5, 3], [10, 1, 0.01]])
def test_wls_exact_line(w):
    x = np.column_stack([np.ones(3), [1.0, 2.0, 3.0]])
    fit = weighted_ls(x, np.array([1.0, 2.0, 3.0]), np.array(w, dtype=float))
    np.testing.assert_allclose(fit.coefficients, [0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(fit.residuals, 0.0, atol=1e-12)


def test_wls_five_point_hand_oracle():
    xv = np.array([1.0, 2.0, 4.0, 5.0, 8.0])
    y = np.array([1.2, 1.9, 3.1, 3.8, 6.5])
    pi = np.array([0.5, 0.25, 0.2, 0.4, 0.1])
    s2 = np.array([1.0, 2.0, 1.0, 0.5, 4.0])
    w = 1 / (pi * s2)
    # 2x2 normal equations solved by Cramer's rule
    s0, s1, s11 = w.sum(), (w * xv).sum(), (w * xv * xv).sum()
    t0, t1 = (w * y).sum(), (w * xv * y).sum()
    det = s0 * s11 - s1 * s1
    expected = np.array([(t0 * s11 - s1 * t1) / det, (s0 * t1 - s1 * t0) / det])
    fit = weighted_ls(np.column_stack([np.ones(5), xv]), y, w)
    np.testing.assert_allclose(fit.coefficients, expected, rtol=1e-10)
    np.testing.assert_allclose(fit.info_matrix, [[s0, s1], [s1, s11]], rtol=1e-12)


def test_wls_rank_error_names_pivot():
    x = np.column_stack([np.ones(4), [1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0]])
    with pytest.raises(RankError) as info:
        weighted_ls(x, np.arange(4.0), np.ones(4))
    assert info.value.pivot in (1, 2)
    assert "column" in str(info.value)


def test_zero_column_rank_error():
    with pytest.raises(RankError) as info:
        check_rank(np.column_stack([np.ones(3), np.zeros(3)]))
    assert info.value.pivot == 1


def test_wls_rejects_nonpositive_weights():
    with pytest.raises(ParameterError):
        weighted_ls(np.ones(3), np.ones(3), np.array([1.0, 0.0, 1.0]))


@given(
    arrays(float, (12, 2), elements=st.floats(-5, 5)),
    arrays(float, 12, elements=st.floats(-5, 5)),
    arrays(float, 12, elements=st.floats(0.1, 10)),
)
def test_wls_normal_equations_and_reparameterization(xr, y, w):
    x = np.column_stack([np.ones(12), xr])
    try:
        fit = weighted_ls(x, y, w)
    except RankError:
        return
    if np.linalg.cond((x * w[:, None]).T @ x) > 1e8:
        return
    grad = x.T @ (w * fit.residuals)
    scale = np.abs(x).T @ (w * (np.abs(y) + 1))
    assert np.all(np.abs(grad) <= 1e-8 * scale)
    t = np.array([[1.0, 0.5, -1.0], [0.0, 2.0, 0.3], [0.0, 0.0, -1.5]])
    fit2 = weighted_ls(x @ t, y, w)
    np.testing.assert_allclose(fit2.predict(x @ t), fit.predict(x), atol=1e-7 * (1 + np.abs(y).max()))


def test_solve_normal_signed_weights_matches_dense():
    rng = np.random.default_rng(0)
    x = np.column_stack([np.ones(8), rng.normal(size=8)])
    w = rng.normal(size=8) + 2.5
    w[0] = -0.5
    rhs = np.array([1.0, -2.0])
    a = (x * w[:, None]).T @ x
    np.testing.assert_allclose(solve_normal(x, w, rhs), np.linalg.solve(a, rhs), rtol=1e-10)


def test_logistic_intercept_half():
    fit = logistic_irls(np.ones((10, 1)), np.r_[np.ones(5), np.zeros(5)])
    assert fit.converged
    assert fit.coefficients[0] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(fit.fitted_probs, 0.5)


def test_logistic_intercept_weighted_quarter():
    label = np.array([1.0, 0.0, 0.0])
    w = np.array([1.0, 1.0, 2.0])
    fit = logistic_irls(np.ones((3, 1)), label, w)
    assert fit.coefficients[0] == pytest.approx(np.log(0.25 / 0.75), abs=1e-10)


def _newton_oracle(x, label, w, iters=200):
    # plain gradient/Hessian Newton with a fixed 0.5 damping factor
    b = np.zeros(x.shape[1])
    for _ in range(iters):
        p = 1 / (1 + np.exp(-x @ b))
        grad = x.T @ (w * (label - p))
        hess = (x * (w * p * (1 - p))[:, None]).T @ x
        b = b + 0.5 * np.linalg.solve(hess, grad)
    return b


@pytest.fixture
def logistic_fixture():
    rng = np.random.default_rng(20)
    xv = rng.normal(size=20)
    label = (rng.random(20) < 1 / (1 + np.exp(-(0.3 + 1.1 * xv)))).astype(float)
    w = rng.uniform(0.5, 3.0, size=20)
    return np.column_stack([np.ones(20), xv]), label, w


def test_logistic_matches_independent_newton(logistic_fixture):
    x, label, w = logistic_fixture
    fit = logistic_irls(x, label, w)
    np.testing.assert_allclose(fit.coefficients, _newton_oracle(x, label, w), atol=1e-6)
    score = x.T @ (w * (label - fit.fitted_probs))
    assert np.max(np.abs(score)) < 1e-6


def test_logistic_deviance_non_increasing(logistic_fixture):
    fit = logistic_irls(*logistic_fixture)
    hist = np.array(fit.deviance_history)
    assert np.all(np.diff(hist) <= 1e-9 * hist[0])


def test_logistic_gradient_matches_finite_difference(logistic_fixture):
    x, label, w = logistic_fixture
    b = np.array([0.2, -0.4])  # away from the optimum so the gradient is sizeable
    p = 1 / (1 + np.exp(-x @ b))
    analytic = x.T @ (w * (label - p))
    h = 1e-6
    numeric = np.array([
        -(weighted_deviance(x, label, w, b + h * e) - weighted_deviance(x, label, w, b - h * e)) / (4 * h)
        for e in np.eye(2)
    ])
    np.testing.assert_allclose(numeric, analytic, rtol=1e-4)


def test_logistic_single_class_fails():
    with pytest.raises(FitError):
        logistic_irls(np.ones((4, 1)), np.ones(4))


def test_logistic_separation_flagged_or_fails():
    x = np.column_stack([np.ones(6), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]])
    label = np.array([0, 0, 0, 1, 1, 1.0])
    try:
        fit = logistic_irls(x, label)
    except FitError as exc:
        assert "deviance" in exc.diagnostics
    else:
        assert fit.quasi_separation


def test_logistic_bad_labels():
    with pytest.raises(ParameterError):
        logistic_irls(np.ones((3, 1)), np.array([0, 1, 2.0]))
