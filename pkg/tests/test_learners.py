import numpy as np
import pytest
from scipy.optimize import minimize

from tmlescreen.errors import DimensionMismatch, InvalidK, RankDeficientError, SeparationError
from tmlescreen.learners import (
    Design,
    LEARNER_REGISTRY,
    expit,
    fit_intercept,
    fit_knn,
    fit_logistic,
    fit_ols,
    fit_ridge,
    predict,
    resolve_library,
)

FOUR_POINTS_X = np.array([[0.0], [1.0], [2.0], [3.0]])
FOUR_POINTS_Y = np.array([1.0, 3.0, 5.0, 8.0])


def design(x, y):
    return Design(features=np.asarray(x, dtype=float), response=np.asarray(y, dtype=float))


# -- OLS -----------------------------------------------------------------------

def test_ols_exact_linear_data():
    x = np.arange(6, dtype=float)[:, None]
    model = fit_ols(design(x, 2.0 * x[:, 0]))
    np.testing.assert_allclose(model.coef, [0.0, 2.0], atol=1e-12)


def test_ols_constant_response():
    x = np.array([[0.3], [1.2], [-0.7], [2.2]])
    model = fit_ols(design(x, np.full(4, 4.5)))
    np.testing.assert_allclose(model.coef, [4.5, 0.0], atol=1e-12)


def test_ols_matches_normal_equations_oracle():
    # oracle: solve X'X beta = X'y directly
    x1 = np.column_stack([np.ones(4), FOUR_POINTS_X[:, 0]])
    oracle = np.linalg.solve(x1.T @ x1, x1.T @ FOUR_POINTS_Y)
    model = fit_ols(design(FOUR_POINTS_X, FOUR_POINTS_Y))
    np.testing.assert_allclose(model.coef, oracle, atol=1e-10)


def test_ols_rank_deficient_raises_unless_configured():
    x = np.column_stack([np.arange(5.0), 2.0 * np.arange(5.0)])
    y = np.arange(5.0)
    with pytest.raises(RankDeficientError):
        fit_ols(design(x, y))
    model = fit_ols(design(x, y), allow_rank_deficient=True)
    np.testing.assert_allclose(predict(model, x), y, atol=1e-10)


def test_ols_residuals_orthogonal_to_design():
    rng = np.random.default_rng(1)
    for trial in range(5):
        x = rng.standard_normal((30, 4))
        y = rng.standard_normal(30)
        model = fit_ols(design(x, y))
        resid = y - predict(model, x)
        x1 = np.column_stack([np.ones(30), x])
        assert np.abs(x1.T @ resid).max() < 1e-8


# -- ridge ---------------------------------------------------------------------

def test_ridge_zero_lambda_equals_ols():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((20, 3))
    y = rng.standard_normal(20)
    np.testing.assert_allclose(fit_ridge(design(x, y), 0.0).coef,
                               fit_ols(design(x, y)).coef, atol=1e-12)


def test_ridge_total_shrinkage_limit():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((25, 2))
    y = rng.standard_normal(25) + 3.0
    model = fit_ridge(design(x, y), 1e12)
    assert np.abs(model.coef[1:]).max() < 1e-6
    assert abs(model.coef[0] - y.mean()) < 1e-3


def test_ridge_matches_closed_form_oracle():
    # oracle: (X'X + lam * diag(0, 1, ...))^{-1} X'y with unpenalized intercept
    lam = 1.0
    x1 = np.column_stack([np.ones(4), FOUR_POINTS_X[:, 0]])
    penalty = lam * np.diag([0.0, 1.0])
    oracle = np.linalg.solve(x1.T @ x1 + penalty, x1.T @ FOUR_POINTS_Y)
    model = fit_ridge(design(FOUR_POINTS_X, FOUR_POINTS_Y), lam)
    np.testing.assert_allclose(model.coef, oracle, atol=1e-10)


def test_ridge_coefficient_norm_nonincreasing_in_lambda():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((40, 3))
    y = x @ np.array([1.0, -2.0, 0.5]) + rng.standard_normal(40)
    norms = [np.linalg.norm(fit_ridge(design(x, y), lam).coef[1:])
             for lam in (0.0, 0.01, 0.1, 1.0, 10.0, 100.0)]
    assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))


# -- knn -----------------------------------------------------------------------

def test_knn_full_k_predicts_mean():
    x = np.array([[0.0], [1.0], [2.0], [5.0]])
    y = np.array([1.0, 2.0, 3.0, 10.0])
    model = fit_knn(design(x, y), k=4)
    np.testing.assert_allclose(predict(model, x), np.full(4, y.mean()))


def test_knn_k1_recovers_training_point():
    x = np.array([[0.0], [1.0], [2.0]])
    y = np.array([5.0, 7.0, 9.0])
    model = fit_knn(design(x, y), k=1)
    np.testing.assert_allclose(predict(model, np.array([[1.0]])), [7.0])


def test_knn_matches_brute_force_oracle():
    x = np.array([[0.0], [1.0], [2.0]])
    y = np.array([3.0, 6.0, 9.0])
    model = fit_knn(design(x, y), k=2)
    queries = np.array([[0.2], [1.5], [3.0]])
    expected = []
    for q in queries[:, 0]:
        d = np.abs(x[:, 0] - q)
        nearest = np.lexsort((np.arange(3), d))[:2]
        expected.append(y[nearest].mean())
    np.testing.assert_allclose(predict(model, queries), expected)


def test_knn_tie_breaks_to_lowest_index():
    # query 1.0 is equidistant from 0.0 and 2.0; index order keeps 0 first
    x = np.array([[0.0], [2.0], [1.0]])
    y = np.array([10.0, 20.0, 99.0])
    model = fit_knn(design(x, y), k=2)
    # nearest: exact hit (index 2), then tie between 0 and 1 -> index 0
    np.testing.assert_allclose(predict(model, np.array([[1.0]])), [(99.0 + 10.0) / 2])


def test_knn_invalid_k():
    x = np.zeros((3, 1))
    with pytest.raises(InvalidK):
        fit_knn(design(x, np.arange(3.0)), k=4)
    with pytest.raises(InvalidK):
        fit_knn(design(x, np.arange(3.0)), k=0)


# -- logistic ------------------------------------------------------------------

def test_logistic_intercept_only_gives_mean():
    y = np.array([1.0, 0.0, 0.0, 1.0, 0.0])
    model = fit_logistic(Design(features=np.empty((5, 0)), response=y))
    np.testing.assert_allclose(predict(model, np.empty((5, 0))), np.full(5, 0.4), atol=1e-8)


def test_logistic_perfect_separation_raises():
    x = np.array([[0.0], [0.0], [1.0], [1.0], [0.0], [1.0]])
    with pytest.raises(SeparationError):
        fit_logistic(design(x, x[:, 0]))


def test_logistic_matches_direct_likelihood_oracle():
    x = np.array([[-1.5], [-0.8], [-0.1], [0.4], [1.1], [2.0]])
    y = np.array([0.0, 0.0, 1.0, 0.0, 1.0, 1.0])

    def nll(beta):
        eta = beta[0] + beta[1] * x[:, 0]
        return np.sum(np.logaddexp(0.0, eta) - y * eta)

    oracle = minimize(nll, x0=np.zeros(2), method="Nelder-Mead",
                      options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 10000}).x
    model = fit_logistic(design(x, y))
    np.testing.assert_allclose(model.coef, oracle, atol=1e-6)


def test_logistic_score_equation_holds():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((80, 3))
    p = expit(x @ np.array([0.5, -0.3, 0.2]) - 0.1)
    y = (rng.random(80) < p).astype(float)
    model = fit_logistic(design(x, y))
    x1 = np.column_stack([np.ones(80), x])
    score = x1.T @ (y - predict(model, x))
    assert np.abs(score).max() < 1e-6


# -- predict -------------------------------------------------------------------

def test_predict_intercept_constant():
    model = fit_intercept(design(np.zeros((3, 2)), np.array([1.0, 2.0, 3.0])))
    np.testing.assert_allclose(predict(model, np.ones((5, 2))), np.full(5, 2.0))


def test_predict_slope_two():
    x = np.arange(5, dtype=float)[:, None]
    model = fit_ols(design(x, 2.0 * x[:, 0]))
    np.testing.assert_allclose(predict(model, np.array([[3.0]])), [6.0], atol=1e-12)


def test_predict_logistic_zero_coefficients():
    x = np.array([[0.4], [0.5], [0.6]])
    y = np.array([0.0, 1.0, 0.0])
    model = fit_logistic(design(x, y))
    zeroed = type(model)(kind="logistic", d=1, n=3, coef=np.zeros(2))
    np.testing.assert_allclose(predict(zeroed, x), np.full(3, 0.5))


def test_predict_dimension_mismatch():
    model = fit_ols(design(np.arange(4.0)[:, None], np.arange(4.0)))
    with pytest.raises(DimensionMismatch):
        predict(model, np.zeros((2, 3)))


def test_predict_clamps_logistic_probabilities():
    model = fit_intercept(design(np.zeros((2, 1)), np.array([0.0, 0.0])))
    extreme = type(model)(kind="logistic", d=1, n=2, coef=np.array([100.0, 0.0]))
    p = predict(extreme, np.zeros((1, 1)))
    assert p[0] <= 1.0 - 1e-12


def test_fit_predict_invariant_under_row_permutation():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((30, 2))
    y = rng.standard_normal(30)
    perm = rng.permutation(30)
    for fit in (fit_ols, lambda d: fit_ridge(d, 0.5)):
        direct = predict(fit(design(x, y)), x)
        permuted = predict(fit(design(x[perm], y[perm])), x[perm])
        np.testing.assert_allclose(permuted, direct[perm], atol=1e-10)


def test_registry_resolution():
    lib = resolve_library(["ols", "knn_5"])
    assert [spec.name for spec in lib] == ["ols", "knn_5"]
    assert LEARNER_REGISTRY["ridge_1"].standardize
    with pytest.raises(KeyError):
        resolve_library(["boosting"])
