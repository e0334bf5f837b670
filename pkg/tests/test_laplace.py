"""Laplace fit of the logistic posterior and WDBC ingestion."""
import numpy as np
import pytest
from scipy.optimize import minimize

from app.models import LogisticPosterior
from app.schemas import ModelConfigError
from app.services.laplace_service import LaplaceFitError, fit_laplace
from app.services.wdbc_loader import WDBC_ROWS, load_wdbc


def _synthetic(rng, n=200, d=3):
    x = rng.standard_normal((n, d))
    design = np.hstack([np.ones((n, 1)), x])
    beta = np.array([0.3, 1.0, -0.5, 0.0])[: d + 1]
    p = 1.0 / (1.0 + np.exp(-design @ beta))
    return design, (rng.random(n) < p).astype(float)


def test_empty_design_returns_prior():
    post = LogisticPosterior(np.zeros((0, 3)), np.zeros(0))
    fit = fit_laplace(post)
    np.testing.assert_array_equal(fit.mode, np.zeros(3))
    np.testing.assert_allclose(fit.covariance, 20.0 * np.eye(3), rtol=1e-12)


def test_symmetric_data_gives_zero_intercept():
    design = np.array([[1.0, 1.0]] * 3 + [[1.0, -1.0]] * 3)
    labels = np.array([1.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    fit = fit_laplace(LogisticPosterior(design, labels))
    assert fit.mode[0] == pytest.approx(0.0, abs=1e-8)
    assert fit.mode[1] > 0


def test_mode_is_stationary_and_covariance_spd(rng):
    design, labels = _synthetic(rng)
    post = LogisticPosterior(design, labels)
    fit = fit_laplace(post, tol=1e-10)
    assert np.max(np.abs(post.gradient(fit.mode))) <= 1e-10
    np.testing.assert_allclose(fit.covariance, fit.covariance.T, atol=1e-10)
    np.linalg.cholesky(-post.hessian(fit.mode))
    np.linalg.cholesky(fit.covariance)


def test_mode_agrees_with_independent_optimiser(rng):
    design, labels = _synthetic(rng)
    post = LogisticPosterior(design, labels)
    fit = fit_laplace(post)
    res = minimize(lambda x: -post.log_posterior(x), np.zeros(post.dim), jac=lambda x: -post.gradient(x), method="BFGS", options={"gtol": 1e-9})
    assert post.log_posterior(fit.mode) == pytest.approx(-res.fun, abs=1e-6)


def test_non_convergence_reports_gradient(rng):
    design, labels = _synthetic(rng)
    with pytest.raises(LaplaceFitError) as exc:
        fit_laplace(LogisticPosterior(design, labels), max_iter=0)
    assert exc.value.grad_norm > 0
    assert "gradient" in str(exc.value)


def test_bad_labels_rejected():
    with pytest.raises(ValueError):
        LogisticPosterior(np.ones((2, 1)), np.array([0.0, 2.0]))


def _write_wdbc(path, rng, rows=WDBC_ROWS, code="M"):
    lines = []
    for i in range(rows):
        diag = code if i % 3 == 0 else "B"
        values = ",".join(f"{v:.5f}" for v in rng.normal(10.0, 2.0, 30))
        lines.append(f"{842302 + i},{diag},{values}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_load_wdbc_standardises(tmp_path, rng):
    data = load_wdbc(_write_wdbc(tmp_path / "wdbc.data", rng))
    assert data.design.shape == (WDBC_ROWS, 31)
    np.testing.assert_array_equal(data.design[:, 0], 1.0)
    np.testing.assert_allclose(data.design[:, 1:].mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(data.design[:, 1:].std(axis=0), 1.0, rtol=1e-10)
    assert data.labels.sum() == len(range(0, WDBC_ROWS, 3))
    assert data.metadata()["standardised"] is True


def test_load_wdbc_row_count_checked(tmp_path, rng):
    with pytest.raises(ModelConfigError, match="expected 569 rows"):
        load_wdbc(_write_wdbc(tmp_path / "wdbc.data", rng, rows=100))


def test_load_wdbc_unknown_code(tmp_path, rng):
    with pytest.raises(ModelConfigError, match="diagnosis"):
        load_wdbc(_write_wdbc(tmp_path / "wdbc.data", rng, code="X"))


def test_load_wdbc_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_wdbc(tmp_path / "nope.data")
