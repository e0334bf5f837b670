"""Laplace approximation of the logistic posterior: damped Newton with step halving."""
import logging

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from app.config import settings
from app.models import LaplaceApproximation, LogisticPosterior

logger = logging.getLogger(__name__)

MAX_HALVINGS = 50


class LaplaceFitError(RuntimeError):
    def __init__(self, message: str, grad_norm: float):
        super().__init__(f"{message} (last gradient sup-norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


def _neg_hessian_factor(posterior: LogisticPosterior, x: np.ndarray, grad_norm: float):
    try:
        return cho_factor(-posterior.hessian(x), lower=True)
    except LinAlgError as e:
        raise LaplaceFitError("negative Hessian is not positive definite", grad_norm) from e


def fit_laplace(
    posterior: LogisticPosterior,
    init: np.ndarray | None = None,
    tol: float | None = None,
    max_iter: int | None = None,
) -> LaplaceApproximation:
    """Mode mu with ||grad||_inf <= tol, covariance (-H(mu))^{-1}."""
    tol = settings.laplace_tol if tol is None else tol
    max_iter = settings.laplace_max_iter if max_iter is None else max_iter
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    x = np.zeros(posterior.dim) if init is None else np.asarray(init, dtype=float).copy()
    value = posterior.log_posterior(x)
    grad = posterior.gradient(x)
    gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0

    it = 0
    while gnorm > tol:
        if it >= max_iter:
            raise LaplaceFitError(f"Newton did not converge in {max_iter} iterations", gnorm)
        it += 1
        factor = _neg_hessian_factor(posterior, x, gnorm)
        step = cho_solve(factor, grad)
        t = 1.0
        for _ in range(MAX_HALVINGS):
            cand = x + t * step
            cand_value = posterior.log_posterior(cand)
            if cand_value >= value:
                break
            t *= 0.5
        else:
            raise LaplaceFitError("step halving failed to increase the log posterior", gnorm)
        x, value = cand, cand_value
        grad = posterior.gradient(x)
        gnorm = float(np.max(np.abs(grad)))
        logger.debug("newton iter %d: log post %.6f, |grad|_inf %.3e, step %.3g", it, value, gnorm, t)

    factor = _neg_hessian_factor(posterior, x, gnorm)
    cov = cho_solve(factor, np.eye(posterior.dim))
    cov = 0.5 * (cov + cov.T)
    logger.info("Laplace fit: %d Newton iterations, log posterior %.6f", it, value)
    return LaplaceApproximation(mode=x, covariance=cov, grad_norm=gnorm, iterations=it)
