"""Asymptotic variance of reversible finite-state chains.

For pi-reversible P the matrix S = Pi^{1/2} P Pi^{-1/2} is symmetric; with its
orthonormal eigenpairs (l_i, v_i) and c_i = v_i . (sqrt(pi) * fbar),

    var(P, f) = sum_{i != Perron} c_i^2 (1 + l_i) / (1 - l_i).
"""
from __future__ import annotations

import logging
from collections.abc import Mapping

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

BALANCE_TOL = 1e-10
ROW_TOL = 1e-10
SYMMETRY_TOL = 1e-11
PERRON_GAP = 1e-12
GRID_CHUNK = 1024


class ReversibilityError(ValueError):
    pass


class SpectralError(RuntimeError):
    pass


def check_reversible(pi: np.ndarray, p: np.ndarray, tol: float = BALANCE_TOL) -> float:
    rows = np.max(np.abs(p.sum(axis=-1) - 1.0))
    if rows > ROW_TOL:
        raise ReversibilityError(f"matrix is not row-stochastic (max row-sum error {rows:.2e})")
    f = pi[:, None] * p
    resid = float(np.max(np.abs(f - f.T)))
    if resid > tol:
        raise ReversibilityError(f"detailed balance residual {resid:.2e} above {tol:.0e}")
    return resid


def symmetrised_kernel(pi: np.ndarray, p: np.ndarray) -> np.ndarray:
    root = np.sqrt(pi)
    s = root[..., :, None] * p / root[..., None, :]
    asym = np.sqrt(np.sum((s - np.swapaxes(s, -1, -2)) ** 2, axis=(-2, -1)))
    if np.any(asym > SYMMETRY_TOL * max(1.0, float(np.sqrt(p.shape[-1])))):
        raise ReversibilityError(f"Pi^(1/2) P Pi^(-1/2) asymmetry {float(np.max(asym)):.2e}")
    return 0.5 * (s + np.swapaxes(s, -1, -2))


def _variance_from_spectrum(evals: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Batched sum over non-Perron eigenpairs; evals ascending, Perron root last."""
    body = evals[..., :-1]
    if np.any(body >= 1.0 - PERRON_GAP):
        raise SpectralError(f"second eigenvalue {float(np.max(body)):.15f} too close to 1 (chain not ergodic)")
    return np.sum(coef[..., :-1] ** 2 * (1.0 + body) / (1.0 - body), axis=-1)


def spectral_asvar(pi: np.ndarray, p: np.ndarray, f: np.ndarray, check: bool = True) -> float:
    pi = np.asarray(pi, dtype=float)
    f = np.asarray(f, dtype=float)
    if check:
        check_reversible(pi, p)
    s = symmetrised_kernel(pi, p)
    evals, evecs = linalg.eigh(s)
    fbar = f - pi @ f
    coef = evecs.T @ (np.sqrt(pi) * fbar)
    return float(_variance_from_spectrum(evals, coef))


def fundamental_asvar(pi: np.ndarray, p: np.ndarray, f: np.ndarray) -> float:
    """Poisson-equation route: (I - P + 1 pi^T) h = fbar, var = 2<fbar, h> - <fbar, fbar>."""
    pi = np.asarray(pi, dtype=float)
    fbar = np.asarray(f, dtype=float) - pi @ f
    n = pi.shape[0]
    h = linalg.solve(np.eye(n) - p + np.outer(np.ones(n), pi), fbar)
    return float(2.0 * pi @ (fbar * h) - pi @ (fbar * fbar))


def asvar_crosscheck(pi: np.ndarray, p: np.ndarray, f: np.ndarray, tol: float = 1e-8) -> float:
    a = spectral_asvar(pi, p, f)
    b = fundamental_asvar(pi, p, f)
    if abs(a - b) > tol * max(1.0, abs(a)):
        raise SpectralError(f"spectral ({a:.12g}) and fundamental-matrix ({b:.12g}) variances disagree")
    return a


def lazy_chain_asvar(eps: float, var: float) -> float:
    """Hold with probability eps, else draw from pi: var (1 + eps)/(1 - eps)."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"holding probability must lie in [0, 1), got {eps}")
    return var * (1.0 + eps) / (1.0 - eps)


def asvar_batch(pi: np.ndarray, matrices: np.ndarray, fs: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """var(P_b, f) for a stack of pi-reversible matrices and several f, one eigh per matrix."""
    s = symmetrised_kernel(pi, matrices)
    evals, evecs = np.linalg.eigh(s)
    root = np.sqrt(pi)
    out = {}
    for name, f in fs.items():
        fbar = root * (f - pi @ f)
        coef = np.einsum("bij,i->bj", evecs, fbar)
        out[name] = _variance_from_spectrum(evals, coef)
    return out


def asvar_grid(stack, lambdas: np.ndarray, fs: Mapping[str, np.ndarray], chunk: int = GRID_CHUNK) -> dict[str, np.ndarray]:
    """V_f(lambda) from interpolated matrices, chunked over the grid."""
    pi = stack.model.pi
    for n in range(2, stack.n_top + 1):
        check_reversible(pi, stack.matrix(n))
    lambdas = np.asarray(lambdas, dtype=float)
    floors = np.floor(lambdas).astype(int)
    betas = floors + 1 - lambdas
    out = {name: np.empty(lambdas.shape[0]) for name in fs}
    for start in range(0, lambdas.shape[0], chunk):
        sl = slice(start, start + chunk)
        lo = floors[sl]
        hi = np.minimum(lo + 1, stack.n_top)
        b = betas[sl][:, None, None]
        mats = b * stack.matrices[lo - 1] + (1.0 - b) * stack.matrices[hi - 1]
        part = asvar_batch(pi, mats, fs)
        for name in fs:
            out[name][sl] = part[name]
    return out


def lag_one_covariance(pi: np.ndarray, p: np.ndarray, f: np.ndarray) -> float:
    """<f | P f>_pi."""
    return float(pi @ (f * (p @ f)))
