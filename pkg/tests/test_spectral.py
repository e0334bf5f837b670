"""Asymptotic variance of reversible finite chains."""
import numpy as np
import pytest

from app.services.spectral_service import (
    ReversibilityError,
    SpectralError,
    asvar_batch,
    asvar_crosscheck,
    check_reversible,
    fundamental_asvar,
    lag_one_covariance,
    lazy_chain_asvar,
    spectral_asvar,
)

PI = np.array([0.1, 0.2, 0.3, 0.4])
F = np.array([1.0, -2.0, 0.5, 3.0])


def _var(pi, f):
    return float(pi @ (f - pi @ f) ** 2)


def _lazy(pi, eps):
    return eps * np.eye(pi.shape[0]) + (1.0 - eps) * np.ones((pi.shape[0], 1)) * pi[None, :]


def test_perfect_sampler_gives_variance():
    p = _lazy(PI, 0.0)
    assert spectral_asvar(PI, p, F) == pytest.approx(_var(PI, F), rel=1e-12)


@pytest.mark.parametrize("eps", [0.1, 0.5, 0.9])
def test_lazy_chain_closed_form(eps):
    expected = lazy_chain_asvar(eps, _var(PI, F))
    assert spectral_asvar(PI, _lazy(PI, eps), F) == pytest.approx(expected, rel=1e-10)
    assert fundamental_asvar(PI, _lazy(PI, eps), F) == pytest.approx(expected, rel=1e-10)


def test_two_state_three_proposals_variance():
    pi = np.array([0.3, 0.7])
    p2 = np.array([[0.65, 0.35], [0.15, 0.85]])
    f = np.array([1.0, 2.0])
    # второе собственное число 0.5
    assert spectral_asvar(pi, p2, f) == pytest.approx(3.0 * _var(pi, f), rel=1e-12)


def test_crosscheck_on_stack(exp1_stack, exp1_model):
    f = exp1_model.states
    for n in (2, 5, 17):
        v = asvar_crosscheck(exp1_model.pi, exp1_stack.matrix(n), f)
        assert v > _var(exp1_model.pi, f)


def test_non_reversible_rejected():
    cycle = np.roll(np.eye(3), 1, axis=1)
    with pytest.raises(ReversibilityError, match="detailed balance"):
        spectral_asvar(np.full(3, 1 / 3), cycle, np.array([0.0, 1.0, 2.0]))


def test_non_stochastic_rejected():
    with pytest.raises(ReversibilityError, match="row-stochastic"):
        check_reversible(PI, 0.9 * np.eye(4))


def test_non_ergodic_chain():
    with pytest.raises(SpectralError):
        spectral_asvar(PI, np.eye(4), F)


def test_lazy_chain_asvar_domain():
    with pytest.raises(ValueError):
        lazy_chain_asvar(1.0, 1.0)


def test_batch_matches_scalar(exp1_stack, exp1_model):
    pi = exp1_model.pi
    fs = {"f": exp1_model.states, "sq": exp1_model.states**2}
    mats = exp1_stack.matrices[1:8]
    out = asvar_batch(pi, mats, fs)
    for name, f in fs.items():
        expected = [spectral_asvar(pi, m, f) for m in mats]
        np.testing.assert_allclose(out[name], expected, rtol=1e-10)


def test_lag_one_covariance_lazy():
    fbar = (F - PI @ F) / np.sqrt(_var(PI, F))
    assert lag_one_covariance(PI, _lazy(PI, 0.3), fbar) == pytest.approx(0.3, rel=1e-12)
