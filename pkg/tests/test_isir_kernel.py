"""i-SIR kernel: integer and fractional steps, estimators, traces."""
import math

import numpy as np
import pytest

from app.config import settings
from app.models import DiscreteMass, LogModel, build_gaussian_t_model, build_mixture_model
from app.services.analysis_service import rejection_curve
from app.services.diagnostics import initial_sequence_iact
from app.services.discrete_model import discrete_log_model, pi_equals_q_model, random_model
from app.services.isir_kernel import (
    InitialisationError,
    ProposalBatch,
    ZeroWeightBatchError,
    fractional_counts,
    isir_step,
    isir_step_fractional,
    rejection_estimates,
    run_chain,
    select_index,
)
from app.services.rng import RandomStreams
from app.services.transition_service import exact_transition_matrix


@pytest.mark.parametrize(
    "lam,nbar,beta",
    [(1.0, 2, 1.0), (2.5, 3, 0.5), (3.0, 4, 1.0), (7.25, 8, 0.75)],
)
def test_fractional_counts(lam, nbar, beta):
    assert fractional_counts(lam) == (nbar, pytest.approx(beta))


@pytest.mark.parametrize("lam", [0.5, math.inf, math.nan])
def test_fractional_counts_rejects(lam):
    with pytest.raises(ValueError):
        fractional_counts(lam)


def test_n_equals_one_keeps_state(normal_t):
    model = normal_t
    x = np.array([0.7])
    for k in range(1, 20):
        y, i = isir_step(model, x, 1, RandomStreams(3), k)
        assert i == 1
        np.testing.assert_array_equal(y, x)


def test_lambda_one_rejects_with_certainty():
    model = build_mixture_model()
    rec = isir_step_fractional(model, np.zeros(7), 1.0, RandomStreams(5), 1)
    assert rec.accepted_index == 1
    assert rec.eps_hat == pytest.approx(1.0)
    assert rec.deps_hat <= 0


def test_pi_equals_q_index_uniform():
    model = discrete_log_model(pi_equals_q_model([1, 2, 3], [0.2, 0.3, 0.5]))
    n, steps = 4, 20_000
    trace = run_chain(model, 0, float(n), steps, 11)
    freq = np.mean(trace.accepted_index == 1)
    se = math.sqrt((1 / n) * (1 - 1 / n) / steps)
    assert abs(freq - 1 / n) < 3 * se
    assert set(np.unique(trace.accepted_index)) == {1, 2, 3, 4}


def test_pi_equals_q_fractional_eps_is_b():
    model = discrete_log_model(pi_equals_q_model([1, 2, 3], [0.2, 0.3, 0.5]))
    trace = run_chain(model, 0, 2.5, 500, 2)
    np.testing.assert_allclose(trace.eps_hat, 5 / 12, rtol=1e-12)
    np.testing.assert_allclose(trace.deps_hat, 1 / 3 - 1 / 2, rtol=1e-12)


def test_two_state_transition_frequencies(two_state):
    model = discrete_log_model(two_state)
    steps = 20_000
    trace = run_chain(model, 0, 2.0, steps, 17, keep_states=True)
    states = np.concatenate([[0], trace.states])
    p2 = exact_transition_matrix(two_state, 2)
    np.testing.assert_allclose(p2, [[0.65, 0.35], [0.15, 0.85]], atol=1e-12)
    for i in range(2):
        frm = states[:-1] == i
        moves = np.mean(states[1:][frm] != i)
        expected = p2[i, 1 - i]
        se = math.sqrt(expected * (1 - expected) / frm.sum())
        assert abs(moves - expected) < 4 * se


def test_run_chain_empty():
    trace = run_chain(build_gaussian_t_model(), np.array([0.0]), 3.0, 0, 1)
    assert len(trace) == 0
    assert list(trace.rows()) == []


def test_run_chain_deterministic():
    model = build_mixture_model()
    a = run_chain(model, None, 4.5, 300, 42, keep_states=True)
    b = run_chain(model, None, 4.5, 300, 42, keep_states=True)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.eps_hat, b.eps_hat)
    np.testing.assert_array_equal(a.accepted_index, b.accepted_index)
    c = run_chain(model, None, 4.5, 300, 43, keep_states=True)
    assert not np.array_equal(a.states, c.states)


def test_trace_independent_of_worker_count(monkeypatch):
    monkeypatch.setattr(settings, "proposal_block", 4)
    model = build_mixture_model()
    serial = run_chain(model, None, 19.0, 60, 8, workers=1, keep_states=True)
    threaded = run_chain(model, None, 19.0, 60, 8, workers=3, keep_states=True)
    np.testing.assert_array_equal(serial.states, threaded.states)
    np.testing.assert_array_equal(serial.eps_hat, threaded.eps_hat)


def test_rejection_identity_continuous():
    model = build_mixture_model()
    x0 = np.zeros(7)
    trace = run_chain(model, x0, 3.7, 500, 9, keep_states=True)
    prev = np.vstack([x0, trace.states[:-1]])
    unchanged = np.all(trace.states == prev, axis=1)
    np.testing.assert_array_equal(unchanged, trace.accepted_index == 1)


def test_estimator_ranges():
    trace = run_chain(build_mixture_model(), None, 5.3, 400, 4)
    assert np.all((trace.eps_hat > 0) & (trace.eps_hat <= 1))
    assert np.all((trace.deps_hat >= -1) & (trace.deps_hat <= 0))
    assert np.all(trace.accepted_index <= trace.n_used)
    assert set(np.unique(trace.n_used)) <= {5, 6}


def test_target_shift_leaves_trace_unchanged():
    model = build_mixture_model()
    a = run_chain(model, np.zeros(7), 6.5, 200, 21, keep_states=True)
    b = run_chain(model.with_target_shift(7.3), np.zeros(7), 6.5, 200, 21, keep_states=True)
    np.testing.assert_array_equal(a.accepted_index, b.accepted_index)
    np.testing.assert_allclose(a.eps_hat, b.eps_hat, rtol=1e-12)
    np.testing.assert_allclose(a.deps_hat, b.deps_hat, atol=1e-12)


def test_select_index_all_zero_weights():
    batch = ProposalBatch(
        states=np.array([0, 1, 2]),
        log_weights=np.full(3, -np.inf),
        nbar=3,
        beta=1.0,
        n_used=2,
        u_select=0.4,
    )
    with pytest.raises(ZeroWeightBatchError):
        select_index(batch)
    assert rejection_estimates(batch) == (0.0, 0.0)


def test_batch_invariants():
    with pytest.raises(ValueError):
        ProposalBatch(np.array([0, 1]), np.zeros(2), nbar=2, beta=0.0, n_used=1, u_select=0.1)
    with pytest.raises(ValueError):
        ProposalBatch(np.array([0, 1]), np.zeros(2), nbar=2, beta=1.0, n_used=3, u_select=0.1)


def test_initialisation_gives_up():
    model = LogModel(target=DiscreteMass([0.0, 1.0]), proposal=DiscreteMass([1.0]), name="empty")
    with pytest.raises(InitialisationError):
        run_chain(model, None, 2.0, 5, 1)


def test_trace_rows_layout():
    trace = run_chain(build_gaussian_t_model(), None, 2.0, 3, 1, keep_states=True)
    rows = list(trace.rows(include_state=True))
    assert [r["k"] for r in rows] == [1, 2, 3]
    assert set(rows[0]) == {"k", "lambda", "N_used", "I", "eps_hat", "deps_hat", "state", "f_f1", "f_f2"}


@pytest.mark.slow
def test_mixture_mean_at_large_n():
    trace = run_chain(build_mixture_model(), None, 129.0, 20_000, 2024)
    tail = trace.tail(2_000).f_values["f1"]
    est = initial_sequence_iact(tail)
    se = math.sqrt(est.asvar / tail.shape[0])
    assert abs(tail.mean() + 0.5) < 4 * se


@pytest.mark.slow
def test_fractional_estimators_unbiased_at_stationarity(exp1_model, exp1_stack):
    lam = 3.4
    curve = rejection_curve(exp1_stack, lam)
    trace = run_chain(discrete_log_model(exp1_model), 1, lam, 200_000, 31).tail(2_000)
    # eps_hat ~ eps(lambda), deps_hat ~ eps(4) - eps(3)
    for series, expected in ((trace.eps_hat, curve.eps[0]), (trace.deps_hat, curve.eps_prime[0])):
        est = initial_sequence_iact(series)
        se = math.sqrt(est.asvar / series.shape[0])
        assert abs(series.mean() - expected) < 4 * se


@pytest.mark.slow
def test_fractional_step_preserves_pi():
    rng = np.random.default_rng(5)
    dm = random_model(rng, 5)
    model = discrete_log_model(dm)
    starts = rng.choice(5, size=20_000, p=dm.pi)
    streams = RandomStreams(77)
    moved = np.array(
        [int(isir_step_fractional(model, x, 3.5, streams, k).new_state) for k, x in enumerate(starts, start=1)]
    )
    freq = np.bincount(moved, minlength=5) / moved.shape[0]
    se = np.sqrt(dm.pi * (1 - dm.pi) / moved.shape[0])
    assert np.all(np.abs(freq - dm.pi) < 4 * se)
