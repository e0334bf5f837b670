"""Lambda adaptation, projection and the affine cost model."""
import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from app.services.adapt_service import (
    AdaptConfig,
    AdaptState,
    AffineCost,
    CostFitError,
    adapt_increment,
    adapt_step,
    cost_minimum,
    fit_cost,
    loss_tilde,
    minimiser_upper_bound,
    project,
    run_adaptive,
    u_value,
)
from app.services.analysis_service import b_lambda
from app.services.discrete_model import discrete_log_model, pi_equals_q_model
from app.models import build_mixture_model
from app.services.rng import RandomStreams


@pytest.mark.parametrize(
    "xi,n_max,expected",
    [(-0.5, 101, 0.0), (7.0, 101, math.log(100)), (1.2, math.inf, 1.2)],
)
def test_project(xi, n_max, expected):
    assert project(xi, n_max) == pytest.approx(expected)


def test_increment_hand_value():
    inc = adapt_increment(0.5, -0.1, AffineCost(0.0, 1.0), 5.0, 16, 0.75)
    assert inc == pytest.approx(0.03125, abs=1e-15)


def test_increment_vanishes_on_certain_rejection():
    assert adapt_increment(1.0, 0.0, AffineCost(3.0, 1.0), 7.0, 4, 0.75) == 0.0


def test_increment_scales_with_cost():
    base = adapt_increment(0.3, -0.05, AffineCost(2.0, 1.0), 6.0, 9, 0.75)
    scaled = adapt_increment(0.3, -0.05, AffineCost(6.0, 3.0), 6.0, 9, 0.75)
    assert scaled == pytest.approx(3.0 * base, rel=1e-12)


def test_adapt_step_stays_in_bounds():
    model = build_mixture_model()
    cfg = AdaptConfig(n_max=9, n_iters=10)
    streams = RandomStreams(1)
    x, xi = np.zeros(7), math.log(8)
    for k in range(1, 40):
        x, xi, rec = adapt_step(model, x, xi, AffineCost(0.0), k, cfg, streams)
        assert 0.0 <= xi <= math.log(8)
        assert 1.0 <= rec.lambda_used <= 9.0


def test_adapt_state_bounds():
    assert AdaptState(math.log(4), xi_upper=math.log(100)).lam == pytest.approx(5.0)
    with pytest.raises(ValueError):
        AdaptState(-0.1)
    state = AdaptState(1.0, xi_upper=math.log(8)).advance(math.log(8))
    assert (state.k, state.lam) == (1, pytest.approx(9.0))
    with pytest.raises(ValueError):
        state.advance(math.log(9))


def test_adapt_config_defaults():
    cfg = AdaptConfig(n_max=101)
    assert cfg.lambda0 == pytest.approx(50.5)
    assert cfg.initial_xi() == pytest.approx(math.log(49.5))
    assert AdaptConfig(n_max=math.inf).lambda0 == 16.0
    assert AdaptConfig(n_iters=1000).burn_in == 100
    with pytest.raises(ValueError):
        AdaptConfig(n_max=1)


def test_fit_cost_recovers_line():
    cost = fit_cost([(n, 2.0 + 0.5 * n) for n in (5, 9, 17, 33)])
    assert cost.a == pytest.approx(4.0, rel=1e-10)
    assert cost.b == 1.0


def test_fit_cost_noisy(rng):
    ns = [2**i + 1 for i in range(2, 14)]
    cost = fit_cost([(n, 2.0 + 0.5 * n + rng.uniform(-0.01, 0.01)) for n in ns])
    assert cost.a == pytest.approx(4.0, rel=0.01)


def test_fit_cost_constant_timings():
    with pytest.raises(CostFitError, match="not increasing"):
        fit_cost([(n, 1.5) for n in (5, 9, 17)])


def test_fit_cost_needs_two_distinct_n():
    with pytest.raises(CostFitError):
        fit_cost([(5, 1.0), (5, 1.1)])


def test_affine_cost_validation():
    with pytest.raises(ValueError):
        AffineCost(-1.0)
    with pytest.raises(ValueError):
        AffineCost(1.0, 0.0)


def test_loss_tilde():
    c = AffineCost(0.0, 1.0)
    assert loss_tilde(0.0, c, 3.0) == 3.0
    assert loss_tilde(0.5, c, 3.0) == pytest.approx(9.0)
    values = [loss_tilde(e, c, 3.0) for e in np.linspace(0, 0.99, 50)]
    assert np.all(np.diff(values) > 0)
    with pytest.raises(ValueError):
        loss_tilde(1.0, c, 3.0)


@pytest.mark.parametrize("a,b,d", [(0.0, 1.0, 1.76), (4.0, 1.0, 430.99), (2.0, 0.5, 3.0)])
def test_cost_minimum_against_grid(a, b, d):
    m = cost_minimum(a, b, d)
    lam = np.linspace(1.001, 200.0, 400_000)
    u = u_value(lam, a, b, d)
    assert m.lam_min == pytest.approx(lam[np.argmin(u)], abs=1e-3)
    assert m.u_min == pytest.approx(u.min(), rel=1e-8)
    assert u_value(m.lam_min, a, b, d) == pytest.approx(m.u_min, rel=1e-12)


def test_minimiser_upper_bound():
    assert minimiser_upper_bound(1.0, 0.0, 1.0) == pytest.approx(9.0)
    assert minimiser_upper_bound(2.0, 3.0, 1.0) == pytest.approx(4 * math.sqrt(8) + 9)


def _pi_eq_q_log_model():
    return discrete_log_model(pi_equals_q_model([1.0, 2.0], [0.4, 0.6]))


def test_run_adaptive_deterministic_and_projected():
    cfg = AdaptConfig(n_max=33, n_iters=300)
    a = run_adaptive(build_mixture_model(), AffineCost(5.0), cfg, 12)
    b = run_adaptive(build_mixture_model(), AffineCost(5.0), cfg, 12)
    np.testing.assert_array_equal(a.lambda_trace, b.lambda_trace)
    assert a.final_lambda == b.final_lambda
    assert np.all((a.lambda_trace >= 2.0 - 1e-12) & (a.lambda_trace <= 33.0 + 1e-9))
    assert len(a.post_burn_in(0.1)) == 270


def test_pi_equals_q_adaptation_reaches_loss_minimiser():
    cost = AffineCost(0.5)
    grid = np.round(np.arange(2.0, 40.0, 0.01), 10)
    loss = cost(grid) * (1 + b_lambda(grid)) / (1 - b_lambda(grid))
    target = grid[np.argmin(loss)]
    run = run_adaptive(_pi_eq_q_log_model(), cost, AdaptConfig(n_max=41, n_iters=3000), 5)
    assert target == pytest.approx(3.0)
    assert run.final_lambda == pytest.approx(target, abs=0.05)
    assert np.mean(run.lambda_trace[-500:]) == pytest.approx(target, abs=0.05)


def test_checkpoint_called():
    seen = []
    run_adaptive(_pi_eq_q_log_model(), AffineCost(1.0), AdaptConfig(n_max=9, n_iters=100), 1,
                 checkpoint=lambda k, lam: seen.append(k))
    assert seen == list(range(10, 101, 10))


def test_cost_minimum_random_triples(rng):
    for _ in range(50):
        a, b, d = rng.uniform(0, 20), rng.uniform(0.1, 5), rng.uniform(0.1, 500)
        m = cost_minimum(a, b, d)
        res = minimize_scalar(lambda lam: u_value(lam, a, b, d), bounds=(1.0 + 1e-9, 1e4), method="bounded",
                              options={"xatol": 1e-10})
        assert m.u_min == pytest.approx(res.fun, rel=1e-9)
        assert m.lam_min == pytest.approx(res.x, rel=1e-5)
