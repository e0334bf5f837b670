"""Rejection and holding curves, variance tables, minimisers and bounds."""
from types import SimpleNamespace

import numpy as np
import pytest

from app.schemas import GridConfig, ReferenceRow
from app.services.adapt_service import AffineCost
from app.services.analysis_service import (
    LambdaGrid,
    analysis_report,
    analysis_table,
    b_lambda,
    bound_checks,
    compare_with_reference,
    gradient_curves,
    grid_argmin,
    minimiser_row,
    psi_curve,
    rejection_curve,
)
from app.services.discrete_model import load_discrete_model, random_model, standard_test_functions
from app.services.transition_service import transition_stack


@pytest.mark.parametrize("lam,expected", [(2.0, 0.5), (2.5, 5 / 12), (3.0, 1 / 3), (4.75, 1 / 4 - 0.75 / 20)])
def test_b_lambda(lam, expected):
    assert b_lambda(lam) == pytest.approx(expected, rel=1e-14)


def test_b_lambda_continuous_at_integers():
    assert b_lambda(3.0 - 1e-12) == pytest.approx(b_lambda(3.0), abs=1e-10)


def test_lambda_grid():
    grid = LambdaGrid(2.0, 3.0, 0.25)
    np.testing.assert_array_equal(grid.values(), [2.0, 2.25, 2.5, 2.75, 3.0])
    assert grid.n_max == 3
    assert LambdaGrid.from_config(GridConfig(lo=2.0, hi=30.0, step=0.05)).values()[-1] == 30.0
    for bad in ((2.0, 3.0, 0.0), (1.0, 3.0, 0.01), (5.0, 3.0, 0.01)):
        with pytest.raises(ValueError):
            LambdaGrid(*bad)


def test_curves_at_one(exp1_stack):
    curve = rejection_curve(exp1_stack, [1.0])
    assert curve.eps[0] == 1.0
    assert curve.eps_s[0] == pytest.approx(1.0)


def test_curve_needs_levels(exp1_stack):
    with pytest.raises(ValueError):
        rejection_curve(exp1_stack, [31.5])


def test_pi_equals_q_curves(pi_eq_q_stack):
    lam = np.array([2.0, 2.5, 3.0, 7.3])
    curve = rejection_curve(pi_eq_q_stack, lam)
    np.testing.assert_allclose(curve.eps, b_lambda(lam), atol=1e-12)
    assert curve.eps[1] == pytest.approx(5 / 12, abs=1e-12)
    np.testing.assert_allclose(psi_curve(pi_eq_q_stack, lam), b_lambda(lam), atol=1e-12)
    np.testing.assert_allclose(curve.eps_s, curve.eps**2, atol=1e-12)


def test_psi_needs_two_states():
    stack = SimpleNamespace(model=SimpleNamespace(pi=np.array([1.0])), matrices=np.ones((2, 1, 1)))
    with pytest.raises(ValueError, match="#\\(Sp\\)>1"):
        psi_curve(stack, [2.0])


def test_two_state_report(two_state_stack):
    report = analysis_report(two_state_stack, [0.0, 1.0], LambdaGrid(2.0, 20.0, 0.05))
    assert "H=V identity verified" in report.notes
    t = report.table
    assert t.lam[0] == 2.0
    assert t.psi[0] == pytest.approx(0.5, abs=1e-12)
    assert t.H[0] == pytest.approx(3.0, abs=1e-10)
    assert report.function_names()
    for v in t.V.values():
        np.testing.assert_allclose(v, t.H, atol=1e-8)
    assert report.violations == []


def test_jensen_and_bounds_on_experiment1(exp1_stack, exp1_model):
    fns = standard_test_functions(exp1_model)
    table = analysis_table(exp1_stack, fns, LambdaGrid(2.0, 30.0, 0.05))
    assert np.all(table.eps**2 <= table.eps_s + 1e-12)
    assert np.all(table.eps >= table.b - 1e-12)
    assert np.all(table.eps <= table.eps_upper + 1e-12)
    assert np.all(table.G_lower <= table.G + 1e-9)
    assert np.all(table.G <= table.G_upper + 1e-9)
    assert table.w_hat == pytest.approx(1.76)


def test_gradient_curves_ordering(exp1_stack, exp1_model):
    table = analysis_table(exp1_stack, standard_test_functions(exp1_model), LambdaGrid(2.0, 30.0, 0.05))
    for a in (0.0, 20.0):
        h = gradient_curves(table, AffineCost(a))
        assert np.all(h.h3 <= h.h2 + 1e-12)
        assert np.all(h.h2 <= h.h1 + 1e-12)


def test_pi_equals_q_has_no_violations(pi_eq_q_stack, pi_eq_q):
    fns = standard_test_functions(pi_eq_q)
    table = analysis_table(pi_eq_q_stack, fns, LambdaGrid(2.0, 12.0, 0.05))
    assert bound_checks(table, pi_eq_q_stack, fns, [0.0, 1.0]) == []
    # V = G для ленивой цепи
    for v in table.V.values():
        np.testing.assert_allclose(v, table.G, rtol=1e-9)


def test_minimiser_row_pi_equals_q(pi_eq_q_stack):
    report = analysis_report(pi_eq_q_stack, [1.0], LambdaGrid(2.0, 12.0, 0.05))
    row = report.rows[0]
    assert row.lambda_G == 3.0
    assert row.lambda_H == 3.0
    for name in report.function_names():
        assert row.minimisers[name] == 3.0
        assert row.so_G[name] == pytest.approx(1.0)
    csv_row = row.as_csv(report.function_names() + ["k"])
    assert np.isnan(csv_row["lambda_k"])


def test_grid_argmin_takes_smallest_tie():
    lam = np.array([2.0, 2.5, 3.0])
    assert grid_argmin(lam, np.array([1.0, 0.5, 0.5])) == 2.5


def test_compare_with_reference(pi_eq_q_stack):
    report = analysis_report(pi_eq_q_stack, [1.0], LambdaGrid(2.0, 12.0, 0.05), check_bounds=False)
    assert report.violations == []
    good = ReferenceRow(a=1.0, lambda_G=3.0, minimisers={"f": 3.0}, so_G={"f": 1.0})
    assert compare_with_reference(report, [good]) == []
    bad = [
        ReferenceRow(a=1.0, lambda_G=4.0, minimisers={"f": 5.0}, so_G={"f": 1.2}),
        ReferenceRow(a=7.0, lambda_G=4.0),
    ]
    mismatches = compare_with_reference(report, bad)
    assert len(mismatches) == 4
    assert "a=7: no computed row" in mismatches


def test_table_losses(pi_eq_q_stack, pi_eq_q):
    table = analysis_table(pi_eq_q_stack, standard_test_functions(pi_eq_q), np.array([3.0]))
    losses = table.losses(AffineCost(0.5))
    assert losses["G"][0] == pytest.approx(7.0)
    assert set(table.columns()) >= {"lambda", "eps", "psi", "G_upper", "V_f"}


def test_random_two_state_models_hold_h_equals_v(rng):
    for _ in range(20):
        model = random_model(rng, 2)
        stack = transition_stack(model, 20, "enumerate", workers=1)
        report = analysis_report(stack, [0.0], LambdaGrid(2.0, 20.0, 0.05), check_bounds=False)
        assert "H=V identity verified" in report.notes


@pytest.mark.slow
def test_random_models_satisfy_all_bounds():
    rng = np.random.default_rng(7)
    grid = LambdaGrid(2.0, 150.0, 0.05)
    for i in range(50):
        model = random_model(rng, 2 + i % 7, outside=i % 2 == 1)
        stack = transition_stack(model, grid.n_max, "integral", workers=1)
        report = analysis_report(stack, [0.0, 1.0], grid)
        assert [str(v) for v in report.violations] == []


@pytest.mark.parametrize("name", ["experiment1", "experiment3"])
def test_published_minimiser_table(name):
    model, cfg = load_discrete_model(name)
    stack = transition_stack(model, 150, "integral", workers=1)
    report = analysis_report(stack, [r.a for r in cfg.reference_table], LambdaGrid(2.0, 150.0, 0.01), check_bounds=False)
    rows = {r.a: r for r in report.rows}
    for ref in cfg.reference_table:
        row = rows[ref.a]
        assert row.lambda_G == pytest.approx(ref.lambda_G), f"a={ref.a}"
        for fn, so in ref.so_G.items():
            assert row.so_G[fn] == pytest.approx(so, abs=0.02), f"a={ref.a} {fn}"
