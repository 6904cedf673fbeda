import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import decay_case, desk_case
from sizepop import diagnostics as dg
from sizepop.characteristics import solve_characteristics
from sizepop.grids import HistoryBuffer, derivative
from sizepop.operators import norm_X
from sizepop.upwind import solve_upwind


@pytest.fixture(scope="module")
def zero_run():
    grid, delay, model, h = desk_case(dx=0.1, dt=0.05)
    z = HistoryBuffer(delay, grid, np.zeros_like(h.slices))
    return solve_characteristics(z, model, 1.0), model


def test_zero_run_has_zero_margins(zero_run):
    rec, model = zero_run
    res = dg.run_all(rec, model)
    for name in ("positivity", "L1_bound", "history_bound"):
        assert res[name]["passed"] and res[name]["min_margin"] == 0.0
    assert dg.gating_passed(res)


def test_negated_level_fails_positivity_there(desk_records):
    rec = copy.deepcopy(desk_records["characteristics"])
    rec.levels[7] *= -1
    rep = dg.check_positivity(rec)
    assert not rep.passed and rep.first_failure() == 7
    assert rep.extra["min_value"][7] < 0


def test_decay_run_passes_gating_checks(decay_records):
    rec = decay_records[1]["characteristics"]
    res = dg.run_all(rec, decay_records[1]["model"])
    assert dg.gating_passed(res)
    # no recruitment and gamma_x = 0 routes the sup bound to the degenerate branch
    assert "sup_bound_g2" in res


def test_transport_L1_equality():
    grid, delay, model, h = decay_case(dx=0.02, dt=0.01, mu=0.0, ramp=1.0)
    rec = solve_characteristics(h, model, 1.0)
    rep = dg.check_L1_bound(rec, 0.0)
    assert rep.passed
    np.testing.assert_allclose(rep.observed, rep.bound, rtol=1e-6)


def test_constant_history_under_recruitment_respects_bounds():
    grid, delay, model, h = desk_case(dx=0.08, dt=0.04)
    flat = HistoryBuffer(delay, grid, np.repeat(h.slices[-1:], delay.p + 1, axis=0))
    rec = solve_characteristics(flat, model, 2.0)
    R_bar = model.recruitment.R_bar
    assert R_bar > 0
    assert dg.check_L1_bound(rec, R_bar).passed
    assert dg.check_history_bound(rec, R_bar).passed


def test_sup_branch_routing(desk_records):
    rec, model = desk_records["characteristics"], desk_records["model"]
    r = model.recruitment.R_bar * rec.delay.tau
    assert dg.check_sup_bound(rec, model).name == "sup_bound_g1"
    forced = dg.check_sup_bound(rec, model, lam0=-r)
    assert forced.name == "sup_bound_g2" and forced.params["lambda0"] == -r
    assert forced.extra["rederived_passed"]


def _init(E, X, sup):
    return dg.InitialNorms(E=E, X=X, sup=sup, dX=0.0, dsigma_E=0.0)


def test_bound_values_at_time_zero():
    init = _init(2.0, 3.0, 5.0)
    R, tau, lam = 0.5, 2.0, -0.25
    A, B = 1.0 * 2 + 5, 1.0 * 2 + 3
    assert dg.l1_bound(0.0, R, tau, init) == pytest.approx(B)
    assert dg.history_bound(0.0, R, tau, init) == pytest.approx(2.0 + tau * B)
    assert dg.g1(0.0, R, tau, lam, init) == pytest.approx(2 * A + B * (1 - lam / (1.0 + lam)))
    assert dg.g2(0.0, R, tau, -1.0, init) == pytest.approx(2 * A + B)
    assert dg.sup_bound_rederived(0.0, R, tau, lam, init) == pytest.approx(A + B)


def test_rederived_bound_continuous_across_branches():
    init = _init(1.0, 1.0, 1.0)
    t = np.linspace(0, 3, 7)
    at = dg.sup_bound_rederived(t, 1.0, 1.0, -1.0, init)
    near = dg.sup_bound_rederived(t, 1.0, 1.0, -1.0 + 1e-7, init)
    np.testing.assert_allclose(at, near, rtol=1e-5)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2), st.floats(0.1, 3), st.floats(-2, 0), st.floats(0, 5), st.floats(0, 5), st.floats(0, 5))
def test_bound_curves_non_decreasing(R, tau, lam, E, X, sup):
    init = _init(E, X, sup)
    t = np.linspace(0, 4, 41)
    curves = [dg.l1_bound(t, R, tau, init), dg.history_bound(t, R, tau, init),
              dg.sup_bound_rederived(t, R, tau, lam, init)]
    if R * tau + lam > 1e-6:
        curves.append(dg.g1(t, R, tau, lam, init))
    for c in curves:
        assert np.all(np.diff(c) >= -1e-9 * np.abs(c[1:]))


def test_history_identity_holds(desk_records):
    res = dg.check_history_identity(desk_records["characteristics"])
    rec = desk_records["characteristics"]
    assert res["passed"] and res["pairs_checked"] == (rec.K + 1) * (rec.p + 1)


def test_history_identity_detects_copies(desk_records):
    rec = copy.deepcopy(desk_records["upwind"])
    orig = rec.history

    def copied(k):
        h = orig(k)
        return HistoryBuffer(h.delay, h.grid, h.slices.copy())

    rec.history = copied
    with pytest.raises(dg.HistoryIdentityError):
        dg.check_history_identity(rec)


def test_linear_transport_has_unit_spread():
    grid, delay, model, h = decay_case(dx=0.05, dt=0.025, mu=0.0, ramp=1.0)
    res = dg.check_continuous_dependence(lambda hb: solve_upwind(hb, model, 1.0), h)
    assert res["passed"] and res["max_spread"] == pytest.approx(1.0, abs=1e-8)


def test_continuous_dependence_rejects_empty_epsilons():
    grid, delay, model, h = decay_case(dx=0.1, dt=0.05)
    with pytest.raises(ValueError):
        dg.check_continuous_dependence(lambda hb: None, h, epsilons=[0.0])


def test_decay_gradient_norm_decays_exponentially():
    grid, delay, model, h = decay_case(dx=0.02, dt=0.01, ramp=1.0)
    rec = solve_characteristics(h, model, 1.0)
    d0 = norm_X(derivative(rec.levels[0], grid.dx), grid)
    for k in (25, 50, 100):
        dk = norm_X(derivative(rec.levels[k], grid.dx), grid)
        assert dk == pytest.approx(d0 * np.exp(-0.5 * k * rec.dt), rel=1e-3)
    rep = dg.check_gradient_bound(rec, model)
    assert rep.informative and rep.passed


def test_report_serializes(desk_records):
    d = dg.check_L1_bound(desk_records["upwind"], desk_records["model"].recruitment.R_bar).to_dict()
    assert set(d) >= {"name", "passed", "times", "observed", "bound", "margin"}
    assert len(d["times"]) == len(d["bound"])
