import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from conftest import DESK
from sizepop.coefficients import make_coefficients, make_environment
from sizepop.grids import DelayGrid, DensityField, SizeGrid
from sizepop.semigroup import (ProductElement, SemigroupDomainError, apply_S, closed_form_checks,
                               contraction_battery, exponential_weights, invert_S, norm_equivalence_battery,
                               random_X_element, resolvent_A1, round_trip_error)

GRID = SizeGrid.from_spacing(20.0, 0.01)
DELAY = DelayGrid(1.0, 50)
UNIT = make_coefficients({"family": "constant", "value": 1.0}, {"family": "constant"}, 1.0)
NO_ENV = make_environment({"family": "constant", "amp": 0.0})


def _elem(u, v=None):
    s = DELAY.nodes
    hist = np.exp(s)[:, None] * u[None, :] if v is None else v
    return ProductElement(DELAY, GRID, hist, u)


def test_apply_S_closed_form():
    x = GRID.nodes
    SU = apply_S(_elem(x * np.exp(-x)))
    assert np.max(np.abs(SU.field_part - np.exp(-x))) < 1e-4
    # e^sigma u solves -d_sigma h + h = 0
    assert np.max(np.abs(SU.history_part)) < 1e-3


def test_invert_S_closed_form():
    x = GRID.nodes
    F = ProductElement(DELAY, GRID, np.zeros((DELAY.p + 1, GRID.m + 1)), np.exp(-x))
    U = invert_S(F)
    assert np.max(np.abs(U.field_part - x * np.exp(-x))) < 1e-4
    assert U.in_Y()


def test_resolvent_closed_form():
    cf = closed_form_checks(20.0, 0.01, 1.0, 0.02)
    assert cf["resolvent_sup_error"] <= 1e-4
    assert cf["resolvent_history_sup_error"] <= 1e-4
    assert cf["inverse_sup_error"] <= 1e-4


def test_apply_S_rejects_incompatible_elements():
    x = GRID.nodes
    with pytest.raises(SemigroupDomainError):
        apply_S(_elem(np.exp(-x)))
    u = x * np.exp(-x)
    bad = _elem(u)
    bad.history_part[-1] += 1e-3
    with pytest.raises(SemigroupDomainError):
        apply_S(bad)


@pytest.mark.parametrize("lam", [0.0, -1.0, float("nan"), float("inf")])
def test_resolvent_rejects_non_positive_lambda(lam):
    F = ProductElement.zeros(DELAY, GRID)
    with pytest.raises(SemigroupDomainError):
        resolvent_A1(lam, DensityField.zeros(GRID), F, UNIT, NO_ENV)


@settings(max_examples=20, deadline=None)
@given(st.floats(-30.0, 30.0), st.floats(0.01, 1.0), st.floats(-2, 2), st.floats(-2, 2))
def test_exponential_weights_exact_on_linear(z, h, g0, g1):
    c = z / h
    f, a, b = exponential_weights(np.array([z]), h)
    exact = quad(lambda s: np.exp(-c * (h - s)) * (g0 + (g1 - g0) * s / h), 0, h, epsabs=1e-14)[0]
    # the recurrence step u_new = f u_old + a g0 + b g1 reproduces the integral
    assert a[0] * g0 + b[0] * g1 == pytest.approx(exact, rel=1e-9, abs=1e-13)
    assert f[0] == pytest.approx(np.exp(-z))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_inverse_always_lands_in_Y(seed):
    g, d = SizeGrid.from_spacing(10.0, 0.05), DelayGrid(1.0, 10)
    U = invert_S(random_X_element(np.random.default_rng(seed), d, g))
    assert U.in_Y()


def test_round_trip_second_order():
    errs = []
    for k in (1, 2, 4):
        g, d = SizeGrid.from_spacing(20.0, 0.04 / k), DelayGrid(1.0, 25 * k)
        errs.append(round_trip_error(random_X_element(np.random.default_rng(0), d, g)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8), (errs, orders)


def test_resolvent_contracts_for_desk_coefficients():
    g, d = SizeGrid.from_spacing(20.0, 0.04), DelayGrid(1.0, 25)
    coeffs = make_coefficients(DESK["gamma"], DESK["mu"], 10.0)
    rows = contraction_battery([0.5, 2.0, 10.0], d, g, coeffs, make_environment(DESK["rho"]), draws=16)
    for r in rows:
        assert r["min_margin"] > 0 and r["min_margin_sharp"] > 0


def test_norm_equivalence_small_battery():
    res = norm_equivalence_battery(DelayGrid(1.0, 50), SizeGrid.from_spacing(20.0, 0.02), draws=16)
    assert res["c1"] == pytest.approx(0.2) and res["slack"] <= 0.02
    assert res["c1"] <= res["ratio_min"] and res["ratio_max"] <= 1.0
