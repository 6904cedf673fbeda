import dataclasses

import numpy as np
import pytest

from conftest import build_model, decay_case
from sizepop.grids import DensityField, HistoryBuffer, SizeGrid
from sizepop.initial import history_bump
from sizepop.record import delay_for_step
from sizepop.upwind import CFLError, NonFiniteError, cfl_number, solve_upwind, upwind_step


def test_zero_history_stays_zero():
    grid, delay, model, h = decay_case(dx=0.1, dt=0.05)
    z = HistoryBuffer(delay, grid, np.zeros_like(h.slices))
    rec = solve_upwind(z, model, 1.0)
    assert np.all(rec.levels == 0.0) and rec.meta["max_mass_residual"] == 0.0


def test_transport_mass_never_increases():
    grid, delay, model, h = decay_case(dx=0.05, dt=0.025, mu=0.0)
    rec = solve_upwind(h, model, 2.0)
    mass = grid.dx * rec.levels.sum(axis=1)
    assert np.all(np.diff(mass) <= 1e-15 * mass[0])


def test_discrete_decay_factor():
    # mass of the cell scheme contracts by exactly (1 - mu dt) per step while nothing leaves
    grid, delay, model, h = decay_case(dx=0.05, dt=0.025)
    rec = solve_upwind(h, model, 1.0)
    mass = grid.dx * rec.levels.sum(axis=1)
    K = np.arange(rec.K + 1)
    np.testing.assert_allclose(mass, mass[0] * (1 - 0.5 * 0.025) ** K, rtol=1e-12)
    assert rec.meta["outflow"].max() < 1e-12 * mass[-1]


def test_discrete_decay_approaches_exponential():
    grid, delay, model, h = decay_case(dx=0.01, dt=1e-3)
    rec = solve_upwind(h, model, 1.0)
    mass = grid.dx * rec.levels.sum(axis=1)
    assert mass[-1] / mass[0] == pytest.approx(np.exp(-0.5), abs=1e-3)


def test_cfl_violation_raises():
    grid, delay, model, h = decay_case(dx=0.01, dt=0.02)
    assert cfl_number(model.coeffs.gamma_hi, 0.01, 0.02) == pytest.approx(2.0)
    with pytest.raises(CFLError):
        solve_upwind(h, model, 1.0)


def test_non_finite_density_raises():
    grid, delay, model, h = decay_case(dx=0.1, dt=0.05)
    bad = dataclasses.replace(model.coeffs, mu=lambda x, N: np.where(np.asarray(x) > 3.0, np.inf, 0.0))
    with pytest.raises(NonFiniteError) as exc:
        solve_upwind(h, dataclasses.replace(model, coeffs=bad), 1.0)
    assert exc.value.step == 1


def test_mass_balance_residual_on_desk(desk_records):
    assert desk_records["upwind"].meta["max_mass_residual"] <= 1e-12


def test_desk_upwind_is_non_negative(desk_records):
    rec = desk_records["upwind"]
    assert rec.levels.min() >= 0.0
    assert rec.meta["cfl"] <= 1.0


def test_single_step_matches_solver():
    grid = SizeGrid.from_spacing(8.0, 0.05)
    delay = delay_for_step(0.5, 0.025)
    model = build_model(beta={"family": "birth", "rate": 1.0}, tau=0.5, rho={"family": "hierarchy"})
    h = history_bump(delay, grid, center=3.0, width=0.7, ramp=1.0)
    rec = solve_upwind(h, model, 0.025)
    nxt = upwind_step(DensityField(grid, h.slices[-1]), h, model, 0.025)
    np.testing.assert_array_equal(nxt.values, rec.levels[1])
    with pytest.raises(ValueError):
        upwind_step(DensityField(grid, h.slices[-1] + 1), h, model, 0.025)
