import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from conftest import decay_case, decay_exact, desk_case
from sizepop.characteristics import (ConvergenceError, entry_time, origin_characteristic, solve_characteristics,
                                     trace_characteristic)
from sizepop.grids import HistoryBuffer


class Uniform:
    def __init__(self, c=1.0):
        self.c = c
        self.x_max = 50.0

    def velocity(self, t, x):
        return self.c

    def dgamma(self, t, x):
        return 0.0


class Wavy:
    """``gamma = 1 + 0.5 sin x + 0.2 t``; strictly positive, non-autonomous."""

    x_max = 50.0

    def velocity(self, t, x):
        return 1.0 + 0.5 * np.sin(x) + 0.2 * t

    def dgamma(self, t, x):
        return 0.5 * np.cos(x)


def _oracle(t0, x0, t1):
    sol = solve_ivp(lambda t, y: [Wavy().velocity(t, y[0])], (t0, t1), [x0], rtol=1e-12, atol=1e-13)
    return sol.y[0, -1]


def test_uniform_origin_path_is_linear():
    p = origin_characteristic(Uniform(1.5), t_stop=2.0, dt=0.1)
    np.testing.assert_allclose(p.x, 1.5 * p.t, rtol=0, atol=1e-14)
    assert p.exit_time is None and p.jacobian == 1.0


def test_variable_speed_against_ode_oracle():
    for x0, t0 in [(3.0, 2.0), (7.5, 1.0), (10.0, 3.0)]:
        p = trace_characteristic((t0, x0), Wavy(), "backward", dt=1e-3, t_stop=0.0)
        if p.exit_time is None:
            assert p.x[-1] == pytest.approx(_oracle(t0, x0, 0.0), abs=1e-8)
        f = trace_characteristic((0.0, x0), Wavy(), "forward", dt=1e-3, t_stop=t0)
        assert f.x[-1] == pytest.approx(_oracle(0.0, x0, t0), abs=1e-8)


def test_entry_time_examples():
    # resolved to the path tolerance 1e-10 * x_max
    assert entry_time(2.0, 0.5, Uniform(), dt=0.1) == pytest.approx(1.5, abs=1e-8)
    assert entry_time(1.0, 2.0, Uniform(), dt=0.1) is None
    assert entry_time(1.0, 0.0, Uniform(), dt=0.1) == 1.0
    with pytest.raises(ValueError):
        entry_time(1.0, -0.1, Uniform(), dt=0.1)


@pytest.mark.parametrize("t, x", [(2.0, 1.0), (3.0, 2.5), (1.5, 0.3)])
def test_entry_time_against_dense_oracle(t, x):
    ev = lambda s, y: y[0]
    ev.terminal = True
    sol = solve_ivp(lambda s, y: [Wavy().velocity(s, y[0])], (t, 0.0), [x], events=ev,
                    rtol=1e-12, atol=1e-13, max_step=1e-3)
    eta_oracle = sol.t_events[0][0]
    assert entry_time(t, x, Wavy(), dt=0.01) == pytest.approx(eta_oracle, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 10.0), st.floats(0.001, 5.0), st.floats(0.1, 3.0))
def test_paths_do_not_cross(x0, gap, T):
    a = trace_characteristic((0.0, x0), Wavy(), "forward", dt=0.01, t_stop=T)
    b = trace_characteristic((0.0, x0 + gap), Wavy(), "forward", dt=0.01, t_stop=T)
    assert np.all(b.x > a.x)


def test_flow_composes():
    mid = trace_characteristic((0.0, 2.0), Wavy(), "forward", dt=0.01, t_stop=1.0)
    two = trace_characteristic((1.0, mid.x[-1]), Wavy(), "forward", dt=0.01, t_stop=2.5)
    one = trace_characteristic((0.0, 2.0), Wavy(), "forward", dt=0.01, t_stop=2.5)
    assert two.x[-1] == pytest.approx(one.x[-1], abs=1e-12)


def test_jacobian_matches_finite_difference():
    h = 1e-5
    p = trace_characteristic((0.0, 2.0), Wavy(), "forward", dt=1e-3, t_stop=2.0)
    up = trace_characteristic((0.0, 2.0 + h), Wavy(), "forward", dt=1e-3, t_stop=2.0)
    dn = trace_characteristic((0.0, 2.0 - h), Wavy(), "forward", dt=1e-3, t_stop=2.0)
    assert p.jacobian == pytest.approx((up.x[-1] - dn.x[-1]) / (2 * h), rel=1e-7)


def test_trace_rejects_bad_arguments():
    with pytest.raises(ValueError):
        trace_characteristic((1.0, 1.0), Uniform(), dt=None)
    with pytest.raises(ValueError):
        trace_characteristic((1.0, 1.0), Uniform(), "sideways", dt=0.1)
    with pytest.raises(ValueError):
        trace_characteristic((1.0, 1.0), Uniform(), "backward", dt=0.1, t_stop=2.0)


def test_escape_is_reported():
    p = trace_characteristic((0.0, 49.0), Uniform(), "forward", dt=0.5, t_stop=5.0)
    assert p.escaped and p.exit_time == pytest.approx(1.5)


def test_zero_history_stays_zero():
    grid, delay, model, h = desk_case(dx=0.1, dt=0.05)
    z = HistoryBuffer(delay, grid, np.zeros_like(h.slices))
    rec = solve_characteristics(z, model, 1.0)
    assert np.all(rec.levels == 0.0)


def test_decay_converges_in_one_effective_sweep():
    grid, delay, model, h = decay_case(dx=0.05, dt=0.01)
    rec = solve_characteristics(h, model, 1.0)
    # tables do not depend on n, so the second sweep reproduces the first
    assert all(it <= 2 for it in rec.meta["picard_iterations"])
    assert all(r[-1] == 0.0 for r in rec.meta["picard_residuals"])


def test_decay_mass_and_pointwise_accuracy():
    grid, delay, model, h = decay_case(dx=0.05, dt=0.01)
    rec = solve_characteristics(h, model, 1.0)
    w = grid.weights
    m0 = rec.levels[0] @ w
    for k in range(rec.levels.shape[0]):
        t = k * rec.dt
        assert rec.levels[k] @ w == pytest.approx(m0 * np.exp(-0.5 * t), abs=1e-3)
    # away from the jump the data carries at x = t
    away = np.abs(grid.nodes - 1.0) > 1.5 * grid.dx
    assert np.max(np.abs(rec.levels[-1] - decay_exact(grid.nodes, 1.0))[away]) < 1e-6


def test_picard_budget_exhaustion_raises():
    grid, delay, model, h = desk_case(dx=0.1, dt=0.05)
    with pytest.raises(ConvergenceError) as exc:
        solve_characteristics(h, model, 1.0, max_iter=1)
    assert exc.value.iterations == 1


def test_desk_solution_is_non_negative(desk_records):
    rec = desk_records["characteristics"]
    assert rec.levels.min() >= -1e-12 * rec.levels.max()
    assert all(it <= 50 for it in rec.meta["picard_iterations"])
