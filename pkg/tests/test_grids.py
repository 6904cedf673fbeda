import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sizepop.grids import DelayGrid, DensityField, GridError, HistoryBuffer, SizeGrid, derivative


@pytest.mark.parametrize("x_max,m", [(10.0, 0), (0.0, 10), (-1.0, 10), (10.0, 2.5)])
def test_size_grid_rejects_bad_shapes(x_max, m):
    with pytest.raises(GridError):
        SizeGrid(x_max, m)


@pytest.mark.parametrize("tau,p", [(1.0, 0), (0.0, 5), (-1.0, 5)])
def test_delay_grid_rejects_bad_shapes(tau, p):
    with pytest.raises(GridError):
        DelayGrid(tau, p)


def test_from_spacing_must_divide():
    with pytest.raises(GridError):
        SizeGrid.from_spacing(1.0, 0.3)
    assert SizeGrid.from_spacing(12.0, 0.04).m == 300


@given(st.floats(0.1, 100.0), st.integers(1, 2000))
def test_size_nodes_endpoints_exact(x_max, m):
    x = SizeGrid(x_max, m).nodes
    assert x[0] == 0.0 and x[-1] == x_max
    assert np.all(np.diff(x) > 0)


@given(st.floats(0.01, 50.0), st.integers(1, 500))
def test_delay_nodes_endpoints_exact(tau, p):
    s = DelayGrid(tau, p).nodes
    assert s[0] == -tau and s[-1] == 0.0
    assert np.all(np.diff(s) > 0)


def test_trapezoid_is_exact_on_linear_functions():
    g = SizeGrid(3.0, 7)
    assert g.weights @ (2.0 * g.nodes + 1.0) == pytest.approx(12.0, rel=1e-14)


def test_derivative_second_order_everywhere():
    errs = []
    for m in (50, 100):
        g = SizeGrid(2.0, m)
        errs.append(np.max(np.abs(derivative(np.sin(g.nodes), g.dx) - np.cos(g.nodes))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_density_field_rejects_non_finite_and_wrong_shape():
    g = SizeGrid(1.0, 4)
    with pytest.raises(GridError):
        DensityField(g, np.array([0, 1, np.nan, 0, 0.0]))
    with pytest.raises(GridError):
        DensityField(g, np.zeros(3))


def test_density_field_may_be_negative():
    g = SizeGrid(1.0, 4)
    assert DensityField(g, -np.ones(5)).values.min() == -1.0


def test_history_buffer_shape_and_times():
    g, d = SizeGrid(1.0, 4), DelayGrid(0.5, 5)
    h = HistoryBuffer.from_function(d, g, lambda s, x: s + x, anchor_time=2.0)
    assert h.slices.shape == (6, 5)
    np.testing.assert_allclose(h.times, 2.0 + d.nodes)
    np.testing.assert_array_equal(h.current.values, g.nodes)
    with pytest.raises(GridError):
        HistoryBuffer(d, g, np.zeros((5, 5)))


@settings(max_examples=25)
@given(st.integers(1, 4))
def test_refine_divides_spacing(k):
    g, d = SizeGrid(2.0, 10), DelayGrid(1.0, 4)
    assert g.refine(k).dx == pytest.approx(g.dx / k)
    assert d.refine(k).dsigma == pytest.approx(d.dsigma / k)
