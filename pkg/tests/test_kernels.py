import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sizepop import _pykernels
from sizepop.kernels import BACKEND, get_backend

try:
    from sizepop import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None

needs_c = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")


def _tables(rng, levels, n, dx, vmax=1.5):
    x = np.arange(n) * dx
    vel = 0.5 + vmax * rng.random((levels, 1)) * (1 + 0.3 * np.sin(x))[None, :]
    rate = rng.random((levels, n))
    src = rng.random((levels, n))
    init = np.exp(-((x - x[-1] / 2) ** 2))
    return vel, rate, src, init


def test_default_backend_is_compiled_when_built():
    assert BACKEND == ("cython" if _ckernels is not None else "python")
    with pytest.raises(ValueError):
        get_backend("fortran")


@needs_c
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(4, 40), st.floats(0.01, 0.2))
def test_backends_agree(seed, levels, n, dt):
    rng = np.random.default_rng(seed)
    dx = 0.1
    vel, rate, src, init = _tables(rng, levels, n, dx)
    k_lo = int(rng.integers(1, levels))
    args = (vel, rate, src, init, dx, dt, k_lo, levels - 1, 1e-12)
    a = _pykernels.trace_representation(*args)
    b = _ckernels.trace_representation(*args)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


@needs_c
def test_backends_agree_on_recurrence():
    rng = np.random.default_rng(3)
    f, a, b = rng.random(29), rng.random(29), rng.random(29)
    g = rng.random((30, 4))
    np.testing.assert_allclose(_pykernels.linear_recurrence(f, a, b, g),
                               _ckernels.linear_recurrence(f, a, b, g), rtol=1e-14, atol=0)


@pytest.mark.parametrize("backend", ["python", pytest.param("cython", marks=needs_c)])
def test_linear_recurrence_against_loop(backend):
    mod = get_backend(backend)
    rng = np.random.default_rng(1)
    f, a, b, g = rng.random(9), rng.random(9), rng.random(9), rng.random(10)
    u = [0.0]
    for i in range(9):
        u.append(f[i] * u[-1] + a[i] * g[i] + b[i] * g[i + 1])
    np.testing.assert_allclose(mod.linear_recurrence(f, a, b, g), u, rtol=1e-15)


@pytest.mark.parametrize("backend", ["python", pytest.param("cython", marks=needs_c)])
def test_pure_transport_shifts_initial_data(backend):
    # unit speed, no loss, no source: value at (t, x) is init(x - t) for x >= t, else 0
    mod = get_backend(backend)
    n, dx, dt, levels = 101, 0.05, 0.05, 11
    x = np.arange(n) * dx
    init = x**2 * np.exp(-x)
    vel = np.ones((levels, n))
    z = np.zeros((levels, n))
    out = mod.trace_representation(vel, z, z, init, dx, dt, 1, levels - 1, 1e-12)
    for r, k in enumerate(range(1, levels)):
        t = k * dt
        exact = np.where(x >= t - 1e-12, np.interp(x - t, x, init), 0.0)
        np.testing.assert_allclose(out[r], exact, atol=1e-12)


def test_python_backend_forced_by_environment():
    code = "import sizepop.kernels as k; print(k.BACKEND)"
    env = {**os.environ, "SIZEPOP_BACKEND": "python"}
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert res.stdout.strip() == "python"
