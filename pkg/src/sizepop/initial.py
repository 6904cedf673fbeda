"""Initial-history families ``n_hat(sigma, x)`` on ``[-tau, 0] x [0, x_max]``."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .coefficients import FamilyError
from .grids import DelayGrid, GridError, HistoryBuffer, SizeGrid


def bump_profile(x, center: float, width: float, amp: float = 1.0, ramp: float = 0.0):
    """Gaussian bump; ``ramp > 0`` multiplies by ``1 - exp(-(x/ramp)^2)`` so it vanishes at 0."""
    x = np.asarray(x, dtype=float)
    out = amp * np.exp(-0.5 * ((x - center) / width) ** 2)
    if ramp > 0:
        out = out * -np.expm1(-((x / ramp) ** 2))
    return out


def history_zero(delay: DelayGrid, grid: SizeGrid, **_) -> HistoryBuffer:
    return HistoryBuffer(delay, grid, np.zeros((delay.p + 1, grid.m + 1)))


def history_bump(delay: DelayGrid, grid: SizeGrid, center: float = 5.0, width: float = 1.0,
                 amp: float = 1.0, ramp: float = 0.0, sigma_rate: float = 0.0, shift: float = 0.0) -> HistoryBuffer:
    """``bump(x - shift * sigma) * exp(sigma_rate * sigma)``.

    ``shift`` makes the history a profile moving at that speed, ``sigma_rate``
    a profile growing in time; both zero gives a constant history.
    """
    if width <= 0 or amp < 0 or ramp < 0:
        raise FamilyError("bump needs width > 0, amp >= 0, ramp >= 0")
    return HistoryBuffer.from_function(
        delay, grid,
        lambda s, x: bump_profile(x - shift * s, center, width, amp, ramp) * np.exp(sigma_rate * s))


def history_csv(delay: DelayGrid, grid: SizeGrid, path: str) -> HistoryBuffer:
    """Read ``sigma, x, value`` rows; every grid pair must appear exactly once."""
    vals = np.full((delay.p + 1, grid.m + 1), np.nan)
    s_nodes, x_nodes = delay.nodes, grid.nodes
    with open(Path(path), newline="") as fh:
        rows = (r for r in fh if not r.lstrip().startswith("#"))
        reader = csv.reader(rows)
        for rec in reader:
            if not rec or rec[0].strip().lower() in ("sigma", "σ"):
                continue
            s, x, v = (float(t) for t in rec[:3])
            j = int(np.argmin(np.abs(s_nodes - s)))
            i = int(np.argmin(np.abs(x_nodes - x)))
            if abs(s_nodes[j] - s) > 1e-9 * delay.tau or abs(x_nodes[i] - x) > 1e-9 * grid.x_max:
                raise GridError(f"CSV point ({s}, {x}) is not on the declared grids")
            vals[j, i] = v
    if np.isnan(vals).any():
        raise GridError("CSV history does not cover every grid point")
    return HistoryBuffer(delay, grid, vals)


HISTORY_FAMILIES = {"zero": history_zero, "bump": history_bump}


def make_history(spec: dict, delay: DelayGrid, grid: SizeGrid) -> HistoryBuffer:
    spec = dict(spec)
    if "csv" in spec:
        return history_csv(delay, grid, spec["csv"])
    name = spec.pop("family", "zero")
    try:
        fn = HISTORY_FAMILIES[name]
    except KeyError:
        raise FamilyError(f"unknown initial family {name!r}; known: {sorted(HISTORY_FAMILIES)}") from None
    try:
        return fn(delay, grid, **spec)
    except TypeError as exc:
        raise FamilyError(f"bad parameters for initial family {name!r}: {exc}") from None
