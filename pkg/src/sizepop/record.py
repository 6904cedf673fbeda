"""Time-level storage shared by both solvers.

A record keeps one array of rows: row ``r`` is the density at time
``-tau + r * dt``. Level ``k`` (time ``k * dt``) is row ``p + k``, so the
history segment anchored at level ``k`` is the contiguous block of rows
``k .. k + p``. History buffers handed out by the record are views of that
block, which is what makes ``U(t)(sigma) = n(t + sigma)`` hold bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import DelayGrid, DensityField, GridError, HistoryBuffer, SizeGrid

# Boundary density at x_max above this fraction of the total mass aborts a run.
ESCAPE_FRACTION = 1e-6
# Initial data must carry less than this fraction of its mass at x_max.
TRUNCATION_FRACTION = 1e-12


class SolverError(RuntimeError):
    """Base class for failures that should stop a run (CLI exit code 4)."""


class EscapingMassError(SolverError):
    def __init__(self, level: int, time: float, ratio: float):
        self.level, self.time, self.ratio = level, time, ratio
        super().__init__(f"density at x_max is {ratio:.3e} of total mass at level {level} (t={time:.6g})")


def delay_for_step(tau: float, dt: float) -> DelayGrid:
    """Delay grid whose spacing is the time step; ``tau / dt`` must be an integer."""
    if not dt > 0:
        raise GridError(f"dt must be positive, got {dt!r}")
    p = int(round(tau / dt))
    if p < 1 or abs(p * dt - tau) > 1e-9 * tau:
        raise GridError(f"dt={dt} does not divide tau={tau}")
    return DelayGrid(tau, p)


def levels_for_horizon(T: float, dt: float) -> int:
    K = int(round(T / dt))
    if K < 0 or abs(K * dt - T) > 1e-9 * max(T, dt):
        raise GridError(f"dt={dt} does not divide T={T}")
    return K


def escape_ratio(values: np.ndarray, grid: SizeGrid) -> float:
    mass = float(grid.weights @ np.abs(values))
    if mass == 0.0:
        return 0.0
    return float(abs(values[-1]) / mass)


@dataclass
class SolutionRecord:
    """Densities at ``t_k = k dt`` for ``k = 0..K`` plus the initial history rows.

    ``rows`` has shape ``(p + K + 1, m + 1)``. ``env`` holds the environment
    profile at every level; ``tables`` holds optional per-level coefficient
    tables (``gamma``, ``dgamma``, ``mu``, ``recruitment``) that the solvers
    used, so paths can be re-traced against exactly the same fields.
    """

    grid: SizeGrid
    delay: DelayGrid
    K: int
    rows: np.ndarray
    env: np.ndarray
    tables: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @classmethod
    def allocate(cls, history: HistoryBuffer, K: int) -> "SolutionRecord":
        p, m = history.delay.p, history.grid.m
        rows = np.zeros((p + K + 1, m + 1))
        rows[: p + 1] = history.slices
        env = np.zeros((K + 1, m + 1))
        return cls(history.grid, history.delay, K, rows, env)

    @property
    def dt(self) -> float:
        return self.delay.dsigma

    @property
    def p(self) -> int:
        return self.delay.p

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.dt

    @property
    def T(self) -> float:
        return self.K * self.dt

    @property
    def levels(self) -> np.ndarray:
        """View of the rows at ``t >= 0``, shape ``(K + 1, m + 1)``."""
        return self.rows[self.p:]

    def row_of(self, k: int) -> int:
        if not -self.p <= k <= self.K:
            raise IndexError(f"level {k} outside [-{self.p}, {self.K}]")
        return self.p + k

    def field(self, k: int) -> DensityField:
        return DensityField(self.grid, self.rows[self.row_of(k)])

    def history(self, k: int) -> HistoryBuffer:
        """History buffer anchored at level ``k``; its slices are views of the rows."""
        if not 0 <= k <= self.K:
            raise IndexError(f"level {k} outside [0, {self.K}]")
        return HistoryBuffer(self.delay, self.grid, self.rows[k:k + self.p + 1], anchor_time=k * self.dt)

    @property
    def initial_history(self) -> HistoryBuffer:
        return self.history(0)

    @property
    def final(self) -> DensityField:
        return self.field(self.K)

    def check_escape(self, k: int, fraction: float = ESCAPE_FRACTION) -> None:
        r = escape_ratio(self.rows[self.row_of(k)], self.grid)
        if r > fraction:
            raise EscapingMassError(k, k * self.dt, r)
