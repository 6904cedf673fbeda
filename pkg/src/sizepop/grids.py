"""Grids, sampled fields and the quadrature rules shared by every module.

All integrals are composite trapezoid sums on uniform grids and all
derivatives are central differences with second-order one-sided stencils at
the endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Raised for malformed grids or shape mismatches between fields."""


def trapezoid_weights(n_nodes: int, h: float) -> np.ndarray:
    w = np.full(n_nodes, h, dtype=float)
    w[0] = w[-1] = 0.5 * h
    return w


def derivative(values: np.ndarray, h: float, axis: int = -1) -> np.ndarray:
    """Central-difference derivative along ``axis``."""
    values = np.asarray(values, dtype=float)
    if values.shape[axis] < 3:
        return np.gradient(values, h, axis=axis, edge_order=1)
    return np.gradient(values, h, axis=axis, edge_order=2)


@dataclass(frozen=True)
class SizeGrid:
    """Uniform nodes ``0 = x_0 < ... < x_m = x_max`` on the truncated size axis."""

    x_max: float
    m: int

    def __post_init__(self):
        if not (np.isfinite(self.x_max) and self.x_max > 0):
            raise GridError(f"x_max must be positive, got {self.x_max!r}")
        if int(self.m) != self.m or self.m <= 0:
            raise GridError(f"m must be a positive integer, got {self.m!r}")

    @classmethod
    def from_spacing(cls, x_max: float, dx: float) -> "SizeGrid":
        if dx <= 0:
            raise GridError(f"dx must be positive, got {dx!r}")
        m = int(round(x_max / dx))
        if m <= 0 or abs(m * dx - x_max) > 1e-9 * x_max:
            raise GridError(f"dx={dx} does not divide x_max={x_max}")
        return cls(x_max, m)

    @property
    def dx(self) -> float:
        return self.x_max / self.m

    @property
    def nodes(self) -> np.ndarray:
        x = np.arange(self.m + 1, dtype=float) * self.dx
        x[-1] = self.x_max
        return x

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.m + 1, self.dx)

    def refine(self, k: int = 2) -> "SizeGrid":
        return SizeGrid(self.x_max, self.m * k)


@dataclass(frozen=True)
class DelayGrid:
    """Uniform nodes ``-tau = s_0 < ... < s_p = 0`` on the delay axis."""

    tau: float
    p: int

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise GridError(f"tau must be positive, got {self.tau!r}")
        if int(self.p) != self.p or self.p <= 0:
            raise GridError(f"p must be a positive integer, got {self.p!r}")

    @property
    def dsigma(self) -> float:
        return self.tau / self.p

    @property
    def nodes(self) -> np.ndarray:
        s = -self.tau + np.arange(self.p + 1, dtype=float) * self.dsigma
        s[0] = -self.tau
        s[-1] = 0.0
        return s

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.p + 1, self.dsigma)

    def refine(self, k: int = 2) -> "DelayGrid":
        return DelayGrid(self.tau, self.p * k)


@dataclass
class DensityField:
    """One time slice ``n(t, .)`` sampled on a size grid."""

    grid: SizeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.m + 1,):
            raise GridError(
                f"field has shape {self.values.shape}, grid needs ({self.grid.m + 1},)"
            )
        if not np.all(np.isfinite(self.values)):
            raise GridError("density field contains non-finite values")

    @classmethod
    def zeros(cls, grid: SizeGrid) -> "DensityField":
        return cls(grid, np.zeros(grid.m + 1))

    @classmethod
    def from_function(cls, grid: SizeGrid, fn) -> "DensityField":
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float) * np.ones(grid.m + 1))


@dataclass
class HistoryBuffer:
    """The segment ``n_t(sigma) = n(t + sigma)`` for ``sigma`` on the delay grid.

    ``slices[j]`` is the density at ``anchor_time + sigma_j``; the last slice
    is the current field. Solvers hand out buffers that are views into their
    level store, so a slice and the stored level are the same memory.
    """

    delay: DelayGrid
    grid: SizeGrid
    slices: np.ndarray
    anchor_time: float = 0.0
    complete: bool = field(default=True)

    def __post_init__(self):
        self.slices = np.asarray(self.slices, dtype=float)
        expected = (self.delay.p + 1, self.grid.m + 1)
        if self.slices.shape != expected:
            raise GridError(f"history has shape {self.slices.shape}, expected {expected}")

    @classmethod
    def from_function(cls, delay: DelayGrid, grid: SizeGrid, fn, anchor_time: float = 0.0):
        """Sample ``fn(sigma, x)`` (broadcasting) on the delay x size grid."""
        s = delay.nodes[:, None]
        x = grid.nodes[None, :]
        vals = np.asarray(fn(s, x), dtype=float) * np.ones((delay.p + 1, grid.m + 1))
        return cls(delay, grid, vals, anchor_time)

    @classmethod
    def constant(cls, delay: DelayGrid, field_: DensityField, anchor_time: float = 0.0):
        vals = np.repeat(field_.values[None, :], delay.p + 1, axis=0)
        return cls(delay, field_.grid, vals, anchor_time)

    @property
    def times(self) -> np.ndarray:
        return self.anchor_time + self.delay.nodes

    @property
    def current(self) -> DensityField:
        return DensityField(self.grid, self.slices[-1])
