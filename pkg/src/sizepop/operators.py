"""Nonlocal environment, delayed recruitment, the accumulated environment, and norms.

The single-slice functions (:func:`environment`, :func:`recruitment`,
:func:`script_N`, :func:`norm`) are the reference surface. The solvers use
:class:`EnvironmentOperator` and :class:`RecruitmentOperator`, which cache
the quadrature matrices and evaluate many time levels at once; they compute
the same sums.
"""

from __future__ import annotations

import enum
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .coefficients import EnvironmentKernel, RecruitmentKernel
from .grids import DelayGrid, DensityField, GridError, HistoryBuffer, SizeGrid, derivative

log = logging.getLogger(__name__)

# Cache the generic recruitment tensor only below this many entries.
TENSOR_CACHE_LIMIT = 20_000_000


class IncompleteHistoryError(RuntimeError):
    """Recruitment was requested from a history buffer that is missing slices."""


class NormKind(enum.Enum):
    X = "X"
    Y = "Y"
    E = "E"
    SUP = "SUP"
    PRODUCT_X = "PRODUCT_X"
    PRODUCT_Y = "PRODUCT_Y"


# --------------------------------------------------------------------------
# norms


def norm_X(values, grid: SizeGrid) -> float:
    return float(grid.weights @ np.abs(np.asarray(values, dtype=float)))


def norm_Y(values, grid: SizeGrid) -> float:
    v = np.asarray(values, dtype=float)
    return norm_X(v, grid) + norm_X(derivative(v, grid.dx), grid)


def norm_E(slices, delay: DelayGrid, grid: SizeGrid) -> float:
    s = np.abs(np.asarray(slices, dtype=float))
    return float(delay.weights @ s @ grid.weights)


def norm_sup(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.max(np.abs(v))) if v.size else 0.0


def _split_pair(obj):
    if hasattr(obj, "history_part"):
        return obj.history_part, obj.field_part, obj.delay, obj.grid
    if isinstance(obj, tuple) and len(obj) == 2:
        hist, fld = obj
        if not isinstance(hist, HistoryBuffer) or not isinstance(fld, DensityField):
            raise GridError("paired norm needs (HistoryBuffer, DensityField)")
        if hist.grid != fld.grid:
            raise GridError("history and field live on different size grids")
        return hist.slices, fld.values, hist.delay, fld.grid
    raise GridError(f"cannot take a product norm of {type(obj).__name__}")


def norm(obj, kind: NormKind | str) -> float:
    """Trapezoid norm of a field, a history segment, or a (history, field) pair."""
    kind = NormKind(kind) if not isinstance(kind, NormKind) else kind
    if kind in (NormKind.X, NormKind.Y, NormKind.SUP):
        if not isinstance(obj, DensityField):
            raise GridError(f"{kind.value}-norm needs a DensityField, got {type(obj).__name__}")
        if kind is NormKind.X:
            return norm_X(obj.values, obj.grid)
        if kind is NormKind.Y:
            return norm_Y(obj.values, obj.grid)
        return norm_sup(obj.values)
    if kind is NormKind.E:
        if isinstance(obj, HistoryBuffer):
            return norm_E(obj.slices, obj.delay, obj.grid)
        raise GridError(f"E-norm needs a HistoryBuffer, got {type(obj).__name__}")
    hist, fld, delay, grid = _split_pair(obj)
    if kind is NormKind.PRODUCT_X:
        return norm_E(hist, delay, grid) + norm_X(fld, grid)
    return (norm_E(hist, delay, grid) + norm_E(derivative(hist, delay.dsigma, axis=0), delay, grid)
            + norm_Y(fld, grid))


# --------------------------------------------------------------------------
# environment


class EnvironmentOperator:
    """``N[n](x_i) = sum_j rho(x_i, y_j) w_j n(y_j)`` with the matrix cached."""

    def __init__(self, kernel: EnvironmentKernel, grid: SizeGrid):
        self.kernel = kernel
        self.grid = grid
        self.matrix = kernel.weight_matrix(grid)

    def __call__(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return values @ self.matrix.T


def environment(n: DensityField, rho: EnvironmentKernel, K: float | None = None) -> np.ndarray:
    """Environment profile ``N[n]`` on the nodes of ``n.grid``.

    Values above the cap ``K`` are logged, not clipped.
    """
    prof = EnvironmentOperator(rho, n.grid)(n.values)
    if K is not None and prof.size and prof.max() > K:
        log.warning("environment %.6g exceeds cap K=%.6g", prof.max(), K)
    return prof


def accumulated_environment(env_slices: np.ndarray, delay: DelayGrid) -> np.ndarray:
    """``Ncal(sigma_j, x)`` for every delay node from per-slice environment profiles.

    Trapezoid over the nodes ``xi_k >= sigma_j``; the last row is zero.
    Accepts a leading batch axis: ``(..., p + 1, m + 1)``.
    """
    env_slices = np.asarray(env_slices, dtype=float)
    pieces = 0.5 * delay.dsigma * (env_slices[..., 1:, :] + env_slices[..., :-1, :])
    out = np.zeros_like(env_slices)
    out[..., :-1, :] = np.flip(np.cumsum(np.flip(pieces, axis=-2), axis=-2), axis=-2)
    return out


def script_N(history: HistoryBuffer, rho: EnvironmentKernel, sigma: float) -> np.ndarray:
    """Accumulated environment ``int_sigma^0 N[n(t + xi)] dxi`` at one delay coordinate.

    Only delay nodes ``xi_j >= sigma`` enter the trapezoid sum.
    """
    tau = history.delay.tau
    if not (-tau - 1e-12 * tau <= sigma <= 1e-12 * tau):
        raise GridError(f"sigma={sigma} outside [-{tau}, 0]")
    nodes = history.delay.nodes
    first = int(np.searchsorted(nodes, sigma - 1e-12 * tau, side="left"))
    op = EnvironmentOperator(rho, history.grid)
    env = op(history.slices[first:])
    if env.shape[0] < 2:
        return np.zeros(history.grid.m + 1)
    h = history.delay.dsigma
    return h * (env.sum(axis=0) - 0.5 * (env[0] + env[-1]))


# --------------------------------------------------------------------------
# recruitment


class RecruitmentOperator:
    """Distributed-delay recruitment ``int_{-tau}^0 int beta(sigma, x, y) n(t + sigma, y) dy dsigma``.

    Uses the kernel's factorization when it has one, otherwise the full
    ``beta`` tensor (cached when small enough).
    """

    def __init__(self, kernel: RecruitmentKernel, grid: SizeGrid, delay: DelayGrid,
                 env_op: EnvironmentOperator | None = None, use_factors: bool = True):
        self.kernel = kernel
        self.grid = grid
        self.delay = delay
        self.env_op = env_op
        if kernel.env_dependent and env_op is None:
            raise ValueError("environment-dependent recruitment needs an environment operator")
        x = grid.nodes
        s = delay.nodes
        self.ws = delay.weights
        self.wy = grid.weights
        self.factored = use_factors and kernel.factors is not None and (
            not kernel.env_dependent or kernel.modulation is not None)
        self._tensor = None
        if self.factored:
            a, b, c = kernel.factors(s, x, x)
            self.a = np.broadcast_to(np.asarray(a, dtype=float), s.shape).copy()
            self.b = np.broadcast_to(np.asarray(b, dtype=float), x.shape).copy()
            self.c = np.broadcast_to(np.asarray(c, dtype=float), x.shape).copy()
        elif not kernel.env_dependent and (s.size * x.size * x.size) <= TENSOR_CACHE_LIMIT:
            self._tensor = np.stack([self._slab(j) for j in range(s.size)])

    def _slab(self, j, ncal=None):
        x = self.grid.nodes
        s = self.delay.nodes[j]
        if ncal is None:
            B = self.kernel.evaluate(s, x[:, None], x[None, :])
        else:
            B = self.kernel.evaluate(s, x[:, None], x[None, :], ncal[:, None])
        return np.asarray(B, dtype=float) * np.ones((x.size, x.size))

    def __call__(self, slices: np.ndarray, env_slices: np.ndarray | None = None) -> np.ndarray:
        """Recruitment profile from one history segment ``(p + 1, m + 1)``."""
        return self.levels(np.asarray(slices, dtype=float), env_slices)[0]

    def levels(self, rows: np.ndarray, env_rows: np.ndarray | None = None) -> np.ndarray:
        """Recruitment for every window of ``p + 1`` consecutive rows.

        ``rows[k + j]`` is the density at ``t_k + sigma_j``; the result has
        ``rows.shape[0] - p`` profiles.
        """
        p = self.delay.p
        rows = np.asarray(rows, dtype=float)
        nlev = rows.shape[0] - p
        if nlev < 1:
            raise IncompleteHistoryError(f"need at least {p + 1} slices, got {rows.shape[0]}")
        if self.kernel.is_zero:
            return np.zeros((nlev, self.grid.m + 1))
        if self.kernel.env_dependent and env_rows is None:
            env_rows = self.env_op(rows)
        if self.factored:
            C = rows @ (self.wy * self.c)
            wa = self.ws * self.a
            if not self.kernel.env_dependent:
                S = np.correlate(C, wa, mode="valid")
                return S[:, None] * self.b[None, :]
            env_win = sliding_window_view(env_rows, p + 1, axis=0)  # (nlev, m+1, p+1)
            ncal = accumulated_environment(np.swapaxes(env_win, 1, 2), self.delay)
            C_win = sliding_window_view(C, p + 1)  # (nlev, p+1)
            g = self.kernel.modulation(ncal)  # (nlev, p+1, m+1)
            S = np.einsum("kj,kjx->kx", C_win * wa[None, :], g)
            return S * self.b[None, :]
        out = np.empty((nlev, self.grid.m + 1))
        for k in range(nlev):
            win = rows[k:k + p + 1] * self.wy[None, :]
            if self.kernel.env_dependent:
                ncal = accumulated_environment(env_rows[k:k + p + 1], self.delay)
                acc = np.zeros(self.grid.m + 1)
                for j in range(p + 1):
                    acc += self.ws[j] * (self._slab(j, ncal[j]) @ win[j])
            elif self._tensor is not None:
                acc = np.einsum("j,jxy,jy->x", self.ws, self._tensor, win)
            else:
                acc = np.zeros(self.grid.m + 1)
                for j in range(p + 1):
                    acc += self.ws[j] * (self._slab(j) @ win[j])
            out[k] = acc
        return out


def recruitment(history: HistoryBuffer, kernel: RecruitmentKernel,
                rho: EnvironmentKernel | None = None) -> np.ndarray:
    """Recruitment profile at the anchor time of ``history``."""
    if not history.complete or history.slices.shape[0] != history.delay.p + 1:
        raise IncompleteHistoryError("history buffer is incomplete")
    env_op = EnvironmentOperator(rho, history.grid) if kernel.env_dependent else None
    op = RecruitmentOperator(kernel, history.grid, history.delay, env_op)
    return op(history.slices)
