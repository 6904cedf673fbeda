"""Explicit first-order upwind finite-volume scheme with a delay window.

Node ``x_i`` owns the cell ``[x_i - dx/2, x_i + dx/2]``; the discrete mass
is ``dx * sum(n)``. Fluxes use the environment of the current field frozen
for the step, ``F_{i+1/2} = gamma(x_{i+1/2}, N_{i+1/2}) n_i`` with zero
inflow at ``x = 0`` and free outflow past ``x_max``.
"""

from __future__ import annotations

import logging

import numpy as np

from .coefficients import SizePopModel
from .discretization import Discretization
from .grids import DensityField, HistoryBuffer
from .record import SolutionRecord, SolverError, levels_for_horizon

log = logging.getLogger(__name__)


class CFLError(SolverError):
    pass


class NonFiniteError(SolverError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite density after step {step}")


def cfl_number(gamma_hi: float, dx: float, dt: float) -> float:
    return dt * gamma_hi / dx


def _check_cfl(model: SizePopModel, dx: float, dt: float) -> None:
    c = cfl_number(model.coeffs.gamma_hi, dx, dt)
    if c > 1.0 + 1e-12:
        raise CFLError(f"CFL violated: dt * gamma_hi / dx = {c:.6g} > 1")


def _step(disc: Discretization, n: np.ndarray, env: np.ndarray, recr: np.ndarray, dt: float):
    """Return ``(n_next, outflow, loss, gain)`` with the three mass fluxes of the step."""
    c = disc.model.coeffs
    dx = disc.grid.dx
    x = disc.x
    x_half = x + 0.5 * dx
    env_half = np.empty_like(env)
    env_half[:-1] = 0.5 * (env[:-1] + env[1:])
    env_half[-1] = env[-1]
    flux = c.speed(x_half, env_half) * n
    mu = c.mortality(x, env)
    div = flux.copy()
    div[1:] -= flux[:-1]
    nxt = n - (dt / dx) * div - dt * mu * n + dt * recr
    return nxt, dt * flux[-1], dt * dx * float(np.sum(mu * n)), dt * dx * float(np.sum(recr))


def upwind_step(current: DensityField, history: HistoryBuffer, model: SizePopModel, dt: float,
                disc: Discretization | None = None) -> DensityField:
    """Advance ``current`` by one explicit step using the history window anchored at it."""
    if history.grid != current.grid:
        raise ValueError("history and current field live on different grids")
    if not np.array_equal(history.slices[-1], current.values):
        raise ValueError("history is not anchored at the current field")
    _check_cfl(model, current.grid.dx, dt)
    disc = disc or Discretization(model, current.grid, history.delay)
    env = disc.environment(current.values)
    recr = disc.recruitment(history.slices)[0]
    nxt, *_ = _step(disc, current.values, env, recr, dt)
    return DensityField(current.grid, nxt)


def solve_upwind(initial: HistoryBuffer, model: SizePopModel, T: float,
                 mass_guard: bool = True, check_positive: bool = False) -> SolutionRecord:
    """March ``T / dt`` steps with ``dt`` the spacing of the history grid.

    Records the discrete mass-balance residual of every step in
    ``meta["mass_residual"]`` (relative to the mass at the step start).
    """
    delay = initial.delay
    dt = delay.dsigma
    grid = initial.grid
    _check_cfl(model, grid.dx, dt)
    K = levels_for_horizon(T, dt)
    rec = SolutionRecord.allocate(initial, K)
    disc = Discretization(model, grid, delay)
    p = delay.p
    rows = rec.rows
    dx = grid.dx
    residual = np.zeros(K)
    outflow = np.zeros(K)
    positive_ok = True
    if mass_guard:
        rec.check_escape(0)
    for k in range(K):
        n = rows[p + k]
        env = disc.environment(n)
        rec.env[k] = env
        recr = disc.recruitment(rows[k:k + p + 1])[0]
        nxt, out, loss, gain = _step(disc, n, env, recr, dt)
        if not np.all(np.isfinite(nxt)):
            raise NonFiniteError(k + 1)
        rows[p + k + 1] = nxt
        m0 = dx * float(np.sum(n))
        m1 = dx * float(np.sum(nxt))
        scale = max(abs(m0), abs(m1), abs(gain), abs(loss), abs(out))
        residual[k] = abs(m1 - (m0 - out - loss + gain)) / scale if scale > 0 else 0.0
        outflow[k] = out
        if check_positive and nxt.min() < -1e-12 * max(nxt.max(), 0.0):
            positive_ok = False
            log.warning("negative density %.3e after step %d", nxt.min(), k + 1)
        if mass_guard:
            rec.check_escape(k + 1)
    rec.env[K] = disc.environment(rows[p + K])
    vel, dg, mu = disc.coefficients(rec.env)
    rec.tables = {"gamma": vel, "dgamma": dg, "mu": mu, "rate": dg + mu,
                  "recruitment": disc.recruitment(rows)}
    env_max = float(rec.env.max()) if rec.env.size else 0.0
    rec.meta.update(
        solver="upwind",
        cfl=cfl_number(model.coeffs.gamma_hi, dx, dt),
        mass_residual=residual,
        max_mass_residual=float(residual.max()) if K else 0.0,
        outflow=outflow,
        positive=positive_ok,
        env_max=env_max,
        env_exceeds_K=env_max > model.coeffs.K,
    )
    return rec
