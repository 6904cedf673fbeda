"""Characteristic tracing and the method-of-steps Picard solver.

Along ``dx/dt = gamma(x, N[n(t)](x))`` the equation reduces to
``dn/dt = -(D gamma + mu) n + Recr``, with ``D gamma = gamma_x + gamma_N N_x``.
Each level is evaluated by tracing every node back to ``t = 0`` (initial-data
branch) or to its entry time through ``x = 0`` (boundary branch, no initial
term). Slabs have width ``tau``; inside a slab the representation is
iterated to a fixed point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from . import kernels as _kernels
from .coefficients import ModelCoefficients, SizePopModel
from .discretization import Discretization
from .grids import HistoryBuffer
from .record import SolutionRecord, SolverError, levels_for_horizon

log = logging.getLogger(__name__)

TOL_PICARD = 1e-8
MAX_ITER = 50
# Entry times are refined until |phi| <= XTOL_REL * x_max.
XTOL_REL = 1e-10


class ConvergenceError(SolverError):
    def __init__(self, slab: int, iterations: int, residual: float):
        self.slab, self.iterations, self.residual = slab, iterations, residual
        super().__init__(f"Picard iteration on slab {slab} did not converge in {iterations} "
                         f"iterations (last residual {residual:.3e})")


# --------------------------------------------------------------------------
# velocity fields


class VelocityField(Protocol):
    x_max: Optional[float]

    def velocity(self, t: float, x: float) -> float: ...

    def dgamma(self, t: float, x: float) -> float: ...


class TabulatedField:
    """Speed and ``D gamma`` read from a record's per-level tables.

    Linear in ``x`` between nodes (constant outside the grid) and linear in
    ``t`` between levels, the same rule the representation kernel uses.
    """

    def __init__(self, record: SolutionRecord):
        if "gamma" not in record.tables:
            raise ValueError("record carries no coefficient tables")
        self.vel = record.tables["gamma"]
        self.dg = record.tables["dgamma"]
        self.dt = record.dt
        self.dx = record.grid.dx
        self.x_max = record.grid.x_max
        self.t_max = record.T
        self._n = self.vel.shape[1]

    def _row(self, table, j, x):
        q = min(max(int(np.floor(x / self.dx)), 0), self._n - 2)
        r = min(max(x / self.dx - q, 0.0), 1.0)
        return table[j, q] * (1.0 - r) + table[j, q + 1] * r

    def _sample(self, table, t, x):
        u = t / self.dt
        j = min(max(int(np.floor(u)), 0), table.shape[0] - 2) if table.shape[0] > 1 else 0
        if table.shape[0] == 1:
            return self._row(table, 0, x)
        th = min(max(u - j, 0.0), 1.0)
        return (1.0 - th) * self._row(table, j, x) + th * self._row(table, j + 1, x)

    def velocity(self, t, x):
        return self._sample(self.vel, t, x)

    def dgamma(self, t, x):
        return self._sample(self.dg, t, x)


class FrozenEnvironmentField:
    """Autonomous field ``gamma(x, N(x))`` for an analytic environment profile."""

    def __init__(self, coeffs: ModelCoefficients, env, denv, x_max: Optional[float] = None):
        self.coeffs = coeffs
        self.env = env
        self.denv = denv
        self.x_max = x_max

    def velocity(self, t, x):
        return float(self.coeffs.speed(x, self.env(x)))

    def dgamma(self, t, x):
        N = self.env(x)
        return float(self.coeffs.total_dgamma(x, N, self.denv(x)))


# --------------------------------------------------------------------------
# tracing


@dataclass
class CharacteristicPath:
    """Samples of ``phi(t; t0, x0)`` and the signed integral of ``D gamma`` from ``t0``.

    ``exp(jacobian_log[k])`` is ``d phi(t_k) / d x0``. ``exit_time`` is the
    time the path crossed ``x = 0`` (backward) or left ``[0, x_max]``
    (forward); ``escaped`` flags the latter as a truncation report.
    """

    seed: tuple
    t: np.ndarray
    x: np.ndarray
    jacobian_log: np.ndarray
    exit_time: Optional[float] = None
    escaped: bool = False

    @property
    def jacobian(self) -> float:
        return float(np.exp(self.jacobian_log[-1]))


def _rk4(field: VelocityField, t, x, h):
    """One signed RK4 step of size ``h`` with the ``D gamma`` integral."""
    k1, l1 = field.velocity(t, x), field.dgamma(t, x)
    x2 = x + 0.5 * h * k1
    k2, l2 = field.velocity(t + 0.5 * h, x2), field.dgamma(t + 0.5 * h, x2)
    x3 = x + 0.5 * h * k2
    k3, l3 = field.velocity(t + 0.5 * h, x3), field.dgamma(t + 0.5 * h, x3)
    x4 = x + h * k3
    k4, l4 = field.velocity(t + h, x4), field.dgamma(t + h, x4)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), h / 6.0 * (l1 + 2 * l2 + 2 * l3 + l4)


def trace_characteristic(seed, source, direction: str = "backward", dt: Optional[float] = None,
                         t_stop: Optional[float] = None, xtol: Optional[float] = None) -> CharacteristicPath:
    """RK4 trace of the characteristic through ``seed = (t0, x0)``.

    ``source`` is a :class:`SolutionRecord` (its coefficient tables are used)
    or any velocity field. Backward traces stop at ``t_stop`` (default 0) or
    at the crossing of ``x = 0``, refined by bisection of the last step.
    Forward traces stop at ``t_stop`` (default: the record horizon) or when
    the path leaves ``[0, x_max]``.
    """
    if isinstance(source, SolutionRecord):
        field_ = TabulatedField(source)
        dt = source.dt if dt is None else dt
        if direction == "forward" and t_stop is None:
            t_stop = source.T
    else:
        field_ = source
    if dt is None or dt <= 0:
        raise ValueError("a positive step dt is required")
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    t0, x0 = float(seed[0]), float(seed[1])
    x_max = getattr(field_, "x_max", None)
    if xtol is None:
        xtol = XTOL_REL * (x_max if x_max else 1.0)
    sign = -1.0 if direction == "backward" else 1.0
    if t_stop is None:
        t_stop = 0.0 if direction == "backward" else t0 + dt
    span = sign * (t_stop - t0)
    if span < 0:
        raise ValueError("t_stop lies on the wrong side of the seed time")
    nsteps = int(np.ceil(span / dt - 1e-9))
    ts, xs, js = [t0], [x0], [0.0]
    t, x, jl = t0, x0, 0.0
    exit_time = None
    escaped = False
    if direction == "backward" and x0 <= 0.0:
        return CharacteristicPath((t0, x0), np.array(ts), np.array(xs), np.array(js), exit_time=t0)
    for k in range(nsteps):
        h = min(dt, span - k * dt)
        xn, dl = _rk4(field_, t, x, sign * h)
        if direction == "backward" and xn < -xtol:
            lo, hi = 0.0, h
            s = h
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                xm, dm = _rk4(field_, t, x, -mid)
                s, xn, dl = mid, xm, dm
                if abs(xm) <= xtol:
                    break
                if xm > 0:
                    lo = mid
                else:
                    hi = mid
            t = t - s
            ts.append(t)
            xs.append(max(xn, 0.0))
            js.append(jl + dl)
            exit_time = t
            break
        if direction == "backward" and xn < 0.0:
            xn = 0.0
        t = t0 + sign * min((k + 1) * dt, span)
        jl += dl
        x = xn
        ts.append(t)
        xs.append(x)
        js.append(jl)
        if direction == "forward" and x_max is not None and x > x_max:
            exit_time, escaped = t, True
            log.warning("characteristic from (%g, %g) left [0, %g] at t=%g", t0, x0, x_max, t)
            break
    return CharacteristicPath((t0, x0), np.array(ts), np.array(xs), np.array(js), exit_time, escaped)


def origin_characteristic(source, t_stop: Optional[float] = None, dt: Optional[float] = None) -> CharacteristicPath:
    """``z(t) = phi(t; 0, 0)``, the path separating the two branches."""
    return trace_characteristic((0.0, 0.0), source, "forward", dt=dt, t_stop=t_stop)


def entry_time(t: float, x: float, source, dt: Optional[float] = None) -> Optional[float]:
    """Time ``eta`` with ``phi(eta; t, x) = 0``, or ``None`` when the path reaches ``t = 0`` first."""
    if x < 0:
        raise ValueError("x must be non-negative")
    path = trace_characteristic((t, x), source, "backward", dt=dt, t_stop=0.0)
    return path.exit_time


# --------------------------------------------------------------------------
# Picard solver


def _refresh_tables(rec: SolutionRecord, disc: Discretization, k_lo: int, k_hi: int) -> None:
    lv = rec.levels
    env = disc.environment(lv[k_lo:k_hi + 1])
    vel, dg, mu = disc.coefficients(env)
    rec.env[k_lo:k_hi + 1] = env
    t = rec.tables
    t["gamma"][k_lo:k_hi + 1] = vel
    t["dgamma"][k_lo:k_hi + 1] = dg
    t["mu"][k_lo:k_hi + 1] = mu
    t["rate"][k_lo:k_hi + 1] = dg + mu
    t["recruitment"][k_lo:k_hi + 1] = disc.recruitment(rec.rows[k_lo:k_hi + 1 + rec.p])


def picard_step(rec: SolutionRecord, disc: Discretization, k_a: int, k_b: int, backend=None,
                cache: Optional[dict] = None) -> float:
    """One fixed-point sweep over the slab of levels ``k_a + 1 .. k_b``.

    Rebuilds the coefficient and recruitment tables from the current guess,
    re-evaluates the representation, writes the new levels into the record
    and returns the largest X-norm change over the slab. When ``cache`` is
    given and the slab's tables are bitwise unchanged since the previous
    sweep, the representation is not re-evaluated (it would be identical).
    """
    kern = backend or _kernels
    _refresh_tables(rec, disc, k_a + 1, k_b)
    t = rec.tables
    keys = ("gamma", "rate", "recruitment")
    snap = [t[k][k_a + 1:k_b + 1] for k in keys]
    if cache is not None and cache.get("slab") == (k_a, k_b) and all(
            np.array_equal(a, b) for a, b in zip(snap, cache["tables"])):
        cache["skipped"] = cache.get("skipped", 0) + 1
        return 0.0
    new = kern.trace_representation(
        t["gamma"][:k_b + 1], t["rate"][:k_b + 1], t["recruitment"][:k_b + 1], rec.levels[0],
        rec.grid.dx, rec.dt, k_a + 1, k_b, XTOL_REL * rec.grid.x_max)
    if cache is not None:
        cache["slab"] = (k_a, k_b)
        cache["tables"] = [a.copy() for a in snap]
    old = rec.levels[k_a + 1:k_b + 1]
    w = rec.grid.weights
    residual = float(np.max(np.abs(new - old) @ w)) if new.size else 0.0
    old[...] = new
    return residual


def solve_characteristics(initial: HistoryBuffer, model: SizePopModel, T: float,
                          tol: float = TOL_PICARD, max_iter: int = MAX_ITER,
                          mass_guard: bool = True, backend=None) -> SolutionRecord:
    """Method-of-steps solution on ``[0, T]`` with step ``dt = tau / p`` from the history grid.

    Each slab starts from the slab-start field held constant in time and is
    iterated until the sup over levels of the X-norm change is at most
    ``tol``. Raises :class:`ConvergenceError` after ``max_iter`` sweeps.
    """
    delay = initial.delay
    dt = delay.dsigma
    K = levels_for_horizon(T, dt)
    rec = SolutionRecord.allocate(initial, K)
    disc = Discretization(model, initial.grid, delay)
    shape = (K + 1, initial.grid.m + 1)
    rec.tables = {k: np.zeros(shape) for k in ("gamma", "dgamma", "mu", "rate", "recruitment")}
    _refresh_tables(rec, disc, 0, 0)
    if mass_guard:
        rec.check_escape(0)
    p = delay.p
    iterations, residuals = [], []
    k_a, slab = 0, 0
    while k_a < K:
        k_b = min(k_a + p, K)
        rec.levels[k_a + 1:k_b + 1] = rec.levels[k_a]
        hist = []
        cache: dict = {}
        for it in range(1, max_iter + 1):
            r = picard_step(rec, disc, k_a, k_b, backend, cache)
            hist.append(r)
            if not np.isfinite(r):
                raise ConvergenceError(slab, it, r)
            if r <= tol:
                break
        else:
            raise ConvergenceError(slab, max_iter, hist[-1])
        _refresh_tables(rec, disc, k_a + 1, k_b)
        if mass_guard:
            for k in range(k_a + 1, k_b + 1):
                rec.check_escape(k)
        iterations.append(len(hist))
        residuals.append(hist)
        log.debug("slab %d: %d iterations, residuals %s", slab, len(hist), hist)
        k_a, slab = k_b, slab + 1
    env_max = float(rec.env.max()) if rec.env.size else 0.0
    rec.meta.update(
        solver="characteristics",
        backend=getattr(backend or _kernels, "BACKEND", getattr(backend, "__name__", "custom")),
        picard_iterations=iterations,
        picard_residuals=residuals,
        tol_picard=tol,
        env_max=env_max,
        env_exceeds_K=env_max > model.coeffs.K,
    )
    return rec
