"""Sampled checks of the structural hypotheses on the coefficients and kernels."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .coefficients import ModelCoefficients, RecruitmentKernel
from .grids import DelayGrid, DensityField, SizeGrid, derivative

TOL_A5 = 1e-10
N_LEVELS = 64
# Pointwise finite differences of exact bounds can overshoot by rounding.
FD_RELTOL = 1e-6
# Trapezoid integrals of a convex kernel overshoot an exact declared constant by O(dx^2).
QUAD_RELTOL = 1e-4


@dataclass
class Condition:
    name: str
    passed: bool
    observed: float
    declared: Optional[float] = None
    location: Optional[tuple] = None
    detail: str = ""


@dataclass
class CheckReport:
    name: str
    conditions: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def __getitem__(self, key) -> Condition:
        for c in self.conditions:
            if c.name == key:
                return c
        raise KeyError(key)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed,
                "conditions": [asdict(c) for c in self.conditions]}


def _fd(fn, X, N, which, order=1):
    h = 1e-4
    if which == "x":
        hx = h * (1.0 + np.abs(X))
        if order == 1:
            return (fn(X + hx, N) - fn(X - hx, N)) / (2 * hx)
        return (fn(X + hx, N) - 2 * fn(X, N) + fn(X - hx, N)) / hx**2
    if which == "N":
        hN = h * (1.0 + np.abs(N))
        if order == 1:
            return (fn(X, N + hN) - fn(X, N - hN)) / (2 * hN)
        return (fn(X, N + hN) - 2 * fn(X, N) + fn(X, N - hN)) / hN**2
    hx = h * (1.0 + np.abs(X))
    hN = h * (1.0 + np.abs(N))
    return (fn(X + hx, N + hN) - fn(X + hx, N - hN) - fn(X - hx, N + hN) + fn(X - hx, N - hN)) / (4 * hx * hN)


def _extreme(values, X, N, mode):
    vals = np.asarray(values, dtype=float) * np.ones_like(X)
    bad = ~np.isfinite(vals)
    if bad.any():
        idx = np.unravel_index(np.argmax(bad), vals.shape)
        return float("nan"), (float(X[idx]), float(N[idx]))
    idx = np.unravel_index(np.argmax(vals) if mode == "max" else np.argmin(vals), vals.shape)
    return float(vals[idx]), (float(X[idx]), float(N[idx]))


def _upper(name, obs, loc, bound, rel=0.0):
    ok = np.isfinite(obs) and obs <= bound + rel * max(abs(bound), 1.0)
    detail = "" if np.isfinite(obs) else "non-finite evaluation"
    return Condition(name, bool(ok), obs, bound, loc, detail)


def check_A2_A3(coeffs: ModelCoefficients, x_max: float, sample_budget: int = 256,
                n_levels: int = N_LEVELS) -> CheckReport:
    """Sample ``gamma`` and ``mu`` on ``[0, x_max] x [0, K]`` and compare to declared bounds.

    ``sample_budget`` is the number of size samples per environment level.
    Derivatives are pointwise central differences.
    """
    if sample_budget < 1:
        raise ValueError("sample_budget must be >= 1")
    if not coeffs.K > 0:
        raise ValueError("environment cap K must be positive")
    xs = np.linspace(0.0, x_max, max(int(sample_budget), 1))
    Ns = np.linspace(0.0, coeffs.K, n_levels)
    X, N = np.meshgrid(xs, Ns, indexing="ij")
    g, m = coeffs.gamma, coeffs.mu
    with np.errstate(all="ignore"):
        gv = np.asarray(g(X, N), dtype=float) * np.ones_like(X)
        mv = np.asarray(m(X, N), dtype=float) * np.ones_like(X)
        d1 = np.maximum(np.abs(_fd(g, X, N, "x")), np.abs(_fd(g, X, N, "N")))
        d2 = np.maximum.reduce([np.abs(_fd(g, X, N, "x", 2)), np.abs(_fd(g, X, N, "N", 2)),
                                np.abs(_fd(g, X, N, "xN"))])
        mx = np.abs(_fd(m, X, N, "x"))
        mN = np.abs(_fd(m, X, N, "N"))
    rep = CheckReport("A2_A3")
    gmin, gmin_at = _extreme(gv, X, N, "min")
    gmax, gmax_at = _extreme(gv, X, N, "max")
    ok_lo = np.isfinite(gmin) and gmin > 0 and gmin >= coeffs.gamma_lo
    rep.conditions.append(Condition("gamma_lower", bool(ok_lo), gmin, coeffs.gamma_lo, gmin_at,
                                    "" if np.isfinite(gmin) else "non-finite evaluation"))
    rep.conditions.append(_upper("gamma_upper", gmax, gmax_at, coeffs.gamma_hi))
    rep.conditions.append(_upper("gamma_d1", *_extreme(d1, X, N, "max"), coeffs.gamma_d1, FD_RELTOL))
    rep.conditions.append(_upper("gamma_d2", *_extreme(d2, X, N, "max"), coeffs.gamma_d2, 1e-4))
    mmin, mmin_at = _extreme(mv, X, N, "min")
    rep.conditions.append(Condition("mu_nonnegative", bool(np.isfinite(mmin) and mmin >= 0), mmin, 0.0, mmin_at,
                                    "" if np.isfinite(mmin) else "non-finite evaluation"))
    rep.conditions.append(_upper("mu_upper", *_extreme(mv, X, N, "max"), coeffs.mu_hi))
    rep.conditions.append(_upper("mu_x", *_extreme(mx, X, N, "max"), coeffs.mu_x_hi, FD_RELTOL))
    rep.conditions.append(_upper("mu_N", *_extreme(mN, X, N, "max"), coeffs.mu_N_hi, FD_RELTOL))
    return rep


def check_A5(coeffs: ModelCoefficients, env, grid: Optional[SizeGrid] = None,
             tol: float = TOL_A5) -> CheckReport:
    """Check ``gamma_N(x, N(x)) * N'(x) >= -tol`` along an environment profile.

    ``env`` is a callable ``N(x)``, a :class:`DensityField`, or an array
    sampled on ``grid``. Callables get pointwise central differences. Sampled
    profiles get central differences inside and first-order one-sided ones at
    the two ends: those keep the sign of the discrete increment, so a monotone
    profile is never reported as violating through stencil error.
    """
    if callable(env):
        x = grid.nodes
        h = 1e-6 * (1.0 + np.abs(x))
        vals = np.asarray(env(x), dtype=float)
        dN = (np.asarray(env(x + h), dtype=float) - np.asarray(env(x - h), dtype=float)) / (2 * h)
    else:
        if isinstance(env, DensityField):
            grid, vals = env.grid, env.values
        else:
            vals = np.asarray(env, dtype=float)
        x = grid.nodes
        dN = np.gradient(vals, grid.dx, edge_order=1)
    with np.errstate(all="ignore"):
        prod = coeffs.dgamma_dN(x, vals) * dN
    rep = CheckReport("A5")
    if not np.all(np.isfinite(prod)):
        i = int(np.argmax(~np.isfinite(prod)))
        rep.conditions.append(Condition("monotone_growth_coupling", False, float("nan"), -tol, (float(x[i]),),
                                        "non-finite evaluation"))
        return rep
    i = int(np.argmin(prod))
    rep.conditions.append(Condition("monotone_growth_coupling", bool(prod[i] >= -tol), float(prod[i]), -tol,
                                    (float(x[i]),)))
    return rep


def check_H_conditions(kernel: RecruitmentKernel, grid: SizeGrid, delay: DelayGrid,
                       ncal_levels: Optional[np.ndarray] = None) -> CheckReport:
    """Quadrature checks of the kernel bounds, per delay node and parent size.

    ``R1`` is compared with the discrete ``W^{1,1}`` norm ``int beta + int |beta_x|``
    of ``beta(sigma, ., y)``, which is the quantity the recruitment ``Y``-norm
    bound needs. Both integral constants allow a relative ``QUAD_RELTOL``
    for trapezoid overshoot. For environment-dependent kernels every condition is taken
    over ``ncal_levels`` as well, and Lipschitz quotients of both integrals in
    ``Ncal`` are reported.
    """
    x = grid.nodes
    wx = grid.weights
    if kernel.env_dependent:
        levels = np.asarray(ncal_levels if ncal_levels is not None else np.linspace(0.0, 10.0, 9), dtype=float)
    else:
        levels = np.array([0.0])
    sup = -np.inf
    sup_at = None
    neg = np.inf
    neg_at = None
    i0 = -np.inf
    i0_at = None
    i1 = -np.inf
    i1_at = None
    finite = True
    ints0 = np.empty((levels.size, delay.p + 1, x.size))
    ints1 = np.empty_like(ints0)
    for a, nc in enumerate(levels):
        for j, s in enumerate(delay.nodes):
            with np.errstate(all="ignore"):
                B = kernel.evaluate(s, x[:, None], x[None, :], nc) * np.ones((x.size, x.size))
            if not np.all(np.isfinite(B)):
                finite = False
                continue
            k = np.unravel_index(np.argmax(B), B.shape)
            if B[k] > sup:
                sup, sup_at = float(B[k]), (float(s), float(x[k[0]]), float(x[k[1]]), float(nc))
            k = np.unravel_index(np.argmin(B), B.shape)
            if B[k] < neg:
                neg, neg_at = float(B[k]), (float(s), float(x[k[0]]), float(x[k[1]]), float(nc))
            col0 = wx @ B
            col1 = col0 + wx @ np.abs(derivative(B, grid.dx, axis=0))
            ints0[a, j] = col0
            ints1[a, j] = col1
            y = int(np.argmax(col0))
            if col0[y] > i0:
                i0, i0_at = float(col0[y]), (float(s), float(x[y]), float(nc))
            y = int(np.argmax(col1))
            if col1[y] > i1:
                i1, i1_at = float(col1[y]), (float(s), float(x[y]), float(nc))
    rep = CheckReport("H")
    note = "" if finite else "non-finite evaluation"
    rep.conditions.append(Condition("beta_nonnegative", finite and neg >= 0, neg, 0.0, neg_at, note))
    rep.conditions.append(Condition("beta_sup_R2", finite and sup <= kernel.R2, sup, kernel.R2, sup_at, note))
    ok0 = finite and i0 <= kernel.R0 * (1 + QUAD_RELTOL)
    ok1 = finite and i1 <= kernel.R1 * (1 + QUAD_RELTOL)
    rep.conditions.append(Condition("beta_integral_R0", ok0, i0, kernel.R0, i0_at, note))
    rep.conditions.append(Condition("beta_w11_R1", ok1, i1, kernel.R1, i1_at, note))
    if kernel.env_dependent and levels.size > 1 and finite:
        dn = np.abs(levels[:, None] - levels[None, :])
        mask = dn > 0
        q0 = np.abs(ints0[:, None] - ints0[None, :]).max(axis=(2, 3))
        q1 = np.abs(ints1[:, None] - ints1[None, :]).max(axis=(2, 3))
        lip0 = float((q0[mask] / dn[mask]).max())
        lip1 = float((q1[mask] / dn[mask]).max())
        rep.conditions.append(Condition("lipschitz_integral_in_Ncal", bool(np.isfinite(lip0)), lip0))
        rep.conditions.append(Condition("lipschitz_w11_in_Ncal", bool(np.isfinite(lip1)), lip1))
    return rep
