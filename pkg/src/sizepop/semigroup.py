"""The isomorphism S, its inverse, and the resolvent of the linearized operator.

Elements of the product space are pairs ``(u_hist(sigma, x), u(x))``. The
inverse maps and the resolvent are first-order linear ODEs in ``x`` and in
``sigma``; both are solved cell by cell with exponential-trapezoid weights through
:func:`sizepop.kernels.linear_recurrence`, which stays accurate when the
decay rate is large against the grid spacing and never forms ``E`` itself,
so large domains do not overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as _kernels
from .coefficients import EnvironmentKernel, ModelCoefficients
from .grids import DelayGrid, DensityField, GridError, SizeGrid, derivative
from .operators import EnvironmentOperator, norm_E, norm_X, norm_Y


class SemigroupDomainError(ValueError):
    """Input outside the domain of a semigroup-lab operation."""


@dataclass
class ProductElement:
    """``(history_part, field_part)`` on a delay x size grid pair."""

    delay: DelayGrid
    grid: SizeGrid
    history_part: np.ndarray
    field_part: np.ndarray

    def __post_init__(self):
        self.history_part = np.asarray(self.history_part, dtype=float)
        self.field_part = np.asarray(self.field_part, dtype=float)
        if self.history_part.shape != (self.delay.p + 1, self.grid.m + 1):
            raise GridError(f"history part has shape {self.history_part.shape}")
        if self.field_part.shape != (self.grid.m + 1,):
            raise GridError(f"field part has shape {self.field_part.shape}")

    @classmethod
    def zeros(cls, delay: DelayGrid, grid: SizeGrid) -> "ProductElement":
        return cls(delay, grid, np.zeros((delay.p + 1, grid.m + 1)), np.zeros(grid.m + 1))

    def in_Y(self, atol: float = 0.0) -> bool:
        """Compatibility ``u_hist(0, .) = u`` and ``u(0) = 0``."""
        return bool(np.all(np.abs(self.history_part[-1] - self.field_part) <= atol)
                    and abs(self.field_part[0]) <= atol)

    def norm_X(self) -> float:
        return norm_E(self.history_part, self.delay, self.grid) + norm_X(self.field_part, self.grid)

    def norm_Y(self) -> float:
        d = derivative(self.history_part, self.delay.dsigma, axis=0)
        return (norm_E(self.history_part, self.delay, self.grid) + norm_E(d, self.delay, self.grid)
                + norm_Y(self.field_part, self.grid))

    def __sub__(self, other: "ProductElement") -> "ProductElement":
        return ProductElement(self.delay, self.grid, self.history_part - other.history_part,
                              self.field_part - other.field_part)


def apply_S(U: ProductElement, atol: float = 0.0) -> ProductElement:
    """``S(u_hist, u) = (-d_sigma u_hist + u_hist, u' + u)``; ``U`` must satisfy the compatibility conditions."""
    if not U.in_Y(atol):
        raise SemigroupDomainError("element does not satisfy u_hist(0) = u and u(0) = 0")
    hist = -derivative(U.history_part, U.delay.dsigma, axis=0) + U.history_part
    fld = derivative(U.field_part, U.grid.dx) + U.field_part
    return ProductElement(U.delay, U.grid, hist, fld)


def exponential_weights(z: np.ndarray, h: float):
    """Weights of ``int_0^h e^{-c (h - s)} g(s) ds`` for ``g`` linear and ``z = c h``.

    Returns ``(e^{-z}, h phi_lo(z), h phi_hi(z))``; exact for piecewise-linear
    ``g`` and piecewise-constant ``c``, and equal to the trapezoid rule as
    ``z -> 0``. Series are used for small ``|z|`` to avoid cancellation.
    """
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    em = np.exp(-zs)
    lo = np.where(small, 0.5 - z / 3.0 + z * z / 8.0, (1.0 - (1.0 + zs) * em) / zs**2)
    hi = np.where(small, 0.5 - z / 6.0 + z * z / 24.0, (zs - 1.0 + em) / zs**2)
    return np.exp(-z), h * lo, h * hi


def _sigma_part(u: np.ndarray, f_hist: np.ndarray, delay: DelayGrid, rate: float) -> np.ndarray:
    """``e^{rate sigma} u + int_sigma^0 e^{rate (sigma - xi)} f_hist(xi) dxi`` on the delay nodes."""
    ds = delay.dsigma
    f, a, b = exponential_weights(np.full(delay.p, rate * ds), ds)
    v = _kernels.linear_recurrence(f, a, b, f_hist[::-1])[::-1]
    out = np.exp(rate * delay.nodes)[:, None] * u[None, :] + v
    out[-1] = u
    return out


def invert_S(F: ProductElement) -> ProductElement:
    """``u = e^{-x} int_0^x e^s f ds``, ``u_hist = e^sigma u + e^sigma int_sigma^0 e^{-xi} f_hist dxi``."""
    grid, delay = F.grid, F.delay
    f, a, b = exponential_weights(np.full(grid.m, grid.dx), grid.dx)
    u = _kernels.linear_recurrence(f, a, b, F.field_part)
    hist = _sigma_part(u, F.history_part, delay, 1.0)
    return ProductElement(delay, grid, hist, u)


@dataclass
class ResolventResult:
    element: ProductElement
    residual: float
    history_residual: float
    log_E: np.ndarray


def resolvent_A1(lam: float, w: DensityField, F: ProductElement, coeffs: ModelCoefficients,
                 rho: EnvironmentKernel, env_op: EnvironmentOperator | None = None) -> ResolventResult:
    """Resolvent of the linear part frozen at environment ``N^w = N[w]``.

    Solves ``(lam + 1) u + (gamma u)' = f`` with ``u(0) = 0`` via
    ``u = E(x) int_0^x f / (E gamma) ds`` with
    ``E = exp(-int_0^x (lam + 1 + D gamma) / gamma)``, and
    ``(lam + 1) u_hist - d_sigma u_hist = f_hist`` with ``u_hist(0) = u``.
    ``residual`` is the X-norm of the defining equation for ``u``;
    ``history_residual`` the E-norm of the one for ``u_hist``. ``env_op`` may
    carry a prebuilt environment operator for ``rho`` on this grid.
    """
    if not np.isfinite(lam) or lam <= 0:
        raise SemigroupDomainError(f"lambda must be positive, got {lam!r}")
    grid, delay = F.grid, F.delay
    if w.grid != grid:
        raise GridError("w and F live on different size grids")
    x = grid.nodes
    dx = grid.dx
    env = (env_op or EnvironmentOperator(rho, grid))(w.values)
    g = coeffs.speed(x, env)
    dg = coeffs.total_dgamma(x, env, derivative(env, dx))
    c = (lam + 1.0 + dg) / g
    log_E = np.zeros_like(x)
    log_E[1:] = -np.cumsum(0.5 * dx * (c[1:] + c[:-1]))
    f, a, b = exponential_weights(-np.diff(log_E), dx)
    u = _kernels.linear_recurrence(f, a, b, F.field_part / g)
    hist = _sigma_part(u, F.history_part, delay, lam + 1.0)
    res = (lam + 1.0) * u + derivative(g * u, dx) - F.field_part
    hres = (lam + 1.0) * hist - derivative(hist, delay.dsigma, axis=0) - F.history_part
    return ResolventResult(ProductElement(delay, grid, hist, u), norm_X(res, grid),
                           norm_E(hres, delay, grid), log_E)


# --------------------------------------------------------------------------
# randomized batteries


def random_profile(rng: np.random.Generator, x: np.ndarray, n_bumps: int = 3, signed: bool = True) -> np.ndarray:
    """Sum of Gaussian bumps supported well inside ``[0, x_max]``."""
    xm = x[-1]
    out = np.zeros_like(x)
    for _ in range(n_bumps):
        c = rng.uniform(0.15 * xm, 0.6 * xm)
        wdt = rng.uniform(0.04 * xm, 0.12 * xm)
        a = rng.normal() if signed else rng.uniform(0.2, 1.0)
        out += a * np.exp(-0.5 * ((x - c) / wdt) ** 2)
    return out


def random_X_element(rng, delay: DelayGrid, grid: SizeGrid) -> ProductElement:
    x, s = grid.nodes, delay.nodes
    f = random_profile(rng, x)
    g1, g2 = random_profile(rng, x), random_profile(rng, x)
    a, om = rng.uniform(-1, 1), rng.uniform(0.5, 3.0)
    hist = g1[None, :] * (1.0 + a * s[:, None]) + g2[None, :] * np.sin(om * s)[:, None]
    return ProductElement(delay, grid, hist, f)


def random_Y_element(rng, delay: DelayGrid, grid: SizeGrid) -> ProductElement:
    """Smooth element with ``u(0) = 0`` and ``u_hist(0, .) = u`` holding exactly."""
    x, s = grid.nodes, delay.nodes
    u = random_profile(rng, x) * -np.expm1(-(x ** 2))
    v = random_profile(rng, x)
    cst, om = rng.uniform(-2, 2), rng.uniform(0.5, 3.0)
    hist = np.exp(cst * s)[:, None] * u[None, :] + np.sin(om * s)[:, None] * v[None, :]
    hist[-1] = u
    return ProductElement(delay, grid, hist, u)


def norm_equivalence_constants(tau: float) -> tuple[float, float]:
    """``(c1, c2) = (1 / (2 tau + 3), 1)``."""
    return 1.0 / (2.0 * tau + 3.0), 1.0


def norm_equivalence_battery(delay: DelayGrid, grid: SizeGrid, draws: int = 64, seed: int = 0) -> dict:
    """Ratios ``|SU|_X / |U|_Y`` and the relative violation of either inequality (0 when both hold)."""
    rng = np.random.default_rng(seed)
    c1, c2 = norm_equivalence_constants(delay.tau)
    ratios, slack = [], 0.0
    for _ in range(draws):
        U = random_Y_element(rng, delay, grid)
        ny = U.norm_Y()
        nx = apply_S(U).norm_X()
        r = nx / ny
        ratios.append(r)
        slack = max(slack, (c1 - r) / c1, (r - c2) / c2)
    return {"c1": c1, "c2": c2, "ratio_min": float(min(ratios)), "ratio_max": float(max(ratios)),
            "slack": float(max(slack, 0.0)), "draws": draws}


def contraction_battery(lambdas, delay: DelayGrid, grid: SizeGrid, coeffs: ModelCoefficients,
                        rho: EnvironmentKernel, draws: int = 256, seed: int = 0) -> list[dict]:
    """Per-``lambda`` worst margins of the ``1/lambda`` bound and of the sharper component bound.

    Margins are relative: ``(bound - observed) / bound``. Each draw uses a
    fresh random ``F`` and a fresh non-negative ``w``.
    """
    rng = np.random.default_rng(seed)
    out = []
    x = grid.nodes
    op = EnvironmentOperator(rho, grid)
    for lam in lambdas:
        worst, worst_sharp, worst_res = np.inf, np.inf, 0.0
        for _ in range(draws):
            F = random_X_element(rng, delay, grid)
            w = DensityField(grid, random_profile(rng, x, signed=False))
            R = resolvent_A1(lam, w, F, coeffs, rho, op)
            obs = R.element.norm_X()
            fe = norm_E(F.history_part, delay, grid)
            fx = norm_X(F.field_part, grid)
            b1 = (fe + fx) / lam
            b2 = fe / (lam + 1) + (1.0 / (lam + 1) ** 2 + 1.0 / (lam + 1)) * fx
            worst = min(worst, (b1 - obs) / b1)
            worst_sharp = min(worst_sharp, (b2 - obs) / b2)
            worst_res = max(worst_res, R.residual / max(fx, 1e-300))
        out.append({"lambda": float(lam), "min_margin": float(worst), "min_margin_sharp": float(worst_sharp),
                    "max_rel_residual": float(worst_res), "draws": draws})
    return out


def round_trip_error(F: ProductElement) -> float:
    """``|S(S^{-1} F) - F|_X / |F|_X``."""
    back = apply_S(invert_S(F))
    return (back - F).norm_X() / F.norm_X()


# --------------------------------------------------------------------------
# the full verification suite


def _grids(x_max, dx, tau, dsigma, k=1):
    return DelayGrid(tau, int(round(tau / dsigma)) * k), SizeGrid.from_spacing(x_max, dx / k)


def closed_form_checks(x_max: float, dx: float, tau: float, dsigma: float) -> dict:
    """Sup errors of the closed-form resolvent and inverse instances with ``gamma = 1``, ``F = (0, e^{-x})``."""
    from .coefficients import make_coefficients, make_environment

    delay, grid = _grids(x_max, dx, tau, dsigma)
    x, s = grid.nodes, delay.nodes
    F = ProductElement(delay, grid, np.zeros((delay.p + 1, grid.m + 1)), np.exp(-x))
    coeffs = make_coefficients({"family": "constant", "value": 1.0}, {"family": "constant", "value": 0.0}, 1.0)
    rho = make_environment({"family": "constant", "amp": 0.0})
    R = resolvent_A1(1.0, DensityField.zeros(grid), F, coeffs, rho)
    u = np.exp(-x) - np.exp(-2 * x)
    res_err = float(np.max(np.abs(R.element.field_part - u)))
    res_hist = float(np.max(np.abs(R.element.history_part - np.exp(2 * s)[:, None] * u[None, :])))
    inv = invert_S(F)
    v = x * np.exp(-x)
    inv_err = float(np.max(np.abs(inv.field_part - v)))
    inv_hist = float(np.max(np.abs(inv.history_part - np.exp(s)[:, None] * v[None, :])))
    return {"dx": dx, "resolvent_sup_error": res_err, "resolvent_history_sup_error": res_hist,
            "inverse_sup_error": inv_err, "inverse_history_sup_error": inv_hist,
            "inverse_in_Y": invert_S(F).in_Y(), "resolvent_residual": R.residual}


def refinement_orders(errors) -> list:
    e = np.asarray(errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return [float(v) for v in np.log2(e[:-1] / e[1:])]


def run_suite(settings: dict, coeffs: ModelCoefficients, rho: EnvironmentKernel, seed: int = 0) -> dict:
    """Closed forms, contraction and norm-equivalence batteries, and refinement studies.

    ``settings`` carries ``x_max, dx, tau, dsigma, lambdas, draws,
    equivalence_draws, refinements``.
    """
    x_max, dx, tau, ds = (float(settings[k]) for k in ("x_max", "dx", "tau", "dsigma"))
    lambdas = [float(v) for v in settings["lambdas"]]
    if any(not lam > 0 for lam in lambdas):
        raise SemigroupDomainError("every lambda must be positive")
    nref = int(settings.get("refinements", 3))
    delay, grid = _grids(x_max, dx, tau, ds)
    out = {"closed_form": closed_form_checks(x_max, dx, tau, ds)}
    out["contraction"] = contraction_battery(lambdas, delay, grid, coeffs, rho,
                                             draws=int(settings["draws"]), seed=seed)
    eq = [norm_equivalence_battery(*_grids(x_max, dx, tau, ds, k), draws=int(settings["equivalence_draws"]),
                                   seed=seed) for k in (1, 2)]
    out["norm_equivalence"] = {"coarse": eq[0], "refined": eq[1]}
    rt, rr = [], []
    for i in range(nref):
        d_k, g_k = _grids(x_max, 2 * dx, tau, 2 * ds, 2**i)
        rng = np.random.default_rng(seed)
        F = random_X_element(rng, d_k, g_k)
        rt.append(round_trip_error(F))
        w = DensityField(g_k, random_profile(rng, g_k.nodes, signed=False))
        R = resolvent_A1(1.0, w, F, coeffs, rho)
        rr.append(R.residual / F.norm_X())
    out["round_trip"] = {"errors": rt, "orders": refinement_orders(rt)}
    out["resolvent_residual"] = {"errors": rr, "orders": refinement_orders(rr)}
    cf = out["closed_form"]
    checks = {
        "closed_form_resolvent": cf["resolvent_sup_error"] <= 1e-4,
        "closed_form_inverse": cf["inverse_sup_error"] <= 1e-4,
        "contraction": all(c["min_margin"] > 0 for c in out["contraction"]),
        "contraction_sharp": all(c["min_margin_sharp"] > 0 for c in out["contraction"]),
        "norm_equivalence": eq[0]["slack"] <= 0.02 and eq[1]["slack"] <= max(eq[0]["slack"] / 2, 1e-12),
        "round_trip_second_order": bool(out["round_trip"]["orders"]) and min(out["round_trip"]["orders"]) >= 1.8,
        "residual_converges": bool(out["resolvent_residual"]["orders"]) and min(out["resolvent_residual"]["orders"]) >= 0.9,
    }
    out["checks"] = checks
    out["passed"] = all(checks.values())
    return out
