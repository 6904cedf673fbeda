"""Vital-rate coefficients, interaction kernels and the parametric families shipped with the package.

Every evaluator is a plain callable that broadcasts over numpy arrays.
Families build the callables together with their declared bound constants;
the declared constants are upper bounds (with a small quadrature headroom
for the kernel integrals) and are what the assumption checkers test.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .grids import SizeGrid

Evaluator = Callable[..., np.ndarray]

# Relative headroom on declared kernel integrals: the trapezoid rule
# overestimates integrals of convex tails by O(dx^2).
KERNEL_HEADROOM = 1.01
EPS = float(np.finfo(float).eps)


class FamilyError(ValueError):
    """Unknown family name or parameters outside the family's documented range."""


def _central(fn, x, N, which, h=1e-6):
    x = np.asarray(x, dtype=float)
    N = np.asarray(N, dtype=float)
    if which == "x":
        hx = h * (1.0 + np.abs(x))
        return (fn(x + hx, N) - fn(x - hx, N)) / (2 * hx)
    hN = h * (1.0 + np.abs(N))
    return (fn(x, N + hN) - fn(x, N - hN)) / (2 * hN)


@dataclass
class ModelCoefficients:
    """Growth rate ``gamma(x, N)``, mortality ``mu(x, N)`` and their declared bounds.

    The bounds are declarations, not guarantees; :func:`sizepop.assumptions.check_A2_A3`
    compares them against sampled values on ``[0, x_max] x [0, K]``.
    """

    gamma: Evaluator
    mu: Evaluator
    gamma_lo: float
    gamma_hi: float
    gamma_d1: float = 0.0
    gamma_d2: float = 0.0
    mu_hi: float = 0.0
    mu_x_hi: float = 0.0
    mu_N_hi: float = 0.0
    K: float = 1.0
    gamma_x: Optional[Evaluator] = None
    gamma_N: Optional[Evaluator] = None
    gamma_x_inf: Optional[float] = None
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def dgamma_dx(self, x, N):
        if self.gamma_x is not None:
            return np.broadcast_to(self.gamma_x(x, N), np.broadcast(x, N).shape).astype(float)
        return _central(self.gamma, x, N, "x")

    def dgamma_dN(self, x, N):
        if self.gamma_N is not None:
            return np.broadcast_to(self.gamma_N(x, N), np.broadcast(x, N).shape).astype(float)
        return _central(self.gamma, x, N, "N")

    def speed(self, x, N):
        return np.broadcast_to(self.gamma(x, N), np.broadcast(x, N).shape).astype(float)

    def mortality(self, x, N):
        return np.broadcast_to(self.mu(x, N), np.broadcast(x, N).shape).astype(float)

    def total_dgamma(self, x, N, dN):
        """``D gamma = gamma_x + gamma_N * dN/dx`` along a profile ``N(x)``."""
        return self.dgamma_dx(x, N) + self.dgamma_dN(x, N) * dN


@dataclass
class EnvironmentKernel:
    """Weight ``rho(x, y)`` of the nonlocal environment ``N[n](x) = int rho(x, y) n(y) dy``."""

    rho: Evaluator
    family: str = "custom"
    params: dict = field(default_factory=dict)
    # Right limit rho(x, x+) for kernels that jump to zero below the diagonal.
    diagonal: Optional[Callable] = None

    def weight_matrix(self, grid: SizeGrid) -> np.ndarray:
        """Matrix ``P`` with ``(P @ n)[i]`` the trapezoid environment at ``x_i``.

        For a kernel vanishing below the diagonal the row ``i`` is the
        trapezoid rule on ``[x_i, x_max]``, so the diagonal weight is
        ``rho(x_i, x_i+) dx / 2`` and the last row is zero.
        """
        x = grid.nodes
        vals = np.asarray(self.rho(x[:, None], x[None, :]), dtype=float)
        vals = vals * np.ones((x.size, x.size))
        P = vals * grid.weights[None, :]
        if self.diagonal is not None:
            d = np.asarray(self.diagonal(x), dtype=float) * np.ones(x.size) * 0.5 * grid.dx
            d[-1] = 0.0
            P[np.diag_indices_from(P)] = d
        return P


@dataclass
class RecruitmentKernel:
    """Birth kernel ``beta(sigma, x, y)`` or ``beta(sigma, x, y, Ncal)``.

    ``factors``, when present, gives ``(a(sigma), b(x), c(y))`` with
    ``beta = a * b * c * modulation(Ncal)`` so the double integral collapses
    to one weighted sum per delay node. ``beta`` itself is always available
    and is what the checkers and the generic path evaluate.
    """

    beta: Evaluator
    R0: float = 0.0
    R1: float = 0.0
    R2: float = 0.0
    L_R: float = 0.0
    L_Rx: float = 0.0
    env_dependent: bool = False
    factors: Optional[Callable] = None
    modulation: Optional[Evaluator] = None
    modulation_lipschitz: float = 0.0
    is_zero: bool = False
    family: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def R_bar(self) -> float:
        return max(self.R0, self.R1, self.R2)

    def evaluate(self, sigma, x, y, ncal=None):
        if self.env_dependent:
            if ncal is None:
                ncal = 0.0
            return np.asarray(self.beta(sigma, x, y, ncal), dtype=float)
        return np.asarray(self.beta(sigma, x, y), dtype=float)


@dataclass
class SizePopModel:
    coeffs: ModelCoefficients
    environment: EnvironmentKernel
    recruitment: RecruitmentKernel


# --------------------------------------------------------------------------
# growth families


def gamma_constant(value: float = 1.0):
    """``gamma = value``; requires ``value > 0``."""
    if value <= 0:
        raise FamilyError("constant growth must be positive")
    g = lambda x, N: np.full(np.broadcast(x, N).shape, float(value))
    z = lambda x, N: np.zeros(np.broadcast(x, N).shape)
    bounds = dict(gamma_lo=value, gamma_hi=value, gamma_d1=0.0, gamma_d2=0.0)
    return g, z, z, bounds, 0.0


def gamma_hyperbolic(base: float, amp: float, K: float):
    """``gamma = base + amp / (1 + N)``; requires ``base + min(amp, amp/(1+K)) > 0``."""
    lo = base + min(amp, amp / (1.0 + K))
    hi = base + max(amp, amp / (1.0 + K))
    if lo <= 0:
        raise FamilyError("hyperbolic growth must stay positive on [0, K]")
    g = lambda x, N: base + amp / (1.0 + np.asarray(N, dtype=float)) + 0.0 * np.asarray(x)
    gx = lambda x, N: np.zeros(np.broadcast(x, N).shape)
    gN = lambda x, N: -amp / (1.0 + np.asarray(N, dtype=float)) ** 2 + 0.0 * np.asarray(x)
    bounds = dict(gamma_lo=lo, gamma_hi=hi, gamma_d1=abs(amp), gamma_d2=2 * abs(amp))
    return g, gx, gN, bounds, 0.0


def gamma_linear(base: float, slope: float, K: float):
    """``gamma = base + slope * N``; requires positivity on ``[0, K]``."""
    lo = base + min(0.0, slope * K)
    hi = base + max(0.0, slope * K)
    if lo <= 0:
        raise FamilyError("linear growth must stay positive on [0, K]")
    g = lambda x, N: base + slope * np.asarray(N, dtype=float) + 0.0 * np.asarray(x)
    gx = lambda x, N: np.zeros(np.broadcast(x, N).shape)
    gN = lambda x, N: np.full(np.broadcast(x, N).shape, float(slope))
    bounds = dict(gamma_lo=lo, gamma_hi=hi, gamma_d1=abs(slope), gamma_d2=0.0)
    return g, gx, gN, bounds, 0.0


def gamma_saturating_size(g0: float, g_inf: float, k: float, c: float, K: float):
    """Size-decelerating growth suppressed by the environment.

    ``gamma = (g_inf + (g0 - g_inf) exp(-k x)) / (1 + c N)`` with
    ``g0, g_inf > 0``, ``k >= 0``, ``c >= 0``.
    """
    if g0 <= 0 or g_inf <= 0 or k < 0 or c < 0:
        raise FamilyError("saturating_size needs g0, g_inf > 0 and k, c >= 0")
    d = g0 - g_inf

    def a(x):
        e = np.exp(-k * np.asarray(x, dtype=float))
        # convex form hits g0 and g_inf exactly
        return g0 * e + g_inf * (1.0 - e)

    def g(x, N):
        return a(x) / (1.0 + c * np.asarray(N, dtype=float))

    def gx(x, N):
        return -k * d * np.exp(-k * np.asarray(x, dtype=float)) / (1.0 + c * np.asarray(N, dtype=float))

    def gN(x, N):
        return -c * a(x) / (1.0 + c * np.asarray(N, dtype=float)) ** 2

    amax = max(g0, g_inf)
    bounds = dict(
        # a few ulps of slack absorb rounding in the convex combination
        gamma_lo=min(g0, g_inf) / (1.0 + c * K) * (1.0 - 8 * EPS),
        gamma_hi=amax * (1.0 + 8 * EPS),
        gamma_d1=max(k * abs(d), c * amax),
        gamma_d2=max(k * k * abs(d), c * k * abs(d), 2 * c * c * amax),
    )
    return g, gx, gN, bounds, -k * max(d, 0.0)


GAMMA_FAMILIES = {
    "constant": gamma_constant,
    "hyperbolic": gamma_hyperbolic,
    "linear": gamma_linear,
    "saturating_size": gamma_saturating_size,
}

# --------------------------------------------------------------------------
# mortality families


def mu_constant(value: float = 0.0):
    """``mu = value >= 0``."""
    if value < 0:
        raise FamilyError("mortality must be non-negative")
    m = lambda x, N: np.full(np.broadcast(x, N).shape, float(value))
    return m, dict(mu_hi=value, mu_x_hi=0.0, mu_N_hi=0.0)


def mu_saturating(base: float, amp: float, K: float):
    """``mu = base + amp N / (1 + N)`` with ``base, amp >= 0``."""
    if base < 0 or amp < 0:
        raise FamilyError("saturating mortality needs base, amp >= 0")
    m = lambda x, N: base + amp * np.asarray(N, dtype=float) / (1.0 + np.asarray(N, dtype=float)) + 0.0 * np.asarray(x)
    return m, dict(mu_hi=base + amp * K / (1.0 + K), mu_x_hi=0.0, mu_N_hi=amp)


MU_FAMILIES = {"constant": mu_constant, "saturating": mu_saturating}


def _family_call(table, name, params, kind):
    try:
        fn = table[name]
    except KeyError:
        raise FamilyError(f"unknown {kind} family {name!r}; known: {sorted(table)}") from None
    try:
        return fn(**params)
    except TypeError as exc:
        raise FamilyError(f"bad parameters for {kind} family {name!r}: {exc}") from None


def make_coefficients(gamma_spec: dict, mu_spec: dict, K: float) -> ModelCoefficients:
    """Build coefficients from ``{"family": name, **params}`` dictionaries."""
    if not (K > 0):
        raise FamilyError("environment cap K must be positive")
    gspec = dict(gamma_spec)
    gname = gspec.pop("family", "constant")
    if gname in ("hyperbolic", "linear", "saturating_size"):
        gspec["K"] = K
    g, gx, gN, gb, gx_inf = _family_call(GAMMA_FAMILIES, gname, gspec, "gamma")
    mspec = dict(mu_spec)
    mname = mspec.pop("family", "constant")
    if mname == "saturating":
        mspec["K"] = K
    m, mb = _family_call(MU_FAMILIES, mname, mspec, "mu")
    return ModelCoefficients(
        gamma=g, mu=m, gamma_x=gx, gamma_N=gN, K=K, gamma_x_inf=gx_inf,
        family=f"{gname}/{mname}",
        params={"gamma": dict(gamma_spec), "mu": dict(mu_spec)},
        **gb, **mb,
    )


# --------------------------------------------------------------------------
# environment kernels


def rho_constant(amp: float = 1.0):
    if amp < 0:
        raise FamilyError("rho must be non-negative")
    return lambda x, y: np.full(np.broadcast(x, y).shape, float(amp))


def rho_gaussian(amp: float = 1.0, width: float = 1.0):
    if amp < 0 or width <= 0:
        raise FamilyError("gaussian rho needs amp >= 0, width > 0")
    return lambda x, y: amp * np.exp(-((np.asarray(x) - np.asarray(y)) ** 2) / (2 * width**2))


def rho_hierarchy(amp: float = 1.0):
    """``rho = amp * 1{y >= x}``; pointwise the jump node ``y == x`` carries half weight."""
    if amp < 0:
        raise FamilyError("rho must be non-negative")

    def rho(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return amp * np.where(y > x, 1.0, np.where(y == x, 0.5, 0.0))

    rho.diagonal = lambda x: np.full(np.shape(x), float(amp))
    return rho


RHO_FAMILIES = {"constant": rho_constant, "gaussian": rho_gaussian, "hierarchy": rho_hierarchy}


def make_environment(spec: dict) -> EnvironmentKernel:
    spec = dict(spec)
    name = spec.pop("family", "constant")
    rho = _family_call(RHO_FAMILIES, name, spec, "environment")
    return EnvironmentKernel(rho=rho, family=name, params=spec, diagonal=getattr(rho, "diagonal", None))


# --------------------------------------------------------------------------
# recruitment kernels


def beta_zero(**_):
    z = lambda s, x, y, *rest: np.zeros(np.broadcast(s, x, y).shape)
    fac = lambda s, x, y: (np.zeros_like(s, dtype=float), np.zeros_like(x, dtype=float), np.zeros_like(y, dtype=float))
    return RecruitmentKernel(beta=z, factors=fac, is_zero=True, family="zero")


def beta_exp_x(amp: float = 1.0, **_):
    """``beta = amp * exp(-x)``, independent of delay and parent size."""
    if amp < 0:
        raise FamilyError("beta must be non-negative")
    beta = lambda s, x, y, *rest: amp * np.exp(-np.asarray(x, dtype=float)) * np.ones(np.broadcast(s, x, y).shape)
    fac = lambda s, x, y: (np.ones_like(s, dtype=float), amp * np.exp(-np.asarray(x, dtype=float)), np.ones_like(y, dtype=float))
    R0 = amp * KERNEL_HEADROOM
    return RecruitmentKernel(
        beta=beta, factors=fac, R0=R0, R1=2 * R0, R2=amp, L_R=R0, L_Rx=2 * R0,
        family="exp_x", params=dict(amp=amp),
    )


def _delay_profile(kappa: float, tau: float):
    if kappa == 0:
        return (lambda s: np.full(np.shape(s), 1.0 / tau)), 1.0 / tau
    norm = kappa / -np.expm1(-kappa * tau)
    return (lambda s: norm * np.exp(kappa * np.asarray(s, dtype=float))), max(norm, norm * np.exp(-kappa * tau))


def beta_birth(rate: float, tau: float, offspring_scale: float = 0.5,
               fertility_half: float = 1.0, kappa: float = 0.0,
               env_coupling: float = 0.0, **_):
    """Separable renewal kernel.

    ``beta = rate * w(sigma) * psi(x) * phi(y) / (1 + env_coupling * Ncal)`` with
    ``w`` the normalized profile ``kappa e^{kappa sigma}`` on ``[-tau, 0]``
    (uniform for ``kappa = 0``), offspring sizes ``psi(x) = x e^{-x/s} / s^2``
    and fertility ``phi(y) = y^2 / (y_h^2 + y^2)``. Valid for ``rate >= 0``,
    ``offspring_scale > 0``, ``fertility_half > 0``, ``kappa >= 0``,
    ``env_coupling >= 0``; a positive ``env_coupling`` makes the kernel depend
    on the accumulated environment.
    """
    if rate < 0 or offspring_scale <= 0 or fertility_half <= 0 or kappa < 0 or env_coupling < 0:
        raise FamilyError("birth kernel parameters out of range")
    s0 = float(offspring_scale)
    w, w_max = _delay_profile(float(kappa), float(tau))

    def psi(x):
        x = np.asarray(x, dtype=float)
        return x * np.exp(-x / s0) / s0**2

    def phi(y):
        y = np.asarray(y, dtype=float)
        return y * y / (fertility_half**2 + y * y)

    env = env_coupling > 0

    def modulation(ncal):
        return 1.0 / (1.0 + env_coupling * np.asarray(ncal, dtype=float))

    if env:
        def beta(s, x, y, ncal=0.0):
            return rate * w(s) * psi(x) * phi(y) * modulation(ncal)
    else:
        def beta(s, x, y, *rest):
            return rate * w(s) * psi(x) * phi(y)

    def factors(s, x, y):
        return rate * w(s), psi(x), phi(y)

    psi_max = 1.0 / (s0 * np.e)
    R0 = rate * w_max * KERNEL_HEADROOM
    R1 = rate * w_max * (1.0 + 2.0 * psi_max) * KERNEL_HEADROOM
    R2 = rate * w_max * psi_max
    return RecruitmentKernel(
        beta=beta, factors=factors, modulation=modulation if env else None,
        modulation_lipschitz=env_coupling, env_dependent=env,
        R0=R0, R1=R1, R2=R2, L_R=R0, L_Rx=R1, family="birth",
        params=dict(rate=rate, offspring_scale=s0, fertility_half=fertility_half,
                    kappa=kappa, env_coupling=env_coupling),
    )


BETA_FAMILIES = {"zero": beta_zero, "exp_x": beta_exp_x, "birth": beta_birth}


def make_recruitment(spec: dict, tau: float) -> RecruitmentKernel:
    spec = dict(spec)
    name = spec.pop("family", "zero")
    declared = {k: spec.pop(k) for k in ("R0", "R1", "R2", "L_R", "L_Rx") if k in spec}
    if name == "birth":
        spec["tau"] = tau
    kernel = _family_call(BETA_FAMILIES, name, spec, "recruitment")
    for k, v in declared.items():
        setattr(kernel, k, float(v))
    return kernel
