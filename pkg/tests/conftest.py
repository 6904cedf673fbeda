from pathlib import Path

import numpy as np
import pytest

from sizepop.coefficients import SizePopModel, make_coefficients, make_environment, make_recruitment
from sizepop.grids import SizeGrid
from sizepop.initial import history_bump
from sizepop.record import delay_for_step

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def build_model(gamma=None, mu=None, rho=None, beta=None, K=10.0, tau=1.0):
    return SizePopModel(
        make_coefficients(gamma or {"family": "constant", "value": 1.0},
                          mu or {"family": "constant", "value": 0.0}, K),
        make_environment(rho or {"family": "constant", "amp": 0.0}),
        make_recruitment(beta or {"family": "zero"}, tau),
    )


DESK = dict(
    gamma={"family": "saturating_size", "g0": 1.0, "g_inf": 0.5, "k": 0.3, "c": 0.2},
    mu={"family": "saturating", "base": 0.2, "amp": 0.2},
    rho={"family": "hierarchy", "amp": 1.0},
    beta={"family": "birth", "rate": 1.0, "offspring_scale": 0.5, "fertility_half": 2.0},
)


def desk_case(dx=0.04, dt=0.02, x_max=12.0, tau=1.0):
    grid = SizeGrid.from_spacing(x_max, dx)
    delay = delay_for_step(tau, dt)
    model = build_model(tau=tau, **DESK)
    h = history_bump(delay, grid, center=3.0, width=0.8, amp=1.0, ramp=1.0, sigma_rate=0.3)
    return grid, delay, model, h


def decay_case(dx=0.02, dt=0.01, x_max=16.0, mu=0.5, ramp=0.0):
    grid = SizeGrid.from_spacing(x_max, dx)
    delay = delay_for_step(1.0, dt)
    model = build_model(mu={"family": "constant", "value": mu})
    h = history_bump(delay, grid, center=5.0, width=1.0, ramp=ramp)
    return grid, delay, model, h


def decay_exact(x, t, mu=0.5, ramp=0.0):
    """Closed form ``n0(x - t) exp(-mu t)``, zero below ``x = t``."""
    y = x - t
    n0 = np.exp(-0.5 * (y - 5.0) ** 2)
    if ramp > 0:
        n0 = n0 * (1.0 - np.exp(-((y / ramp) ** 2)))
    return np.where(y > 0, n0, 0.0) * np.exp(-mu * t)


@pytest.fixture(scope="session")
def desk_records():
    from sizepop.characteristics import solve_characteristics
    from sizepop.upwind import solve_upwind

    grid, delay, model, h = desk_case()
    return {"model": model, "history": h,
            "characteristics": solve_characteristics(h, model, 2.0),
            "upwind": solve_upwind(h, model, 2.0)}


@pytest.fixture(scope="session")
def decay_records():
    from sizepop.characteristics import solve_characteristics
    from sizepop.upwind import solve_upwind

    out = {}
    for ref in (1, 2):
        grid, delay, model, h = decay_case(0.02 / ref, 0.01 / ref)
        out[ref] = {"grid": grid, "model": model, "history": h,
                    "characteristics": solve_characteristics(h, model, 1.0),
                    "upwind": solve_upwind(h, model, 1.0)}
    return out
