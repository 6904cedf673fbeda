"""Per-level coefficient tables shared by both solvers."""

from __future__ import annotations

import numpy as np

from .coefficients import SizePopModel
from .grids import DelayGrid, SizeGrid, derivative
from .operators import EnvironmentOperator, RecruitmentOperator


class Discretization:
    """Environment, growth, mortality and recruitment evaluated on a fixed grid pair."""

    def __init__(self, model: SizePopModel, grid: SizeGrid, delay: DelayGrid, use_factors: bool = True):
        self.model = model
        self.grid = grid
        self.delay = delay
        self.env_op = EnvironmentOperator(model.environment, grid)
        self.rec_op = RecruitmentOperator(model.recruitment, grid, delay, env_op=self.env_op,
                                          use_factors=use_factors)
        self.x = grid.nodes

    def environment(self, rows: np.ndarray) -> np.ndarray:
        return self.env_op(rows)

    def coefficients(self, env: np.ndarray):
        """``(gamma, D gamma, mu)`` for environment profiles of shape ``(..., m + 1)``."""
        c = self.model.coeffs
        x = self.x
        vel = c.speed(x, env)
        dN = derivative(env, self.grid.dx, axis=-1)
        dg = c.total_dgamma(x, env, dN)
        mu = c.mortality(x, env)
        return vel, dg, mu

    def recruitment(self, rows: np.ndarray) -> np.ndarray:
        """Recruitment for every window of ``p + 1`` consecutive rows."""
        return self.rec_op.levels(rows)
