"""TOML run configuration: parsing, validation, and construction of grids, model and history."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .coefficients import (FamilyError, SizePopModel, make_coefficients, make_environment,
                           make_recruitment)
from .grids import DelayGrid, GridError, HistoryBuffer, SizeGrid
from .initial import make_history
from .record import TRUNCATION_FRACTION, delay_for_step, escape_ratio, levels_for_horizon

SECTIONS = {"grid", "delay", "coefficients", "environment", "recruitment", "initial",
            "solver", "diagnostics", "semigroup", "sweep"}
SOLVERS = ("characteristics", "upwind")

_SOLVER_KEYS = {"method", "dt", "T", "tol_picard", "max_iter", "mass_guard", "backend", "snapshot_every"}
_DIAG_KEYS = {"enabled", "continuous_dependence", "epsilons", "seed", "factor"}
_SEMI_KEYS = {"x_max", "dx", "tau", "dsigma", "lambdas", "draws", "equivalence_draws", "seed", "refinements"}

DEFAULT_SOLVER = {"method": "characteristics", "tol_picard": 1e-8, "max_iter": 50,
                  "mass_guard": True, "backend": None, "snapshot_every": 1}
DEFAULT_DIAG = {"enabled": True, "continuous_dependence": False,
                "epsilons": [1e-1, 1e-2, 1e-3], "seed": 0, "factor": 3.0}
DEFAULT_SEMI = {"x_max": 20.0, "dx": 0.02, "tau": 1.0, "dsigma": 0.02, "lambdas": [0.5, 1.0, 2.0, 10.0],
                "draws": 256, "equivalence_draws": 64, "seed": 0, "refinements": 3}


class ConfigError(ValueError):
    """Invalid configuration (CLI exit code 2)."""


def _positive(sec: str, key: str, v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
        raise ConfigError(f"[{sec}] {key} must be a positive number, got {v!r}")
    return float(v)


def _table(raw: dict, name: str) -> dict:
    v = raw.get(name, {})
    if not isinstance(v, dict):
        raise ConfigError(f"[{name}] must be a table")
    return v


def _check_keys(sec: str, table: dict, allowed: set) -> None:
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"unknown keys in [{sec}]: {', '.join(extra)}")


def canonical_hash(raw: dict) -> str:
    """sha256 of the canonical JSON form of a configuration dictionary."""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def set_path(raw: dict, dotted: str, value) -> None:
    """Assign ``raw[a][b][c] = value`` for ``dotted = "a.b.c"``; parents must exist."""
    keys = dotted.split(".")
    node = raw
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise ConfigError(f"sweep parameter {dotted!r} does not name a config table")
        node = node[k]
    node[keys[-1]] = value


@dataclass
class Config:
    """A validated configuration; ``raw`` is the effective dictionary and ``sha256`` its hash."""

    raw: dict
    base_dir: Path
    refine: int = 1

    def __post_init__(self):
        self.validate()

    # -- parsing ---------------------------------------------------------
    @classmethod
    def from_text(cls, text: str, base_dir: Path = Path("."), refine: int = 1) -> "Config":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        return cls(raw, Path(base_dir), refine)

    @classmethod
    def load(cls, path, refine: int = 1) -> "Config":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text, path.parent, refine)

    def with_overrides(self, overrides: dict) -> "Config":
        raw = copy.deepcopy(self.raw)
        raw.pop("sweep", None)
        for k, v in overrides.items():
            set_path(raw, k, v)
        return Config(raw, self.base_dir, self.refine)

    def refined(self, k: int) -> "Config":
        return Config(copy.deepcopy(self.raw), self.base_dir, self.refine * k)

    # -- validation --------------------------------------------------------
    def validate(self) -> None:
        raw = self.raw
        if not isinstance(self.refine, int) or self.refine < 1:
            raise ConfigError(f"refine must be a positive integer, got {self.refine!r}")
        unknown = sorted(set(raw) - SECTIONS)
        if unknown:
            raise ConfigError(f"unknown sections: {', '.join(unknown)}")
        solver = self.solver
        _check_keys("solver", _table(raw, "solver"), _SOLVER_KEYS)
        _check_keys("diagnostics", _table(raw, "diagnostics"), _DIAG_KEYS)
        _check_keys("semigroup", _table(raw, "semigroup"), _SEMI_KEYS)
        if solver["method"] not in SOLVERS:
            raise ConfigError(f"[solver] method must be one of {SOLVERS}, got {solver['method']!r}")
        if solver["backend"] not in (None, "cython", "python"):
            raise ConfigError("[solver] backend must be 'cython' or 'python'")
        if not isinstance(solver["max_iter"], int) or solver["max_iter"] < 1:
            raise ConfigError("[solver] max_iter must be a positive integer")
        if not isinstance(solver["snapshot_every"], int) or solver["snapshot_every"] < 1:
            raise ConfigError("[solver] snapshot_every must be a positive integer")
        _positive("solver", "tol_picard", solver["tol_picard"])
        diag = self.diagnostics
        eps = diag["epsilons"]
        if not isinstance(eps, list) or not eps:
            raise ConfigError("[diagnostics] epsilons must be a non-empty list")
        for e in eps:
            _positive("diagnostics", "epsilons", e)
        _positive("diagnostics", "factor", diag["factor"])
        self._check_seed("diagnostics", diag["seed"])
        semi = self.semigroup
        for k in ("x_max", "dx", "tau", "dsigma"):
            _positive("semigroup", k, semi[k])
        if not isinstance(semi["lambdas"], list) or not semi["lambdas"]:
            raise ConfigError("[semigroup] lambdas must be a non-empty list")
        for lam in semi["lambdas"]:
            _positive("semigroup", "lambdas", lam)
        for k in ("draws", "equivalence_draws", "refinements"):
            if not isinstance(semi[k], int) or semi[k] < 1:
                raise ConfigError(f"[semigroup] {k} must be a positive integer")
        self._check_seed("semigroup", semi["seed"])
        sweep = _table(raw, "sweep")
        params = sweep.get("parameters", {})
        if not isinstance(params, dict):
            raise ConfigError("[sweep] parameters must be a table of lists")
        for k, v in params.items():
            if not isinstance(v, list) or not v:
                raise ConfigError(f"[sweep] parameter {k!r} needs a non-empty list of values")
        if "grid" in raw:
            self.build()

    @staticmethod
    def _check_seed(sec, v):
        if isinstance(v, bool) or not isinstance(v, int) or not (0 <= v < 2**64):
            raise ConfigError(f"[{sec}] seed must be an unsigned 64-bit integer")

    # -- views ---------------------------------------------------------------
    @property
    def sha256(self) -> str:
        return canonical_hash({"config": self.raw, "refine": self.refine})

    @property
    def solver(self) -> dict:
        return {**DEFAULT_SOLVER, **_table(self.raw, "solver")}

    @property
    def diagnostics(self) -> dict:
        return {**DEFAULT_DIAG, **_table(self.raw, "diagnostics")}

    @property
    def semigroup(self) -> dict:
        return {**DEFAULT_SEMI, **_table(self.raw, "semigroup")}

    @property
    def sweep_parameters(self) -> dict:
        return dict(_table(self.raw, "sweep").get("parameters", {}))

    # -- construction ----------------------------------------------------------
    def build(self) -> "Problem":
        raw = self.raw
        g, d = _table(raw, "grid"), _table(raw, "delay")
        s = self.solver
        try:
            x_max = _positive("grid", "x_max", g.get("x_max"))
            dx = _positive("grid", "dx", g.get("dx")) / self.refine
            tau = _positive("delay", "tau", d.get("tau"))
            dt = _positive("solver", "dt", s.get("dt")) / self.refine
            T = _positive("solver", "T", s.get("T"))
            grid = SizeGrid.from_spacing(x_max, dx)
            delay = delay_for_step(tau, dt)
            levels_for_horizon(T, dt)
            coeffs_t = dict(_table(raw, "coefficients"))
            K = coeffs_t.pop("K", None)
            if K is None:
                raise ConfigError("[coefficients] needs K")
            K = _positive("coefficients", "K", K)
            gamma = coeffs_t.pop("gamma", {"family": "constant", "value": 1.0})
            mu = coeffs_t.pop("mu", {"family": "constant", "value": 0.0})
            if coeffs_t:
                raise ConfigError(f"unknown keys in [coefficients]: {', '.join(sorted(coeffs_t))}")
            coeffs = make_coefficients(gamma, mu, K)
            env = make_environment(_table(raw, "environment"))
            rec = make_recruitment(_table(raw, "recruitment"), tau)
            init = dict(_table(raw, "initial"))
            if "csv" in init:
                init["csv"] = str((self.base_dir / init["csv"]).resolve())
            history = make_history(init, delay, grid)
        except (FamilyError, GridError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        if not np.all(np.isfinite(history.slices)):
            raise ConfigError("initial history is not finite")
        worst = max(escape_ratio(sl, grid) for sl in history.slices)
        if worst > TRUNCATION_FRACTION:
            raise ConfigError(f"initial history is not negligible at x_max (ratio {worst:.3e}); "
                              "enlarge [grid] x_max")
        return Problem(self, grid, delay, SizePopModel(coeffs, env, rec), history, T)


@dataclass
class Problem:
    config: Config
    grid: SizeGrid
    delay: DelayGrid
    model: SizePopModel
    history: HistoryBuffer
    T: float

    @property
    def dt(self) -> float:
        return self.delay.dsigma

    def solve(self, method: Optional[str] = None, history: Optional[HistoryBuffer] = None):
        from .characteristics import solve_characteristics
        from .kernels import get_backend
        from .upwind import solve_upwind

        s = self.config.solver
        method = method or s["method"]
        h = self.history if history is None else history
        if method == "upwind":
            return solve_upwind(h, self.model, self.T, mass_guard=s["mass_guard"])
        backend = get_backend(s["backend"]) if s["backend"] else None
        return solve_characteristics(h, self.model, self.T, tol=float(s["tol_picard"]),
                                     max_iter=s["max_iter"], mass_guard=s["mass_guard"], backend=backend)


def sweep_points(params: dict) -> list[dict]:
    """Cartesian product in declaration order; the last parameter varies fastest."""
    import itertools

    keys = list(params)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(params[k] for k in keys))]
