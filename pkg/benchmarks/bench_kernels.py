"""Time the compiled and pure-Python kernel backends on solver-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

Also solves the shipped desk case end to end with each backend and reports
the largest difference between the two records.
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from sizepop import _pykernels
from sizepop.config import Config

try:
    from sizepop import _ckernels
except ImportError:
    _ckernels = None

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk_renewal.toml"


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def trace_inputs(levels=51, n=301, dx=0.04, dt=0.02, seed=0):
    rng = np.random.default_rng(seed)
    x = np.arange(n) * dx
    vel = 0.5 + 0.5 * rng.random((levels, 1)) * (1 + 0.3 * np.sin(x))[None, :]
    rate = 0.3 * rng.random((levels, n))
    src = rng.random((levels, n))
    init = np.exp(-0.5 * ((x - 3.0) / 0.8) ** 2)
    return (vel, rate, src, init, dx, dt, 1, levels - 1, 1e-9)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not built; timing the python backend only")

    targs = trace_inputs()
    rng = np.random.default_rng(1)
    rargs = (rng.random(2000), rng.random(2000), rng.random(2000), rng.random((2001, 51)))
    problem = Config.load(CONFIG).build()
    from sizepop.characteristics import solve_characteristics

    def solve(mod):
        return solve_characteristics(problem.history, problem.model, problem.T, backend=mod)

    rows, results = [], {}
    for name, mod in backends.items():
        t_trace, a = best_of(lambda: mod.trace_representation(*targs), args.repeat)
        t_rec, b = best_of(lambda: mod.linear_recurrence(*rargs), args.repeat)
        t_solve, rec = best_of(lambda: solve(mod), max(1, args.repeat // 2))
        results[name] = (a, b, rec.levels)
        rows.append((name, t_trace, t_rec, t_solve))

    print(f"{'backend':<10}{'trace (s)':>12}{'recurrence (s)':>16}{'desk solve (s)':>16}")
    for name, *t in rows:
        print(f"{name:<10}{t[0]:>12.4f}{t[1]:>16.4f}{t[2]:>16.3f}")
    if len(rows) == 2:
        py, cy = rows
        print(f"{'speedup':<10}{py[1] / cy[1]:>12.1f}{py[2] / cy[2]:>16.1f}{py[3] / cy[3]:>16.2f}")
        diffs = [float(np.max(np.abs(p - c))) for p, c in zip(results["python"], results["cython"])]
        print("max |python - cython|: trace {:.2e}, recurrence {:.2e}, desk record {:.2e}".format(*diffs))


if __name__ == "__main__":
    main()
