"""Compare the compiled and pure-Python kernel backends.

Times the two hot kernels directly, then end-to-end calls that lean on them
(a precommitted gridworld solve and one two-step model fit), swapping the
backend in ``riskplan.kernels`` for each run.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

import argparse
import json
import platform
import timeit

import numpy as np

from riskplan import _kernels_py, kernels
from riskplan.dp import solve_pcvar
from riskplan.mdp import build_gridworld
from riskplan.risk import AlphaGrid
from riskplan.twostep.inference import (
    drifting_reward_schedule,
    fit,
    simulate_agent,
    trials_to_arrays,
)
from riskplan.twostep.model import TwoStepParams

try:
    from riskplan import _kernels as _compiled
except ImportError:
    _compiled = None


def _use(backend):
    kernels.scan2 = backend.scan2
    kernels.twostep_nll = backend.twostep_nll
    kernels.BACKEND = backend.BACKEND


def _best(fn, repeat, number=1):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def run(repeat: int) -> list[dict]:
    params = TwoStepParams(alpha=0.3, lam=0.4, eta2=0.01, tau_sticky=1.0, tau_2nd=8.0,
                           tau_mb=5.0, tau_mf=2.0)
    trials = simulate_agent(params, drifting_reward_schedule(200, 0), 200, 1)
    cols = trials_to_arrays(trials)
    theta = params.to_array()
    grid = AlphaGrid()
    rng = np.random.default_rng(0)
    c1, c2 = np.sort(rng.normal(0, 2, (2, len(grid))), axis=1)
    mdp = build_gridworld()

    cases = {
        "twostep_nll (200 trials)": (lambda: kernels.twostep_nll(theta, *cols, 1e-12), 20),
        "scan2 (1001-point scan)": (
            lambda: kernels.scan2(0.3, 0.7, c1, c2, grid.log_points, 0.2, 1.0, 1001), 20),
        "solve_pcvar (3x4 gridworld)": (lambda: solve_pcvar(mdp, grid), 1),
        "fit cvar model (1 restart)": (lambda: fit(trials, "cvar", 1, 0), 1),
    }
    backends = [b for b in (_compiled, _kernels_py) if b is not None]
    original = (kernels.scan2, kernels.twostep_nll, kernels.BACKEND)
    rows = []
    try:
        for name, (fn, number) in cases.items():
            times = {}
            for b in backends:
                _use(b)
                times[b.BACKEND] = _best(fn, repeat, number)
            row = {"case": name, **{f"{k}_s": v for k, v in times.items()}}
            if len(times) == 2:
                row["speedup"] = times["python"] / times["cython"]
            rows.append(row)
    finally:
        kernels.scan2, kernels.twostep_nll, kernels.BACKEND = original
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; timing the Python backend only")
    rows = run(args.repeat)
    print(f"{'case':32s} {'cython':>12s} {'python':>12s} {'speedup':>8s}")
    for r in rows:
        cy = f"{r['cython_s'] * 1e3:10.3f}ms" if "cython_s" in r else f"{'-':>12s}"
        sp = f"{r['speedup']:7.1f}x" if "speedup" in r else f"{'-':>8s}"
        print(f"{r['case']:32s} {cy} {r['python_s'] * 1e3:10.3f}ms {sp}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"python": platform.python_version(), "results": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
