import os
import subprocess
import sys

import numpy as np
import pytest

from riskplan import _kernels_py, kernels
from riskplan.risk import AlphaGrid
from riskplan.twostep.inference import drifting_reward_schedule, simulate_agent, trials_to_arrays
from riskplan.twostep.model import TwoStepParams

compiled = pytest.importorskip("riskplan._kernels", reason="compiled extension not built")


def _trials(seed, n=120, **kw):
    params = TwoStepParams(alpha=0.3, lam=0.4, eta2=0.01, tau_sticky=1.0, tau_2nd=8.0,
                           tau_mb=5.0, tau_mf=2.0).with_(**kw)
    return trials_to_arrays(simulate_agent(params, drifting_reward_schedule(n, seed), n, seed + 1))


def test_default_backend_is_compiled():
    if os.environ.get("RISKPLAN_PURE_PYTHON", "") not in ("", "0"):
        pytest.skip("pure-Python backend forced")
    assert kernels.BACKEND == "cython"
    assert set(kernels.available_backends()) == {"cython", "python"}


def test_env_var_forces_python():
    code = "import riskplan.kernels as k; print(k.BACKEND)"
    env = {**os.environ, "RISKPLAN_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("theta", [
    [1.0, 0.1, 0.001, 0.0, 5.0, 5.0, 0.0],
    [0.3, 0.5, 0.02, 2.0, 10.0, 3.0, 1.0],
    [0.1, 0.9, 0.009, 20.0, 30.0, 30.0, 30.0],
    [0.55, 0.01, 0.09, 0.0, 0.0, 0.0, 0.0],
])
def test_nll_parity(seed, theta):
    cols = _trials(seed)
    theta = np.array(theta)
    a = compiled.twostep_nll(theta, *cols, 1e-12)
    b = _kernels_py.twostep_nll(theta, *cols, 1e-12)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


def test_nll_rejects_out_of_range():
    cols = [c.copy() for c in _trials(0, 10)]
    cols[1][3] = 2
    theta = np.array([0.5, 0.3, 0.01, 0, 5, 5, 0.0])
    for impl in (compiled, _kernels_py):
        with pytest.raises(ValueError):
            impl.twostep_nll(theta, *cols, 1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_scan2_parity(seed):
    rng = np.random.default_rng(seed)
    grid = AlphaGrid()
    c1, c2 = np.sort(rng.normal(0, 2, (2, len(grid))), axis=1)
    p1 = float(rng.uniform(0.05, 0.95))
    alpha = float(rng.uniform(0.01, 1.0))
    a = compiled.scan2(p1, 1 - p1, c1, c2, grid.log_points, alpha, 1.0, 1001)
    b = _kernels_py.scan2(p1, 1 - p1, c1, c2, grid.log_points, alpha, 1.0, 1001)
    assert a[0] == pytest.approx(b[0], abs=1e-12)
    assert a[1] == pytest.approx(b[1], abs=1e-9)


def test_mixture_parity():
    from riskplan.risk import GaussianBelief, cvar_gaussian_mixture

    for alpha in (0.1, 0.37, 0.9, 1.0):
        got = compiled.mixture_cvar(0.6, 0.2, 0.3, 0.1, 0.7, alpha)
        ref = cvar_gaussian_mixture([GaussianBelief(0.6, 0.04), GaussianBelief(0.3, 0.01)],
                                    [0.7, 0.3], alpha)
        assert got == pytest.approx(ref, abs=1e-12)
