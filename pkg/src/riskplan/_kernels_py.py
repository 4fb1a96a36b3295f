"""Pure-Python implementations of the hot kernels.

Used when the compiled extension is unavailable or disabled with
``RISKPLAN_PURE_PYTHON=1``. Signatures match ``riskplan._kernels``.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"


def _interp_clamped(curve, log_grid, beta):
    beta = np.clip(beta, math.exp(log_grid[0]), 1.0)
    return np.interp(np.log(beta), log_grid, curve)


def _pair_objective(m1, p1, p2, c1, c2, log_grid, alpha, mass):
    m1 = np.asarray(m1, dtype=float)
    m2 = mass - m1
    with np.errstate(divide="ignore"):
        v1 = _interp_clamped(c1, log_grid, alpha * m1 / p1)
        v2 = _interp_clamped(c2, log_grid, alpha * m2 / p2)
    return np.where(m1 > 0.0, m1 * v1, 0.0) + np.where(m2 > 0.0, m2 * v2, 0.0)


def scan2(p1, p2, c1, c2, log_grid, alpha, mass, n_scan):
    """Minimize the two-successor distorted objective over the mass on successor 1.

    Returns ``(minimum, m1)`` where ``m1 = p1 * xi1`` and the pair's
    distorted mass ``m1 + m2`` equals ``mass``.
    """
    lo = max(0.0, mass - p2 / alpha)
    hi = min(mass, p1 / alpha)
    if hi <= lo:
        m = min(max(lo, 0.0), mass)
        return float(_pair_objective(m, p1, p2, c1, c2, log_grid, alpha, mass)), m
    xs = np.linspace(lo, hi, n_scan)
    fs = _pair_objective(xs, p1, p2, c1, c2, log_grid, alpha, mass)
    k = int(np.argmin(fs))
    best_x, best_f = float(xs[k]), float(fs[k])
    a = xs[max(k - 1, 0)]
    b = xs[min(k + 1, n_scan - 1)]
    while b - a > 1e-6:
        x1 = a + (b - a) / 3.0
        x2 = b - (b - a) / 3.0
        f1, f2 = _pair_objective(np.array([x1, x2]), p1, p2, c1, c2, log_grid, alpha, mass)
        if f1 <= f2:
            b = x2
        else:
            a = x1
    xm = 0.5 * (a + b)
    fm = float(_pair_objective(xm, p1, p2, c1, c2, log_grid, alpha, mass))
    if fm < best_f:
        best_x, best_f = xm, fm
    return best_f, best_x


def twostep_nll(theta, choice1, state2, choice2, reward, floor=1e-12):
    """Negative log-likelihood of two-step choices; ``theta`` in TwoStepParams order."""
    from riskplan.twostep import model

    cols = [np.asarray(c) for c in (choice1, state2, choice2, reward)]
    if any(c.shape != cols[0].shape for c in cols):
        raise ValueError("trial arrays differ in length")
    for c in cols:
        bad = np.flatnonzero((c < 0) | (c > 1))
        if bad.size:
            raise ValueError(f"trial {int(bad[0])}: categorical field out of range")
    params = model.TwoStepParams.from_array(theta, validate=False)
    state = model.BeliefState.initial()
    prev = None
    total = 0.0
    for c1, s2, c2, r in zip(choice1, state2, choice2, reward):
        p1 = model.first_stage_choice_prob(state, prev, params)
        p2 = model.second_stage_choice_prob(state.second_stage[s2], params)
        total -= math.log(max(p1[c1], floor)) + math.log(max(p2[c2], floor))
        state = model.trial_update(state, int(c1), int(s2), int(c2), int(r), params)
        prev = int(c1)
    return total
