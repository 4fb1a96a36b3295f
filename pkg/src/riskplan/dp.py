"""Backward-induction solvers: precommitted, nested and fixed CVaR, plus the
risk-neutral and worst-case baselines.

Value tables are indexed ``[t, state(, alpha)]`` with ``t = 0 .. horizon``
and ``V[horizon] = 0``. Q tables hold NaN for actions a state lacks. Argmax
ties go to the lowest action index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from riskplan.mdp import FiniteHorizonMDP
from riskplan.risk import (
    AlphaGrid,
    check_alpha,
    distorted_expectation_interp,
    distorted_expectation_linear,
)

METHODS = ("pcvar", "ncvar", "fcvar", "neutral", "worstcase")


class UsageError(ValueError):
    pass


@dataclass
class CVaRSolution:
    method: str
    values: np.ndarray
    qvalues: np.ndarray
    policy: np.ndarray
    grid: AlphaGrid | None = None
    alpha_bar: float | None = None
    xi: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.qvalues.shape[0]

    @property
    def distributional(self) -> bool:
        return self.values.ndim == 3

    def value(self, t: int, s: int, alpha: float | None = None) -> float:
        if not self.distributional:
            return float(self.values[t, s])
        return float(self.grid.interp(self.values[t, s], alpha))

    def action(self, t: int, s: int, alpha: float | None = None) -> int:
        """Greedy action; for pCVaR the Q-values are interpolated at ``alpha`` first."""
        if self.method != "pcvar":
            return int(self.policy[t, s])
        q = self.grid.interp(self.qvalues[t, s], alpha)
        return _argmax_valid(q)

    def xi_at(self, t: int, s: int, a: int, alpha: float) -> np.ndarray:
        """Envelope weights per successor, interpolated between bracketing grid levels."""
        if self.xi is None:
            raise UsageError(f"{self.method} solution carries no envelope weights")
        return self.grid.interp(np.moveaxis(self.xi[t, s, a], 0, -1), alpha)

    def to_dict(self, mdp: FiniteHorizonMDP | None = None) -> dict:
        def names(s):
            return mdp.state_ids[s] if mdp is not None else s

        out = {
            "method": self.method,
            "alpha_bar": self.alpha_bar,
            "grid": None if self.grid is None else self.grid.points.tolist(),
            "values": np.where(np.isfinite(self.values), self.values, None).tolist(),
            "qvalues": np.where(np.isfinite(self.qvalues), self.qvalues, None).tolist(),
            "policy": self.policy.tolist(),
            "states": [names(s) for s in range(self.values.shape[1])],
        }
        if self.xi is not None:
            out["xi"] = np.where(np.isfinite(self.xi), self.xi, None).tolist()
        return out


# Q-values within this (relative) distance of the best count as tied, so
# round-off never overrides the lowest-index tie-break.
TIE_TOL = 1e-9


def _argmax_valid(q: np.ndarray) -> int:
    return int(_greedy(np.asarray(q, dtype=float), axis=0))


def _greedy(Q: np.ndarray, axis: int) -> np.ndarray:
    """Argmax over the action axis with NaN treated as missing and near-ties
    resolved toward the lowest index."""
    q = np.where(np.isnan(Q), -np.inf, Q)
    best = np.max(q, axis=axis, keepdims=True)
    tied = q >= best - TIE_TOL * (1.0 + np.abs(best))
    return np.argmax(tied, axis=axis)


def _empty_tables(mdp, extra=()):
    T, S, A = mdp.horizon, mdp.n_states, mdp.max_actions
    V = np.zeros((T + 1, S) + extra)
    Q = np.full((T, S, A) + extra, np.nan)
    return V, Q


def _distributional_backup(mdp, v_next, grid, allow_fallback, n_scan):
    S, A, G, K = mdp.n_states, mdp.max_actions, len(grid), mdp.max_successors
    Q = np.full((S, A, G), np.nan)
    XI = np.full((S, A, G, K), np.nan)
    for s in range(S):
        for a, (nxt, p) in enumerate(mdp.transitions[s]):
            if nxt.size == 1:
                Q[s, a] = mdp.rewards[s] + v_next[nxt[0]]
                XI[s, a, :, 0] = 1.0
                continue
            curves = v_next[nxt]
            for g, alpha in enumerate(grid.points):
                val, xi = distorted_expectation_interp(p, curves, alpha, grid,
                                                       allow_fallback=allow_fallback,
                                                       n_scan=n_scan)
                Q[s, a, g] = mdp.rewards[s] + val
                XI[s, a, g, : nxt.size] = xi
    return Q, XI


def solve_pcvar(mdp: FiniteHorizonMDP, grid: AlphaGrid | None = None, *,
                allow_fallback: bool = False, n_scan: int = 1001) -> CVaRSolution:
    """Precommitted CVaR: ``V_t(s, alpha)`` is the CVaR of the return from ``s``.

    The next-step risk level is ``alpha * xi(s')``; the minimizing weights
    are kept so rollouts can adjust alpha along realized transitions.
    """
    grid = grid or AlphaGrid()
    G = len(grid)
    V, Q = _empty_tables(mdp, (G,))
    XI = np.full((mdp.horizon, mdp.n_states, mdp.max_actions, G, mdp.max_successors), np.nan)
    for t in range(mdp.horizon - 1, -1, -1):
        Q[t], XI[t] = _distributional_backup(mdp, V[t + 1], grid, allow_fallback, n_scan)
        V[t] = np.nanmax(Q[t], axis=1)
    policy = _greedy(Q, axis=2)
    return CVaRSolution("pcvar", V, Q, policy, grid=grid, xi=XI)


def solve_fcvar(mdp: FiniteHorizonMDP, alpha_bar: float, grid: AlphaGrid | None = None, *,
                allow_fallback: bool = False, n_scan: int = 1001) -> CVaRSolution:
    """Fixed CVaR: distributional backup, action chosen greedily at ``alpha_bar``."""
    grid = grid or AlphaGrid()
    alpha_bar = check_alpha(alpha_bar)
    if alpha_bar < grid.min:
        raise UsageError(f"alpha_bar={alpha_bar} below the grid minimum {grid.min}")
    G = len(grid)
    V, Q = _empty_tables(mdp, (G,))
    XI = np.full((mdp.horizon, mdp.n_states, mdp.max_actions, G, mdp.max_successors), np.nan)
    policy = np.zeros((mdp.horizon, mdp.n_states), dtype=int)
    for t in range(mdp.horizon - 1, -1, -1):
        Q[t], XI[t] = _distributional_backup(mdp, V[t + 1], grid, allow_fallback, n_scan)
        q_bar = grid.interp(Q[t], alpha_bar)
        policy[t] = _greedy(q_bar, axis=1)
        V[t] = Q[t, np.arange(mdp.n_states), policy[t]]
    return CVaRSolution("fcvar", V, Q, policy, grid=grid, alpha_bar=alpha_bar, xi=XI)


def _scalar_solver(mdp, method, backup, alpha_bar=None):
    V, Q = _empty_tables(mdp)
    for t in range(mdp.horizon - 1, -1, -1):
        for s in range(mdp.n_states):
            for a, (nxt, p) in enumerate(mdp.transitions[s]):
                Q[t, s, a] = mdp.rewards[s] + backup(p, V[t + 1, nxt])
        V[t] = np.nanmax(Q[t], axis=1)
    return CVaRSolution(method, V, Q, _greedy(Q, axis=2), alpha_bar=alpha_bar)


def solve_ncvar(mdp: FiniteHorizonMDP, alpha_bar: float) -> CVaRSolution:
    """Nested CVaR: one-step CVaR at ``alpha_bar`` composed recursively."""
    alpha_bar = check_alpha(alpha_bar)
    return _scalar_solver(
        mdp, "ncvar", lambda p, v: distorted_expectation_linear(p, v, alpha_bar)[0], alpha_bar
    )


def risk_neutral_dp(mdp: FiniteHorizonMDP) -> CVaRSolution:
    return _scalar_solver(mdp, "neutral", lambda p, v: float(np.dot(p, v)))


def worst_case_dp(mdp: FiniteHorizonMDP) -> CVaRSolution:
    return _scalar_solver(mdp, "worstcase", lambda p, v: float(np.min(v[p > 0.0])))


def solve(mdp: FiniteHorizonMDP, method: str, alpha: float | None = None,
          grid: AlphaGrid | None = None, **kwargs) -> CVaRSolution:
    """Dispatch by method name; ``alpha`` is the fixed risk level for nCVaR/fCVaR."""
    if method == "pcvar":
        return solve_pcvar(mdp, grid, **kwargs)
    if method == "fcvar":
        return solve_fcvar(mdp, _need_alpha(alpha, method), grid, **kwargs)
    if method == "ncvar":
        return solve_ncvar(mdp, _need_alpha(alpha, method))
    if method == "neutral":
        return risk_neutral_dp(mdp)
    if method == "worstcase":
        return worst_case_dp(mdp)
    raise UsageError(f"unknown method {method!r}; expected one of {METHODS}")


def _need_alpha(alpha, method):
    if alpha is None:
        raise UsageError(f"{method} needs a fixed alpha")
    return alpha
