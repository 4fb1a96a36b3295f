"""Monte Carlo rollouts of solved policies.

Precommitted agents carry a running risk level: after each transition it is
multiplied by the realized successor's envelope weight and clamped to the
alpha grid. Nested and fixed agents keep their risk level constant.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from riskplan.dp import CVaRSolution, UsageError, solve
from riskplan.mdp import FiniteHorizonMDP
from riskplan.risk import AlphaGrid, DiscreteDistribution, check_alpha, cvar_discrete


@dataclass(frozen=True)
class Step:
    t: int
    state: int
    alpha: float
    action: int
    next_state: int


@dataclass
class EpisodeTrace:
    steps: list[Step]
    total_return: float
    end_time: int
    end_state: int
    terminated: bool


def _check_method(solution: CVaRSolution, method: str | None):
    if method is not None and method != solution.method:
        raise UsageError(f"solution was produced by {solution.method!r}, not {method!r}")


def run_episode(mdp: FiniteHorizonMDP, solution: CVaRSolution, alpha0: float = 1.0,
                seed=None, method: str | None = None, start: int | None = None) -> EpisodeTrace:
    """Simulate one episode from ``start`` (default: the MDP's start state).

    The episode ends on entering a terminal state or at the horizon.
    ``seed`` may be an int, a SeedSequence or a Generator.
    """
    _check_method(solution, method)
    alpha0 = check_alpha(alpha0)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    precommitted = solution.method == "pcvar"
    alpha = solution.grid.clamp(alpha0) if precommitted else alpha0
    s = mdp.start if start is None else start
    steps = []
    total = 0.0
    for t in range(mdp.horizon):
        total += mdp.rewards[s]
        if mdp.terminal[s]:
            return EpisodeTrace(steps, total, t, s, True)
        a = solution.action(t, s, alpha)
        nxt, p = mdp.transitions[s][a]
        k = 0 if nxt.size == 1 else min(int(np.searchsorted(np.cumsum(p), rng.random(),
                                                            side="right")), nxt.size - 1)
        s_next = int(nxt[k])
        steps.append(Step(t, s, alpha, a, s_next))
        if precommitted:
            alpha = solution.grid.clamp(alpha * solution.xi_at(t, s, a, alpha)[k])
        s = s_next
    return EpisodeTrace(steps, total, mdp.horizon, s, bool(mdp.terminal[s]))


def execution_distribution(mdp: FiniteHorizonMDP, solution: CVaRSolution, alpha0: float = 1.0,
                           start: int | None = None,
                           max_paths: int = 1_000_000) -> DiscreteDistribution:
    """Exact return distribution of executing ``solution`` (no sampling).

    Expands every path like ``run_episode`` does, carrying the adjusted risk
    level along each branch for precommitted solutions.
    """
    alpha0 = check_alpha(alpha0)
    precommitted = solution.method == "pcvar"
    s0 = mdp.start if start is None else start
    frontier = [(s0, 0.0, solution.grid.clamp(alpha0) if precommitted else alpha0, 1.0)]
    outcomes: dict[float, float] = defaultdict(float)
    for t in range(mdp.horizon):
        nxt_frontier = []
        for s, ret, alpha, prob in frontier:
            ret += mdp.rewards[s]
            if mdp.terminal[s]:
                outcomes[round(ret, 12)] += prob
                continue
            a = solution.action(t, s, alpha)
            nxt, p = mdp.transitions[s][a]
            xi = solution.xi_at(t, s, a, alpha) if precommitted else None
            for k, (j, q) in enumerate(zip(nxt, p)):
                if q > 0.0:
                    a_next = solution.grid.clamp(alpha * xi[k]) if precommitted else alpha
                    nxt_frontier.append((int(j), ret, a_next, prob * q))
        if len(nxt_frontier) > max_paths:
            raise RuntimeError(f"more than {max_paths} paths")
        frontier = nxt_frontier
    for s, ret, _, prob in frontier:
        outcomes[round(ret, 12)] += prob
    return DiscreteDistribution(values=list(outcomes), probs=list(outcomes.values()))


def empirical_cvar(returns, alpha: float) -> float:
    returns = np.asarray(returns, dtype=float)
    if returns.size == 0:
        raise ValueError("need at least one return")
    return cvar_discrete(DiscreteDistribution.from_samples(returns), alpha)


@dataclass
class RolloutSummary:
    method: str
    alpha0: float
    n_episodes: int
    seed: int
    state_ids: list[str]
    action_names: list[list[str]]
    action_counts: dict[int, dict[int, int]]
    alpha_sums: dict[int, float]
    visits: dict[int, int]
    returns: np.ndarray
    end_times: np.ndarray
    terminated: np.ndarray
    cvar_levels: tuple[float, ...] = (0.1, 0.18, 1.0)
    extra: dict = field(default_factory=dict)

    def action_frequencies(self) -> dict[str, dict[str, float]]:
        out = {}
        for s, counts in sorted(self.action_counts.items()):
            n = sum(counts.values())
            out[self.state_ids[s]] = {self.action_names[s][a]: c / n for a, c in sorted(counts.items())}
        return out

    def unique_actions(self) -> dict[str, bool]:
        return {self.state_ids[s]: len(c) == 1 for s, c in sorted(self.action_counts.items())}

    def modal_actions(self) -> dict[str, str]:
        return {
            self.state_ids[s]: self.action_names[s][max(c, key=lambda a: (c[a], -a))]
            for s, c in sorted(self.action_counts.items())
        }

    def mean_alpha(self) -> dict[str, float]:
        return {self.state_ids[s]: self.alpha_sums[s] / n for s, n in sorted(self.visits.items())}

    def histogram(self) -> dict[float, int]:
        vals, counts = np.unique(self.returns, return_counts=True)
        return {float(v): int(c) for v, c in zip(vals, counts)}

    def empirical_cvar(self, alpha: float) -> float:
        return empirical_cvar(self.returns, alpha)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "alpha0": self.alpha0,
            "n_episodes": self.n_episodes,
            "seed": self.seed,
            "action_frequencies": self.action_frequencies(),
            "unique_action": self.unique_actions(),
            "modal_action": self.modal_actions(),
            "mean_alpha": self.mean_alpha(),
            "return_histogram": [[v, c] for v, c in self.histogram().items()],
            "empirical_cvar": {str(a): self.empirical_cvar(a) for a in self.cvar_levels},
            "mean_return": float(self.returns.mean()),
            "max_end_time": int(self.end_times.max()),
            "all_terminated": bool(self.terminated.all()),
            **self.extra,
        }


def episode_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Independent per-episode streams derived from ``(seed, episode index)``."""
    return np.random.SeedSequence(seed).spawn(n)


def run_batch(mdp: FiniteHorizonMDP, solution: CVaRSolution, alpha0: float = 1.0,
              n_episodes: int = 20_000, seed: int = 0, method: str | None = None,
              start: int | None = None) -> RolloutSummary:
    _check_method(solution, method)
    counts: dict[int, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    alpha_sums: dict[int, float] = defaultdict(float)
    visits: dict[int, int] = defaultdict(int)
    returns = np.empty(n_episodes)
    end_times = np.empty(n_episodes, dtype=int)
    terminated = np.empty(n_episodes, dtype=bool)
    for i, ss in enumerate(episode_seeds(seed, n_episodes)):
        tr = run_episode(mdp, solution, alpha0, np.random.default_rng(ss), start=start)
        for st in tr.steps:
            counts[st.state][st.action] += 1
            alpha_sums[st.state] += st.alpha
            visits[st.state] += 1
        returns[i] = tr.total_return
        end_times[i] = tr.end_time
        terminated[i] = tr.terminated
    return RolloutSummary(
        method=solution.method, alpha0=alpha0, n_episodes=n_episodes, seed=seed,
        state_ids=mdp.state_ids, action_names=mdp.action_names,
        action_counts={s: dict(c) for s, c in counts.items()},
        alpha_sums=dict(alpha_sums), visits=dict(visits), returns=returns,
        end_times=end_times, terminated=terminated,
    )


def policy_map(mdp: FiniteHorizonMDP, summary: RolloutSummary) -> list[dict]:
    """Per-cell rows ``(row, col, state, action, freq_right, mean_alpha, visits)``."""
    cells = mdp.meta.get("cells", {})
    freqs = summary.action_frequencies()
    mean_alpha = summary.mean_alpha()
    rows = []
    for sid, (r, c) in cells.items():
        f = freqs.get(sid)
        rows.append({
            "row": r,
            "col": c,
            "state": sid,
            "action": summary.modal_actions().get(sid, ""),
            "freq_right": "" if f is None else f.get("right", 0.0),
            "mean_alpha": mean_alpha.get(sid, ""),
            "visits": summary.visits.get(mdp.index(sid), 0),
        })
    return rows


def alpha_sweep(mdp: FiniteHorizonMDP, states: list[str], grid: AlphaGrid | None = None,
                methods=("pcvar", "fcvar", "ncvar"), n_episodes: int = 2000,
                seed: int = 0) -> list[dict]:
    """Probability of choosing ``right`` per (state, method, alpha) over the alpha grid.

    Each grid level is used as the start risk level (pCVaR) or the fixed
    level (fCVaR, nCVaR). Rollouts start from the MDP's start state; a state
    no rollout visits falls back to the policy of an agent starting there.
    """
    grid = grid or AlphaGrid()
    rows = []
    pcvar = solve(mdp, "pcvar", grid=grid) if "pcvar" in methods else None
    for method in methods:
        for g, alpha in enumerate(grid.points):
            sol = pcvar if method == "pcvar" else solve(mdp, method, alpha, grid=grid)
            summ = run_batch(mdp, sol, alpha, n_episodes, seed)
            freqs = summ.action_frequencies()
            for sid in states:
                s = mdp.index(sid)
                if sid in freqs:
                    p_right, source = freqs[sid].get("right", 0.0), "rollout"
                else:
                    a = sol.action(0, s, alpha)
                    p_right, source = float(mdp.action_names[s][a] == "right"), "start"
                rows.append({"state": sid, "method": method, "alpha_index": g,
                             "alpha": float(alpha), "p_right": p_right, "source": source,
                             "action": "right" if p_right >= 0.5 else "left"})
    return rows


def switch_alpha(rows: list[dict], method: str, state: str) -> float | None:
    """Smallest grid alpha at which ``method`` goes right in ``state``."""
    hits = [r["alpha"] for r in rows
            if r["method"] == method and r["state"] == state and r["p_right"] >= 0.5]
    return min(hits) if hits else None


def gridworld_behaviour(mdp: FiniteHorizonMDP, alpha: float, n_episodes: int = 20_000,
                        seed: int = 0, grid: AlphaGrid | None = None) -> dict:
    """Check the qualitative gridworld policies of the three CVaR agents.

    Returns per-method rollout summaries plus boolean checks: pCVaR heads
    right in every visited cell, fCVaR heads right in row 1 and left in the
    lower rows, nCVaR goes left at the start.
    """
    grid = grid or AlphaGrid()
    cells = mdp.meta["cells"]
    out = {"alpha": alpha, "summaries": {}}
    for method in ("pcvar", "fcvar", "ncvar"):
        sol = solve(mdp, method, alpha, grid=grid)
        out["summaries"][method] = run_batch(mdp, sol, alpha, n_episodes, seed)
    modal = {m: s.modal_actions() for m, s in out["summaries"].items()}
    start = mdp.state_ids[mdp.start]
    out["pcvar_right_everywhere"] = all(a == "right" for a in modal["pcvar"].values())
    out["fcvar_misplaced"] = sorted(
        sid for sid, a in modal["fcvar"].items()
        if sid in cells and (a == "right") != (cells[sid][0] == 1)
    )
    out["fcvar_row_pattern"] = not out["fcvar_misplaced"]
    out["ncvar_quits"] = modal["ncvar"].get(start) == "left"
    out["unique_actions"] = all(
        all(s.unique_actions().values()) for s in out["summaries"].values()
    )
    out["max_end_time"] = max(int(s.end_times.max()) for s in out["summaries"].values())
    out["all_pass"] = (out["pcvar_right_everywhere"] and out["fcvar_row_pattern"]
                       and out["ncvar_quits"])
    return out


def calibration_sweep(cols=range(4, 8), alphas=None, n_episodes: int = 2000,
                      seed: int = 0, rows: int = 3) -> list[dict]:
    """Gridworld behaviour checks over column counts and risk levels."""
    from riskplan.mdp import GridworldSpec, build_gridworld

    grid = AlphaGrid()
    alphas = grid.points if alphas is None else alphas
    table = []
    for c in cols:
        mdp = build_gridworld(GridworldSpec(rows=rows, cols=c))
        for a in alphas:
            res = gridworld_behaviour(mdp, float(a), n_episodes, seed, grid)
            table.append({"cols": c, "alpha": float(a),
                          **{k: res[k] for k in ("pcvar_right_everywhere", "fcvar_row_pattern",
                                                 "ncvar_quits", "all_pass")},
                          "fcvar_misplaced": " ".join(res["fcvar_misplaced"])})
    return table
