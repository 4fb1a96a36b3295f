"""Finite-horizon MDPs: representation, JSON schema, and the benchmark environments.

Rewards are attached to states and collected on every time step the agent
occupies a state before the horizon. Exit states pay once and then move
deterministically into a closed, zero-reward absorbing state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from riskplan.risk import DiscreteDistribution

SCHEMA_VERSION = 1
ABSORBING = "absorbing"


class ConfigError(ValueError):
    pass


class PathCountError(RuntimeError):
    pass


@dataclass
class FiniteHorizonMDP:
    """States with rewards, per-state actions and sparse transitions.

    ``transitions[s][a]`` is a pair ``(next_states, probs)`` of numpy arrays.
    """

    state_ids: list[str]
    rewards: np.ndarray
    action_names: list[list[str]]
    transitions: list[list[tuple[np.ndarray, np.ndarray]]]
    terminal: np.ndarray
    horizon: int
    start: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        n = len(self.state_ids)
        if self.rewards.shape != (n,) or self.terminal.shape != (n,):
            raise ConfigError("rewards/terminal must have one entry per state")
        if len(self.transitions) != n or len(self.action_names) != n:
            raise ConfigError("transitions/actions must have one entry per state")
        if not np.all(np.isfinite(self.rewards)):
            raise ConfigError("rewards must be finite")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if not 0 <= self.start < n:
            raise ConfigError("start state out of range")
        for s in range(n):
            if not self.transitions[s]:
                raise ConfigError(f"state {self.state_ids[s]!r} has no actions")
            if len(self.action_names[s]) != len(self.transitions[s]):
                raise ConfigError(f"state {self.state_ids[s]!r}: action names mismatch")
            for a, (nxt, p) in enumerate(self.transitions[s]):
                if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                    raise ConfigError(
                        f"state {self.state_ids[s]!r} action {a}: probabilities sum to {p.sum()!r}"
                    )
                if np.any((nxt < 0) | (nxt >= n)):
                    raise ConfigError(f"state {self.state_ids[s]!r} action {a}: bad successor")
        self._index = {sid: i for i, sid in enumerate(self.state_ids)}

    @property
    def n_states(self) -> int:
        return len(self.state_ids)

    @property
    def max_actions(self) -> int:
        return max(len(t) for t in self.transitions)

    @property
    def max_successors(self) -> int:
        return max(len(nxt) for row in self.transitions for nxt, _ in row)

    def index(self, state_id: str) -> int:
        return self._index[state_id]

    def n_actions(self, s: int) -> int:
        return len(self.transitions[s])

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "horizon": self.horizon,
            "start": self.state_ids[self.start],
            "states": [
                {"id": sid, "reward": float(r), "terminal": bool(term)}
                for sid, r, term in zip(self.state_ids, self.rewards, self.terminal)
            ],
            "actions": [
                {
                    "state": self.state_ids[s],
                    "action": self.action_names[s][a],
                    "transitions": [
                        {"to": self.state_ids[int(j)], "p": float(q)} for j, q in zip(nxt, p)
                    ],
                }
                for s in range(self.n_states)
                for a, (nxt, p) in enumerate(self.transitions[s])
            ],
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "FiniteHorizonMDP":
        try:
            states = data["states"]
            ids = [str(st["id"]) for st in states]
            index = {sid: i for i, sid in enumerate(ids)}
            if len(index) != len(ids):
                raise ConfigError("duplicate state ids")
            names: list[list[str]] = [[] for _ in ids]
            trans: list[list] = [[] for _ in ids]
            for k, act in enumerate(data["actions"]):
                s = index[str(act["state"])]
                nxt = np.array([index[str(tr["to"])] for tr in act["transitions"]], dtype=int)
                p = np.array([float(tr["p"]) for tr in act["transitions"]])
                names[s].append(str(act.get("action", len(names[s]))))
                trans[s].append((nxt, p))
            return cls(
                state_ids=ids,
                rewards=[float(st["reward"]) for st in states],
                action_names=names,
                transitions=trans,
                terminal=[bool(st.get("terminal", False)) for st in states],
                horizon=int(data["horizon"]),
                start=index[str(data.get("start", ids[0]))],
                meta=data.get("meta", {}),
            )
        except KeyError as exc:
            raise ConfigError(f"MDP JSON: missing or unknown field {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "FiniteHorizonMDP":
        return cls.from_dict(json.loads(text))


class _Builder:
    def __init__(self):
        self.ids: list[str] = []
        self.rewards: list[float] = []
        self.terminal: list[bool] = []
        self.actions: dict[str, list[tuple[str, dict[str, float]]]] = {}

    def state(self, sid, reward=0.0, terminal=False):
        self.ids.append(sid)
        self.rewards.append(float(reward))
        self.terminal.append(terminal)
        self.actions[sid] = []
        return sid

    def action(self, sid, name, dist):
        merged: dict[str, float] = {}
        for to, p in dist:
            if p > 0.0:
                merged[to] = merged.get(to, 0.0) + p
        self.actions[sid].append((name, merged))

    def exit_state(self, sid, reward):
        self.state(sid, reward, terminal=True)
        self.action(sid, "exit", [(ABSORBING, 1.0)])

    def build(self, horizon, start, meta=None) -> FiniteHorizonMDP:
        if ABSORBING not in self.actions:
            self.state(ABSORBING, 0.0, terminal=True)
            self.action(ABSORBING, "stay", [(ABSORBING, 1.0)])
        index = {sid: i for i, sid in enumerate(self.ids)}
        names, trans = [], []
        for sid in self.ids:
            names.append([n for n, _ in self.actions[sid]])
            trans.append([
                (np.array([index[t] for t in d], dtype=int), np.array(list(d.values())))
                for _, d in self.actions[sid]
            ])
        return FiniteHorizonMDP(self.ids, self.rewards, names, trans, self.terminal, horizon,
                                index[start], meta or {})


@dataclass(frozen=True)
class GridworldSpec:
    """Cliff-walk gridworld; cells are 1-indexed ``(row, col)`` with row 1 on top."""

    rows: int = 3
    cols: int = 4  # calibrated; see the gridworld calibration sweep
    p_err_right: float = 0.08
    p_err_left: float = 0.04
    reward_goal: float = 3.0
    reward_quit: float = -2.0
    reward_lava: float = -15.0
    horizon: int | None = None
    start: tuple[int, int] = (1, 1)

    def validate(self) -> "GridworldSpec":
        if self.rows < 3 or self.cols < 3:
            raise ConfigError("gridworld needs at least 3 rows and 3 columns")
        for name in ("p_err_right", "p_err_left"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        r, c = self.start
        if not (1 <= r <= self.rows and 1 <= c <= self.cols):
            raise ConfigError("start cell outside the grid")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon must be positive")
        return self

    @property
    def effective_horizon(self) -> int:
        return self.horizon if self.horizon is not None else self.rows + self.cols + 2


def cell_id(row: int, col: int) -> str:
    return f"({row},{col})"


def build_gridworld(spec: GridworldSpec | None = None) -> FiniteHorizonMDP:
    """Cells plus Goal/Quit/Lavapit exits and an absorbing state.

    ``right`` moves right with ``1 - p_err_right`` and down otherwise;
    ``left`` likewise with ``p_err_left``. Leaving the grid to the right,
    left or bottom enters Goal, Quit or Lavapit.
    """
    spec = (spec or GridworldSpec()).validate()
    b = _Builder()
    for r in range(1, spec.rows + 1):
        for c in range(1, spec.cols + 1):
            b.state(cell_id(r, c))
    b.exit_state("goal", spec.reward_goal)
    b.exit_state("quit", spec.reward_quit)
    b.exit_state("lavapit", spec.reward_lava)

    def down(r, c):
        return "lavapit" if r == spec.rows else cell_id(r + 1, c)

    for r in range(1, spec.rows + 1):
        for c in range(1, spec.cols + 1):
            left = "quit" if c == 1 else cell_id(r, c - 1)
            right = "goal" if c == spec.cols else cell_id(r, c + 1)
            sid = cell_id(r, c)
            b.action(sid, "left", [(left, 1.0 - spec.p_err_left), (down(r, c), spec.p_err_left)])
            b.action(sid, "right",
                     [(right, 1.0 - spec.p_err_right), (down(r, c), spec.p_err_right)])
    meta = {"kind": "gridworld", "rows": spec.rows, "cols": spec.cols,
            "cells": {cell_id(r, c): [r, c] for r in range(1, spec.rows + 1)
                      for c in range(1, spec.cols + 1)}}
    return b.build(spec.effective_horizon, cell_id(*spec.start), meta)


def build_two_stage_tree(variant: str = "a") -> FiniteHorizonMDP:
    """The two-stage decision trees illustrating time (in)consistency.

    Variant ``a``: at A, ``right`` pays +2 w.p. 0.9 or leads to B; ``left``
    pays -4. At B, ``right`` pays 0; ``left`` pays -2 w.p. 0.1, +1 w.p. 0.9.
    Variant ``b`` also diverts each B action to D with probability 0.1
    (scaling the original branches by 0.9); D pays 0 w.p. 0.9 or leads to
    E, which pays -5 w.p. 0.1 and 0 otherwise.
    """
    if variant not in ("a", "b"):
        raise ConfigError(f"unknown tree variant {variant!r}")
    b = _Builder()
    b.state("A")
    b.state("B")
    b.exit_state("A.left", -4.0)
    b.exit_state("A.right.win", 2.0)
    b.exit_state("B.right", 0.0)
    b.exit_state("B.left.loss", -2.0)
    b.exit_state("B.left.win", 1.0)
    b.action("A", "left", [("A.left", 1.0)])
    b.action("A", "right", [("A.right.win", 0.9), ("B", 0.1)])
    if variant == "a":
        b.action("B", "left", [("B.left.loss", 0.1), ("B.left.win", 0.9)])
        b.action("B", "right", [("B.right", 1.0)])
        return b.build(horizon=3, start="A", meta={"kind": "tree", "variant": "a"})
    b.state("D")
    b.state("E")
    b.exit_state("D.zero", 0.0)
    b.exit_state("E.loss", -5.0)
    b.exit_state("E.zero", 0.0)
    b.action("B", "left", [("B.left.loss", 0.09), ("B.left.win", 0.81), ("D", 0.1)])
    b.action("B", "right", [("B.right", 0.9), ("D", 0.1)])
    b.action("D", "continue", [("D.zero", 0.9), ("E", 0.1)])
    b.action("E", "continue", [("E.loss", 0.1), ("E.zero", 0.9)])
    return b.build(horizon=5, start="A", meta={"kind": "tree", "variant": "b"})


def policy_from_choices(mdp: FiniteHorizonMDP, choices: dict[str, str]) -> np.ndarray:
    """Stationary deterministic policy table ``(horizon, n_states)`` from action names.

    States not listed take their first action.
    """
    table = np.zeros((mdp.horizon, mdp.n_states), dtype=int)
    for sid, name in choices.items():
        s = mdp.index(sid)
        table[:, s] = mdp.action_names[s].index(name)
    return table


def enumerate_return_distribution(mdp: FiniteHorizonMDP, policy, max_paths: int = 1_000_000,
                                  start: int | None = None) -> DiscreteDistribution:
    """Exact return distribution under a deterministic policy by tree expansion.

    ``policy`` is a ``(horizon, n_states)`` action table or a callable
    ``policy(t, s) -> action``. Paths stop early once they enter the
    absorbing state.
    """
    act = policy if callable(policy) else (lambda t, s: int(policy[t, s]))
    absorbing = mdp._index.get(ABSORBING)
    s0 = mdp.start if start is None else start
    frontier = {(s0, 0.0): 1.0}
    outcomes: dict[float, float] = {}
    n_paths = 1
    for t in range(mdp.horizon):
        nxt_frontier: dict[tuple[int, float], float] = {}
        for (s, ret), prob in frontier.items():
            ret = ret + mdp.rewards[s]
            if s == absorbing or t == mdp.horizon - 1:
                key = round(ret, 12)
                outcomes[key] = outcomes.get(key, 0.0) + prob
                continue
            nxt, p = mdp.transitions[s][act(t, s)]
            for j, q in zip(nxt, p):
                if q <= 0.0:
                    continue
                key = (int(j), round(ret, 12))
                nxt_frontier[key] = nxt_frontier.get(key, 0.0) + prob * q
        n_paths += len(nxt_frontier)
        if n_paths > max_paths:
            raise PathCountError(f"more than {max_paths} paths; MDP too large to enumerate")
        frontier = nxt_frontier
    return DiscreteDistribution(values=list(outcomes), probs=list(outcomes.values()))
