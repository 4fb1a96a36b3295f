import json

import numpy as np
import pytest

from riskplan.mdp import (
    ABSORBING,
    ConfigError,
    FiniteHorizonMDP,
    GridworldSpec,
    PathCountError,
    build_gridworld,
    build_two_stage_tree,
    enumerate_return_distribution,
    policy_from_choices,
)
from riskplan.risk import cvar_discrete


def test_gridworld_structure():
    spec = GridworldSpec(rows=3, cols=5)
    g = build_gridworld(spec)
    assert g.n_states == 15 + 3 + 1
    assert g.horizon == 3 + 5 + 2
    assert g.state_ids[g.start] == "(1,1)"
    s = g.index("(3,2)")
    nxt, p = g.transitions[s][g.action_names[s].index("right")]
    got = {g.state_ids[j]: q for j, q in zip(nxt, p)}
    assert got == pytest.approx({"(3,3)": 0.92, "lavapit": 0.08})
    nxt, p = g.transitions[g.index("(1,1)")][0]
    assert {g.state_ids[j]: q for j, q in zip(nxt, p)} == pytest.approx({"quit": 0.96, "(2,1)": 0.04})
    nxt, _ = g.transitions[g.index("(2,5)")][1]
    assert "goal" in [g.state_ids[j] for j in nxt]
    assert g.rewards[g.index("goal")] == 3 and g.rewards[g.index("lavapit")] == -15
    assert g.rewards[g.index("quit")] == -2


def test_gridworld_bad_spec():
    with pytest.raises(ConfigError):
        build_gridworld(GridworldSpec(start=(4, 1)))
    with pytest.raises(ConfigError):
        build_gridworld(GridworldSpec(p_err_right=1.5))


def test_all_left_distribution_matches_monte_carlo():
    g = build_gridworld(GridworldSpec(rows=3, cols=5))
    policy = policy_from_choices(g, {sid: "left" for sid in g.meta["cells"]})
    dist = enumerate_return_distribution(g, policy)
    rng = np.random.default_rng(0)
    # from (1,1) going left: quit w.p. 0.96 per step, otherwise drop a row
    n = 1_000_000
    drops = np.minimum(rng.geometric(0.96, n) - 1, 3)
    mc = np.where(drops >= 3, -15.0, -2.0)
    for value, prob in zip(dist.values, dist.probs):
        frac = np.mean(mc == value)
        se = np.sqrt(prob * (1 - prob) / n)
        assert abs(frac - prob) <= 3 * se + 1e-12


def test_tree_distributions():
    a = build_two_stage_tree("a")
    plan = policy_from_choices(a, {"A": "right", "B": "left"})
    d = enumerate_return_distribution(a, plan)
    assert dict(zip(d.values, d.probs)) == pytest.approx({-2.0: 0.01, 1.0: 0.09, 2.0: 0.9})
    assert cvar_discrete(d, 0.1) == pytest.approx(0.7)
    plan = policy_from_choices(a, {"A": "right", "B": "right"})
    assert cvar_discrete(enumerate_return_distribution(a, plan), 0.1) == pytest.approx(0.0)
    b = build_two_stage_tree("b")
    d = enumerate_return_distribution(b, policy_from_choices(b, {"A": "left"}))
    assert list(d.values) == [-4.0]


def test_json_roundtrip_and_errors():
    g = build_gridworld()
    back = FiniteHorizonMDP.from_json(g.to_json())
    assert back.state_ids == g.state_ids and back.horizon == g.horizon
    np.testing.assert_array_equal(back.rewards, g.rewards)
    for s in range(g.n_states):
        for (n1, p1), (n2, p2) in zip(back.transitions[s], g.transitions[s]):
            np.testing.assert_array_equal(n1, n2)
            np.testing.assert_array_equal(p1, p2)
    data = json.loads(g.to_json())
    data["actions"][0]["transitions"][0]["p"] = 0.5
    with pytest.raises(ConfigError, match="probabilities"):
        FiniteHorizonMDP.from_dict(data)
    del data["horizon"]
    with pytest.raises(ConfigError, match="horizon"):
        FiniteHorizonMDP.from_dict(data)


def test_path_limit():
    g = build_gridworld(GridworldSpec(rows=3, cols=7))
    policy = policy_from_choices(g, {sid: "right" for sid in g.meta["cells"]})
    with pytest.raises(PathCountError):
        enumerate_return_distribution(g, policy, max_paths=5)


def test_absorbing_present():
    assert ABSORBING in build_two_stage_tree("a").state_ids
    with pytest.raises(ConfigError):
        build_two_stage_tree("c")
