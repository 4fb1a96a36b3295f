"""``riskplan`` command line.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or config error.
Artifacts go to ``--out`` (default ``$RISKPLAN_OUTPUT_DIR`` or ``./riskplan_out``)
together with a ``manifest.json`` describing the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from riskplan import io
from riskplan.dp import METHODS, UsageError, solve
from riskplan.mdp import ConfigError, GridworldSpec, build_gridworld, build_two_stage_tree
from riskplan.risk import AlphaGrid, DiscreteDistribution, DomainError, UnsupportedTransitionError
from riskplan.risk import cvar_discrete, var_discrete
from riskplan.twostep.inference import DataError

log = logging.getLogger("riskplan")

BUILDERS = ("gridworld", "tree-a", "tree-b")
SWEEP_STATES = ("(1,1)", "(2,2)", "(3,3)")
USAGE_ERRORS = (UsageError, ConfigError, DomainError, DataError, UnsupportedTransitionError,
                io.OutputExistsError, FileNotFoundError)


def _load_env(args):
    if args.env == "gridworld":
        return build_gridworld(GridworldSpec(rows=args.rows, cols=args.cols))
    if args.env in ("tree-a", "tree-b"):
        return build_two_stage_tree(args.env[-1])
    from riskplan.mdp import FiniteHorizonMDP

    path = Path(args.env)
    if not path.exists():
        raise ConfigError(f"--env: {args.env!r} is neither a builder {BUILDERS} nor a file")
    return FiniteHorizonMDP.from_dict(io.read_json(path))


def _grid(args) -> AlphaGrid:
    return AlphaGrid(n_points=args.grid_points, min_alpha=args.grid_min)


def _finish(args, command: str, outputs: list[Path], seed=None):
    config = {k: v for k, v in vars(args).items() if k not in ("func", "force")}
    path = io.write_json(Path(io.output_dir(args.out)) / "manifest.json",
                         {**io.manifest(command, config, seed),
                          "outputs": [p.name for p in outputs]}, force=True)
    for p in [*outputs, path]:
        print(f"wrote {p}", file=sys.stderr)


def cmd_dist(args):
    dist = DiscreteDistribution.from_json(Path(args.file).read_text())
    cvar = cvar_discrete(dist, args.alpha)
    if args.json:
        print(json.dumps(io.round_floats({"alpha": args.alpha, "var": var_discrete(dist, args.alpha),
                                          "cvar": cvar, "mean": dist.mean()})))
    else:
        print(io.fmt(cvar))
    return 0


def cmd_solve(args):
    mdp = _load_env(args)
    grid = _grid(args)
    out = io.output_dir(args.out)
    kw = {"allow_fallback": args.allow_fallback} if args.method in ("pcvar", "fcvar") else {}
    sol = solve(mdp, args.method, args.alpha, grid=grid, **kw)
    files = [io.write_json(out / "solution.json", sol.to_dict(mdp), args.force)]
    rows = []
    for t in range(mdp.horizon):
        for s, sid in enumerate(mdp.state_ids):
            a = sol.action(t, s, args.alpha)
            rows.append({"t": t, "state": sid, "action": mdp.action_names[s][a],
                         "value": sol.value(t, s, args.alpha)})
    files.append(io.write_csv(out / "policy.csv", ("t", "state", "action", "value"), rows,
                              args.force))
    if args.sweep:
        if args.seed is None:
            raise UsageError("--sweep runs rollouts and needs --seed")
        from riskplan.rollout import alpha_sweep

        states = args.states or [s for s in SWEEP_STATES if s in mdp.state_ids]
        sweep = alpha_sweep(mdp, states, grid, n_episodes=args.episodes, seed=args.seed)
        files.append(io.emit_figure_data(sweep, "supp2", out, force=args.force))
    print(io.fmt(sol.value(0, mdp.start, args.alpha)))
    _finish(args, "solve", files, args.seed)
    return 0


def cmd_simulate(args):
    from riskplan.rollout import run_batch

    mdp = _load_env(args)
    grid = _grid(args)
    out = io.output_dir(args.out)
    sol = solve(mdp, args.method, args.alpha0, grid=grid)
    summ = run_batch(mdp, sol, args.alpha0, args.episodes, args.seed)
    files = [io.write_json(out / "rollout.json", summ.to_dict(), args.force)]
    if args.policy_map:
        if "cells" not in mdp.meta:
            raise UsageError("--policy-map needs a gridworld environment")
        files.append(io.emit_figure_data(summ, "fig6", out, mdp=mdp, force=args.force))
    print(json.dumps(io.round_floats({"modal_action": summ.modal_actions(),
                                      "mean_return": float(summ.returns.mean())})))
    _finish(args, "simulate", files, args.seed)
    return 0


def _params_from_args(args):
    from riskplan.twostep.model import PARAM_NAMES, TwoStepParams

    base = TwoStepParams()
    if args.params:
        base = TwoStepParams.from_dict(io.read_json(args.params).get("params",
                                                                     io.read_json(args.params)))
    changes = {n: getattr(args, n) for n in PARAM_NAMES if getattr(args, n) is not None}
    return base.with_(**changes).validate()


def cmd_twostep_fit(args):
    from riskplan.twostep.inference import fit, fit_both

    trials = io.read_trials_csv(args.data)
    out = io.output_dir(args.out)
    if args.model == "both":
        mean_fit, cvar_fit = fit_both(trials, args.restarts, args.seed)
        result = {"mean": mean_fit.to_dict(), "cvar": cvar_fit.to_dict()}
    else:
        result = {args.model: fit(trials, args.model, args.restarts, args.seed).to_dict()}
    files = [io.write_json(out / "fit.json", result, args.force)]
    print(json.dumps(io.round_floats({m: {"nll": r["nll"], "bic": r["bic"]}
                                      for m, r in result.items()})))
    _finish(args, "twostep fit", files, args.seed)
    return 0


def cmd_twostep_simulate(args):
    from riskplan.twostep.inference import drifting_reward_schedule, simulate_agent
    import numpy as np

    params = _params_from_args(args)
    sched_seed, sim_seed = (int(s.generate_state(1)[0])
                            for s in np.random.SeedSequence(args.seed).spawn(2))
    trials = simulate_agent(params, drifting_reward_schedule(args.trials, sched_seed),
                            args.trials, sim_seed)
    out = io.output_dir(args.out)
    files = [io.write_trials_csv(out / "trials.csv", trials, args.force),
             io.write_json(out / "params.json", {"params": params.to_dict()}, args.force)]
    _finish(args, "twostep simulate", files, args.seed)
    return 0


def cmd_twostep_recover(args):
    from riskplan.twostep.inference import recover, sample_agents

    agents = sample_agents(args.agents, args.seed)
    rep = recover(agents, args.trials, args.seed + 1, args.restarts, args.jobs)
    out = io.output_dir(args.out)
    files = [io.write_json(out / "recovery.json", rep.to_dict(), args.force),
             io.emit_figure_data(rep, "recovery", out, force=args.force)]
    print(json.dumps(io.round_floats({"spearman": rep.spearman,
                                      "eta2_low_alpha": rep.eta2_low_alpha})))
    _finish(args, "twostep recover", files, args.seed)
    return 0


def cmd_twostep_figure4(args):
    from riskplan.twostep.inference import figure4_trace

    trace = figure4_trace(args.alpha, n_trials=args.trials)
    out = io.output_dir(args.out)
    files = [io.emit_figure_data(trace, "fig4", out, force=args.force)]
    print(trace.switch_trial if trace.switch_trial is not None else "none")
    _finish(args, "twostep figure4", files)
    return 0


def cmd_twostep_misattribution(args):
    from riskplan.twostep.inference import misattribution_experiment

    rep = misattribution_experiment(args.alpha_gen, args.agents, args.seed, args.trials,
                                    args.restarts, args.jobs)
    out = io.output_dir(args.out)
    files = [io.write_json(out / "misattribution.json", rep.to_dict(), args.force)]
    print(json.dumps(io.round_floats({k: v for k, v in rep.to_dict().items()
                                      if k.startswith("median")})))
    _finish(args, "twostep misattribution", files, args.seed)
    return 0


def _common(p, seed_required=False):
    p.add_argument("--out", help=f"output directory (default ${io.OUTPUT_ENV} or ./riskplan_out)")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--seed", type=int, required=seed_required)


def _env_args(p):
    p.add_argument("--env", required=True, help=f"builder {BUILDERS} or MDP JSON file")
    p.add_argument("--rows", type=int, default=GridworldSpec.rows)
    p.add_argument("--cols", type=int, default=GridworldSpec.cols)
    p.add_argument("--grid-min", type=float, default=0.01)
    p.add_argument("--grid-points", type=int, default=21)


def _param_args(p):
    from riskplan.twostep.model import PARAM_NAMES

    p.add_argument("--params", help="JSON file of parameters (as written by fit or simulate)")
    for name in PARAM_NAMES:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskplan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist", help="VaR/CVaR of a discrete distribution file")
    p.add_argument("--file", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--json", action="store_true", help="print VaR, CVaR and mean as JSON")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("solve", help="solve an MDP with one of the CVaR planners")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--alpha", type=float, default=1.0,
                   help="fixed level (ncvar/fcvar) or start level (pcvar)")
    _env_args(p)
    p.add_argument("--allow-fallback", action="store_true",
                   help="allow states with more than two successors")
    p.add_argument("--sweep", action="store_true", help="also write the alpha-sweep table")
    p.add_argument("--states", nargs="+", help="states for --sweep")
    p.add_argument("--episodes", type=int, default=2000, help="rollouts per sweep point")
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="roll out a solved policy")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--alpha0", type=float, required=True)
    p.add_argument("--episodes", type=int, default=20_000)
    p.add_argument("--policy-map", action="store_true", help="write the per-cell policy table")
    _env_args(p)
    _common(p, seed_required=True)
    p.set_defaults(func=cmd_simulate)

    ts = sub.add_parser("twostep", help="two-step task model").add_subparsers(
        dest="twostep_command", required=True)

    p = ts.add_parser("fit", help="fit the CVaR and/or mean model to a trial CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=("cvar", "mean", "both"), default="both")
    p.add_argument("--restarts", type=int, default=10)
    _common(p, seed_required=True)
    p.set_defaults(func=cmd_twostep_fit)

    p = ts.add_parser("simulate", help="simulate an agent on drifting reward probabilities")
    p.add_argument("--trials", type=int, default=200)
    _param_args(p)
    _common(p, seed_required=True)
    p.set_defaults(func=cmd_twostep_simulate)

    p = ts.add_parser("recover", help="parameter recovery on sampled agents")
    p.add_argument("--agents", type=int, default=50)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    _common(p, seed_required=True)
    p.set_defaults(func=cmd_twostep_recover)

    p = ts.add_parser("figure4", help="forced-choice perseveration trace")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--trials", type=int, default=20)
    _common(p)
    p.set_defaults(func=cmd_twostep_figure4)

    p = ts.add_parser("misattribution", help="fit the mean model to CVaR agents")
    p.add_argument("--alpha-gen", type=float, default=0.1)
    p.add_argument("--agents", type=int, default=50)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    _common(p, seed_required=True)
    p.set_defaults(func=cmd_twostep_misattribution)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"riskplan: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"riskplan: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
