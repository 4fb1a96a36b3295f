"""Likelihood, fitting, simulation and recovery for the two-step CVaR model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from riskplan import kernels
from riskplan.risk import DomainError, cvar_gaussian
from riskplan.twostep import model
from riskplan.twostep.model import BOUNDS, PARAM_NAMES, TrialRecord, TwoStepParams

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
# mean model: alpha fixed at 1; eta2 then has no effect on choices and sits at
# its lower bound, where 1 - phi^2 = 0.99 leaves the whole lam range feasible
MEAN_MODEL_FIXED = {"alpha": 1.0, "eta2": 0.001}
FREE_PARAMS = {
    "cvar": PARAM_NAMES,
    "mean": tuple(n for n in PARAM_NAMES if n not in MEAN_MODEL_FIXED),
}


class DataError(ValueError):
    pass


def trials_to_arrays(trials) -> tuple[np.ndarray, ...]:
    """Columns ``(choice1, state2, choice2, reward)`` as contiguous int64 arrays."""
    if isinstance(trials, tuple) and len(trials) == 4:
        cols = [np.ascontiguousarray(c, dtype=np.int64) for c in trials]
    else:
        rows = [(t.choice1, t.state2, t.choice2, t.reward) for t in trials]
        if not rows:
            raise DataError("no trials")
        cols = [np.ascontiguousarray(c, dtype=np.int64) for c in zip(*rows)]
    if cols[0].size == 0:
        raise DataError("no trials")
    for name, col in zip(("choice1", "state2", "choice2", "reward"), cols):
        bad = np.flatnonzero((col < 0) | (col > 1))
        if bad.size:
            raise DataError(f"trial {int(bad[0]) + 1}: {name}={int(col[bad[0]])} not in {{0, 1}}")
    return tuple(cols)


def negative_log_likelihood(params: TwoStepParams, trials, model_name: str = "cvar") -> float:
    """NLL of both choices on every trial, with beliefs updated trial by trial."""
    if model_name == "mean":
        params = params.with_(**MEAN_MODEL_FIXED)
    elif model_name != "cvar":
        raise DomainError(f"unknown model {model_name!r}")
    cols = trials_to_arrays(trials)
    return kernels.twostep_nll(params.to_array(), *cols, PROB_FLOOR)


def bic(nll: float, k: int, n_obs: int) -> float:
    if n_obs <= 0:
        raise DomainError("n_obs must be positive")
    return 2.0 * nll + k * math.log(n_obs)


@dataclass
class FitResult:
    params: TwoStepParams
    nll: float
    bic: float
    n_obs: int
    k: int
    model: str
    restarts_used: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": self.params.to_dict(),
            "nll": self.nll,
            "bic": self.bic,
            "n_obs": self.n_obs,
            "k": self.k,
            "restarts_used": self.restarts_used,
            "converged": self.converged,
        }


class _Objective:
    """NLL over the free parameters, rescaled to the unit cube."""

    def __init__(self, cols, model_name):
        self.cols = cols
        self.names = FREE_PARAMS[model_name]
        self.lo = np.array([BOUNDS[n][0] for n in self.names])
        self.span = np.array([BOUNDS[n][1] - BOUNDS[n][0] for n in self.names])
        self.fixed = MEAN_MODEL_FIXED if model_name == "mean" else {}

    def theta(self, u) -> np.ndarray:
        x = self.lo + np.clip(u, 0.0, 1.0) * self.span
        values = dict(zip(self.names, x))
        values.update(self.fixed)
        return np.array([values[n] for n in PARAM_NAMES])

    def to_unit(self, params: TwoStepParams) -> np.ndarray:
        return (np.array([getattr(params, n) for n in self.names]) - self.lo) / self.span

    def feasible(self, theta) -> bool:
        return theta[1] <= 1.0 - theta[2] / model.ASYMPTOTIC_VARIANCE

    def __call__(self, u) -> float:
        theta = self.theta(u)
        if not self.feasible(theta):
            # linear penalty keeps the simplex moving back into the feasible set
            excess = theta[1] - (1.0 - theta[2] / model.ASYMPTOTIC_VARIANCE)
            return 1e6 * (1.0 + excess)
        return kernels.twostep_nll(theta, *self.cols, PROB_FLOOR)


def _random_start(obj: _Objective, rng: np.random.Generator) -> np.ndarray:
    for _ in range(10_000):
        u = rng.uniform(size=len(obj.names))
        if obj.feasible(obj.theta(u)):
            return u
    raise RuntimeError("could not draw a feasible starting point")


def fit(trials, model_name: str = "cvar", n_restarts: int = 10, seed: int = 0,
        init: list[TwoStepParams] | None = None, maxfev: int | None = None) -> FitResult:
    """Multi-start bounded Nelder-Mead maximum-likelihood fit.

    ``init`` adds explicit starting points on top of the ``n_restarts``
    random ones; the returned NLL is never worse than any starting point.
    """
    if model_name not in FREE_PARAMS:
        raise DomainError(f"unknown model {model_name!r}")
    cols = trials_to_arrays(trials)
    obj = _Objective(cols, model_name)
    rng = np.random.default_rng(seed)
    starts = [_random_start(obj, rng) for _ in range(n_restarts)]
    for p in init or []:
        starts.append(np.clip(obj.to_unit(p), 0.0, 1.0))
    dim = len(obj.names)
    maxfev = maxfev or 300 * dim
    best_u, best_f, any_converged = None, math.inf, False
    for u0 in starts:
        f0 = obj(u0)
        if f0 < best_f:
            best_u, best_f = u0, f0
        res = optimize.minimize(
            obj, u0, method="Nelder-Mead", bounds=[(0.0, 1.0)] * dim,
            options={"xatol": 1e-4, "fatol": 1e-6, "maxfev": maxfev, "adaptive": True},
        )
        any_converged |= bool(res.success)
        if res.fun < best_f:
            best_u, best_f = res.x, float(res.fun)
    if not any_converged:
        log.warning("no restart converged; returning best point found")
    params = TwoStepParams.from_array(obj.theta(best_u), validate=False)
    n_obs = 2 * cols[0].size
    return FitResult(params=params, nll=best_f, bic=bic(best_f, dim, n_obs), n_obs=n_obs,
                     k=dim, model=model_name, restarts_used=len(starts),
                     converged=any_converged)


def fit_both(trials, n_restarts: int = 10, seed: int = 0) -> tuple[FitResult, FitResult]:
    """Fit the mean model, then the CVaR model seeded with the mean-model optimum.

    The mean model is the ``alpha = 1`` slice of the CVaR model, so seeding
    guarantees the CVaR fit is at least as good.
    """
    mean_fit = fit(trials, "mean", n_restarts, seed)
    cvar_fit = fit(trials, "cvar", n_restarts, seed + 1, init=[mean_fit.params])
    return mean_fit, cvar_fit


def drifting_reward_schedule(n_trials: int, seed: int, lo: float = 0.25, hi: float = 0.75,
                             step_sd: float = 0.025) -> np.ndarray:
    """Reward probabilities of shape ``(n_trials, 2, 2)`` from reflecting Gaussian walks."""
    rng = np.random.default_rng(seed)
    out = np.empty((n_trials, 2, 2))
    p = rng.uniform(lo, hi, size=(2, 2))
    width = hi - lo
    for t in range(n_trials):
        out[t] = p
        p = p + rng.normal(0.0, step_sd, size=(2, 2))
        # reflect at the walls
        p = lo + np.abs(np.mod(p - lo + width, 2 * width) - width)
    return out


def simulate_agent(params: TwoStepParams, reward_schedule: np.ndarray, n_trials: int,
                   seed: int) -> list[TrialRecord]:
    """Generate choices, transitions and rewards from the model."""
    reward_schedule = np.asarray(reward_schedule)
    if reward_schedule.shape[0] < n_trials:
        raise DomainError("reward schedule shorter than n_trials")
    rng = np.random.default_rng(seed)
    state = model.BeliefState.initial()
    prev = None
    out = []
    for t in range(n_trials):
        p1 = model.first_stage_choice_prob(state, prev, params)
        c1 = int(rng.random() < p1[1])
        common = rng.random() < model.P_COMMON
        s2 = c1 if common else 1 - c1
        p2 = model.second_stage_choice_prob(state.second_stage[s2], params)
        c2 = int(rng.random() < p2[1])
        r = int(rng.random() < reward_schedule[t, s2, c2])
        out.append(TrialRecord(c1, s2, c2, r))
        state = model.trial_update(state, c1, s2, c2, r, params)
        prev = c1
    return out


@dataclass
class RecoveryReport:
    names: tuple[str, ...]
    generative: np.ndarray
    recovered: np.ndarray
    spearman: dict[str, float]
    eta2_low_alpha: float
    n_low_alpha: int
    fits: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "spearman": self.spearman,
            "eta2_low_alpha": self.eta2_low_alpha,
            "n_low_alpha": self.n_low_alpha,
            "generative": self.generative.tolist(),
            "recovered": self.recovered.tolist(),
        }


def sample_agents(n_agents: int, seed: int) -> list[TwoStepParams]:
    """Generative parameters for recovery studies, drawn inside the fitting box."""
    rng = np.random.default_rng(seed)
    agents = []
    while len(agents) < n_agents:
        p = TwoStepParams(
            alpha=rng.uniform(0.1, 1.0),
            lam=rng.uniform(0.1, 0.7),
            eta2=rng.uniform(0.001, 0.03),
            tau_sticky=rng.uniform(0.0, 2.0),
            tau_2nd=rng.uniform(3.0, 15.0),
            tau_mb=rng.uniform(2.0, 10.0),
            tau_mf=rng.uniform(0.0, 5.0),
        )
        if p.lam <= p.one_minus_phi2:
            agents.append(p)
    return agents


def _simulate_and_fit(params, n_trials, seed, n_restarts, model_name):
    ss = np.random.SeedSequence(seed)
    sched_seed, sim_seed, fit_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    schedule = drifting_reward_schedule(n_trials, sched_seed)
    trials = simulate_agent(params, schedule, n_trials, sim_seed)
    return fit(trials, model_name, n_restarts, fit_seed)


def _agent_seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _run_agents(param_sets, n_trials, seed, n_restarts, model_name, n_jobs):
    seeds = _agent_seeds(seed, len(param_sets))
    if n_jobs == 1:
        return [_simulate_and_fit(p, n_trials, s, n_restarts, model_name)
                for p, s in zip(param_sets, seeds)]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(
        delayed(_simulate_and_fit)(p, n_trials, s, n_restarts, model_name)
        for p, s in zip(param_sets, seeds)
    )


def spearman(x, y) -> float:
    """Rank correlation; 0 when either input is constant."""
    if np.ptp(np.asarray(x, float)) == 0 or np.ptp(np.asarray(y, float)) == 0:
        return 0.0
    rho = stats.spearmanr(x, y).statistic
    return float(rho) if np.isfinite(rho) else 0.0


def recover(param_sets: list[TwoStepParams], n_trials: int = 200, seed: int = 0,
            n_restarts: int = 10, n_jobs: int = 1) -> RecoveryReport:
    """Simulate every agent, refit the CVaR model and rank-correlate parameters."""
    fits = _run_agents(param_sets, n_trials, seed, n_restarts, "cvar", n_jobs)
    gen = np.array([p.to_array() for p in param_sets])
    rec = np.array([f.params.to_array() for f in fits])
    rho = {n: spearman(gen[:, i], rec[:, i]) for i, n in enumerate(PARAM_NAMES)}
    low = gen[:, 0] < 0.5
    eta_low = spearman(gen[low, 2], rec[low, 2]) if low.sum() >= 3 else float("nan")
    return RecoveryReport(PARAM_NAMES, gen, rec, rho, eta_low, int(low.sum()), fits)


@dataclass
class MisattributionReport:
    alpha_gen: float
    generative_lam: np.ndarray
    fitted_lam: np.ndarray
    fitted_tau_sticky: np.ndarray

    @property
    def median_fitted_lam(self) -> float:
        return float(np.median(self.fitted_lam))

    @property
    def median_generative_lam(self) -> float:
        return float(np.median(self.generative_lam))

    @property
    def median_fitted_tau_sticky(self) -> float:
        return float(np.median(self.fitted_tau_sticky))

    def to_dict(self) -> dict:
        return {
            "alpha_gen": self.alpha_gen,
            "median_generative_lam": self.median_generative_lam,
            "median_fitted_lam": self.median_fitted_lam,
            "median_lam_bias": float(np.median(self.fitted_lam - self.generative_lam)),
            "median_fitted_tau_sticky": self.median_fitted_tau_sticky,
            "generative_lam": self.generative_lam.tolist(),
            "fitted_lam": self.fitted_lam.tolist(),
            "fitted_tau_sticky": self.fitted_tau_sticky.tolist(),
        }


def misattribution_experiment(alpha_gen: float, n_agents: int = 50, seed: int = 0,
                              n_trials: int = 200, n_restarts: int = 5,
                              n_jobs: int = 1) -> MisattributionReport:
    """Fit the mean model to non-perseverative CVaR agents at ``alpha_gen``."""
    agents = [p.with_(alpha=alpha_gen, tau_sticky=0.0) for p in sample_agents(n_agents, seed)]
    fits = _run_agents(agents, n_trials, seed + 1, n_restarts, "mean", n_jobs)
    return MisattributionReport(
        alpha_gen=alpha_gen,
        generative_lam=np.array([p.lam for p in agents]),
        fitted_lam=np.array([f.params.lam for f in fits]),
        fitted_tau_sticky=np.array([f.params.tau_sticky for f in fits]),
    )


FIG4_OUTCOMES_A = (1, 1, 0, 1, 1, 1)
FIG4_PARAMS = TwoStepParams(alpha=1.0, lam=0.1, eta2=0.003, tau_sticky=0.0, tau_2nd=30.0,
                            tau_mb=0.0, tau_mf=0.0)


@dataclass
class Figure4Trace:
    alpha: float
    cvar_a: list[float]
    cvar_b: list[float]
    mean_a: list[float]
    mean_b: list[float]
    choices: list[str]
    switch_trial: int | None

    @property
    def n_trials(self) -> int:
        return len(self.choices)


def figure4_trace(alpha: float, overrides: dict | None = None, n_trials: int = 20) -> Figure4Trace:
    """Forced-choice demonstration of uncertainty-driven perseveration.

    Option A is forced for the first six trials with outcomes 1,1,0,1,1,1;
    afterwards A always pays 0 and B always pays 1, and the agent takes the
    option with the higher CVaR. Values are recorded before each trial's
    choice; the switch trial (1-based) is the first free trial on which
    CVaR(A) < CVaR(B).
    """
    if not (0.1 <= alpha <= 1.0):
        raise DomainError("alpha must lie in [0.1, 1]")
    params = FIG4_PARAMS.with_(alpha=alpha, **(overrides or {}))
    a = b = model.initial_belief()
    out = Figure4Trace(alpha, [], [], [], [], [], None)
    n_forced = len(FIG4_OUTCOMES_A)
    for t in range(n_trials):
        ca, cb = cvar_gaussian(a, alpha), cvar_gaussian(b, alpha)
        out.cvar_a.append(ca)
        out.cvar_b.append(cb)
        out.mean_a.append(a.mean)
        out.mean_b.append(b.mean)
        if t < n_forced:
            choice, reward = "A", FIG4_OUTCOMES_A[t]
        else:
            choice = "B" if ca < cb else "A"
            reward = 1 if choice == "B" else 0
            if choice == "B" and out.switch_trial is None:
                out.switch_trial = t + 1
        out.choices.append(choice)
        if choice == "A":
            a, b = model.update_observed(a, reward, params), model.update_unobserved(b, params)
        else:
            a, b = model.update_unobserved(a, params), model.update_observed(b, reward, params)
    return out
