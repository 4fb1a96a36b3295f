"""Distributional (CVaR) learner for the two-step task.

Each second-stage option carries a Gaussian belief over its reward
probability, tracked by an approximate Kalman filter. First-stage values
mix a model-based term (a 70/30 Gaussian mixture over the second-stage
states) and a model-free term learned from received outcomes, both read
out through lower-tail CVaR at the agent's risk level.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from riskplan.risk import (
    DomainError,
    GaussianBelief,
    cvar_gaussian,
    cvar_gaussian_mixture,
)

ASYMPTOTIC_VARIANCE = 0.1
INITIAL_MEAN = 0.5
INITIAL_VARIANCE = 0.03
P_COMMON = 0.7
# unobserved means decay toward this value
MEAN_ANCHOR = 0.5

PARAM_NAMES = ("alpha", "lam", "eta2", "tau_sticky", "tau_2nd", "tau_mb", "tau_mf")
BOUNDS = {
    "alpha": (0.1, 1.0),
    "lam": (0.01, 0.99),
    "eta2": (0.001, 0.09),
    "tau_sticky": (0.0, 20.0),
    "tau_2nd": (0.0, 30.0),
    "tau_mb": (0.0, 30.0),
    "tau_mf": (0.0, 30.0),
}


@dataclass(frozen=True)
class TwoStepParams:
    alpha: float = 1.0
    lam: float = 0.1
    eta2: float = 0.003
    tau_sticky: float = 0.0
    tau_2nd: float = 5.0
    tau_mb: float = 5.0
    tau_mf: float = 0.0

    @property
    def one_minus_phi2(self) -> float:
        """Variance retention, pinned so unobserved variance tends to 0.1."""
        return 1.0 - self.eta2 / ASYMPTOTIC_VARIANCE

    def validate(self) -> "TwoStepParams":
        for name in PARAM_NAMES:
            lo, hi = BOUNDS[name]
            value = getattr(self, name)
            if not (lo <= value <= hi):
                raise DomainError(f"{name}={value!r} outside [{lo}, {hi}]")
        if self.lam > self.one_minus_phi2:
            raise DomainError(
                f"lam={self.lam!r} must not exceed 1 - phi^2 = {self.one_minus_phi2!r}"
            )
        return self

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, x, validate: bool = True) -> "TwoStepParams":
        params = cls(**{n: float(v) for n, v in zip(PARAM_NAMES, x)})
        return params.validate() if validate else params

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TwoStepParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DomainError(f"unknown parameter(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def with_(self, **changes) -> "TwoStepParams":
        return replace(self, **changes)


def initial_belief() -> GaussianBelief:
    return GaussianBelief(INITIAL_MEAN, INITIAL_VARIANCE)


@dataclass(frozen=True)
class BeliefState:
    """Beliefs for the four second-stage options and the two model-free first-stage options."""

    second_stage: tuple[tuple[GaussianBelief, GaussianBelief], tuple[GaussianBelief, GaussianBelief]]
    mf_first: tuple[GaussianBelief, GaussianBelief]

    @classmethod
    def initial(cls) -> "BeliefState":
        b = initial_belief()
        return cls(second_stage=((b, b), (b, b)), mf_first=(b, b))


@dataclass(frozen=True)
class TrialRecord:
    choice1: int
    state2: int
    choice2: int
    reward: int

    def __post_init__(self):
        for name in ("choice1", "state2", "choice2", "reward"):
            if getattr(self, name) not in (0, 1):
                raise DomainError(f"{name} must be 0 or 1, got {getattr(self, name)!r}")


def update_observed(belief: GaussianBelief, reward: float, params: TwoStepParams) -> GaussianBelief:
    mean = belief.mean + params.lam * (reward - belief.mean)
    var = params.one_minus_phi2 * belief.variance + params.eta2 - params.lam * belief.variance
    return GaussianBelief(mean, var)


def update_unobserved(belief: GaussianBelief, params: TwoStepParams) -> GaussianBelief:
    mean = belief.mean + params.lam * (MEAN_ANCHOR - belief.mean)
    var = params.one_minus_phi2 * belief.variance + params.eta2
    return GaussianBelief(mean, var)


def softmax2(x0: float, x1: float) -> tuple[float, float]:
    m = max(x0, x1)
    e0 = math.exp(x0 - m)
    e1 = math.exp(x1 - m)
    s = e0 + e1
    return e0 / s, e1 / s


def second_stage_choice_prob(beliefs, params: TwoStepParams) -> tuple[float, float]:
    """Softmax over ``tau_2nd * CVaR`` for the two options of the visited state."""
    c0 = cvar_gaussian(beliefs[0], params.alpha)
    c1 = cvar_gaussian(beliefs[1], params.alpha)
    return softmax2(params.tau_2nd * c0, params.tau_2nd * c1)


def representative_option(beliefs, params: TwoStepParams) -> GaussianBelief:
    """The option the agent would prefer on arrival (ties go to option 0)."""
    if cvar_gaussian(beliefs[1], params.alpha) > cvar_gaussian(beliefs[0], params.alpha):
        return beliefs[1]
    return beliefs[0]


def mb_first_stage_values(second_stage, params: TwoStepParams) -> tuple[float, float]:
    """Model-based CVaR of each first-stage action.

    Action ``a`` leads to state ``a`` with probability 0.7 and to the other
    state with 0.3; each state contributes its representative option's belief.
    """
    reps = [representative_option(second_stage[s], params) for s in (0, 1)]
    return tuple(
        cvar_gaussian_mixture([reps[a], reps[1 - a]], [P_COMMON, 1.0 - P_COMMON], params.alpha)
        for a in (0, 1)
    )


def mf_first_stage_values(state: BeliefState, params: TwoStepParams) -> tuple[float, float]:
    return tuple(cvar_gaussian(b, params.alpha) for b in state.mf_first)


def first_stage_choice_prob(state: BeliefState, prev_choice1, params: TwoStepParams):
    logits = [0.0, 0.0]
    if params.tau_mb != 0.0:
        mb = mb_first_stage_values(state.second_stage, params)
        logits = [logits[a] + params.tau_mb * mb[a] for a in (0, 1)]
    if params.tau_mf != 0.0:
        mf = mf_first_stage_values(state, params)
        logits = [logits[a] + params.tau_mf * mf[a] for a in (0, 1)]
    if prev_choice1 is not None:
        logits[prev_choice1] += params.tau_sticky
    return softmax2(*logits)


def mf_first_stage_update(state: BeliefState, choice1: int, reward: int,
                          params: TwoStepParams) -> BeliefState:
    mf = tuple(
        update_observed(b, reward, params) if a == choice1 else update_unobserved(b, params)
        for a, b in enumerate(state.mf_first)
    )
    return replace(state, mf_first=mf)


def second_stage_update(state: BeliefState, state2: int, choice2: int, reward: int,
                        params: TwoStepParams) -> BeliefState:
    ss = tuple(
        tuple(
            update_observed(b, reward, params) if (s, o) == (state2, choice2)
            else update_unobserved(b, params)
            for o, b in enumerate(pair)
        )
        for s, pair in enumerate(state.second_stage)
    )
    return replace(state, second_stage=ss)


def trial_update(state: BeliefState, choice1: int, state2: int, choice2: int, reward: int,
                 params: TwoStepParams) -> BeliefState:
    state = second_stage_update(state, state2, choice2, reward, params)
    return mf_first_stage_update(state, choice1, reward, params)
