"""Risk-measure primitives.

Lower-tail value-at-risk and conditional value-at-risk for discrete
distributions, Gaussians and Gaussian mixtures, plus the risk-envelope
(distorted expectation) minimizations used inside the dynamic-programming
backups.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np

from riskplan import kernels

_STD_NORMAL = NormalDist()
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# cumulative-probability slack when comparing against alpha
_CUM_TOL = 1e-12


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a risk measure."""


class UnsupportedTransitionError(ValueError):
    """Raised for transitions with more stochastic successors than supported."""


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha <= 1.0) or math.isnan(alpha):
        raise DomainError(f"alpha must lie in (0, 1], got {alpha!r}")
    return alpha


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite distribution given by value atoms and their probabilities."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if values.size == 0:
            raise DomainError("distribution needs at least one atom")
        if values.shape != probs.shape:
            raise DomainError("values and probs differ in length")
        if not np.all(np.isfinite(values)):
            raise DomainError("atom values must be finite")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise DomainError("probabilities must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise DomainError(f"probabilities sum to {probs.sum()!r}, expected 1")
        order = np.argsort(values, kind="stable")
        object.__setattr__(self, "values", values[order])
        object.__setattr__(self, "probs", probs[order])

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> "DiscreteDistribution":
        """Build from ``(prob, value)`` pairs, e.g. ``[(0.1, 0), (0.9, 2)]``."""
        pairs = list(pairs)
        return cls(values=[v for _, v in pairs], probs=[p for p, _ in pairs])

    @classmethod
    def from_samples(cls, samples: Sequence[float]) -> "DiscreteDistribution":
        vals, counts = np.unique(np.asarray(samples, dtype=float), return_counts=True)
        return cls(values=vals, probs=counts / counts.sum())

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def shift(self, c: float) -> "DiscreteDistribution":
        return DiscreteDistribution(self.values + c, self.probs)

    def scale(self, c: float) -> "DiscreteDistribution":
        return DiscreteDistribution(self.values * c, self.probs)

    def to_json(self) -> str:
        return json.dumps(
            [{"value": float(v), "prob": float(p)} for v, p in zip(self.values, self.probs)]
        )

    @classmethod
    def from_json(cls, text: str) -> "DiscreteDistribution":
        data = json.loads(text)
        if isinstance(data, dict) and "atoms" in data:
            data = data["atoms"]
        if not isinstance(data, list):
            raise DomainError("distribution JSON must be a list of {value, prob} objects")
        values, probs = [], []
        for i, atom in enumerate(data):
            try:
                values.append(float(atom["value"]))
                probs.append(float(atom["prob"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise DomainError(f"atom {i}: expected numeric 'value' and 'prob'") from exc
        return cls(values=values, probs=probs)


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and variance of a learned (Gaussian) value distribution."""

    mean: float
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.variance)):
            raise DomainError("belief mean and variance must be finite")
        if self.variance <= 0.0:
            raise DomainError(f"variance must be positive, got {self.variance!r}")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


def var_discrete(dist: DiscreteDistribution, alpha: float) -> float:
    """Smallest atom value whose cumulative probability reaches ``alpha``."""
    alpha = check_alpha(alpha)
    cum = np.cumsum(dist.probs)
    idx = int(np.searchsorted(cum, alpha - _CUM_TOL, side="left"))
    return float(dist.values[min(idx, dist.values.size - 1)])


def cvar_discrete(dist: DiscreteDistribution, alpha: float) -> float:
    """Lower-tail CVaR of a discrete distribution.

    Averages the lowest ``alpha`` probability mass, splitting the atom at the
    VaR fractionally. This coincides with the Rockafellar-Uryasev form
    ``sup_nu {nu - E[(nu - Z)^+] / alpha}``.
    """
    alpha = check_alpha(alpha)
    if alpha == 1.0:
        return dist.mean()
    total = 0.0
    remaining = alpha
    for v, p in zip(dist.values, dist.probs):
        take = min(p, remaining)
        total += v * take
        remaining -= take
        if remaining <= 0.0:
            break
    return float(total / alpha)


def cvar_sup_form(dist: DiscreteDistribution, alpha: float) -> float:
    """CVaR via ``sup_nu {nu - E[(nu - Z)^+] / alpha}``; the sup sits on an atom."""
    alpha = check_alpha(alpha)
    nu = dist.values[:, None]
    shortfall = np.clip(nu - dist.values[None, :], 0.0, None) @ dist.probs
    return float(np.max(dist.values - shortfall / alpha))


@functools.lru_cache(maxsize=4096)
def gaussian_tail_factor(alpha: float) -> float:
    """``pdf(ppf(alpha)) / alpha``; lower-tail CVaR of N(0,1) is its negative."""
    alpha = check_alpha(alpha)
    if alpha == 1.0:
        return 0.0
    z = _STD_NORMAL.inv_cdf(alpha)
    return math.exp(-0.5 * z * z) * _INV_SQRT_2PI / alpha


def cvar_gaussian(belief: GaussianBelief, alpha: float) -> float:
    if belief.variance <= 0.0:
        raise DomainError("variance must be positive")
    return belief.mean - math.sqrt(belief.variance) * gaussian_tail_factor(alpha)


def _norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def _norm_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) * _INV_SQRT_2PI


def mixture_var(means: Sequence[float], sds: Sequence[float], weights: Sequence[float],
                alpha: float, tol: float = 1e-13) -> float:
    """Quantile of a Gaussian mixture by safeguarded Newton on the analytic CDF.

    Every Newton step that would leave the current bracket is replaced by a
    bisection step, so convergence is guaranteed for any valid mixture.
    """
    lo = min(m - 40.0 * s for m, s in zip(means, sds))
    hi = max(m + 40.0 * s for m, s in zip(means, sds))
    mix_mean = sum(w * m for w, m in zip(weights, means))
    mix_var = sum(w * (s * s + m * m) for w, m, s in zip(weights, means, sds)) - mix_mean**2
    v = mix_mean + math.sqrt(max(mix_var, 1e-300)) * _STD_NORMAL.inv_cdf(alpha)
    v = min(max(v, lo), hi)
    for _ in range(200):
        cdf = 0.0
        pdf = 0.0
        for m, s, w in zip(means, sds, weights):
            z = (v - m) / s
            cdf += w * _norm_cdf(z)
            pdf += w * _norm_pdf(z) / s
        gap = cdf - alpha
        if abs(gap) <= tol:
            return v
        if gap < 0.0:
            lo = v
        else:
            hi = v
        if hi - lo <= 1e-15 * (1.0 + abs(v)):
            return v
        step = v - gap / pdf if pdf > 0.0 else 0.5 * (lo + hi)
        v = step if lo < step < hi else 0.5 * (lo + hi)
    raise RuntimeError("mixture quantile search did not converge")


def cvar_gaussian_mixture(components: Sequence[GaussianBelief], weights: Sequence[float],
                          alpha: float) -> float:
    """Lower-tail CVaR of a Gaussian mixture.

    The VaR comes from the analytic mixture CDF; the tail mean is assembled
    from closed-form truncated means of the components below it.
    """
    alpha = check_alpha(alpha)
    weights = [float(w) for w in weights]
    if len(weights) != len(components) or not components:
        raise DomainError("need one weight per component")
    if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
        raise DomainError("mixture weights must be nonnegative and sum to 1")
    means = [c.mean for c in components]
    sds = [c.sd for c in components]
    if alpha == 1.0:
        return sum(w * m for w, m in zip(weights, means))
    v = mixture_var(means, sds, weights, alpha)
    tail = 0.0
    for m, s, w in zip(means, sds, weights):
        z = (v - m) / s
        tail += w * (m * _norm_cdf(z) - s * _norm_pdf(z))
    return tail / alpha


def distorted_expectation_linear(p: Sequence[float], values: Sequence[float],
                                 alpha: float) -> tuple[float, np.ndarray]:
    """Minimize ``sum p*xi*v`` over the CVaR risk envelope.

    Successors are filled greedily in ascending order of value with weight
    ``1/alpha`` until the distorted mass reaches one. Returns the minimum and
    the weights.
    """
    alpha = check_alpha(alpha)
    p = np.asarray(p, dtype=float)
    values = np.asarray(values, dtype=float)
    if alpha == 1.0:
        return float(np.dot(p, values)), np.ones_like(p)
    xi = np.zeros_like(p)
    remaining = 1.0
    cap = 1.0 / alpha
    for i in np.argsort(values, kind="stable"):
        if p[i] <= 0.0 or remaining <= 0.0:
            continue
        xi[i] = min(cap, remaining / p[i])
        remaining -= p[i] * xi[i]
    return float(np.dot(p * xi, values)), xi


class AlphaGrid:
    """Log-spaced risk levels on ``[min_alpha, 1]`` used to tabulate CVaR values."""

    def __init__(self, points: Sequence[float] | None = None, *, n_points: int = 21,
                 min_alpha: float = 0.01):
        if points is None:
            if n_points < 2:
                raise DomainError("grid needs at least two points")
            check_alpha(min_alpha)
            points = np.logspace(np.log10(min_alpha), 0.0, n_points)
            points[-1] = 1.0
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise DomainError("grid needs at least two points")
        if pts[0] <= 0.0 or pts[-1] != 1.0 or np.any(np.diff(pts) <= 0):
            raise DomainError("grid must be strictly increasing on (0, 1] and end at 1")
        self.points = pts
        self.log_points = np.log(pts)

    def __len__(self) -> int:
        return self.points.size

    def __repr__(self) -> str:
        return f"AlphaGrid(n_points={len(self)}, min_alpha={self.min:.6g})"

    @property
    def min(self) -> float:
        return float(self.points[0])

    def clamp(self, alpha: float) -> float:
        return min(max(float(alpha), self.min), 1.0)

    def bracket(self, alpha: float) -> tuple[int, int, float]:
        """Indices ``(i, j)`` and weight ``w`` so that ``f(alpha) ~ (1-w) f[i] + w f[j]``."""
        la = math.log(self.clamp(alpha))
        j = int(np.searchsorted(self.log_points, la, side="left"))
        if j == 0:
            return 0, 0, 0.0
        if self.log_points[j] == la:
            return j, j, 0.0
        i = j - 1
        w = (la - self.log_points[i]) / (self.log_points[j] - self.log_points[i])
        return i, j, float(w)

    def interp(self, curve: np.ndarray, alpha: float) -> float | np.ndarray:
        """Linear interpolation in log-alpha along the last axis of ``curve``."""
        i, j, w = self.bracket(alpha)
        curve = np.asarray(curve)
        if i == j:
            return curve[..., i]
        return (1.0 - w) * curve[..., i] + w * curve[..., j]


def _pair_minimize(p1, p2, c1, c2, grid, alpha, mass, n_scan):
    return kernels.scan2(float(p1), float(p2), np.ascontiguousarray(c1, dtype=float),
                         np.ascontiguousarray(c2, dtype=float), grid.log_points,
                         float(alpha), float(mass), int(n_scan))


def distorted_expectation_interp(p: Sequence[float], value_curves: np.ndarray, alpha: float,
                                 grid: AlphaGrid, *, allow_fallback: bool = False,
                                 n_scan: int = 1001) -> tuple[float, np.ndarray]:
    """Minimize ``sum p*xi*V(s', alpha*xi)`` over the CVaR risk envelope.

    ``value_curves[k]`` holds successor ``k``'s values on ``grid``; between
    grid points they are interpolated linearly in log-alpha and clamped to
    the grid below its smallest point. Two stochastic successors reduce to a
    bounded 1-D problem (dense scan plus local refinement). More successors
    need ``allow_fallback``, which runs pairwise mass exchanges with the same
    1-D solver until no pair improves.
    """
    alpha = check_alpha(alpha)
    p = np.asarray(p, dtype=float)
    curves = np.asarray(value_curves, dtype=float)
    xi = np.zeros_like(p)
    live = np.flatnonzero(p > 0.0)
    if live.size == 1:
        k = live[0]
        xi[k] = 1.0 / p[k]
        return float(p[k] * xi[k] * grid.interp(curves[k], alpha * xi[k])), xi
    if alpha == 1.0:
        xi[live] = 1.0
        return float(sum(p[k] * curves[k, -1] for k in live)), xi
    if live.size == 2:
        i, j = live
        val, m1 = _pair_minimize(p[i], p[j], curves[i], curves[j], grid, alpha, 1.0, n_scan)
        xi[i] = m1 / p[i]
        xi[j] = (1.0 - m1) / p[j]
        return float(val), xi
    if not allow_fallback:
        raise UnsupportedTransitionError(
            f"{live.size} stochastic successors; enable the pairwise fallback"
        )
    return _pairwise_exchange(p, curves, alpha, grid, live, n_scan)


def _pairwise_exchange(p, curves, alpha, grid, live, n_scan):
    mass = np.zeros_like(p)
    # start from the linear solution at the current alpha's values
    _, xi0 = distorted_expectation_linear(p[live], [grid.interp(curves[k], alpha) for k in live],
                                          alpha)
    mass[live] = p[live] * xi0

    def term(k):
        if mass[k] <= 0.0:
            return 0.0
        return mass[k] * grid.interp(curves[k], alpha * mass[k] / p[k])

    best = sum(term(k) for k in live)
    for _ in range(100):
        improved = False
        for a_idx in range(live.size):
            for b_idx in range(a_idx + 1, live.size):
                i, j = live[a_idx], live[b_idx]
                pair_mass = mass[i] + mass[j]
                if pair_mass <= 0.0:
                    continue
                old = term(i) + term(j)
                val, mi = _pair_minimize(p[i], p[j], curves[i], curves[j], grid, alpha,
                                         pair_mass, n_scan)
                if val < old - 1e-13:
                    mass[i], mass[j] = mi, pair_mass - mi
                    best += val - old
                    improved = True
        if not improved:
            break
    xi = np.zeros_like(p)
    xi[live] = mass[live] / p[live]
    return float(sum(term(k) for k in live)), xi
