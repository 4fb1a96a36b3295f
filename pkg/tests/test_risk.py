import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskplan.risk import (
    AlphaGrid,
    DiscreteDistribution,
    DomainError,
    GaussianBelief,
    UnsupportedTransitionError,
    cvar_discrete,
    cvar_gaussian,
    cvar_gaussian_mixture,
    cvar_sup_form,
    distorted_expectation_interp,
    distorted_expectation_linear,
    mixture_var,
    var_discrete,
)


def brute_cvar(values, probs, alpha):
    """Oracle: integrate the quantile function over [0, alpha] on a fine grid."""
    order = np.argsort(values)
    v, p = np.asarray(values, float)[order], np.asarray(probs, float)[order]
    cdf = np.cumsum(p)
    u = (np.arange(200_000) + 0.5) / 200_000 * alpha
    q = v[np.minimum(np.searchsorted(cdf, u, side="left"), v.size - 1)]
    return float(q.mean())


dist_strategy = st.lists(
    st.tuples(st.floats(-50, 50, allow_nan=False), st.floats(0.01, 1.0)),
    min_size=1, max_size=6,
).map(lambda pairs: DiscreteDistribution(
    values=[v for v, _ in pairs],
    probs=np.array([w for _, w in pairs]) / sum(w for _, w in pairs),
))
alpha_strategy = st.floats(0.01, 1.0)


class TestDiscrete:
    def test_tree_numbers(self):
        pi = DiscreteDistribution.from_pairs([(0.1, 0.0), (0.9, 2.0)])
        pi_prime = DiscreteDistribution.from_pairs([(0.01, -2.0), (0.09, 1.0), (0.9, 2.0)])
        assert cvar_discrete(pi, 0.1) == pytest.approx(0.0, abs=1e-12)
        assert cvar_discrete(pi_prime, 0.1) == pytest.approx(0.7, abs=1e-12)

    def test_fractional_atom(self):
        # lower 0.8 tail: all of the 0 atom (0.5) plus 0.3 of the 10 atom
        d = DiscreteDistribution([0.0, 10.0], [0.5, 0.5])
        assert cvar_discrete(d, 0.8) == pytest.approx(3.75, abs=1e-12)
        assert brute_cvar([0, 10], [0.5, 0.5], 0.8) == pytest.approx(3.75, abs=1e-4)

    def test_var(self):
        d = DiscreteDistribution([0.0, 1.0, 2.0], [0.2, 0.3, 0.5])
        assert var_discrete(d, 0.2) == 0.0
        assert var_discrete(d, 0.21) == 1.0
        assert var_discrete(d, 1.0) == 2.0

    def test_alpha_one_is_mean(self):
        d = DiscreteDistribution([-3.0, 1.0, 4.0], [0.2, 0.3, 0.5])
        assert cvar_discrete(d, 1.0) == pytest.approx(d.mean())

    @pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5, float("nan")])
    def test_bad_alpha(self, alpha):
        with pytest.raises(DomainError):
            cvar_discrete(DiscreteDistribution([0.0], [1.0]), alpha)

    def test_bad_probs(self):
        with pytest.raises(DomainError):
            DiscreteDistribution([0.0, 1.0], [0.5, 0.6])
        with pytest.raises(DomainError):
            DiscreteDistribution([0.0, 1.0], [-0.5, 1.5])

    def test_json_roundtrip(self):
        d = DiscreteDistribution([2.0, -1.0], [0.25, 0.75])
        back = DiscreteDistribution.from_json(d.to_json())
        np.testing.assert_array_equal(back.values, d.values)
        np.testing.assert_array_equal(back.probs, d.probs)

    def test_json_names_bad_field(self):
        with pytest.raises(DomainError, match="atom 1"):
            DiscreteDistribution.from_json('[{"value": 1, "prob": 0.5}, {"value": 2}]')

    @settings(max_examples=200, deadline=None)
    @given(dist_strategy, alpha_strategy)
    def test_matches_brute_force(self, d, alpha):
        assert cvar_discrete(d, alpha) == pytest.approx(
            brute_cvar(d.values, d.probs, alpha), abs=1e-3 * (1 + np.abs(d.values).max()))

    @settings(max_examples=200, deadline=None)
    @given(dist_strategy, alpha_strategy)
    def test_matches_sup_form(self, d, alpha):
        assert cvar_discrete(d, alpha) == pytest.approx(cvar_sup_form(d, alpha), abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(dist_strategy, alpha_strategy, st.floats(-10, 10), st.floats(0.1, 5))
    def test_coherence(self, d, alpha, c, k):
        base = cvar_discrete(d, alpha)
        assert cvar_discrete(d.shift(c), alpha) == pytest.approx(base + c, abs=1e-9)
        assert cvar_discrete(d.scale(k), alpha) == pytest.approx(k * base, abs=1e-8)
        assert base <= d.mean() + 1e-9
        assert base >= d.values.min() - 1e-9

    @settings(max_examples=100, deadline=None)
    @given(dist_strategy, alpha_strategy, alpha_strategy)
    def test_monotone_in_alpha(self, d, a1, a2):
        lo, hi = sorted((a1, a2))
        assert cvar_discrete(d, lo) <= cvar_discrete(d, hi) + 1e-9


class TestGaussian:
    @pytest.mark.parametrize("alpha", [0.05, 0.1, 0.3, 0.7, 1.0])
    def test_monte_carlo(self, alpha):
        rng = np.random.default_rng(0)
        x = np.sort(rng.normal(0.4, 0.2, 2_000_000))
        mc = x[: int(alpha * x.size)].mean()
        assert cvar_gaussian(GaussianBelief(0.4, 0.04), alpha) == pytest.approx(mc, abs=2e-3)

    def test_closed_form(self):
        from statistics import NormalDist

        z = NormalDist().inv_cdf(0.1)
        expected = 0.5 - math.sqrt(0.1) * NormalDist().pdf(z) / 0.1
        assert cvar_gaussian(GaussianBelief(0.5, 0.1), 0.1) == pytest.approx(expected, abs=1e-12)

    def test_bad_variance(self):
        with pytest.raises(DomainError):
            GaussianBelief(0.0, -1.0)


class TestMixture:
    @pytest.mark.parametrize("alpha", [0.1, 0.3, 0.6])
    def test_monte_carlo(self, alpha):
        rng = np.random.default_rng(1)
        n = 2_000_000
        comp = rng.random(n) < 0.7
        x = np.where(comp, rng.normal(0.6, 0.15, n), rng.normal(0.3, 0.25, n))
        x.sort()
        mc = x[: int(alpha * n)].mean()
        got = cvar_gaussian_mixture([GaussianBelief(0.6, 0.15 ** 2), GaussianBelief(0.3, 0.25 ** 2)],
                                    [0.7, 0.3], alpha)
        assert got == pytest.approx(mc, abs=2e-3)

    def test_var_hits_level(self):
        from statistics import NormalDist

        v = mixture_var([0.6, 0.3], [0.15, 0.25], [0.7, 0.3], 0.2)
        cdf = 0.7 * NormalDist(0.6, 0.15).cdf(v) + 0.3 * NormalDist(0.3, 0.25).cdf(v)
        assert cdf == pytest.approx(0.2, abs=1e-12)

    def test_single_component_matches_gaussian(self):
        b = GaussianBelief(0.2, 0.05)
        assert cvar_gaussian_mixture([b, b], [0.7, 0.3], 0.25) == pytest.approx(
            cvar_gaussian(b, 0.25), abs=1e-10)

    def test_bad_weights(self):
        b = GaussianBelief(0.0, 1.0)
        with pytest.raises(DomainError):
            cvar_gaussian_mixture([b, b], [0.7, 0.4], 0.5)


class TestEnvelope:
    def test_linear_matches_cvar(self):
        p, v = [0.1, 0.9], [0.0, 2.0]
        val, xi = distorted_expectation_linear(p, v, 0.1)
        assert val == pytest.approx(0.0)
        np.testing.assert_allclose(xi, [10.0, 0.0])

    def test_linear_example(self):
        val, xi = distorted_expectation_linear([0.5, 0.5], [0.0, 10.0], 0.8)
        assert val == pytest.approx(3.75)
        np.testing.assert_allclose(xi, [1.25, 0.75])

    @settings(max_examples=100, deadline=None)
    @given(dist_strategy, alpha_strategy)
    def test_linear_envelope_feasible(self, d, alpha):
        val, xi = distorted_expectation_linear(d.probs, d.values, alpha)
        assert np.all(xi >= -1e-12) and np.all(xi <= 1 / alpha + 1e-9)
        assert np.dot(d.probs, xi) == pytest.approx(1.0, abs=1e-9)
        assert val == pytest.approx(cvar_discrete(d, alpha), abs=1e-9)

    @staticmethod
    def _objective(p, curves, alpha, grid, m1):
        m1 = np.atleast_1d(m1)
        f = np.zeros_like(m1)
        for k, m in ((0, m1), (1, 1.0 - m1)):
            beta = np.clip(alpha * m / p[k], grid.min, 1.0)
            f += np.where(m > 0, m * np.interp(np.log(beta), grid.log_points, curves[k]), 0.0)
        return f

    def _brute_interp(self, p, curves, alpha, grid, n=400_001):
        lo = max(0.0, 1.0 - p[1] / alpha)
        hi = min(1.0, p[0] / alpha)
        return float(self._objective(p, curves, alpha, grid, np.linspace(lo, hi, n)).min())

    @pytest.mark.parametrize("seed", range(8))
    def test_interp_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        grid = AlphaGrid()
        curves = np.sort(rng.normal(0, 3, (2, len(grid))), axis=1)
        p = rng.dirichlet([1, 1])
        alpha = float(rng.choice(grid.points[:-1]))
        val, xi = distorted_expectation_interp(p, curves, alpha, grid)
        brute = self._brute_interp(p, curves, alpha, grid)
        # refinement stops at 1e-6 in mass, so allow that much slack above the oracle
        assert brute - 1e-4 <= val <= brute + 1e-5
        # the reported value is attained by the reported weights
        assert val == pytest.approx(
            self._objective(p, curves, alpha, grid, p[0] * xi[0])[0], abs=1e-9)
        assert np.dot(p, xi) == pytest.approx(1.0, abs=1e-9)
        assert np.all(xi <= 1 / alpha + 1e-9)

    def test_interp_constant_curves_is_linear(self):
        # curves flat in alpha reduce the problem to the linear envelope
        grid = AlphaGrid()
        curves = np.array([[0.0] * len(grid), [2.0] * len(grid)])
        val, _ = distorted_expectation_interp([0.1, 0.9], curves, 0.1, grid)
        assert val == pytest.approx(0.0, abs=1e-9)

    def test_three_successors_need_fallback(self):
        grid = AlphaGrid()
        curves = np.zeros((3, len(grid)))
        with pytest.raises(UnsupportedTransitionError):
            distorted_expectation_interp([0.2, 0.3, 0.5], curves, 0.5, grid)

    def test_fallback_matches_brute_force(self):
        grid = AlphaGrid()
        rng = np.random.default_rng(3)
        curves = np.sort(rng.normal(0, 2, (3, len(grid))), axis=1)
        p = np.array([0.2, 0.3, 0.5])
        alpha = grid.points[10]
        val, xi = distorted_expectation_interp(p, curves, alpha, grid, allow_fallback=True)
        best = math.inf
        steps = np.linspace(0, 1, 201)
        for m0, m1 in itertools.product(steps, steps):
            m2 = 1 - m0 - m1
            ms = (m0, m1, m2)
            if m2 < -1e-12 or any(m > p[k] / alpha + 1e-12 for k, m in enumerate(ms)):
                continue
            f = sum(m * grid.interp(curves[k], alpha * m / p[k]) for k, m in enumerate(ms) if m > 0)
            best = min(best, f)
        assert val <= best + 1e-3
        assert np.dot(p, xi) == pytest.approx(1.0, abs=1e-9)


class TestGrid:
    def test_default(self):
        g = AlphaGrid()
        assert len(g) == 21
        assert g.points[0] == pytest.approx(0.01) and g.points[-1] == 1.0
        np.testing.assert_allclose(np.diff(np.log(g.points)), np.log(100) / 20)

    def test_interp_exact_on_points_and_clamped(self):
        g = AlphaGrid()
        curve = np.arange(21.0)
        assert g.interp(curve, g.points[7]) == pytest.approx(7.0)
        assert g.interp(curve, 0.001) == 0.0
        mid = math.exp(0.5 * (g.log_points[3] + g.log_points[4]))
        assert g.interp(curve, mid) == pytest.approx(3.5)

    @pytest.mark.parametrize("pts", [[0.5], [0.1, 0.5], [0.5, 0.1, 1.0], [0.0, 1.0]])
    def test_bad_grid(self, pts):
        with pytest.raises(DomainError):
            AlphaGrid(pts)
