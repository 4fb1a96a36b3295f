# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: the two-step likelihood loop and the two-successor
risk-envelope scan. Mirrors ``riskplan._kernels_py`` exactly."""

from libc.math cimport exp, log, sqrt, erfc, fabs
from statistics import NormalDist

import numpy as np

BACKEND = "cython"

cdef double SQRT2 = sqrt(2.0)
cdef double INV_SQRT_2PI = 1.0 / sqrt(2.0 * 3.141592653589793)
cdef double P_COMMON = 0.7
cdef double ASYMPTOTIC_VARIANCE = 0.1
cdef double MEAN_ANCHOR = 0.5
cdef double INITIAL_MEAN = 0.5
cdef double INITIAL_VARIANCE = 0.03

_STD_NORMAL = NormalDist()


cdef inline double norm_cdf(double x) nogil:
    return 0.5 * erfc(-x / SQRT2)


cdef inline double norm_pdf(double x) nogil:
    return exp(-0.5 * x * x) * INV_SQRT_2PI


cdef double mixture_cvar2(double m0, double s0, double m1, double s1, double w0,
                          double alpha, double z_alpha) nogil:
    cdef double w1 = 1.0 - w0
    cdef double lo, hi, v, mix_mean, mix_var, cdf, pdf, gap, step, za, zb
    cdef int it
    if alpha == 1.0:
        return w0 * m0 + w1 * m1
    lo = m0 - 40.0 * s0
    if m1 - 40.0 * s1 < lo:
        lo = m1 - 40.0 * s1
    hi = m0 + 40.0 * s0
    if m1 + 40.0 * s1 > hi:
        hi = m1 + 40.0 * s1
    mix_mean = w0 * m0 + w1 * m1
    mix_var = w0 * (s0 * s0 + m0 * m0) + w1 * (s1 * s1 + m1 * m1) - mix_mean * mix_mean
    if mix_var < 1e-300:
        mix_var = 1e-300
    v = mix_mean + sqrt(mix_var) * z_alpha
    if v < lo:
        v = lo
    if v > hi:
        v = hi
    for it in range(200):
        za = (v - m0) / s0
        zb = (v - m1) / s1
        cdf = w0 * norm_cdf(za) + w1 * norm_cdf(zb)
        pdf = w0 * norm_pdf(za) / s0 + w1 * norm_pdf(zb) / s1
        gap = cdf - alpha
        if fabs(gap) <= 1e-13:
            break
        if gap < 0.0:
            lo = v
        else:
            hi = v
        if hi - lo <= 1e-15 * (1.0 + fabs(v)):
            break
        if pdf > 0.0:
            step = v - gap / pdf
        else:
            step = 0.5 * (lo + hi)
        if lo < step < hi:
            v = step
        else:
            v = 0.5 * (lo + hi)
    za = (v - m0) / s0
    zb = (v - m1) / s1
    return (w0 * (m0 * norm_cdf(za) - s0 * norm_pdf(za))
            + w1 * (m1 * norm_cdf(zb) - s1 * norm_pdf(zb))) / alpha


def mixture_cvar(double m0, double s0, double m1, double s1, double w0, double alpha):
    """CVaR of a two-component Gaussian mixture (means, sds, first weight)."""
    z = 0.0 if alpha == 1.0 else _STD_NORMAL.inv_cdf(alpha)
    return mixture_cvar2(m0, s0, m1, s1, w0, alpha, z)


cdef inline double softmax_logp(double x_chosen, double x_other, double floor) nogil:
    cdef double m = x_chosen if x_chosen > x_other else x_other
    cdef double e0 = exp(x_chosen - m)
    cdef double e1 = exp(x_other - m)
    cdef double p = e0 / (e0 + e1)
    if p < floor:
        p = floor
    return log(p)


def twostep_nll(theta, long[::1] choice1, long[::1] state2, long[::1] choice2,
                long[::1] reward, double floor=1e-12):
    """Negative log-likelihood of two-step choices; ``theta`` in TwoStepParams order."""
    cdef double alpha = theta[0]
    cdef double lam = theta[1]
    cdef double eta2 = theta[2]
    cdef double tau_sticky = theta[3]
    cdef double tau_2nd = theta[4]
    cdef double tau_mb = theta[5]
    cdef double tau_mf = theta[6]
    cdef double retain = 1.0 - eta2 / ASYMPTOTIC_VARIANCE
    cdef double kappa = 0.0
    cdef double z_alpha = 0.0
    cdef Py_ssize_t n = choice1.shape[0]
    cdef Py_ssize_t t
    cdef int s, o, a, c1, s2, c2, prev = -1
    cdef double r
    cdef double mu[2][2]
    cdef double var[2][2]
    cdef double mf_mu[2]
    cdef double mf_var[2]
    cdef double cv[2][2]
    cdef int rep[2]
    cdef double logits[2]
    cdef double total = 0.0
    cdef double mb
    if alpha != 1.0:
        z_alpha = _STD_NORMAL.inv_cdf(alpha)
        kappa = exp(-0.5 * z_alpha * z_alpha) * INV_SQRT_2PI / alpha
    if not (choice2.shape[0] == n and state2.shape[0] == n and reward.shape[0] == n):
        raise ValueError("trial arrays differ in length")
    for t in range(n):
        if not (0 <= choice1[t] <= 1 and 0 <= state2[t] <= 1 and 0 <= choice2[t] <= 1
                and 0 <= reward[t] <= 1):
            raise ValueError(f"trial {t}: categorical field out of range")
    with nogil:
        for s in range(2):
            mf_mu[s] = INITIAL_MEAN
            mf_var[s] = INITIAL_VARIANCE
            for o in range(2):
                mu[s][o] = INITIAL_MEAN
                var[s][o] = INITIAL_VARIANCE
        for t in range(n):
            c1 = <int>choice1[t]
            s2 = <int>state2[t]
            c2 = <int>choice2[t]
            r = <double>reward[t]
            for s in range(2):
                for o in range(2):
                    cv[s][o] = mu[s][o] - sqrt(var[s][o]) * kappa
                rep[s] = 1 if cv[s][1] > cv[s][0] else 0
            logits[0] = 0.0
            logits[1] = 0.0
            if tau_mb != 0.0:
                for a in range(2):
                    mb = mixture_cvar2(mu[a][rep[a]], sqrt(var[a][rep[a]]),
                                       mu[1 - a][rep[1 - a]], sqrt(var[1 - a][rep[1 - a]]),
                                       P_COMMON, alpha, z_alpha)
                    logits[a] += tau_mb * mb
            if tau_mf != 0.0:
                for a in range(2):
                    logits[a] += tau_mf * (mf_mu[a] - sqrt(mf_var[a]) * kappa)
            if prev >= 0:
                logits[prev] += tau_sticky
            total -= softmax_logp(logits[c1], logits[1 - c1], floor)
            total -= softmax_logp(tau_2nd * cv[s2][c2], tau_2nd * cv[s2][1 - c2], floor)
            for s in range(2):
                for o in range(2):
                    if s == s2 and o == c2:
                        mu[s][o] = mu[s][o] + lam * (r - mu[s][o])
                        var[s][o] = retain * var[s][o] + eta2 - lam * var[s][o]
                    else:
                        mu[s][o] = mu[s][o] + lam * (MEAN_ANCHOR - mu[s][o])
                        var[s][o] = retain * var[s][o] + eta2
            for a in range(2):
                if a == c1:
                    mf_mu[a] = mf_mu[a] + lam * (r - mf_mu[a])
                    mf_var[a] = retain * mf_var[a] + eta2 - lam * mf_var[a]
                else:
                    mf_mu[a] = mf_mu[a] + lam * (MEAN_ANCHOR - mf_mu[a])
                    mf_var[a] = retain * mf_var[a] + eta2
            prev = c1
    return total


cdef inline double interp_clamped(const double[::1] curve, const double[::1] log_grid,
                                  double beta) nogil:
    cdef Py_ssize_t g = log_grid.shape[0]
    cdef Py_ssize_t j
    cdef double lb, w
    if beta >= 1.0:
        return curve[g - 1]
    if beta <= 0.0:
        return curve[0]
    lb = log(beta)
    if lb <= log_grid[0]:
        return curve[0]
    j = 1
    while j < g - 1 and log_grid[j] < lb:
        j += 1
    w = (lb - log_grid[j - 1]) / (log_grid[j] - log_grid[j - 1])
    return (1.0 - w) * curve[j - 1] + w * curve[j]


cdef inline double pair_objective(double m1, double p1, double p2, const double[::1] c1,
                                  const double[::1] c2, const double[::1] log_grid,
                                  double alpha, double mass) nogil:
    cdef double m2 = mass - m1
    cdef double f = 0.0
    if m1 > 0.0:
        f += m1 * interp_clamped(c1, log_grid, alpha * m1 / p1)
    if m2 > 0.0:
        f += m2 * interp_clamped(c2, log_grid, alpha * m2 / p2)
    return f


def scan2(double p1, double p2, const double[::1] c1, const double[::1] c2,
          const double[::1] log_grid, double alpha, double mass, int n_scan):
    """Minimize the two-successor distorted objective over the mass on successor 1."""
    cdef double lo = mass - p2 / alpha
    cdef double hi = p1 / alpha
    cdef double x, f, best_x, best_f, a, b, x1, x2, f1, f2, xm, fm, h
    cdef int k, best_k
    if lo < 0.0:
        lo = 0.0
    if hi > mass:
        hi = mass
    if hi <= lo:
        x = lo if lo < mass else mass
        if x < 0.0:
            x = 0.0
        return pair_objective(x, p1, p2, c1, c2, log_grid, alpha, mass), x
    with nogil:
        h = (hi - lo) / (n_scan - 1)
        best_k = 0
        best_f = 1e300
        for k in range(n_scan):
            x = hi if k == n_scan - 1 else lo + k * h
            f = pair_objective(x, p1, p2, c1, c2, log_grid, alpha, mass)
            if f < best_f:
                best_f = f
                best_k = k
        best_x = hi if best_k == n_scan - 1 else lo + best_k * h
        a = lo + (best_k - 1) * h if best_k > 0 else lo
        b = lo + (best_k + 1) * h if best_k < n_scan - 1 else hi
        if b > hi:
            b = hi
        while b - a > 1e-6:
            x1 = a + (b - a) / 3.0
            x2 = b - (b - a) / 3.0
            f1 = pair_objective(x1, p1, p2, c1, c2, log_grid, alpha, mass)
            f2 = pair_objective(x2, p1, p2, c1, c2, log_grid, alpha, mass)
            if f1 <= f2:
                b = x2
            else:
                a = x1
        xm = 0.5 * (a + b)
        fm = pair_objective(xm, p1, p2, c1, c2, log_grid, alpha, mass)
        if fm < best_f:
            best_f = fm
            best_x = xm
    return best_f, best_x
