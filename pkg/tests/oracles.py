"""Independent reference computations for the tests.

Nothing here imports the package: closed forms, bisection and adaptive
quadrature from scipy only.
"""

import math

import numpy as np
from scipy.integrate import quad

# root of 1 - b = exp(-2 b) on (0, 1), bisection to machine precision
BETA = 0.7968121300200199


def beta_bisection(tol=1e-12):
    lo, hi = 0.5, 0.99
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if 1.0 - mid - math.exp(-2.0 * mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fixed_point_density(m):
    """Invariant density of the generational operator of the test model."""
    m = np.asarray(m, dtype=float)
    return BETA * np.exp(-BETA * m)


def hazard_Q_exact(x):
    return max(0.0, x - 2.0)


def operator_by_quadrature(f, m):
    """Generational operator of the test model by adaptive quadrature.

    lambda(m) = m + 2, Q'(x) = 1 for x > 2:
    Pf(m) = int_0^{m+2} exp(Q(y) - m) f(y) dy.
    """
    top = m + 2.0
    val, _ = quad(lambda y: math.exp(hazard_Q_exact(y) - m) * f(y), 0.0, top, points=[2.0], limit=200)
    return val


def resting_profile_exact(m):
    """exp(-Q(m)) int_0^m exp(Q) f*: closed form for the test model."""
    b = BETA
    if m <= 2.0:
        return 1.0 - math.exp(-b * m)
    # int_0^2 f* + int_2^m exp(x - 2) b exp(-b x) dx, times exp(-(m - 2))
    head = 1.0 - math.exp(-2 * b)
    tail = b * math.exp(-2.0) * (math.exp((1 - b) * m) - math.exp((1 - b) * 2.0)) / (1 - b)
    return math.exp(-(m - 2.0)) * (head + tail)


T_R_EXACT = 2.0          # closed-form telescoping; quadrature of the profile above gives 2 + 4e-16
OCCUPANCY_EXACT = 1.0 / 3.0


def power_law_flow(a, p, m0, t):
    """Solution of dm/dt = a m^p (p != 1)."""
    return (m0 ** (1 - p) + (1 - p) * a * t) ** (1.0 / (1 - p))


def linear_flow(a, b, m0, t):
    """Solution of dm/dt = a m + b."""
    if a == 0:
        return m0 + b * t
    return (m0 + b / a) * math.exp(a * t) - b / a


def exp_cdf(x, rate=1.0):
    return 1.0 - np.exp(-rate * np.asarray(x, dtype=float))


def ks_statistic(samples, cdf):
    s = np.sort(np.asarray(samples, dtype=float))
    n = s.size
    F = cdf(s)
    return float(max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n)))
