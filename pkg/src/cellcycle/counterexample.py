"""A model whose generational operator is asymptotically stable while the
continuous-time semigroup sweeps.

Construction: fix Q and lambda first (g2 = 1, tau = 1, h(m) = m - 3,
mP = 2, so lambda(m) = m + 2; Q = 0 on [0, 2], Q(3) = 3 and Q(m) = m
beyond), compute the invariant density f* of P (it depends only on Q and
lambda), then set phi(m) = g1(m) = K f*(m - 2) for m >= 3.  On [2, 3] the
ratio phi / g1 follows a fixed piecewise-linear bump with integral 3.
"""

from __future__ import annotations

import numpy as np

from .density import GridDensity
from .discrete import build_kernel, power_iterate
from .flows import FlowSolver
from .model import ModelSpec, ScalarFn

# phi / g1 on [mP, mP + 1], as a function of m - mP; integral 3
BUMP = ((0.0, 0.0), (0.5, 5.5), (1.0, 1.0))


def hazard_rate_spec(m_max=32.0) -> ModelSpec:
    """Same Q and lambda as the final model, with g1 = 1 and phi = Q'."""
    one = ScalarFn("Constant", {"c": 1.0})
    knots = [[0.0, 0.0], [2.0, 0.0]] + [[2.0 + x, y] for x, y in BUMP[1:]] + [[m_max + 10.0, 1.0]]
    return ModelSpec(
        name="counterexample-hazard",
        g1=one,
        g2=one,
        phi=ScalarFn("PiecewiseLinear", {"knots": knots}),
        h=ScalarFn("Linear", {"a": 1.0, "b": -3.0}),
        tau=1.0,
        mP=2.0,
        mMax=m_max,
        phi_bounded=True,
        q_threshold=25.0,
    )


def invariant_density(m_max=32.0, n=2048, tol=1e-12):
    fs = FlowSolver(hazard_rate_spec(m_max))
    K = build_kernel(fs, n)
    res = power_iterate(K, GridDensity.uniform(0.0, min(10.0, m_max), m_max, n), tol=tol)
    if res.fixed_point is None:
        raise RuntimeError(f"power iteration did not converge ({res.status})")
    return res.fixed_point


def counterexample_spec(m_max=32.0, n=2048, scale=1.0, f_star: GridDensity | None = None) -> ModelSpec:
    """The final model; ``scale`` multiplies both g1 and phi (a pure time change)."""
    f = invariant_density(m_max, n) if f_star is None else f_star
    x = f.grid
    at1 = float(f(1.0))
    bump_x = np.array([p[0] for p in BUMP])
    bump_y = np.array([p[1] for p in BUMP])
    g1_vals = scale * np.where(x <= 1.0, at1, f.values)
    phi_vals = scale * np.where(x <= 1.0, at1 * np.interp(x, bump_x, bump_y), f.values)
    g1 = ScalarFn("ShiftedTable", {"x": x.tolist(), "y": g1_vals.tolist(), "shift": 2.0})
    phi = ScalarFn("ShiftedTable", {"x": x.tolist(), "y": phi_vals.tolist(), "shift": 2.0})
    one = ScalarFn("Constant", {"c": 1.0})
    return ModelSpec(
        name="counterexample",
        g1=g1,
        g2=one,
        phi=phi,
        h=ScalarFn("Linear", {"a": 1.0, "b": -3.0}),
        tau=1.0,
        mP=2.0,
        mMax=m_max,
        phi_bounded=True,
        phi_tail_positive=False,
        q_threshold=25.0,
    )
