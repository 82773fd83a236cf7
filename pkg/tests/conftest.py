import math

import numpy as np
import pytest
from hypothesis import strategies as st
from scipy.special import exprel

from cellcycle.density import GridDensity
from cellcycle.discrete import build_kernel, power_iterate
from cellcycle.flows import FlowSolver
from cellcycle.model import ModelSpec, ScalarFn, test_model
from cellcycle.stationary import StationaryProfile


def F(family, **params):
    return ScalarFn(family, params)


def rich_spec(m_max=32.0):
    """Hill-type hazard, growing g2 and a contracting division map."""
    mP, tau = 1.5, 1.0
    pi2 = (mP + 20) * math.exp(0.05 * tau) - 20
    return ModelSpec(g1=F("Constant", c=0.8), g2=F("Linear", a=0.05, b=1.0),
                     phi=F("HillRate", a=3.0, p=2.0, K=1.0, shift=mP),
                     h=F("Linear", a=0.5, b=-0.5 * pi2), tau=tau, mP=mP, mMax=m_max, name="rich")


@pytest.fixture(scope="session")
def tm_solver():
    return FlowSolver(test_model())


@pytest.fixture(scope="session")
def tm_kernel(tm_solver):
    return build_kernel(tm_solver, 2048)


@pytest.fixture(scope="session")
def tm_power(tm_kernel):
    return power_iterate(tm_kernel, GridDensity.uniform(0.0, 10.0, 32.0, 2048))


@pytest.fixture(scope="session")
def tm_profile(tm_solver, tm_power):
    return StationaryProfile.build(tm_solver, tm_power.fixed_point)


@pytest.fixture(scope="session")
def rich_solver():
    return FlowSolver(rich_spec())


@pytest.fixture(scope="session")
def cx_f_star():
    from cellcycle.counterexample import invariant_density
    return invariant_density()


@pytest.fixture(scope="session")
def cx_spec(cx_f_star):
    from cellcycle.counterexample import counterexample_spec
    return counterexample_spec(f_star=cx_f_star)


@pytest.fixture(scope="session")
def cx_solver(cx_spec):
    return FlowSolver(cx_spec)


# -- random accepted specs ------------------------------------------------------


@st.composite
def specs(draw, m_max=24.0):
    """Specs built to satisfy the model assumptions (validate decides)."""
    mP = draw(st.floats(0.5, 3.0))
    tau = draw(st.floats(0.3, 2.0))
    if draw(st.booleans()):
        g1 = F("Constant", c=draw(st.floats(0.3, 2.0)))
    else:
        g1 = F("Linear", a=draw(st.floats(0.0, 0.1)), b=draw(st.floats(0.3, 2.0)))
    ga, gb = draw(st.floats(0.0, 0.2)), draw(st.floats(0.3, 2.0))
    g2 = F("Linear", a=ga, b=gb)
    end = mP * math.exp(ga * tau) + gb * tau * exprel(ga * tau)
    slope = draw(st.floats(0.3, 1.0))
    h = F("Linear", a=slope, b=-slope * end)
    kind = draw(st.sampled_from(["step", "ramp", "hill"]))
    level = draw(st.floats(1.0, 4.0))
    if kind == "step":
        phi = F("PiecewiseLinear", knots=[[0.0, 0.0], [mP, 0.0], [mP, level], [m_max + 10, level]])
    elif kind == "ramp":
        w = draw(st.floats(0.2, 2.0))
        phi = F("PiecewiseLinear", knots=[[0.0, 0.0], [mP, 0.0], [mP + w, level], [m_max + 10, level]])
    else:
        phi = F("HillRate", a=level, p=draw(st.floats(1.0, 3.0)), K=draw(st.floats(0.5, 2.0)), shift=mP)
    return ModelSpec(g1=g1, g2=g2, phi=phi, h=h, tau=tau, mP=mP, mMax=m_max, q_threshold=10.0,
                     name=f"random-{kind}")


def analytic_test_marginal(c=1.0 / 3.0):
    from oracles import resting_profile_exact

    def f(m):
        return c * np.array([resting_profile_exact(x) for x in np.atleast_1d(m)])
    return f
