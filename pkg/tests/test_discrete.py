import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cellcycle.density import GridDensity, trapezoid_weights
from cellcycle.discrete import (
    Verdict,
    alpha_profile,
    apply_P,
    build_kernel,
    classify_discrete,
    conjugate_check,
    cut_weights,
    mixing_diagnostic,
    power_iterate,
)
from cellcycle.errors import RangeError
from cellcycle.flows import FlowSolver
from cellcycle.model import test_model, validate
from cellcycle.stationary import classify_continuous

from conftest import F, rich_spec, specs
from oracles import BETA, fixed_point_density, operator_by_quadrature


def step_phi(level):
    return F("PiecewiseLinear", knots=[[0, 0], [2, 0], [2, level], [50, level]])


def test_cut_weights_exact_for_linear_integrands():
    n, dm = 16, 0.25
    cuts = np.array([0.0, 0.1, 1.0, 1.37, 3.9, 4.0, 7.0])
    W = cut_weights(n, dm, cuts)
    y = np.linspace(0, n * dm, n + 1)
    for a, b in ((1.0, 0.0), (0.3, 2.0)):
        ref = a * np.minimum(cuts, 4.0) + 0.5 * b * np.minimum(cuts, 4.0) ** 2
        assert np.allclose(W @ (a + b * y), ref, atol=1e-13)
    assert np.allclose(W[-1], trapezoid_weights(n, dm))


def test_point_mass_at_zero_maps_to_exponential(tm_kernel):
    n = tm_kernel.n
    img = apply_P(tm_kernel, GridDensity.point_mass(32.0, n, 0))
    ref = np.exp(-img.grid)
    assert img.l1_distance(GridDensity(32.0, ref)) < 2.0 / n


def test_kernel_support_indicator(tm_kernel):
    g = tm_kernel.grid
    dm = g[1]
    beyond = g[None, :] > (g[:, None] + 2.0) + dm
    assert np.all(tm_kernel.matrix[beyond] == 0.0)
    assert np.all(tm_kernel.matrix >= 0.0)


def test_point_mass_kernel_oracle_first_order():
    # analytic image of mass at y = 5: exp(Q(5) - Q(m + 2)) on m >= 3
    errs = []
    for n in (512, 1024, 2048):
        K = build_kernel(test_model(), n)
        j = int(round(5.0 / (32.0 / n)))
        img = apply_P(K, GridDensity.point_mass(32.0, n, j))
        m = img.grid
        # the image jumps at m = 3; a node on the jump carries the mean of both sides
        ref = np.where(m > 3.0, np.exp(3.0 - m), 0.0) + np.where(m == 3.0, 0.5, 0.0)
        errs.append(img.l1_distance(GridDensity(32.0, ref)))
    assert errs[-1] < 4.0 / 2048
    assert errs[0] / errs[1] > 1.6 and errs[1] / errs[2] > 1.6


def test_kernel_matches_quadrature_route(tm_kernel):
    # an independent evaluation of P by adaptive quadrature
    f = lambda y: 0.5 * np.exp(-0.5 * y)      # noqa: E731
    grid = tm_kernel.grid
    Pf = apply_P(tm_kernel, GridDensity(32.0, f(grid)))
    for m in (0.0, 1.0, 2.5, 6.0, 12.0):
        assert Pf(m) == pytest.approx(operator_by_quadrature(f, m), rel=1e-4)


def test_column_mass_against_tail(tm_kernel, rich_solver):
    for K in (tm_kernel, build_kernel(rich_solver, 1024)):
        colmass = (K.weights @ K.matrix) / K.weights
        assert np.allclose(colmass, 1.0 - K.tail, atol=1e-6)
        assert np.all(colmass <= 1 + 1e-8)
    assert tm_kernel.raw_column_defect < 1e-2


def test_raw_column_defect_first_order(rich_solver):
    # each column jumps in m at psi(y); off-grid jumps make raw column sums first order
    d = [build_kernel(rich_solver, n).raw_column_defect for n in (1024, 2048, 4096)]
    assert d[1] < 0.6 * d[0] and d[2] < 0.6 * d[1]


def test_test_model_tail_is_analytic(tm_kernel):
    g = tm_kernel.grid
    assert np.allclose(tm_kernel.tail, np.exp(np.maximum(g - 2, 0) - 32.0), rtol=1e-9)


@given(arrays(np.float64, 257, elements=st.floats(0.0, 5.0)))
@settings(max_examples=40, deadline=None)
def test_apply_P_positivity_and_bookkeeping(values):
    K = _small_kernel()
    f = GridDensity(32.0, values)
    if f.mass == 0:
        return
    f = f.normalized()
    total = f.mass + f.escaped_mass
    for n in range(1, 11):
        f = apply_P(K, f)
        assert np.all(f.values >= 0)
        assert abs(f.mass + f.escaped_mass - total) < n * 1e-8


_CACHE = {}


def _small_kernel():
    if "k" not in _CACHE:
        _CACHE["k"] = build_kernel(rich_spec(), 256)
    return _CACHE["k"]


@given(specs())
@settings(max_examples=10, deadline=None)
def test_random_specs_build_and_conserve(spec):
    if not validate(spec).accepted:
        return
    K = build_kernel(spec, 256)
    f = GridDensity.uniform(0.0, 5.0, spec.mMax, 256)
    g = apply_P(K, f)
    assert np.all(g.values >= 0)
    assert abs(g.mass + g.escaped_mass - 1.0) < 1e-8


def test_support_growth(tm_kernel):
    n = tm_kernel.n
    for a, b in ((4.0, 5.0), (10.0, 10.5)):
        f = GridDensity.uniform(a, b, 32.0, n)
        Pf = apply_P(tm_kernel, f)
        m = Pf.grid
        reach = (m + 2.0 > a + 32.0 / n) & (m < 30.0)
        assert np.all(Pf.values[reach] > 0)
        assert np.all(Pf.values[m + 2.0 < a - 32.0 / n] == 0)


def test_analytic_fixed_point_is_invariant(tm_kernel):
    f = GridDensity(32.0, fixed_point_density(tm_kernel.grid))
    assert apply_P(tm_kernel, f).l1_distance(f) < 1e-4


def test_power_iteration_converges_to_analytic(tm_power):
    assert tm_power.status == "converged"
    ref = GridDensity(32.0, BETA * np.exp(-BETA * tm_power.fixed_point.grid))
    assert tm_power.fixed_point.l1_distance(ref) < 1e-3
    assert tm_power.thresholds["tol"] == 1e-9


def test_power_iteration_from_fixed_point(tm_kernel, tm_power):
    again = power_iterate(tm_kernel, tm_power.fixed_point)
    assert again.status == "converged" and again.iterations <= 2


def test_power_iteration_from_point_mass(tm_kernel, tm_power):
    res = power_iterate(tm_kernel, GridDensity.point_mass(32.0, tm_kernel.n, 0))
    assert res.status == "converged"
    assert res.fixed_point.l1_distance(tm_power.fixed_point) < 1e-6


def sweeping_spec():
    # Q(m) = (m - 2) / 4 beyond mP, so alpha = 1/2 on the tail
    return dataclasses.replace(test_model(), phi=step_phi(0.25), q_threshold=5.0,
                               phi_bounded=True, name="slow-hazard")


def test_sweeping_example():
    K = build_kernel(sweeping_spec(), 1024)
    res = power_iterate(K, GridDensity.uniform(0.0, 10.0, 32.0, 1024))
    assert res.status == "sweeping" and res.fixed_point is None
    assert res.masses[-1] < 0.01
    assert np.all(np.diff(res.masses[-101:]) <= 0)
    assert classify_discrete(sweeping_spec()).verdict is Verdict.SWEEPING
    rep, _ = classify_continuous(sweeping_spec(), n=1024)
    assert rep.verdict is Verdict.SWEEPING


def test_alpha_profile_test_model(tm_solver):
    m = np.linspace(0, 30, 301)
    a = alpha_profile(tm_solver, m)
    assert np.allclose(a, np.minimum(m, 2.0), atol=1e-10)
    assert a[0] == pytest.approx(0.0, abs=1e-12)
    rep = classify_discrete(tm_solver)
    assert rep.verdict is Verdict.STABLE
    assert rep.evidence["alpha_liminf_bound"] == pytest.approx(2.0, abs=1e-8)
    assert rep.evidence["completely_mixing"]


def test_tie_zone_is_inconclusive():
    spec = dataclasses.replace(test_model(), phi=step_phi(0.5), q_threshold=10.0)
    assert classify_discrete(spec).verdict is Verdict.INCONCLUSIVE


def test_grid_refinement_converges(rich_solver):
    def mean_of_image(n):
        K = build_kernel(rich_solver, n)
        Pf = apply_P(K, GridDensity.uniform(0.0, 5.0, 32.0, n))
        return float(Pf.weights @ (Pf.grid * Pf.values))
    r = [mean_of_image(n) for n in (256, 512, 1024, 2048)]
    d = np.abs(np.diff(r))
    assert np.all(d[1:] < 4 * d[:-1])
    assert d[-1] < d[0]


def test_kernel_rejects_tiny_domain():
    spec = dataclasses.replace(test_model(mMax=6.0), phi=step_phi(0.05), q_threshold=0.0)
    with pytest.raises(RangeError):
        build_kernel(spec, 256)


def test_conjugate_check_test_model(tm_solver):
    f = GridDensity.uniform(2.0, 6.0, 32.0, 2048)
    rep = conjugate_check(tm_solver, f)
    assert rep.discrepancy < 5e-6
    assert abs(rep.u_mass - rep.f_mass) < 1e-8
    assert rep.max_conjugate_column_mass <= 1 + 1e-8


def test_conjugate_check_rich_model(rich_solver):
    grid = np.linspace(0, 32, 2049)
    top = float(rich_solver.psi(32.0))
    f = GridDensity(32.0, np.where((grid >= 1.5) & (grid <= top), np.exp(-(grid - 4) ** 2), 0.0))
    rep = conjugate_check(rich_solver, f)
    assert rep.discrepancy < 5e-6
    assert abs(rep.u_mass - rep.f_mass) < 1e-8
    assert rep.max_conjugate_column_mass <= 1 + 1e-8


def test_conjugate_check_domain(tm_solver):
    with pytest.raises(RangeError):
        conjugate_check(tm_solver, GridDensity.uniform(0.0, 4.0, 32.0, 2048))


def test_mixing_diagnostic_decays(tm_kernel):
    n = tm_kernel.n
    d = mixing_diagnostic(tm_kernel, GridDensity.uniform(0, 1, 32.0, n), GridDensity.uniform(5, 8, 32.0, n), 60)
    assert d[0] > 1.9 and d[-1] < 1e-6
