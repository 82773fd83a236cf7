import dataclasses

import numpy as np
import pytest

from cellcycle.density import GridDensity
from cellcycle.discrete import Verdict, alpha_profile, classify_discrete
from cellcycle.flows import FlowSolver
from cellcycle.model import validate
from cellcycle.pde import evolve, make_field, stationary_residual
from cellcycle.pdmp import simulate_ensemble
from cellcycle.counterexample import counterexample_spec, hazard_rate_spec, invariant_density
from cellcycle.stationary import classify_continuous, marginal_resting


def test_spec_is_accepted(cx_spec):
    rep = validate(cx_spec)
    assert rep.accepted, rep.blocking


def test_maps_and_hazard(cx_solver):
    m = np.array([3.0, 7.0, 12.5, 20.0])
    assert np.allclose(cx_solver.hazard_Q(m), m, atol=1e-6)
    assert cx_solver.hazard_Q(7.0) == pytest.approx(7.0, abs=1e-6)
    assert np.allclose(cx_solver.lambda_fn(m), m + 2, atol=1e-10)
    assert cx_solver.hazard_Q(2.0) == 0.0


def test_phi_equals_g1_on_tail(cx_spec, cx_f_star):
    m = np.linspace(3.0, 30.0, 55)
    assert np.allclose(cx_spec.phi(m), cx_spec.g1(m))
    assert np.allclose(cx_spec.g1(m), cx_f_star(m - 2.0), rtol=1e-12)
    assert np.all(cx_spec.g1(np.linspace(0, 32, 321)) > 0)


def test_invariant_density_depends_only_on_Q_and_lambda(cx_solver, cx_f_star):
    # the final model has the same Q and lambda as the hazard-rate model
    base = FlowSolver(hazard_rate_spec())
    m = np.linspace(0.0, 20.0, 81)
    assert np.allclose(base.hazard_Q(m), cx_solver.hazard_Q(m), atol=1e-6)
    res = classify_continuous(cx_solver)[1]["power"]
    assert res.fixed_point.l1_distance(cx_f_star) < 1e-4


def test_alpha_tail_and_discrete_verdict(cx_solver):
    m = np.linspace(8.0, 30.0, 200)
    assert np.allclose(alpha_profile(cx_solver, m), 2.0, atol=1e-6)
    assert classify_discrete(cx_solver).verdict is Verdict.STABLE


def test_paired_verdicts(cx_solver):
    rep, extra = classify_continuous(cx_solver)
    assert extra["discrete"].verdict is Verdict.STABLE
    assert extra["power"].status == "converged"
    assert rep.verdict is Verdict.SWEEPING
    assert rep.evidence["resting_time"]["infinite"]
    assert any("rigorous" in n for n in rep.notes)


def test_resting_profile_is_flat(cx_solver, cx_f_star):
    marg = marginal_resting(cx_solver, cx_f_star, 1.0)
    sel = (marg.grid >= 3.0) & (marg.grid <= 16.0)
    v = marg.values[sel]
    assert (v.max() - v.min()) / v.mean() < 1e-4


def test_constant_profile_solves_the_stationary_equation():
    # the stencil at m = 3 straddles the corner of g1, so the region is open there
    n = 4096
    f = invariant_density(n=n)
    fs = FlowSolver(counterexample_spec(n=n, f_star=f))
    R = GridDensity(32.0, np.ones(n + 1))
    assert stationary_residual(fs, R, region=(3.0 + 0.5 * 32.0 / n, 32.0)).l1 < 1e-6


def test_time_change_keeps_verdicts(cx_f_star):
    spec = counterexample_spec(scale=2.0, f_star=cx_f_star)
    rep, extra = classify_continuous(spec)
    assert extra["discrete"].verdict is Verdict.STABLE and rep.verdict is Verdict.SWEEPING


def test_pde_mass_on_compact_set_decays(cx_solver, cx_f_star):
    x = np.linspace(0.0, 32.0, 1601)
    R0 = np.where(x <= 10.0, marginal_resting(cx_solver, cx_f_star, 1.0, x).values, 0.0)
    fld = make_field(cx_solver, R0, dm=0.02)
    inner = (fld.grid > 0) & (fld.grid <= 10.0)
    masses = [fld.dm * fld.R[inner].sum()]
    evolve(fld, 10.0, audit=False, monitor=lambda t, R: masses.append(fld.dm * R[inner].sum()))
    assert np.all(np.diff(masses) <= 0.0)
    # escape is slow: the flat profile leaks only through the cut at m = 10
    assert masses[-1] < masses[0]


def test_pdmp_cells_drift_to_large_maturity(cx_solver):
    ens = simulate_ensemble(cx_solver, 2000, 2000.0, 25.0, seed=1)
    def low_fraction(t0, t1):
        sel = (ens.time >= t0) & (ens.time <= t1)
        return np.mean(ens.maturity[sel] <= 4.0)
    early, late = low_fraction(50.0, 150.0), low_fraction(1500.0, 2000.0)
    # about 0.99 early and 0.92 late; the sampling error is below 0.01
    assert late < early - 0.03
