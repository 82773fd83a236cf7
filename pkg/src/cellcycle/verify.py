"""Cross-checks between the operator, the simulator, the stationary formulas
and the transport solver.  Every row reports its statistic and threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import GridDensity
from .discrete import apply_P, build_kernel, power_iterate
from .flows import FlowSolver
from .pde import boundary_consistency_check, evolve, make_field
from .pdmp import ensemble_histogram, simulate_ensemble, simulate_generations_ensemble
from .stationary import StationaryProfile

PASS, FAIL, SKIP = "pass", "fail", "skipped"


@dataclass
class Row:
    """One cross-check; ``statistic`` is None when the row was skipped."""

    name: str
    statistic: float | None
    threshold: float | None
    verdict: str
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "statistic": self.statistic,
                "threshold": None if self.threshold is None else float(self.threshold),
                "verdict": self.verdict, "detail": self.detail}


def _row(name, stat, threshold, detail="", larger_is_better=False):
    ok = stat >= threshold if larger_is_better else stat < threshold
    return Row(name, float(stat), float(threshold), PASS if ok else FAIL, detail)


def ks_against_grid(samples, density: GridDensity):
    """Two-sided KS distance between samples and the CDF of a grid density."""
    x = density.grid
    v = density.values
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    s = np.sort(np.asarray(samples, dtype=float))
    n = s.size
    F = np.interp(s, x, cdf)
    hi = np.arange(1, n + 1) / n - F
    lo = F - np.arange(n) / n
    return float(max(hi.max(), lo.max()))


def histogram_l1(samples, density, edges):
    """L1 distance between a sample histogram and bin averages of a density."""
    counts, _ = np.histogram(samples, bins=edges)
    emp = counts / max(len(samples), 1) / np.diff(edges)
    return float(np.sum(np.abs(emp - bin_averages(density, edges)) * np.diff(edges)))


def bin_averages(density, edges, sub=20):
    fine = np.linspace(edges[0], edges[-1], sub * (len(edges) - 1) + 1)
    vals = density(fine)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(fine))])
    return np.diff(np.interp(edges, fine, cum)) / np.diff(edges)


def run_verification(spec_or_solver, budget=10_000, seed=0, n=2048, kernel_hook=None,
                     generations=50, pde_dm=1e-2, pde_t_end=10.0):
    """Run all bridge checks.  ``budget`` is the number of simulated
    trajectories (descendant lines use ten times as many); zero skips the
    statistical rows.  ``kernel_hook`` may replace the kernel (fault injection).
    """
    fs = spec_or_solver if isinstance(spec_or_solver, FlowSolver) else FlowSolver(spec_or_solver)
    spec = fs.spec
    rows = []
    K = build_kernel(fs, n)
    if kernel_hook is not None:
        K = kernel_hook(K)
    it = power_iterate(K, GridDensity.uniform(0.0, min(10.0, spec.mMax), spec.mMax, n))
    f_star = it.fixed_point
    profile = StationaryProfile.build(fs, f_star) if f_star is not None else None
    finite = profile is not None and not profile.resting.infinite

    # generational law of m_1 from m_0 = 0 against the kernel
    if budget > 0:
        n_chains = 10 * int(budget)
        gens, _ = simulate_generations_ensemble(fs, 0.0, generations, n_chains, seed)
        first = gens[:, 0][np.isfinite(gens[:, 0])]
        law = apply_P(K, GridDensity.point_mass(spec.mMax, n))
        ks = ks_against_grid(first, law)
        rows.append(_row("generation-1 KS vs kernel", ks, 1.36 / np.sqrt(first.size),
                         f"n={first.size}, 5% critical value"))
        if f_star is not None:
            last = gens[:, -1][np.isfinite(gens[:, -1])]
            edges = np.arange(0.0, spec.mMax + 1e-9, 0.5)
            l1 = histogram_l1(last, f_star, edges)
            rows.append(_row(f"generation-{generations} histogram vs fixed point", l1, 0.02,
                             f"n={last.size}, bin 0.5"))
        else:
            rows.append(Row(f"generation-{generations} histogram vs fixed point", None, 0.02, SKIP,
                            "no invariant density"))
    else:
        rows.append(Row("generation-1 KS vs kernel", None, None, SKIP, "budget=0"))
        rows.append(Row(f"generation-{generations} histogram vs fixed point", None, 0.02, SKIP, "budget=0"))

    # stationary ensemble
    if budget > 0 and finite:
        c = profile.c
        # an irrational sampling step: with synchronous growth the law at time t
        # can stay periodic, and a commensurate grid would alias it; a long
        # window keeps the time-average bias of such oscillations small
        burn, horizon, sdt = 20.0, 420.0, np.sqrt(0.5)
        ens = simulate_ensemble(fs, int(budget), horizon, sdt, seed + 1, burn_in=burn)
        occ = ens.occupancy()
        rows.append(_row("phase-2 occupancy vs c*tau", abs(occ - c * spec.tau), 0.01,
                         f"occupancy={occ:.5f}, c*tau={c * spec.tau:.5f}"))
        a, m, i = ens.states(burn)
        top = spec.mMax
        h = ensemble_histogram((a, m, i), [0.0, np.inf], np.arange(0.0, top + 1e-9, 0.5))
        emp = h.maturity_marginal(1)
        edges = h.m_edges
        ref_bins = bin_averages(profile.resting_marginal(), edges)
        l1 = float(np.sum(np.abs(emp - ref_bins) * np.diff(edges)))
        rows.append(_row("phase-1 maturity marginal vs stationary", l1, 0.03, f"samples={m.size}"))
        age2 = a[i == 2]
        counts, _ = np.histogram(age2, bins=np.linspace(0.0, spec.tau, 11))
        dens = counts / max(age2.size, 1) / (spec.tau / 10)
        l1a = float(np.sum(np.abs(dens - 1.0 / spec.tau)) * spec.tau / 10)
        rows.append(_row("phase-2 age uniform on [0, tau]", l1a, 0.02, f"samples={age2.size}"))
    else:
        why = "budget=0" if budget <= 0 else "no finite stationary profile"
        for name, thr in (("phase-2 occupancy vs c*tau", 0.01), ("phase-1 maturity marginal vs stationary", 0.03),
                          ("phase-2 age uniform on [0, tau]", 0.02)):
            rows.append(Row(name, None, thr, SKIP, why))

    # transport solver on stationary input
    if finite:
        R0 = profile.resting_marginal(np.linspace(0.0, spec.mMax, int(round(spec.mMax / pde_dm)) + 1)).values
        fld = make_field(fs, R0, dm=pde_dm)
        evolve(fld, pde_t_end, audit=False)
        drift = float(fld.dm * np.abs(fld.R - R0)[1:].sum())
        rows.append(_row("PDE drift on stationary input", drift, 1e-3, f"dm={fld.dm:g}, t_end={pde_t_end:g}"))
    else:
        rows.append(Row("PDE drift on stationary input", None, 1e-3, SKIP, "no finite stationary profile"))

    # boundary identities (hold for any positive normalization)
    if profile is not None:
        if not finite:
            profile = StationaryProfile(fs, profile.f_star, profile.resting, 1.0, profile.smooth)
        bc = boundary_consistency_check(profile)
        rows.append(_row("division boundary identity", bc["division"], 1e-8))
        rows.append(_row("phase-entry boundary identity", bc["entry"], 1e-5,
                         "limited by the grid accuracy of f*"))
    else:
        rows.append(Row("division boundary identity", None, 1e-8, SKIP, "no invariant density"))
        rows.append(Row("phase-entry boundary identity", None, 1e-5, SKIP, "no invariant density"))
    return rows


def shifted_kernel_hook(shift_cells=64):
    """Fault injection: move every row of the kernel up by ``shift_cells``."""
    from dataclasses import replace

    def hook(K):
        M = np.zeros_like(K.matrix)
        M[shift_cells:] = K.matrix[:-shift_cells]
        return replace(K, matrix=M)

    return hook
