"""Stationary objects of the continuous-time model built from the invariant
density f* of the generational operator.

R(m) = exp(-Q(m)) int_0^m exp(Q(x)) f*(x) dx is the (un-normalized) resting
maturity profile; the resting marginal is c R(m) / g1(m) and the mean
resting time is T_R = int R / g1, with c = 1 / (T_R + tau).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .density import GridDensity
from .discrete import (
    ClassificationReport,
    Verdict,
    build_kernel,
    classify_discrete,
    power_iterate,
)
from .flows import FlowSolver, exp_weighted_integral, gauss_legendre


class SmoothDensity:
    """Cubic reconstruction of a grid density, zero outside [0, mMax].

    Rescaled so that its exact integral is one; this keeps quadratures of
    products with f* at higher order than the trapezoid rule.
    """

    def __init__(self, f: GridDensity):
        self.grid = f.grid
        self.m_max = f.m_max
        spline = CubicSpline(self.grid, f.values)
        self._spline = spline
        total = float(spline.integrate(0.0, self.m_max))
        self.scale = 1.0 / total if total > 0 else 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= 0.0) & (x <= self.m_max)
        v = self.scale * self._spline(np.clip(x, 0.0, self.m_max))
        return np.where(inside, np.maximum(v, 0.0), 0.0)


def _as_smooth(f):
    if isinstance(f, SmoothDensity):
        return f
    if isinstance(f, GridDensity):
        return SmoothDensity(f)
    return f  # a callable density (e.g. a closed form)


def _breaks(fs: FlowSolver, extra=()):
    s = fs.spec
    pts = list(s.phi.knots()) + list(s.g1.knots()) + [s.mP]
    return np.concatenate([np.asarray(pts, dtype=float), np.asarray(extra, dtype=float)])


def resting_profile(fs: FlowSolver, f_star, targets, grid=None):
    """Un-normalized R at ``targets``."""
    f = _as_smooth(f_star)
    grid = getattr(f, "grid", None) if grid is None else grid
    extra = () if grid is None else grid
    step = fs.spec.mMax / 2048 if grid is None else grid[1] - grid[0]
    return exp_weighted_integral(f, fs.hazard_Q, 0.0, targets, breaks=_breaks(fs, extra), max_panel=step)


def marginal_resting(fs: FlowSolver, f_star, c=1.0, grid=None) -> GridDensity:
    """c R(m) / g1(m) on the grid of ``f_star`` (or on ``grid`` over [0, mMax])."""
    f = _as_smooth(f_star)
    if grid is None:
        grid = getattr(f, "grid", None)
        if grid is None:
            grid = np.linspace(0.0, fs.spec.mMax, 2049)
    grid = np.asarray(grid, dtype=float)
    r = resting_profile(fs, f, grid, grid=getattr(f, "grid", grid))
    return GridDensity(grid[-1], c * r / fs.spec.g1(grid))


@dataclass
class RestingTime:
    value: float
    infinite: bool
    estimate_full: float
    estimate_half: float
    ratio: float
    threshold: float

    def to_dict(self):
        return {"T_R": None if self.infinite else self.value, "infinite": self.infinite,
                "estimate_mMax": self.estimate_full, "estimate_half_mMax": self.estimate_half,
                "ratio": self.ratio, "ratio_threshold": self.threshold}


def truncated_resting_time(fs: FlowSolver, f_star, upper, order=10):
    """int_0^upper R(x) / g1(x) dx by Gauss-Legendre panels on the f* grid."""
    f = _as_smooth(f_star)
    grid = getattr(f, "grid", np.linspace(0.0, fs.spec.mMax, 2049))
    edges = np.union1d(grid[grid < upper], [upper])
    bk = _breaks(fs)
    edges = np.union1d(edges, bk[(bk > 0) & (bk < upper)])
    t, w = gauss_legendre(order)
    a, b = edges[:-1], edges[1:]
    nodes = (a[:, None] + (b - a)[:, None] * t).ravel()
    r = resting_profile(fs, f, nodes, grid=grid)
    vals = (r / fs.spec.g1(nodes)).reshape(a.size, order)
    return float(np.sum((b - a) * (vals @ w)))


def mean_resting_time(fs: FlowSolver, f_star, ratio_threshold=1.05) -> RestingTime:
    """T_R with a divergence flag.

    The truncated integral is computed up to mMax and up to mMax / 2; a
    ratio above ``ratio_threshold`` means the tail still contributes a
    macroscopic share and T_R is reported as infinite.
    """
    full = truncated_resting_time(fs, f_star, fs.spec.mMax)
    half = truncated_resting_time(fs, f_star, 0.5 * fs.spec.mMax)
    ratio = full / half if half > 0 else np.inf
    infinite = bool(ratio > ratio_threshold)
    return RestingTime(np.inf if infinite else full, infinite, full, half, float(ratio), ratio_threshold)


@dataclass
class StationaryProfile:
    solver: FlowSolver
    f_star: GridDensity
    resting: RestingTime
    c: float
    smooth: SmoothDensity = field(repr=False, default=None)

    @property
    def T_R(self):
        return self.resting.value

    @classmethod
    def build(cls, fs: FlowSolver, f_star: GridDensity, c=None, ratio_threshold=1.05):
        smooth = _as_smooth(f_star)
        rt = mean_resting_time(fs, smooth, ratio_threshold)
        if c is None:
            c = 1.0 / (rt.value + fs.spec.tau) if not rt.infinite else 0.0
        return cls(fs, f_star, rt, float(c), smooth)

    def density(self, a, m, i):
        return stationary_phase_density(self, a, m, i)

    def resting_marginal(self, grid=None) -> GridDensity:
        return marginal_resting(self.solver, self.smooth, self.c, grid)


def stationary_phase_density(profile: StationaryProfile, a, m, i):
    """Stationary joint density of (age, maturity) in phase i; zero off its support."""
    fs = profile.solver
    spec = fs.spec
    f = profile.smooth
    a, m = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(m, dtype=float))
    out = np.zeros(a.shape)
    if i == 1:
        ok = (a >= 0) & (m >= fs.flow(1, a, 0.0) - 1e-12) & (m <= spec.mMax)
        if ok.any():
            aa, mm = a[ok], m[ok]
            m0 = np.maximum(fs.flow(1, -aa, mm), 0.0)
            out[ok] = (profile.c * spec.g1(m0) / spec.g1(mm) * f(m0)
                       * np.exp(fs.hazard_Q(m0) - fs.hazard_Q(mm)))
    elif i == 2:
        ok = (a >= 0) & (a <= spec.tau) & (m >= fs.flow(2, a, spec.mP) - 1e-12) & (m <= fs.hi)
        if ok.any():
            aa, mm = a[ok], m[ok]
            m0 = np.maximum(fs.flow(2, -aa, mm), spec.mP)
            out[ok] = profile.c * spec.g2(m0) / spec.g2(mm) * fs.psi_prime(m0) * f(fs.psi(m0))
    else:
        raise ValueError("phase must be 1 or 2")
    return float(out) if out.ndim == 0 else out


def _synchronous(fs: FlowSolver, n=2001):
    """True when h'(pi2) g2(pi2) g1(m) = g1(psi(m)) g2(m) on the whole grid."""
    s = fs.spec
    m = np.linspace(s.mP, s.mMax, n)[1:]
    pi2 = fs.flow(2, s.tau, m)
    psi = s.h(pi2)
    lhs = s.h.derivative(pi2) * s.g2(pi2) * s.g1(m)
    rhs = s.g1(psi) * s.g2(m)
    return bool(np.all(np.abs(lhs - rhs) <= 1e-9 * (np.abs(lhs) + np.abs(rhs) + 1e-300)))


def classify_continuous(spec_or_solver, n=2048, margin=0.01, ratio_threshold=1.05,
                        tol=1e-9, n_max=100_000) -> tuple[ClassificationReport, dict]:
    """Discrete and continuous verdicts with their evidence.

    Returns ``(report, extras)`` where ``extras`` carries the discrete
    report, the power-iteration result and the stationary profile (if any).
    """
    fs = spec_or_solver if isinstance(spec_or_solver, FlowSolver) else FlowSolver(spec_or_solver)
    spec = fs.spec
    disc = classify_discrete(fs, n=n, margin=margin)
    K = build_kernel(fs, n=n)
    f0 = GridDensity.uniform(0.0, min(10.0, spec.mMax), spec.mMax, n)
    it = power_iterate(K, f0, n_max=n_max, tol=tol)
    notes = []
    evidence = {
        "discrete_verdict": str(disc.verdict),
        "alpha_liminf_bound": disc.evidence["alpha_liminf_bound"],
        "power_iteration": it.to_dict(),
        "kernel_raw_column_defect": K.raw_column_defect,
        "phi_bounded": spec.phi_bounded,
        "phi_tail_positive": spec.phi_tail_positive,
        "T_R": None,
        "c": None,
    }
    profile = None
    if it.fixed_point is not None:
        profile = StationaryProfile.build(fs, it.fixed_point, ratio_threshold=ratio_threshold)
        evidence["resting_time"] = profile.resting.to_dict()
        if profile.resting.infinite:
            verdict = Verdict.SWEEPING
            notes.append("P has an invariant density but T_R diverges; the sweeping conclusion for this case "
                         "is stated without a rigorous justification in the underlying theory")
        else:
            verdict = Verdict.STABLE
            evidence["T_R"] = profile.T_R
            evidence["c"] = profile.c
            if _synchronous(fs):
                notes.append("growth is synchronous (EA2 fails): a stationary density exists and time averages "
                             "converge to it, but the law at time t may oscillate instead of converging")
    elif disc.verdict is Verdict.SWEEPING and spec.phi_bounded:
        verdict = Verdict.SWEEPING
        notes.append("discrete sweeping with phi declared bounded")
    elif disc.verdict is Verdict.STABLE and spec.phi_tail_positive:
        verdict = Verdict.STABLE
        notes.append("liminf alpha > 1 with phi declared bounded away from zero for large m")
    else:
        verdict = Verdict.INCONCLUSIVE
        notes.append("no invariant density found and the declared flags do not settle the case")
    report = ClassificationReport(verdict, "continuous", evidence, notes)
    return report, {"discrete": disc, "power": it, "profile": profile, "kernel": K}
