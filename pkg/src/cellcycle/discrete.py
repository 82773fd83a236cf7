"""The generational operator as a discretized integral kernel.

Pf(m) = lambda'(m) Q'(lambda(m)) int_0^{lambda(m)} exp(Q(y) - Q(lambda(m))) f(y) dy
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .density import GridDensity, trapezoid_weights
from .errors import RangeError
from .flows import FlowSolver, exp_weighted_integral, gauss_legendre


class Verdict(str, enum.Enum):
    STABLE = "Stable"
    SWEEPING = "Sweeping"
    INCONCLUSIVE = "Inconclusive"

    def __str__(self):
        return self.value


@dataclass
class ClassificationReport:
    verdict: Verdict
    kind: str
    evidence: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {"verdict": str(self.verdict), "kind": self.kind,
                "evidence": self.evidence, "notes": list(self.notes)}


def _solver(spec_or_solver):
    if isinstance(spec_or_solver, FlowSolver):
        return spec_or_solver
    return FlowSolver(spec_or_solver)


def cut_weights(n, dm, cuts):
    """Row-wise trapezoid weights on [0, cut_i], splitting the last cell at the cut.

    Inside the split cell the integrand at the cut is the linear
    interpolant of its two neighbouring node values.
    """
    w = trapezoid_weights(n, dm)
    cuts = np.asarray(cuts, dtype=float)
    j = np.arange(n + 1)[None, :]
    full = cuts[:, None] >= n * dm
    k = np.floor(cuts / dm + 1e-12).astype(int)[:, None]
    k = np.minimum(k, n)
    omega = np.where(j < k, dm, 0.0)
    omega[:, 0] = np.where(k[:, 0] > 0, 0.5 * dm, 0.0)
    omega += np.where((j == k) & (k > 0), 0.5 * dm, 0.0)
    s = cuts[:, None] - k * dm
    theta = s / dm
    part = (s > 1e-14 * dm) & (k < n)
    omega += np.where(part & (j == k), 0.5 * s * (2.0 - theta), 0.0)
    omega += np.where(part & (j == k + 1), 0.5 * s * theta, 0.0)
    return np.where(full, w[None, :], omega)


@dataclass(frozen=True)
class KernelMatrix:
    """K[i, j] with quadrature weights folded in: (Pf)_i = sum_j K[i, j] f_j.

    ``column_mass[j]`` is the fraction of mass starting at y_j that lands in
    [0, mMax]; ``raw_column_defect`` is the largest relative mismatch of
    the raw quadrature against the analytic value before renormalization.
    """

    m_max: float
    matrix: np.ndarray
    column_mass: np.ndarray
    tail: np.ndarray
    raw_column_defect: float

    @property
    def n(self):
        return self.matrix.shape[0] - 1

    @property
    def grid(self):
        return np.linspace(0.0, self.m_max, self.n + 1)

    @property
    def weights(self):
        return trapezoid_weights(self.n, self.m_max / self.n)


def build_kernel(spec_or_solver, n=2048, renormalize=True) -> KernelMatrix:
    fs = _solver(spec_or_solver)
    spec = fs.spec
    m_max = spec.mMax
    dm = m_max / n
    m = np.linspace(0.0, m_max, n + 1)
    W = trapezoid_weights(n, dm)
    lam = fs.lambda_fn(m)
    lam_p = fs.lambda_prime(m)
    Qm = fs.hazard_Q(m)
    Qlam = fs.hazard_Q(lam)
    rate = fs.hazard_rate(lam, side="right")
    omega = cut_weights(n, dm, lam)
    expo = np.minimum(Qm[None, :] - Qlam[:, None], 700.0)
    K = (lam_p * rate)[:, None] * np.where(omega > 0, np.exp(expo), 0.0) * omega

    tail = np.minimum(1.0, np.exp(np.minimum(Qm - fs.hazard_Q(lam[-1]), 0.0)))
    target = 1.0 - tail
    raw = (W @ K) / W
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(target > 1e-12, np.abs(raw / target - 1.0), np.abs(raw - target))
    defect = float(np.max(rel))
    low = (m <= 0.5 * m_max) & (target < 0.5)
    if low.any():
        raise RangeError(
            f"mass starting at m={m[np.argmax(low)]:.4g} mostly leaves [0, {m_max:g}]; increase mMax"
        )
    if renormalize:
        scale = np.where(raw > 0, target / np.where(raw > 0, raw, 1.0), 0.0)
        K = K * scale[None, :]
        colmass = np.where(raw > 0, target, 0.0)
    else:
        colmass = raw
    K.setflags(write=False)
    return KernelMatrix(m_max, K, colmass, tail, defect)


def apply_P(K: KernelMatrix, f: GridDensity) -> GridDensity:
    if f.n != K.n or f.m_max != K.m_max:
        raise ValueError("density grid does not match the kernel grid")
    out = K.matrix @ f.values
    lost = float(K.weights @ (f.values * (1.0 - K.column_mass)))
    return GridDensity(f.m_max, np.maximum(out, 0.0), f.escaped_mass + max(lost, 0.0))


@dataclass
class PowerResult:
    """Outcome of power iteration.

    ``status`` is one of "converged", "sweeping", "max_iter".  ``diffs``
    are L1 distances between successive normalized iterates, ``raw_diffs``
    between unnormalized ones; ``masses`` is the in-domain mass of P^k f0.
    """

    fixed_point: GridDensity | None
    status: str
    iterations: int
    diffs: np.ndarray
    raw_diffs: np.ndarray
    masses: np.ndarray
    thresholds: dict

    def to_dict(self):
        return {
            "status": self.status,
            "iterations": self.iterations,
            "final_diff": float(self.diffs[-1]) if self.diffs.size else None,
            "final_mass": float(self.masses[-1]) if self.masses.size else None,
            "thresholds": self.thresholds,
        }


def power_iterate(K: KernelMatrix, f0: GridDensity, n_max=100_000, tol=1e-9,
                  min_mass=0.5, sweep_mass=0.01, window=100, leak_tol=1e-6) -> PowerResult:
    """Iterate P from f0.

    Successive iterates are compared after normalization, because the
    truncated operator leaks a little mass on every application.  A
    normalized limit only counts as a fixed point when the in-domain mass
    is still above ``min_mass`` and the limit itself leaks less than
    ``leak_tol`` per step; otherwise iteration continues until the mass
    falls below ``sweep_mass`` with a monotone decline over ``window`` steps.
    """
    W = K.weights
    f = f0.values / (W @ f0.values)
    mass = f0.mass
    diffs, raw_diffs, masses = [], [], []
    status = "max_iter"
    result = None
    it = 0
    for it in range(1, int(n_max) + 1):
        g = K.matrix @ f
        kept = W @ g
        if kept <= 0:
            masses.append(0.0)
            status = "sweeping"
            break
        new_mass = mass * kept
        g = g / kept
        diffs.append(float(W @ np.abs(g - f)))
        raw_diffs.append(float(W @ np.abs(new_mass * g - mass * f)))
        masses.append(new_mass)
        f, mass = g, new_mass
        if diffs[-1] < tol and mass > min_mass and 1.0 - kept < leak_tol:
            status = "converged"
            result = GridDensity(K.m_max, f)
            break
        if mass < sweep_mass:
            recent = np.asarray(masses[-(window + 1):])
            if recent.size > window and np.all(np.diff(recent) <= 0):
                status = "sweeping"
                break
    return PowerResult(
        result, status, it, np.asarray(diffs), np.asarray(raw_diffs), np.asarray(masses),
        {"tol": tol, "min_mass": min_mass, "sweep_mass": sweep_mass, "window": window,
         "leak_tol": leak_tol, "n_max": int(n_max)},
    )


def mixing_diagnostic(K: KernelMatrix, f: GridDensity, g: GridDensity, steps=200):
    """||P^n f - P^n g||_1 for n = 0..steps (reported only; no rate is asserted)."""
    W = K.weights
    a, b = f.values.copy(), g.values.copy()
    out = [float(W @ np.abs(a - b))]
    for _ in range(steps):
        a, b = K.matrix @ a, K.matrix @ b
        out.append(float(W @ np.abs(a - b)))
    return np.asarray(out)


# -- the stability coefficient ---------------------------------------------------


def alpha_profile(spec_or_solver, grid):
    """alpha(m) = Q(lambda(m)) - Q(m)."""
    fs = _solver(spec_or_solver)
    grid = np.asarray(grid, dtype=float)
    return fs.hazard_Q(fs.lambda_fn(grid)) - fs.hazard_Q(grid)


def alpha_slope(fs: FlowSolver, grid):
    lam = fs.lambda_fn(grid)
    left = fs.hazard_rate(lam, "left") * fs.lambda_prime(grid) - fs.hazard_rate(grid, "left")
    right = fs.hazard_rate(lam, "right") * fs.lambda_prime(grid) - fs.hazard_rate(grid, "right")
    return np.maximum(np.abs(left), np.abs(right))


def classify_discrete(spec_or_solver, n=2048, margin=0.01, tail_fraction=0.25) -> ClassificationReport:
    """Stable / Sweeping / Inconclusive from alpha on the tail of the grid.

    Between grid points alpha can move by at most |alpha'| * dm / 2, so the
    grid minimum and maximum are widened by that amount before comparing
    with 1 +/- margin.
    """
    fs = _solver(spec_or_solver)
    m_max = fs.spec.mMax
    grid = np.linspace(0.0, m_max, n + 1)
    dm = m_max / n
    alpha = alpha_profile(fs, grid)
    tail = grid >= (1.0 - tail_fraction) * m_max
    slack = float(np.max(alpha_slope(fs, grid[tail]))) * dm / 2
    lower = float(np.min(alpha[tail])) - slack
    upper = float(np.max(alpha[tail])) + slack
    if lower >= 1.0 + margin:
        verdict = Verdict.STABLE
    elif upper <= 1.0 - margin:
        verdict = Verdict.SWEEPING
    else:
        verdict = Verdict.INCONCLUSIVE
    inf_alpha = float(np.min(alpha))
    evidence = {
        "alpha_liminf_bound": lower,
        "alpha_tail_upper_bound": upper,
        "alpha_tail_start": float((1.0 - tail_fraction) * m_max),
        "margin": margin,
        "alpha_min": inf_alpha,
        "completely_mixing": bool(np.isfinite(inf_alpha)),
    }
    notes = ["completely_mixing is a flag only (inf alpha finite on the grid); no mixing rate is asserted"]
    return ClassificationReport(verdict, "discrete", evidence, notes)


# -- conjugate operator --------------------------------------------------------


@dataclass
class ConjugateReport:
    discrepancy: float
    u_mass: float
    f_mass: float
    max_conjugate_column_mass: float
    lhs: np.ndarray
    rhs: np.ndarray

    def to_dict(self):
        return {"discrepancy": self.discrepancy, "u_mass": self.u_mass, "f_mass": self.f_mass,
                "max_conjugate_column_mass": self.max_conjugate_column_mass}


def conjugate_check(spec_or_solver, f: GridDensity, n_columns=64) -> ConjugateReport:
    """Compare P(Uf) with U(P~f) where Uf(m) = lambda'(m) f(lambda(m)).

    P~ uses Q~ = Q o psi.  Both sides are evaluated by Gauss-Legendre
    quadrature on panels aligned with every kink of the integrands, so the
    comparison is not limited by the kernel matrix resolution.
    """
    fs = _solver(spec_or_solver)
    spec = fs.spec
    grid = f.grid
    top = float(fs.psi(spec.mMax))
    support = grid[f.values > 0]
    if support.size and (support[0] < spec.mP - 1e-12 or support[-1] > top + 1e-12):
        raise RangeError(f"f must be supported in [mP, psi(mMax)] = [{spec.mP:g}, {top:.6g}]")

    def Q(x):
        return fs.hazard_Q(np.clip(x, 0.0, fs.hi))

    def Qt(x):
        return fs.hazard_Q(fs.psi(np.maximum(x, spec.mP)))

    def Qt_rate(x):
        return fs.hazard_rate(fs.psi(x)) * fs.psi_prime(x)

    def Uf(y):
        # f vanishes beyond mMax, so Uf vanishes beyond psi(mMax)
        y = np.asarray(y, dtype=float)
        yc = np.clip(y, 0.0, top)
        return np.where(y <= top, fs.lambda_prime(yc) * f(fs.lambda_fn(yc)), 0.0)

    q_knots = np.asarray(spec.phi.knots() + spec.g1.knots() + [spec.mP], dtype=float)
    q_knots = q_knots[(q_knots >= 0) & (q_knots <= spec.mMax)]
    psi_nodes = fs.psi(grid)
    lam = fs.lambda_fn(grid)
    lam2 = fs.flow(2, -spec.tau, fs.h_inverse(lam))

    # P(Uf)(m): integrate over y in [0, lambda(m)]
    breaks = np.concatenate([psi_nodes, q_knots])
    inner = exp_weighted_integral(Uf, Q, 0.0, lam, breaks=breaks, max_panel=f.dm)
    lhs = fs.lambda_prime(grid) * fs.hazard_rate(lam) * inner

    # U(P~f)(m) = lambda'(m) (P~f)(lambda(m)); P~ integrates x over [mP, lambda(lambda(m))]
    breaks = np.concatenate([grid, fs.lambda_fn(np.minimum(q_knots, spec.mMax))])
    inner = exp_weighted_integral(f, Qt, spec.mP, lam2, breaks=breaks, max_panel=f.dm)
    # Q~'(lam2) = Q'(psi(lam2)) psi'(lam2) with psi(lam2) = lam; no round trip through psi at a jump
    rate2 = fs.hazard_rate(lam) * fs.psi_prime(lam2)
    rhs = fs.lambda_prime(grid) * fs.lambda_prime(lam) * rate2 * inner

    W = f.weights
    discrepancy = float(W @ np.abs(lhs - rhs))

    # U is an isometry from L1[mP, inf) onto L1[0, inf)
    t, w = gauss_legendre(10)
    edges = np.union1d(psi_nodes[(psi_nodes > 0) & (psi_nodes < top)], [0.0, top])
    a, b = edges[:-1], edges[1:]
    nodes = a[:, None] + (b - a)[:, None] * t
    u_mass = float(np.sum((b - a) * np.sum(w * Uf(nodes), axis=1)))
    # exact integral of the interpolant over [mP, mMax], including the cell cut by mP
    xs_f = np.concatenate([[spec.mP], grid[grid > spec.mP]])
    f_mass = float(np.trapezoid(f(xs_f), xs_f))

    # column masses of P~ on [mP, mMax] for a sample of sources x
    xs = np.linspace(spec.mP, top, n_columns)
    cols = []
    m_hi = spec.mMax
    for x in xs:
        m_lo = max(spec.mP, float(fs.psi(x)))
        if m_lo >= m_hi:
            cols.append(0.0)
            continue
        mm_edges = np.union1d(np.linspace(m_lo, m_hi, 513), q_knots[(q_knots > m_lo) & (q_knots < m_hi)])
        a, b = mm_edges[:-1], mm_edges[1:]
        mm = a[:, None] + (b - a)[:, None] * t
        lm = fs.lambda_fn(mm)
        dens = fs.lambda_prime(mm) * Qt_rate(lm) * np.exp(np.minimum(Qt(x) - Qt(lm), 0.0))
        cols.append(float(np.sum((b - a) * np.sum(w * dens, axis=1))))
    return ConjugateReport(discrepancy, u_mass, f_mass, float(max(cols)), lhs, rhs)
