"""Delayed nonlocal transport for the resting-cell maturity profile R(t, m):

    R_t + (g1 R)_m = -phi(m) R + phi(lambda(m)) lambda'(m) R(t - tau, lambda(m))

solved by an explicit conservative upwind scheme with a ring buffer of
past profiles, plus residual and boundary checks for stationary profiles.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .density import GridDensity
from .errors import CflViolation, NegativeDensity
from .flows import FlowSolver

CFL_MAX = 0.9


def default_dt(fs: FlowSolver, dm, cfl=CFL_MAX):
    """Largest step with CFL <= cfl that divides tau exactly."""
    g_max = float(np.max(fs.spec.g1(np.linspace(0.0, fs.spec.mMax, int(round(fs.spec.mMax / dm)) + 1))))
    tau = fs.spec.tau
    return tau / math.ceil(tau / (cfl * dm / g_max))


@dataclass
class DelayField:
    """State of the delayed transport solver.

    ``history`` is a ring buffer: row ``(head + j) % rows`` holds R at
    time t - j * dt for j = 0..depth.  Mass is ``dm * sum(R[1:])`` (R[0] is the zero
    inflow boundary) which makes the mass balance exact step by step.
    """

    solver: FlowSolver
    m_max: float
    R: np.ndarray
    t: float
    dt: float
    history: np.ndarray
    escaped_mass: float = 0.0
    history_kind: str = "frozen initial profile"
    audit: list = field(default_factory=list)
    head: int = 0

    def past(self, j):
        """R at time t - j * dt."""
        return self.history[(self.head + j) % self.history.shape[0]]

    @property
    def n(self):
        return self.R.size - 1

    @property
    def dm(self):
        return self.m_max / self.n

    @property
    def grid(self):
        return np.linspace(0.0, self.m_max, self.n + 1)

    @property
    def mass(self):
        return float(self.dm * self.R[1:].sum())

    def mass_on(self, a, b):
        x = self.grid
        sel = (x > 0) & (x >= a - 1e-12) & (x <= b + 1e-12)
        return float(self.dm * self.R[sel].sum())

    def cfl(self):
        return float(np.max(self.solver.spec.g1(self.grid))) * self.dt / self.dm

    def as_density(self) -> GridDensity:
        return GridDensity(self.m_max, self.R.copy(), self.escaped_mass)


def make_field(fs: FlowSolver, R0, dm=None, dt=None, history=None) -> DelayField:
    """Set up a field from an initial profile.

    ``R0`` is a callable or an array on the grid.  ``history`` (optional) is
    a callable H(s, x) for s in [-tau, 0]; by default the initial profile is
    frozen on [-tau, 0].
    """
    spec = fs.spec
    if dm is None:
        dm = 1e-2
    n = int(round(spec.mMax / dm))
    x = np.linspace(0.0, spec.mMax, n + 1)
    dm = spec.mMax / n
    if dt is None:
        dt = default_dt(fs, dm)
    R = np.asarray(R0(x) if callable(R0) else R0, dtype=float).copy()
    if R.shape != x.shape:
        raise ValueError("initial profile does not match the grid")
    R[0] = 0.0
    depth = int(math.ceil(spec.tau / dt - 1e-9)) + 1
    if history is None:
        hist = np.repeat(R[None, :], depth + 1, axis=0)
        kind = "frozen initial profile"
    else:
        hist = np.stack([np.asarray(history(-j * dt, x), dtype=float) for j in range(depth + 1)])
        hist[0] = R
        hist[:, 0] = 0.0
        kind = "user supplied"
    fld = DelayField(fs, spec.mMax, R, 0.0, float(dt), hist, 0.0, kind)
    if fld.cfl() > CFL_MAX + 1e-12:
        raise CflViolation(f"CFL number {fld.cfl():.4f} exceeds {CFL_MAX}")
    return fld


class _Coefficients:
    """Time-independent pieces of the update, evaluated once per grid."""

    def __init__(self, fs: FlowSolver, x):
        spec = fs.spec
        self.g = spec.g1(x)
        self.sink_right = spec.phi.right_limit(x)
        self.sink_left = spec.phi(x)
        lam = fs.lambda_fn(x)
        lp = fs.lambda_prime(x)
        self.lam = lam
        self.src_right = spec.phi.right_limit(lam) * lp
        self.src_left = spec.phi(lam) * lp
        self.inside = lam <= x[-1] + 1e-12


def evolve(fld: DelayField, t_end, snapshot_every=None, snapshots=None, audit=True, monitor=None) -> DelayField:
    """Advance ``fld`` in place to time ``t_end``.

    ``monitor(t, R)`` (optional) is called after every step.

    Box-upwind update: the flux difference is first-order upwind and the
    reaction terms are averaged over each upwind cell with one-sided
    values, so a jump of phi at a grid node is integrated exactly.
    """
    if fld.cfl() > CFL_MAX + 1e-12:
        raise CflViolation(f"CFL number {fld.cfl():.4f} exceeds {CFL_MAX}")
    fs = fld.solver
    x = fld.grid
    co = _Coefficients(fs, x)
    dt, dm = fld.dt, fld.dm
    nu = dt / dm
    tau = fs.spec.tau
    j0 = int(math.floor(tau / dt + 1e-9))
    w = tau / dt - j0
    if w < 1e-9:
        w = 0.0
    depth = fld.history.shape[0] - 1
    steps = int(round((t_end - fld.t) / dt))
    if steps < 0:
        raise ValueError("t_end lies before the current time")
    if snapshot_every is not None:
        snap_k = max(1, int(round(snapshot_every / dt)))
        if snapshots is not None and not snapshots:
            snapshots.append((fld.t, fld.R.copy()))
    R = fld.R
    for k in range(steps):
        delayed = fld.past(j0) if w == 0.0 else (1 - w) * fld.past(j0) + w * fld.past(min(j0 + 1, depth))
        S = np.where(co.inside, np.interp(co.lam, x, delayed), 0.0)
        a = -co.sink_right[:-1] * R[:-1] + co.src_right[:-1] * S[:-1]
        b = -co.sink_left[1:] * R[1:] + co.src_left[1:] * S[1:]
        react = 0.5 * (a + b)
        flux = co.g * R
        new = np.empty_like(R)
        new[0] = 0.0
        new[1:] = R[1:] - nu * (flux[1:] - flux[:-1]) + dt * react
        out = dt * flux[-1]
        if new.min() < -1e-12:
            i = int(np.argmin(new))
            raise NegativeDensity(f"R={new[i]:.3e} at m={x[i]:.4g}, t={fld.t + dt:.4g}")
        new = np.maximum(new, 0.0)
        if audit:
            sink = dm * 0.5 * float(np.sum(co.sink_right[:-1] * R[:-1] + co.sink_left[1:] * R[1:]))
            source = dm * 0.5 * float(np.sum(co.src_right[:-1] * S[:-1] + co.src_left[1:] * S[1:]))
            before = dm * R[1:].sum()
            after = dm * new[1:].sum()
            fld.audit.append((fld.t + dt, (after - before) / dt, source - sink - out / dt, source, sink))
        fld.head = (fld.head - 1) % fld.history.shape[0]
        fld.history[fld.head] = new
        R = new
        fld.escaped_mass += out
        fld.t += dt
        if monitor is not None:
            monitor(fld.t, R)
        if snapshot_every is not None and snapshots is not None and (k + 1) % snap_k == 0:
            snapshots.append((fld.t, R.copy()))
    fld.R = R
    return fld


def audit_summary(fld: DelayField):
    """Worst mismatch between d/dt mass and (source - sink - outflow)."""
    if not fld.audit:
        return {"max_balance_error": 0.0, "steps": 0}
    arr = np.asarray(fld.audit)
    return {"max_balance_error": float(np.max(np.abs(arr[:, 1] - arr[:, 2]))), "steps": int(arr.shape[0])}


def write_frames(path, x, frames):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "m", "R"])
        for t, R in frames:
            for xi, ri in zip(x, R):
                w.writerow([f"{t:.10g}", f"{xi:.10g}", repr(float(ri))])
    return path


def read_frames(path):
    """Inverse of :func:`write_frames`: (times, m grid, array [time, m])."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times = np.unique(data[:, 0])
    x = np.unique(data[:, 1])
    order = np.lexsort((data[:, 1], data[:, 0]))
    return times, x, data[order, 2].reshape(times.size, x.size)


def history_from_frames(path):
    """History callable H(s, m) from (t, m, R) frames covering [-tau, 0].

    Linear in s between frames (held constant outside them) and in m.
    """
    times, xs, vals = read_frames(path)

    def history(s, x):
        j = int(np.clip(np.searchsorted(times, s) - 1, 0, max(times.size - 2, 0)))
        if times.size == 1:
            row = vals[0]
        else:
            w = float(np.clip((s - times[j]) / (times[j + 1] - times[j]), 0.0, 1.0))
            row = (1 - w) * vals[j] + w * vals[j + 1]
        return np.interp(x, xs, row, left=0.0, right=0.0)

    return history


# -- stationary checks -----------------------------------------------------------


@dataclass
class Residual:
    pointwise: np.ndarray
    mask: np.ndarray
    l1: float

    def to_dict(self):
        return {"l1": self.l1, "points_used": int(self.mask.sum())}


def _singular_points(fn):
    """Knots that break a centered difference; a table built from smooth
    samples only counts its two ends."""
    pts = fn.knots()
    if fn.family == "ShiftedTable":
        return [pts[0], pts[-1]]
    return pts


def stationary_residual(fs: FlowSolver, R: GridDensity, region=None) -> Residual:
    """(g1 R)' + phi R - phi(lambda) lambda' R(lambda) with centered differences.

    Points are skipped when the difference stencil touches a knot of g1 or
    phi (for tables only the end points), when lambda of the stencil touches a knot of phi, or when lambda(m)
    lies beyond mMax.  ``region=(a, b)`` restricts the L1 sum.
    """
    spec = fs.spec
    x = R.grid
    dm = R.dm
    v = R.values
    gR = spec.g1(x) * v
    deriv = np.full_like(v, np.nan)
    deriv[1:-1] = (gR[2:] - gR[:-2]) / (2 * dm)
    lam = fs.lambda_fn(x)
    inside = lam <= x[-1]
    src = np.where(inside, spec.phi(lam) * fs.lambda_prime(x) * np.interp(lam, x, v), 0.0)
    res = deriv + spec.phi(x) * v - src
    mask = np.zeros(x.size, dtype=bool)
    mask[1:-1] = True
    mask &= inside
    knots = np.asarray(_singular_points(spec.g1) + _singular_points(spec.phi), dtype=float)
    phi_knots = np.asarray(_singular_points(spec.phi), dtype=float)
    lam_knots = fs.psi(phi_knots[phi_knots >= spec.mP]) if phi_knots.size else np.empty(0)
    for kn in np.concatenate([knots, lam_knots]):
        mask &= np.abs(x - kn) > 1.0001 * dm
    if region is not None:
        mask &= (x >= region[0]) & (x <= region[1])
    res = np.where(mask, res, 0.0)
    return Residual(res, mask, float(dm * np.sum(np.abs(res[mask]))))


def boundary_consistency_check(profile, n=2049) -> dict:
    """Max violations of the two boundary identities for a stationary profile.

    division: r(0, m) = k'(m) p(tau, k(m)) with k = h^{-1};
    entry:    p(0, m) = phi(m) int r(a, m) da (phi taken as its right limit).
    """
    fs = profile.solver
    spec = fs.spec
    m = np.linspace(0.0, spec.mMax, n)
    k = fs.h_inverse(m)
    kp = 1.0 / spec.h.derivative(k)
    lhs_r = profile.density(0.0, m, 1)
    rhs_r = kp * profile.density(spec.tau, k, 2)
    lhs_p = profile.density(0.0, m, 2)
    rhs_p = spec.phi.right_limit(m) * profile.resting_marginal(m).values
    below = m < spec.mP
    return {
        "division": float(np.max(np.abs(lhs_r - rhs_r))),
        "entry": float(np.max(np.abs(lhs_p - rhs_p))),
        "entry_below_mP": float(np.max(np.abs(np.concatenate([lhs_p[below], rhs_p[below]])), initial=0.0)),
    }
