"""Deterministic backbone: maturation flows, cumulative hazard, daughter maps.

Every flow is computed through its time map T(m) = int dr / g(r): the flow
is pi(t, m0) = T^{-1}(T(m0) + t).  Constant and linear velocities use closed
forms; everything else goes through :class:`Cumulative`.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
from scipy.special import exprel

from .errors import DomainError, DomainExit, RangeError
from .model import ModelSpec, ScalarFn

_GL_CACHE = {}


def gauss_legendre(order):
    """Nodes on [0, 1] and matching weights."""
    if order not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(order)
        _GL_CACHE[order] = (0.5 * (x + 1.0), 0.5 * w)
    return _GL_CACHE[order]


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


class Cumulative:
    """F(x) = int_lo^x f(r) dr for a nonnegative integrand, tabulated on panels.

    Panels start at ``breaks`` (kinks and jumps of the integrand) and are
    halved until a Gauss-Legendre rule and its two-half refinement agree
    to ``tol`` (scaled by panel length).  Evaluation inside a panel uses
    the same rule on the partial interval.
    """

    def __init__(self, f, lo, hi, breaks=(), tol=1e-12, order=10, min_panels=64, max_depth=40):
        if not hi > lo:
            raise DomainError(f"empty integration range [{lo}, {hi}]")
        self.f = f
        self.lo, self.hi = float(lo), float(hi)
        self.order = order
        edges = np.union1d(np.linspace(lo, hi, min_panels + 1),
                           [b for b in breaks if lo < b < hi])
        width = hi - lo
        for _ in range(max_depth):
            a, b = edges[:-1], edges[1:]
            mid = 0.5 * (a + b)
            coarse = self._rule(a, b)
            fine = self._rule(a, mid) + self._rule(mid, b)
            bad = np.abs(coarse - fine) > tol * np.maximum((b - a) / width, 1e-3 * tol)
            if not bad.any():
                break
            edges = np.sort(np.concatenate([edges, mid[bad]]))
        a, b = edges[:-1], edges[1:]
        mid = 0.5 * (a + b)
        pieces = self._rule(a, mid) + self._rule(mid, b)
        self.edges = edges
        self.cum = np.concatenate([[0.0], np.cumsum(pieces)])

    def _rule(self, a, b):
        t, w = gauss_legendre(self.order)
        a = np.asarray(a, dtype=float)[..., None]
        b = np.asarray(b, dtype=float)[..., None]
        nodes = a + (b - a) * t
        return (b[..., 0] - a[..., 0]) * np.sum(w * self.f(nodes), axis=-1)

    @property
    def total(self):
        return float(self.cum[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lo - 1e-12) or np.any(x > self.hi + 1e-12):
            raise RangeError(f"argument outside [{self.lo}, {self.hi}]")
        x = np.clip(x, self.lo, self.hi)
        k = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, len(self.edges) - 2)
        a = self.edges[k]
        out = self.cum[k] + self._rule(a, x)
        return _scalar(out)

    def inverse(self, q, tol=1e-14):
        """Least x with F(x) = q, by safeguarded Newton inside the bracketing panel."""
        q = np.asarray(q, dtype=float)
        shape = q.shape
        q = q.ravel()
        if np.any(q > self.cum[-1] * (1 + 1e-14) + 1e-300) or np.any(q < 0):
            raise RangeError("value outside the tabulated range")
        k = np.searchsorted(self.cum, q, side="left")
        at_lo = k == 0
        k = np.clip(k, 1, len(self.edges) - 1)
        a = self.edges[k - 1].copy()
        b = self.edges[k].copy()
        left = self.edges[k - 1]
        base = self.cum[k - 1]
        # start from linear interpolation of the panel's cumulative values
        span = self.cum[k] - base
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(span > 0, a + (b - a) * (q - base) / span, 0.5 * (a + b))
        live = np.flatnonzero(~at_lo)
        for _ in range(100):
            if live.size == 0:
                break
            xl = x[live]
            fx = base[live] + self._rule(left[live], xl) - q[live]
            a[live] = np.where(fx < 0, xl, a[live])
            b[live] = np.where(fx >= 0, xl, b[live])
            d = self.f(xl)
            with np.errstate(divide="ignore", invalid="ignore"):
                xn = xl - fx / d
            bad = ~np.isfinite(xn) | (xn < a[live]) | (xn > b[live])
            xn = np.where(bad, 0.5 * (a[live] + b[live]), xn)
            scale = np.maximum(1.0, np.abs(xl))
            done = (np.abs(xn - xl) <= tol * scale) | (b[live] - a[live] <= 4 * tol * scale)
            x[live] = xn
            live = live[~done]
        x = np.where(at_lo, self.lo, x).reshape(shape)
        return _scalar(x)


class TimeMap:
    """T(m) = int_lo^m dr / g(r) and its inverse, for one phase velocity."""

    def __init__(self, g: ScalarFn, lo, hi, tol):
        self.g = g
        self.lo, self.hi = float(lo), float(hi)
        fam = g.family
        self.kind = fam if fam in ("Constant", "Linear") else "numeric"
        if self.kind == "Linear" and g.params["a"] == 0:
            self.kind = "Constant"
        self._tol = tol

    @cached_property
    def _cum(self):
        return Cumulative(lambda r: 1.0 / self.g(r), self.lo, self.hi, breaks=self.g.knots(), tol=self._tol)

    def flow(self, t, m0):
        """pi(t, m0); backward flows that cross ``lo`` raise DomainExit."""
        t = np.asarray(t, dtype=float)
        m0 = np.asarray(m0, dtype=float)
        p = self.g.params
        if self.kind == "Constant":
            c = p["c"] if self.g.family == "Constant" else p["b"]
            out = m0 + c * t
        elif self.kind == "Linear":
            a, b = p["a"], p["b"]
            # exprel keeps this accurate when a * t is tiny
            out = m0 * np.exp(a * t) + b * t * exprel(a * t)
        else:
            s = self._cum(np.minimum(m0, self.hi)) + t
            if np.any(s > self._cum.total):
                raise RangeError(f"forward flow leaves the tabulated range [{self.lo}, {self.hi}]")
            out = self._cum.inverse(np.maximum(s, 0.0))
            out = np.where(s < 0, self.lo - 1.0, out)
        if np.any((t < 0) & (out < self.lo - 1e-12)):
            raise DomainExit(f"backward flow crosses m={self.lo}")
        return _scalar(np.where(t == 0, m0, out))

    def elapsed(self, m0, m1):
        """Time for the flow to carry m0 to m1."""
        m0 = np.asarray(m0, dtype=float)
        m1 = np.asarray(m1, dtype=float)
        p = self.g.params
        if self.kind == "Constant":
            c = p["c"] if self.g.family == "Constant" else p["b"]
            return _scalar((m1 - m0) / c)
        if self.kind == "Linear":
            a, b = p["a"], p["b"]
            return _scalar(np.log1p(a * (m1 - m0) / (a * m0 + b)) / a)
        return _scalar(self._cum(m1) - self._cum(m0))


class FlowSolver:
    """Flows, hazard and daughter maps for one model.

    The working range [0, hi] is wide enough that pi_2(tau, mMax) and
    h^{-1}(mMax) both lie inside it, so lambda is available on [0, mMax]
    and Q on [0, lambda(mMax)].
    """

    def __init__(self, spec: ModelSpec, ode_tol=1e-10, quad_tol=1e-10, root_tol=1e-12):
        if min(ode_tol, quad_tol, root_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if spec.mMax <= spec.mP:
            raise DomainError(f"mMax={spec.mMax} must exceed mP={spec.mP}")
        self.spec = spec
        self.ode_tol, self.quad_tol, self.root_tol = ode_tol, quad_tol, root_tol
        # phase 2 may start below mP when g2 stays positive there (needed for lambda(0))
        probe = np.linspace(0.0, spec.mP, 201)
        self.phase2_lo = 0.0 if np.all(np.asarray(spec.g2(probe)) > 0) else spec.mP
        hi = 2.0 * spec.mMax
        for _ in range(12):
            self.hi = hi
            self._t1 = TimeMap(spec.g1, 0.0, hi, 1e-3 * ode_tol)
            self._t2 = TimeMap(spec.g2, self.phase2_lo, hi, 1e-3 * ode_tol)
            try:
                ok = self._t2.flow(spec.tau, spec.mMax) <= hi and spec.h(hi) >= spec.mMax
            except RangeError:
                ok = False
            if ok:
                break
            hi *= 2.0
        else:
            raise DomainError("could not find a working range containing lambda(mMax)")

    def _map(self, i):
        if i == 1:
            return self._t1
        if i == 2:
            return self._t2
        raise ValueError(f"phase must be 1 or 2, got {i!r}")

    # -- flows --------------------------------------------------------------

    def flow(self, i, t, m0):
        return self._map(i).flow(t, m0)

    def travel_time(self, i, m0, m1):
        """Time for phase-i maturation from m0 to m1."""
        return self._map(i).elapsed(m0, m1)

    # -- hazard ---------------------------------------------------------------

    @cached_property
    def _hazard(self):
        s = self.spec
        breaks = s.phi.knots() + s.g1.knots() + [s.mP]
        return Cumulative(self.hazard_rate, 0.0, self.hi, breaks=breaks, tol=1e-2 * self.quad_tol)

    def hazard_rate(self, m, side="right"):
        """phi/g1; at a jump of phi the right limit is used by default."""
        s = self.spec
        phi = s.phi.right_limit(m) if side == "right" else s.phi(m)
        return phi / s.g1(m)

    def hazard_Q(self, m):
        return self._hazard(m)

    @cached_property
    def q_max(self):
        """Q(mMax): hazard values above this escape the numerical domain."""
        return float(self._hazard(self.spec.mMax))

    def hazard_Q_inverse(self, q, limit=None):
        """Least maturity with Q = q; RangeError when q > Q(limit) (default mMax)."""
        qmax = self.q_max if limit is None else float(self._hazard(limit))
        q = np.asarray(q, dtype=float)
        if np.any(q > qmax * (1 + 1e-14)):
            raise RangeError(f"hazard level {float(np.max(q)):.6g} exceeds Q(mMax)={qmax:.6g}")
        return self._hazard.inverse(q)

    # -- daughter maps -------------------------------------------------------

    def psi(self, m):
        return self.spec.h(self.flow(2, self.spec.tau, m))

    def psi_prime(self, m):
        s = self.spec
        end = self.flow(2, s.tau, m)
        return s.h.derivative(end) * s.g2(end) / s.g2(m)

    def h_inverse(self, m):
        return self.spec.h.inverse(m, self.spec.mP, self.hi)

    def lambda_fn(self, m):
        """psi^{-1}; defined on [0, h(hi)] which covers [0, mMax]."""
        m = np.asarray(m, dtype=float)
        if np.any(m < -1e-12):
            raise RangeError("lambda is defined for nonnegative maturities only")
        k = self.h_inverse(m)
        if np.any(np.asarray(k) > self.hi):
            raise RangeError("lambda argument beyond the working range")
        # lambda(0) = mP exactly; rounding must not put it below a jump of phi at mP
        return np.maximum(self.flow(2, -self.spec.tau, k), self.spec.mP)

    def lambda_prime(self, m):
        s = self.spec
        k = self.h_inverse(m)
        lam = self.flow(2, -s.tau, k)
        return s.g2(lam) / (s.g2(k) * s.h.derivative(k))

    def resting_time(self, m0, m_star):
        return self.travel_time(1, m0, m_star)


def exp_weighted_integral(u, G, lo, targets, breaks=(), order=10, max_panel=None):
    """A(z) = int_lo^z exp(G(x) - G(z)) u(x) dx for every z in ``targets``.

    The exponent is always a difference, so G may be large.  Panels start
    at ``breaks``; ``u`` and ``G`` should be smooth between breaks.  The
    running value is carried panel to panel with a rescaling factor.
    """
    targets = np.asarray(targets, dtype=float)
    out = np.zeros_like(targets)
    if targets.size == 0:
        return out
    top = float(np.max(targets))
    if top <= lo:
        return out
    if max_panel is None:
        max_panel = (top - lo) / 256
    n = max(1, int(np.ceil((top - lo) / max_panel)))
    edges = np.union1d(np.linspace(lo, top, n + 1), [b for b in breaks if lo < b < top])
    t, w = gauss_legendre(order)
    a, b = edges[:-1], edges[1:]
    nodes = a[:, None] + (b - a)[:, None] * t
    Gb = G(b)
    local = (b - a) * np.sum(w * np.exp(G(nodes) - Gb[:, None]) * u(nodes), axis=1)
    decay = np.exp(G(a) - Gb)
    acc = np.empty(edges.size)
    acc[0] = 0.0
    run = 0.0
    for k in range(local.size):
        run = run * decay[k] + local[k]
        acc[k + 1] = run
    live = targets > lo
    z = targets[live]
    k = np.clip(np.searchsorted(edges, z, side="right") - 1, 0, a.size - 1)
    za = edges[k]
    part_nodes = za[:, None] + (z - za)[:, None] * t
    Gz = G(z)
    part = (z - za) * np.sum(w * np.exp(G(part_nodes) - Gz[:, None]) * u(part_nodes), axis=1)
    out[live] = acc[k] * np.exp(G(za) - Gz) + part
    return out
