"""Exact-event simulation of the two-phase cell-cycle process.

A resting cell leaves phase 1 when its accumulated hazard Q crosses an
Exp(1) level, so resting times are drawn by inverting Q in maturity space
and then converting the maturity gain into elapsed time.  Proliferation
lasts exactly tau and ends in division m -> h(m).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySample, RangeError
from .flows import FlowSolver

ENTER = "EnterProliferation"
DIVIDE = "Division"
ESCAPE = "Escaped"


def substream(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for one trajectory: Philox keyed by (seed, index)."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class UniformBank:
    """Block-buffered uniforms from one substream per trajectory.

    Each trajectory consumes its own stream in order, so results do not
    depend on how many trajectories are simulated together.
    """

    def __init__(self, seed: int, indices, block: int = 64):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.block = block
        self._gens = [substream(seed, int(i)) for i in self.indices]
        self._buf = np.empty((len(self._gens), block))
        for r, g in enumerate(self._gens):
            self._buf[r] = g.random(block)
        self._ptr = np.zeros(len(self._gens), dtype=np.int64)

    def next(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        for r in rows[self._ptr[rows] >= self.block]:
            self._buf[r] = self._gens[r].random(self.block)
            self._ptr[r] = 0
        out = self._buf[rows, self._ptr[rows]]
        self._ptr[rows] += 1
        return out

    def random(self):
        """Scalar draw for a single-row bank (Generator-like interface)."""
        return float(self.next([0])[0])


@dataclass(frozen=True)
class PdmpState:
    a: float
    m: float
    i: int

    def in_state_space(self, solver: FlowSolver, tol=1e-9) -> bool:
        spec = solver.spec
        if self.i == 1:
            return self.a >= 0 and self.m >= float(solver.flow(1, self.a, 0.0)) - tol
        if self.i == 2:
            if not (-tol <= self.a <= spec.tau + tol):
                return False
            return self.m >= float(solver.flow(2, self.a, spec.mP)) - tol
        return False


@dataclass
class Trajectory:
    seed: int
    events: list = field(default_factory=list)   # (time, kind, m_before, m_after)
    samples: list = field(default_factory=list)  # (time, PdmpState)
    escaped: bool = False

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "kind", "m_before", "m_after"])
            for t, kind, mb, ma in self.events:
                w.writerow([repr(float(t)), kind, repr(float(mb)), repr(float(ma))])
        return path


def sample_resting_time(solver: FlowSolver, m0, u):
    """Invert the resting-phase survival function at quantile ``u``.

    Returns ``(t_R, m_star)`` with m_star the maturity at phase entry.
    RangeError when the hazard level lies beyond Q(mMax).
    """
    m0 = np.asarray(m0, dtype=float)
    e = -np.log1p(-np.asarray(u, dtype=float))
    level = solver.hazard_Q(m0) + e
    if np.any(level > solver.q_max):
        raise RangeError("resting phase ends beyond mMax (trajectory escapes)")
    m_star = np.maximum(m0, solver.hazard_Q_inverse(level))
    t_r = solver.resting_time(m0, m_star)
    if np.ndim(t_r) == 0:
        return float(t_r), float(m_star)
    return t_r, m_star


def _uniform(rng, u):
    if u is not None:
        return float(u)
    return float(rng.random())


def step(solver: FlowSolver, state: PdmpState, rng=None, u=None):
    """Advance a post-jump state to the next jump: returns ``(dt, next_state)``."""
    spec = solver.spec
    if state.i == 1:
        t_r, m_star = sample_resting_time(solver, state.m, _uniform(rng, u))
        return t_r, PdmpState(0.0, m_star, 2)
    remaining = spec.tau - state.a
    end = float(solver.flow(2, remaining, state.m))
    return remaining, PdmpState(0.0, float(spec.h(end)), 1)


@dataclass
class Chain:
    maturities: list
    escaped: bool = False


def simulate_generations(solver: FlowSolver, m0, n_gen, rng) -> Chain:
    """Newborn maturities m_1..m_n of one descendant line starting at m0."""
    out = []
    m = float(m0)
    for _ in range(int(n_gen)):
        try:
            _, entered = step(solver, PdmpState(0.0, m, 1), rng)
        except RangeError:
            return Chain(out, True)
        m = float(solver.psi(entered.m))
        out.append(m)
    return Chain(out, False)


def simulate_generations_ensemble(solver: FlowSolver, m0, n_gen, n_chains, seed, first_index=0):
    """Vectorized descendant lines; row k uses substream (seed, first_index + k).

    Returns ``(maturities, escaped)``; entries after an escape are NaN.
    """
    n_gen, n_chains = int(n_gen), int(n_chains)
    out = np.full((n_chains, n_gen), np.nan)
    escaped = np.zeros(n_chains, dtype=bool)
    if n_gen == 0 or n_chains == 0:
        return out, escaped
    bank = UniformBank(seed, np.arange(first_index, first_index + n_chains), block=max(1, n_gen))
    m = np.full(n_chains, float(m0))
    rows = np.arange(n_chains)
    for k in range(n_gen):
        live = rows[~escaped]
        if live.size == 0:
            break
        u = bank.next(live)
        level = solver.hazard_Q(m[live]) + (-np.log1p(-u))
        esc = level > solver.q_max
        escaped[live[esc]] = True
        ok = live[~esc]
        m_star = np.maximum(m[ok], solver.hazard_Q_inverse(level[~esc]))
        m[ok] = solver.psi(m_star)
        out[ok, k] = m[ok]
    return out, escaped


def simulate_continuous(solver: FlowSolver, x0: PdmpState, horizon, sample_dt, rng, seed=0) -> Trajectory:
    """One trajectory on [0, horizon] with states sampled at multiples of sample_dt.

    ``x0`` may be mid-phase (a > 0): the resting exit is drawn from the
    current maturity, the proliferating phase finishes after tau - a.
    """
    spec = solver.spec
    traj = Trajectory(seed)
    t = 0.0
    state = x0
    k = 0
    while t <= horizon:
        seg_start, seg = t, state
        try:
            if state.i == 1:
                dt, nxt = step(solver, PdmpState(0.0, state.m, 1), rng)
            else:
                dt, nxt = step(solver, state, rng)
        except RangeError:
            dt = float(solver.resting_time(state.m, spec.mMax))
            nxt = None
        t_end = seg_start + dt
        while k * sample_dt < t_end and k * sample_dt <= horizon + 1e-12:
            s = k * sample_dt - seg_start
            traj.samples.append((k * sample_dt, PdmpState(seg.a + s, float(solver.flow(seg.i, s, seg.m)), seg.i)))
            k += 1
        if t_end > horizon:
            break
        if nxt is None:
            traj.events.append((t_end, ESCAPE, state.m, spec.mMax))
            traj.escaped = True
            break
        if state.i == 1:
            traj.events.append((t_end, ENTER, nxt.m, nxt.m))
        else:
            before = float(solver.flow(2, spec.tau - state.a, state.m))
            traj.events.append((t_end, DIVIDE, before, nxt.m))
        t, state = t_end, nxt
    return traj


@dataclass
class EnsembleResult:
    """Flat arrays of sampled states plus per-trajectory summaries."""

    traj: np.ndarray
    time: np.ndarray
    age: np.ndarray
    maturity: np.ndarray
    phase: np.ndarray
    escaped: np.ndarray
    phase_time: np.ndarray   # time spent in phase 1 / 2 inside the observation window
    window: tuple

    def states(self, t_min=0.0):
        sel = self.time >= t_min
        return self.age[sel], self.maturity[sel], self.phase[sel]

    def occupancy(self):
        """Fraction of observed time spent proliferating."""
        tot = self.phase_time.sum()
        return float(self.phase_time[1] / tot) if tot > 0 else float("nan")


def simulate_ensemble(solver: FlowSolver, n_traj, horizon, sample_dt, seed, m0=0.0,
                      burn_in=0.0, first_index=0) -> EnsembleResult:
    """Trajectories from (0, m0, 1), advanced one segment at a time in lockstep.

    Trajectory k consumes substream (seed, first_index + k) exactly as
    :func:`simulate_continuous` would.  Samples are kept for t >= burn_in.
    ``m0`` may be an array with one starting maturity per trajectory.
    """
    spec = solver.spec
    n = int(n_traj)
    bank = UniformBank(seed, np.arange(first_index, first_index + n))
    t0 = np.zeros(n)
    m = np.array(np.broadcast_to(np.asarray(m0, dtype=float), (n,)))
    age0 = np.zeros(n)
    ph = np.ones(n, dtype=np.int8)
    active = np.ones(n, dtype=bool)
    escaped = np.zeros(n, dtype=bool)
    phase_time = np.zeros(2)
    parts = {k: [] for k in ("traj", "time", "age", "m", "phase")}
    k_first = int(np.ceil(burn_in / sample_dt - 1e-9))
    k_last = int(np.floor(horizon / sample_dt + 1e-9))
    rows = np.arange(n)
    while active.any():
        idx = rows[active]
        dur = np.empty(idx.size)
        nxt_m = np.empty(idx.size)
        esc = np.zeros(idx.size, dtype=bool)
        one = ph[idx] == 1
        if one.any():
            r1 = idx[one]
            u = bank.next(r1)
            level = solver.hazard_Q(m[r1]) + (-np.log1p(-u))
            e1 = level > solver.q_max
            ms = np.full(r1.size, spec.mMax)
            if (~e1).any():
                ms[~e1] = np.maximum(m[r1][~e1], solver.hazard_Q_inverse(level[~e1]))
            dur[one] = solver.resting_time(m[r1], ms)
            nxt_m[one] = ms
            esc[one] = e1
        two = ~one
        if two.any():
            r2 = idx[two]
            rem = spec.tau - age0[r2]
            dur[two] = rem
            nxt_m[two] = spec.h(solver.flow(2, rem, m[r2]))
        t1 = t0[idx] + dur

        # samples at k * sample_dt inside [t0, t1)
        lo = np.maximum(np.ceil(t0[idx] / sample_dt - 1e-9), k_first).astype(np.int64)
        hi = np.minimum(np.ceil(t1 / sample_dt - 1e-9) - 1, k_last).astype(np.int64)
        cnt = np.maximum(hi - lo + 1, 0)
        if cnt.sum():
            rep = np.repeat(np.arange(idx.size), cnt)
            offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            ts = (lo[rep] + offs) * sample_dt
            s = ts - t0[idx][rep]
            phs = ph[idx][rep]
            mats = np.empty(ts.size)
            for p in (1, 2):
                sel = phs == p
                if sel.any():
                    mats[sel] = solver.flow(p, s[sel], m[idx][rep][sel])
            parts["traj"].append(idx[rep] + first_index)
            parts["time"].append(ts)
            parts["age"].append(age0[idx][rep] + s)
            parts["m"].append(mats)
            parts["phase"].append(phs)

        seen = np.clip(np.minimum(t1, horizon) - np.maximum(t0[idx], burn_in), 0.0, None)
        phase_time[0] += seen[one].sum()
        phase_time[1] += seen[two].sum()

        done = (t1 > horizon) | esc
        escaped[idx[esc & (t1 <= horizon)]] = True
        active[idx[done]] = False
        t0[idx] = t1
        m[idx] = nxt_m
        age0[idx] = 0.0
        ph[idx] = np.where(one, 2, 1)

    def cat(key, dtype=float):
        return np.concatenate(parts[key]) if parts[key] else np.empty(0, dtype=dtype)

    return EnsembleResult(cat("traj", np.int64), cat("time"), cat("age"), cat("m"),
                          cat("phase", np.int8), escaped, phase_time, (burn_in, horizon))


@dataclass
class PhaseHistogram:
    """Empirical joint law over (age, maturity) for both phases.

    ``mass[p]`` holds bin probabilities for phase p+1; the two arrays sum to 1.
    """

    age_edges: np.ndarray
    m_edges: np.ndarray
    mass: tuple

    def density(self, phase):
        area = np.outer(np.diff(self.age_edges), np.diff(self.m_edges))
        return self.mass[phase - 1] / area

    def maturity_marginal(self, phase):
        """Density in m of the phase's share (integrates to the phase probability)."""
        return self.mass[phase - 1].sum(axis=0) / np.diff(self.m_edges)

    def age_marginal(self, phase):
        return self.mass[phase - 1].sum(axis=1) / np.diff(self.age_edges)


def ensemble_histogram(states, age_edges, m_edges) -> PhaseHistogram:
    """Bin states given as PdmpState objects or an ``(a, m, i)`` tuple of arrays."""
    if isinstance(states, tuple) and len(states) == 3:
        a, m, i = (np.asarray(x) for x in states)
    else:
        states = list(states)
        a = np.array([s.a for s in states], dtype=float)
        m = np.array([s.m for s in states], dtype=float)
        i = np.array([s.i for s in states], dtype=int)
    if a.size == 0:
        raise EmptySample("cannot histogram an empty sample")
    age_edges = np.asarray(age_edges, dtype=float)
    m_edges = np.asarray(m_edges, dtype=float)
    out = []
    for p in (1, 2):
        sel = i == p
        h, _, _ = np.histogram2d(a[sel], m[sel], bins=[age_edges, m_edges])
        out.append(h / a.size)
    return PhaseHistogram(age_edges, m_edges, tuple(out))
