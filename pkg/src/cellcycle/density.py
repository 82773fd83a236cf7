"""Densities on a uniform maturity grid with escaped-mass bookkeeping."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


def trapezoid_weights(n, dm):
    w = np.full(n + 1, dm)
    w[0] = w[-1] = 0.5 * dm
    return w


@dataclass(frozen=True)
class GridDensity:
    """Values of a density at m_k = k * mMax / N, k = 0..N.

    Mass leaving [0, mMax] is kept in ``escaped_mass`` so that
    ``mass + escaped_mass`` stays equal to the starting mass.
    """

    m_max: float
    values: np.ndarray
    escaped_mass: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("values must be a 1-D array with at least two points")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "m_max", float(self.m_max))
        object.__setattr__(self, "escaped_mass", float(self.escaped_mass))

    @property
    def n(self):
        return self.values.size - 1

    @property
    def dm(self):
        return self.m_max / self.n

    @property
    def grid(self):
        return np.linspace(0.0, self.m_max, self.n + 1)

    @property
    def weights(self):
        return trapezoid_weights(self.n, self.dm)

    @property
    def mass(self):
        return float(self.weights @ self.values)

    def normalized(self):
        return replace(self, values=self.values / self.mass, escaped_mass=0.0)

    def __call__(self, m):
        """Linear interpolation; zero outside [0, mMax]."""
        return np.interp(m, self.grid, self.values, left=0.0, right=0.0)

    def l1_distance(self, other) -> float:
        if isinstance(other, GridDensity):
            other = other.values
        elif callable(other):
            other = other(self.grid)
        return float(self.weights @ np.abs(self.values - other))

    def mass_on(self, a, b) -> float:
        """Trapezoid mass on grid points inside [a, b]."""
        g = self.grid
        inside = (g >= a - 1e-12) & (g <= b + 1e-12)
        idx = np.flatnonzero(inside)
        if idx.size < 2:
            return 0.0
        v = self.values[idx]
        return float(self.dm * (v.sum() - 0.5 * (v[0] + v[-1])))

    # -- constructors ----------------------------------------------------

    @classmethod
    def from_function(cls, f, m_max, n=2048, normalize=True):
        g = np.linspace(0.0, m_max, n + 1)
        d = cls(m_max, np.asarray(f(g), dtype=float) * np.ones_like(g))
        return d.normalized() if normalize else d

    @classmethod
    def uniform(cls, a, b, m_max, n=2048):
        """Normalized indicator of [a, b] (as resolved by the grid)."""
        g = np.linspace(0.0, m_max, n + 1)
        v = ((g >= a - 1e-12) & (g <= b + 1e-12)).astype(float)
        return cls(m_max, v).normalized()

    @classmethod
    def point_mass(cls, m_max, n=2048, index=0):
        """Unit mass concentrated on one grid node."""
        v = np.zeros(n + 1)
        w = trapezoid_weights(n, m_max / n)
        v[index] = 1.0 / w[index]
        return cls(m_max, v)

    # -- export -------------------------------------------------------------

    def to_csv(self, path, extra=None):
        """Two-column CSV (m, value) plus a JSON sidecar with escaped mass and grid size."""
        path = Path(path)
        data = np.column_stack([self.grid, self.values])
        np.savetxt(path, data, delimiter=",", header="m,value", comments="", fmt="%.17g")
        meta = {"escaped_mass": self.escaped_mass, "grid_n": self.n, "mMax": self.m_max}
        if extra:
            meta.update(extra)
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        return path, sidecar

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        return cls(float(meta["mMax"]), data[:, 1], float(meta.get("escaped_mass", 0.0)))
