"""Model specifications: the function families, the ModelSpec container,
assumption checks and JSON (de)serialization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DomainError, NonFiniteEvaluation, ParseError

FAMILIES = ("Constant", "Linear", "PowerLaw", "HillRate", "PiecewiseLinear", "ShiftedTable")

_REQUIRED = {
    "Constant": ("c",),
    "Linear": ("a", "b"),
    "PowerLaw": ("a", "p", "b"),
    "HillRate": ("a", "p", "K"),
    "PiecewiseLinear": ("knots",),
    "ShiftedTable": ("x", "y"),
}
_OPTIONAL = {
    "PowerLaw": {"shift": 0.0},
    "HillRate": {"shift": 0.0},
    "ShiftedTable": {"shift": 0.0},
}


def _freeze(value):
    if isinstance(value, (list, tuple, np.ndarray)):
        return tuple(_freeze(v) for v in value)
    return float(value)


def _thaw(value):
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    return value


@dataclass(frozen=True)
class ScalarFn:
    """A real function of maturity drawn from a closed set of families.

    ``PiecewiseLinear`` accepts a repeated abscissa to encode a jump; the
    function is left-continuous there and ``right_limit`` gives the other
    side.  ``ShiftedTable`` evaluates ``interp(m - shift, x, y)`` and is
    clamped to the end values outside the table.
    """

    family: str
    params: dict = field(default_factory=dict)
    _arrays: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; allowed: {', '.join(FAMILIES)}")
        missing = [k for k in _REQUIRED[self.family] if k not in self.params]
        if missing:
            raise ValueError(f"{self.family} requires parameter(s): {', '.join(missing)}")
        allowed = set(_REQUIRED[self.family]) | set(_OPTIONAL.get(self.family, {}))
        extra = sorted(set(self.params) - allowed)
        if extra:
            raise ValueError(f"{self.family} does not take parameter(s): {', '.join(extra)}")
        params = dict(_OPTIONAL.get(self.family, {}))
        params.update({k: _freeze(v) for k, v in self.params.items()})
        object.__setattr__(self, "params", params)
        self._check_params()

    def _check_params(self):
        p = self.params
        if self.family in ("PowerLaw", "HillRate") and p["p"] <= 0:
            raise ValueError(f"{self.family}: exponent p must be positive")
        if self.family == "HillRate" and p["K"] <= 0:
            raise ValueError("HillRate: K must be positive")
        if self.family == "PiecewiseLinear":
            knots = np.asarray(p["knots"], dtype=float)
            if knots.ndim != 2 or knots.shape[1] != 2 or len(knots) < 2:
                raise ValueError("PiecewiseLinear: knots must be a list of at least two [x, y] pairs")
            xs, ys = knots[:, 0], knots[:, 1]
            dx = np.diff(xs)
            if np.any(dx < 0):
                raise ValueError("PiecewiseLinear: knot abscissae must be nondecreasing")
            if np.any((dx[:-1] == 0) & (dx[1:] == 0)):
                raise ValueError("PiecewiseLinear: at most two knots may share an abscissa")
            if dx[0] == 0 or dx[-1] == 0:
                raise ValueError("PiecewiseLinear: first and last segments cannot be jumps")
            object.__setattr__(self, "_arrays", (xs, ys))
        if self.family == "ShiftedTable":
            xs = np.asarray(p["x"], dtype=float)
            ys = np.asarray(p["y"], dtype=float)
            if xs.ndim != 1 or xs.shape != ys.shape or len(xs) < 2:
                raise ValueError("ShiftedTable: x and y must be equal-length lists (>= 2 points)")
            if np.any(np.diff(xs) <= 0):
                raise ValueError("ShiftedTable: knots must be strictly increasing")
            object.__setattr__(self, "_arrays", (xs, ys))

    def __hash__(self):
        return hash((self.family, tuple(sorted(self.params.items()))))

    # -- evaluation -------------------------------------------------------

    def __call__(self, m):
        return self._eval(m, side="left")

    def right_limit(self, m):
        """Value approached from the right; differs from ``self(m)`` only at jumps."""
        return self._eval(m, side="right")

    def _segment(self, m, side):
        xs, _ = self._arrays
        s = np.searchsorted(xs, m, side=side) - 1
        return np.clip(s, 0, len(xs) - 2)

    def _eval(self, m, side):
        m = np.asarray(m, dtype=float)
        p = self.params
        fam = self.family
        if fam == "Constant":
            out = np.full_like(m, p["c"])
        elif fam == "Linear":
            out = p["a"] * m + p["b"]
        elif fam == "PowerLaw":
            x = np.maximum(m - p["shift"], 0.0)
            out = p["a"] * x ** p["p"] + p["b"]
        elif fam == "HillRate":
            x = np.maximum(m - p["shift"], 0.0)
            xp = x ** p["p"]
            out = p["a"] * xp / (p["K"] + xp)
        elif fam == "PiecewiseLinear":
            xs, ys = self._arrays
            s = self._segment(m, side)
            x0, x1, y0, y1 = xs[s], xs[s + 1], ys[s], ys[s + 1]
            out = y0 + (y1 - y0) / (x1 - x0) * (m - x0)
        else:
            xs, ys = self._arrays
            out = np.interp(m - p["shift"], xs, ys)
        return out if out.ndim else float(out)

    def derivative(self, m, side="right"):
        """Analytic derivative; one-sided (``side``) at knots of piecewise families."""
        m = np.asarray(m, dtype=float)
        p = self.params
        fam = self.family
        if fam == "Constant":
            out = np.zeros_like(m)
        elif fam == "Linear":
            out = np.full_like(m, p["a"])
        elif fam in ("PowerLaw", "HillRate"):
            x = m - p["shift"]
            xs = np.where(x > 0, x, 1.0)
            if fam == "PowerLaw":
                d = p["a"] * p["p"] * xs ** (p["p"] - 1.0)
                slope0 = p["a"]
            else:
                xp = xs ** p["p"]
                d = p["a"] * p["p"] * p["K"] * xs ** (p["p"] - 1.0) / (p["K"] + xp) ** 2
                slope0 = p["a"] / p["K"]
            # right derivative at the shift point
            at0 = 0.0 if p["p"] > 1 else (slope0 if p["p"] == 1 else np.inf)
            out = np.where(x > 0, d, 0.0)
            if side == "right":
                out = np.where(x == 0, at0, out)
        elif fam == "PiecewiseLinear":
            xs, ys = self._arrays
            s = self._segment(m, "right" if side == "right" else "left")
            out = (ys[s + 1] - ys[s]) / (xs[s + 1] - xs[s])
        else:
            xs, ys = self._arrays
            u = m - p["shift"]
            s = np.clip(np.searchsorted(xs, u, side="right" if side == "right" else "left") - 1, 0, len(xs) - 2)
            slope = (ys[s + 1] - ys[s]) / (xs[s + 1] - xs[s])
            if side == "right":
                outside = (u < xs[0]) | (u >= xs[-1])
            else:
                outside = (u <= xs[0]) | (u > xs[-1])
            out = np.where(outside, 0.0, slope)
        out = np.asarray(out, dtype=float)
        return out if out.ndim else float(out)

    def knots(self):
        """Points where the function or its derivative may be discontinuous."""
        p = self.params
        if self.family == "PiecewiseLinear":
            return sorted(set(self._arrays[0].tolist()))
        if self.family == "ShiftedTable":
            return (self._arrays[0] + p["shift"]).tolist()
        if self.family in ("PowerLaw", "HillRate") and p["shift"] != 0:
            return [p["shift"]]
        return []

    def inverse(self, y, lo, hi, tol=1e-13):
        """Inverse of an increasing function on [lo, hi] (hi is expanded if needed)."""
        y = np.asarray(y, dtype=float)
        if self.family == "Linear" and self.params["a"] > 0:
            out = (y - self.params["b"]) / self.params["a"]
            return out if out.ndim else float(out)
        ymax = np.max(y) if y.size else 0.0
        for _ in range(60):
            if self(hi) >= ymax:
                break
            hi = lo + 2.0 * (hi - lo)
        a = np.full(y.shape, float(lo))
        b = np.full(y.shape, float(hi))
        x = 0.5 * (a + b)
        for _ in range(200):
            fx = self(x) - y
            a = np.where(fx < 0, x, a)
            b = np.where(fx >= 0, x, b)
            d = self.derivative(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                xn = x - fx / d
            bad = ~np.isfinite(xn) | (xn <= a) | (xn >= b)
            xn = np.where(bad, 0.5 * (a + b), xn)
            if np.all(np.abs(xn - x) <= tol * np.maximum(1.0, np.abs(x))):
                x = xn
                break
            x = xn
        return x if x.ndim else float(x)

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        return {"family": self.family, "params": {k: _thaw(v) for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, d, where="function"):
        if not isinstance(d, dict) or "family" not in d:
            raise ParseError(f"{where}: expected an object with keys 'family' and 'params'")
        fam = d["family"]
        if fam not in FAMILIES:
            raise ParseError(f"{where}: unknown family {fam!r}; allowed families: {', '.join(FAMILIES)}")
        try:
            return cls(fam, dict(d.get("params", {})))
        except (ValueError, TypeError) as exc:
            raise ParseError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class ModelSpec:
    """The five model ingredients plus numerical domain settings.

    ``phi_bounded`` and ``phi_tail_positive`` are declarations made by the
    user (phi bounded above; phi >= eps > 0 for large m).  They are never
    inferred from the functions.
    """

    g1: ScalarFn
    g2: ScalarFn
    phi: ScalarFn
    h: ScalarFn
    tau: float
    mP: float
    mMax: float
    name: str = ""
    phi_bounded: Optional[bool] = None
    phi_tail_positive: Optional[bool] = None
    q_threshold: float = 50.0

    def __post_init__(self):
        for key in ("tau", "mP", "mMax", "q_threshold"):
            object.__setattr__(self, key, float(getattr(self, key)))

    def to_dict(self):
        d = {
            "name": self.name,
            "g1": self.g1.to_dict(),
            "g2": self.g2.to_dict(),
            "phi": self.phi.to_dict(),
            "h": self.h.to_dict(),
            "tau": self.tau,
            "mP": self.mP,
            "mMax": self.mMax,
            "q_threshold": self.q_threshold,
        }
        flags = {}
        if self.phi_bounded is not None:
            flags["phi_bounded"] = self.phi_bounded
        if self.phi_tail_positive is not None:
            flags["phi_tail_positive"] = self.phi_tail_positive
        if flags:
            d["flags"] = flags
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ParseError("model: top level must be a JSON object")
        missing = [k for k in ("g1", "g2", "phi", "h", "tau", "mP", "mMax") if k not in d]
        if missing:
            raise ParseError(f"model: missing required key(s): {', '.join(missing)}")
        fns = {k: ScalarFn.from_dict(d[k], where=k) for k in ("g1", "g2", "phi", "h")}
        nums = {}
        for k in ("tau", "mP", "mMax", "q_threshold"):
            if k not in d:
                continue
            try:
                nums[k] = float(d[k])
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{k}: expected a number, got {d[k]!r}") from exc
            if not math.isfinite(nums[k]):
                raise ParseError(f"{k}: must be finite")
        if nums["tau"] <= 0:
            raise ParseError("tau: must be positive")
        if nums["mP"] < 0:
            raise ParseError("mP: must be nonnegative")
        if nums["mMax"] <= 0:
            raise ParseError("mMax: must be positive")
        flags = d.get("flags", {}) or {}
        unknown = sorted(set(flags) - {"phi_bounded", "phi_tail_positive"})
        if unknown:
            raise ParseError(f"flags: unknown flag(s) {', '.join(unknown)}")
        return cls(
            name=str(d.get("name", "")),
            phi_bounded=flags.get("phi_bounded"),
            phi_tail_positive=flags.get("phi_tail_positive"),
            **fns,
            **nums,
        )


def load_spec(path) -> ModelSpec:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        return ModelSpec.from_dict(data)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_spec(spec: ModelSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")


def test_model(mMax=32.0) -> ModelSpec:
    """g1 = g2 = 1, tau = 1, h(m) = m - 3, mP = 2, phi = 1 on (2, inf).

    Its generational operator has the invariant density beta*exp(-beta*m)
    with 1 - beta = exp(-2*beta).
    """
    one = ScalarFn("Constant", {"c": 1.0})
    return ModelSpec(
        name="test-model",
        g1=one,
        g2=one,
        phi=ScalarFn("PiecewiseLinear", {"knots": [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [3.0, 1.0]]}),
        h=ScalarFn("Linear", {"a": 1.0, "b": -3.0}),
        tau=1.0,
        mP=2.0,
        mMax=mMax,
        phi_bounded=True,
        phi_tail_positive=True,
        q_threshold=25.0,
    )


test_model.__test__ = False  # not a pytest test


# -- validation -----------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    witness: Optional[float] = None
    detail: str = ""
    required: bool = True

    def to_dict(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "witness": self.witness,
            "detail": self.detail,
            "required": self.required,
        }


@dataclass
class ValidationReport:
    checks: list

    @property
    def accepted(self) -> bool:
        return all(c.passed for c in self.checks if c.required)

    @property
    def failed(self):
        return [c for c in self.checks if not c.passed]

    @property
    def blocking(self):
        """Failed checks that prevent acceptance."""
        return [c for c in self.checks if c.required and not c.passed]

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"accepted": self.accepted, "checks": [c.to_dict() for c in self.checks]}


def _first(mask, grid):
    idx = np.flatnonzero(mask)
    return float(grid[idx[0]]) if idx.size else None


def validate(spec: ModelSpec, n_grid: int = 10_000, tol: float = 1e-9) -> ValidationReport:
    """Check the model assumptions on a uniform grid over [0, mMax].

    EA1 and EA2 only concern the continuous-time model, so they are
    reported with ``required=False`` and do not block acceptance.
    """
    from .flows import Cumulative, FlowSolver  # flows depends on this module

    if spec.mMax <= spec.mP:
        raise DomainError(f"mMax={spec.mMax} must exceed mP={spec.mP}")
    grid = np.linspace(0.0, spec.mMax, n_grid + 1)
    upper = grid[grid > spec.mP]
    vals = {}
    for key in ("g1", "g2", "phi", "h"):
        fn = getattr(spec, key)
        v = np.asarray(fn(grid), dtype=float)
        d = np.asarray(fn.derivative(grid), dtype=float)
        bad = ~np.isfinite(v)
        if key == "h":
            bad |= ~np.isfinite(d) & (grid > spec.mP)
        if bad.any():
            raise NonFiniteEvaluation(f"{key} is not finite at m={_first(bad, grid)}")
        vals[key] = v

    checks = []
    phi = vals["phi"]
    low = grid <= spec.mP
    bad = (low & (phi != 0)) | (~low & (phi <= 0))
    checks.append(Check("M1", not bad.any(), _first(bad, grid),
                        "phi = 0 on [0, mP] and phi > 0 on (mP, mMax]"))

    hp = spec.h.derivative(upper)
    bad = hp <= 0
    checks.append(Check("M2", not bad.any(), _first(bad, upper), "h' > 0 on [mP, mMax]"))

    bad1 = vals["g1"] <= 0
    bad2 = (vals["g2"] <= 0) & (grid >= spec.mP)
    ok3 = not (bad1.any() or bad2.any())
    witness = _first(bad1, grid) if bad1.any() else _first(bad2, grid)
    checks.append(Check("M3", ok3, witness, "g1 > 0 on [0, mMax] and g2 > 0 on [mP, mMax]"))

    if not bad1.any():
        hazard = Cumulative(lambda r: spec.phi(r) / spec.g1(r), 0.0, spec.mMax,
                            breaks=spec.phi.knots() + spec.g1.knots() + [spec.mP], tol=1e-8)
        qmax = float(hazard(spec.mMax))
        checks.append(Check("M4", qmax >= spec.q_threshold, None if qmax >= spec.q_threshold else spec.mMax,
                            f"Q(mMax) = {qmax:.6g} vs threshold {spec.q_threshold:g}"))
    else:
        checks.append(Check("M4", False, None, "not evaluable: g1 must be positive (M3)"))

    blocker = "g2 must be positive (M3)" if bad2.any() else ("h must be increasing (M2)" if not checks[1].passed else None)
    if blocker:
        for name, req in (("consistency", True), ("EA1", False), ("EA2", False)):
            checks.append(Check(name, False, None, f"not evaluable: {blocker}", required=req))
        return ValidationReport(checks)

    flows = FlowSolver(spec)
    end = flows.flow(2, spec.tau, spec.mP)
    h_end = float(spec.h(end))
    checks.append(Check("consistency", abs(h_end) <= tol, None if abs(h_end) <= tol else spec.mP,
                        f"h(pi2(tau, mP)) = {h_end:.3e}"))

    pi2 = flows.flow(2, spec.tau, upper)
    psi = spec.h(pi2)
    bad = psi >= upper
    checks.append(Check("EA1", not bad.any(), _first(bad, upper), "psi(m) < m on (mP, mMax]", required=False))

    g1, g2 = spec.g1, spec.g2
    ea2 = spec.h.derivative(pi2) * g2(pi2) * g1(upper) - g1(psi) * g2(upper)
    scale = np.abs(spec.h.derivative(pi2) * g2(pi2) * g1(upper)) + np.abs(g1(psi) * g2(upper))
    nz = np.abs(ea2) > 1e-9 * np.maximum(scale, 1e-300)
    checks.append(Check("EA2", bool(nz.any()), _first(nz, upper) if nz.any() else None,
                        "h'(pi2(tau,m)) g2(pi2(tau,m)) g1(m) != g1(psi(m)) g2(m) somewhere"
                        + ("" if nz.any() else " (fails: synchronous growth)"), required=False))
    return ValidationReport(checks)
