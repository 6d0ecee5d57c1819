"""Sample-size re-estimation rules.

A cost-based rule picks, for each interim value ``z1``, the final total sample
size ``n2`` in ``[n_min, n_max]`` maximizing ``CP(z1, n2) - gamma(z1) * n2``.
The constrained promising-zone (CPZ) rule instead maximizes CP subject to a
floor and a ceiling on CP.

All rules are evaluated vectorized over arrays of ``z1``; the scalar helpers
(:func:`optimize_n2`, :func:`jt_rule`, ...) wrap the array code.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy import special

from . import conditional_power as cpw
from .cost_model import Constant, CostSpec, LikelihoodRatio, Roi, Tabulated
from .errors import ValidationError
from .stat_core import DesignParams, norm_quantile


class BoundaryFlag(str, Enum):
    INTERIOR = "interior"
    AT_MIN = "at_min"
    AT_MAX = "at_max"


INTERIOR, AT_MIN, AT_MAX = 0, 1, 2
FLAG_BY_CODE = (BoundaryFlag.INTERIOR, BoundaryFlag.AT_MIN, BoundaryFlag.AT_MAX)
CODE_BY_NAME = {f.value: code for code, f in enumerate(FLAG_BY_CODE)}

SCAN_POINTS = 512
_CHUNK = 8192
_BISECT_ITERS = 64
_GOLDEN_ITERS = 64
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_SNAP = 1e-7


def _as_z(z1):
    z = np.atleast_1d(np.asarray(z1, dtype=float))
    if not np.all(np.isfinite(z)):
        raise ValidationError("z1 must be finite")
    return z


def _objective(z, n, g, design, n_lo):
    # offset by n_lo keeps the penalty term small
    a = design.K * np.sqrt(n - design.n1) - (design.c_crit - design.w1 * z) / design.w2
    return special.ndtr(a) - g * (n - n_lo)


def _mgp(z, n, design):
    root = np.sqrt(n - design.n1)
    a = design.K * root - (design.c_crit - design.w1 * z) / design.w2
    return np.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi) * design.K / (2.0 * root)


def _solve_certified(z, g, design, n_lo, n_hi):
    """MGP is strictly decreasing in n2 here, so the optimum is a boundary or the root of MGP = gamma."""
    n = np.empty_like(z)
    code = np.empty(z.shape, dtype=np.int8)
    at_min = _mgp(z, n_lo, design) <= g
    at_max = ~at_min & (_mgp(z, n_hi, design) >= g)
    inner = ~(at_min | at_max)
    n[at_min], code[at_min] = n_lo, AT_MIN
    n[at_max], code[at_max] = n_hi, AT_MAX
    if inner.any():
        zi, gi = z[inner], g[inner]
        lo = np.full(zi.shape, float(n_lo))
        hi = np.full(zi.shape, float(n_hi))
        for _ in range(_BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            up = _mgp(zi, mid, design) > gi
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        root = 0.5 * (lo + hi)
        # a cost sitting exactly on a boundary's MGP can land a hair inside it
        near_lo, near_hi = root - n_lo < _SNAP, n_hi - root < _SNAP
        n[inner] = np.where(near_lo, n_lo, np.where(near_hi, n_hi, root))
        code[inner] = np.where(near_lo, AT_MIN, np.where(near_hi, AT_MAX, INTERIOR))
    return n, code


def _polish(z, g, x, h, design, n_lo, n_hi):
    """Sharpen golden-section maxima to the root of MGP = gamma when it is bracketed nearby.

    Golden section only resolves the argmax to about sqrt(machine eps) in
    relative terms; quadrature and calibration need the smooth root.
    """
    a = np.maximum(x - h, n_lo)
    b = np.minimum(x + h, n_hi)
    ok = (_mgp(z, a, design) > g) & (_mgp(z, b, design) < g)
    if not ok.any():
        return x
    zs, gs, lo, hi = z[ok], g[ok], a[ok], b[ok]
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        up = _mgp(zs, mid, design) > gs
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    out = x.copy()
    out[ok] = 0.5 * (lo + hi)
    return out


def _solve_scan(z, g, design, n_lo, n_hi):
    """Grid scan of the objective refined by golden section, boundaries cross-checked."""
    n_out = np.empty_like(z)
    grid = np.linspace(n_lo, n_hi, SCAN_POINTS)
    for start in range(0, z.size, _CHUNK):
        zc = z[start:start + _CHUNK]
        gc = g[start:start + _CHUNK]
        obj = _objective(zc[:, None], grid[None, :], gc[:, None], design, n_lo)
        best = np.argmax(obj, axis=1)
        a = grid[np.maximum(best - 1, 0)]
        b = grid[np.minimum(best + 1, SCAN_POINTS - 1)]

        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
        fc = _objective(zc, c, gc, design, n_lo)
        fd = _objective(zc, d, gc, design, n_lo)
        for _ in range(_GOLDEN_ITERS):
            # left: keep [a, d]; right: keep [c, b]
            left = fc >= fd
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            c, d = np.where(left, b - _INVPHI * (b - a), d), np.where(left, c, a + _INVPHI * (b - a))
            fp = _objective(zc, np.where(left, c, d), gc, design, n_lo)
            fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
        golden = _polish(zc, gc, 0.5 * (a + b), grid[1] - grid[0], design, n_lo, n_hi)
        # golden section cannot resolve the last ulps next to a boundary
        golden = np.where(golden - n_lo < _SNAP, n_lo, np.where(n_hi - golden < _SNAP, n_hi, golden))

        cand = np.stack(
            [np.full(zc.shape, float(n_lo)), grid[best], golden, np.full(zc.shape, float(n_hi))], axis=1
        )
        vals = _objective(zc[:, None], cand, gc[:, None], design, n_lo)
        top = vals.max(axis=1, keepdims=True)
        # exact ties resolve to the smallest n2
        n_out[start:start + _CHUNK] = np.where(vals >= top, cand, np.inf).min(axis=1)

    code = np.full(z.shape, INTERIOR, dtype=np.int8)
    code[n_out == n_lo] = AT_MIN
    code[n_out == n_hi] = AT_MAX
    return n_out, code


def optimize_n2_many(z1, gamma, design: DesignParams, n_lo: float | None = None, n_hi: float | None = None):
    """Vectorized pointwise maximizer of ``CP(z1, n2) - gamma * n2`` over ``[n_lo, n_hi]``.

    Args:
        z1: interim values.
        gamma: cost per participant, one per ``z1`` (or broadcastable).
        design: trial design; supplies the default range ``[n_min, n_max]``.

    Returns:
        ``(n2, codes)`` arrays, codes being 0 interior, 1 at_min, 2 at_max.
    """
    n_lo = design.n_min if n_lo is None else n_lo
    n_hi = design.n_max if n_hi is None else n_hi
    z = _as_z(z1)
    g = np.broadcast_to(np.asarray(gamma, dtype=float), z.shape).copy()
    if np.any(np.isnan(g)) or np.any(g <= 0):
        raise ValidationError("cost rate must be positive")

    n = np.empty_like(z)
    code = np.empty(z.shape, dtype=np.int8)
    huge = np.isinf(g)
    n[huge], code[huge] = n_lo, AT_MIN
    if n_lo == n_hi:
        n[:], code[:] = n_lo, AT_MIN
        return n, code

    ok = cpw.certified_mask(z, design, n_lo, n_hi)
    sel = ok & ~huge
    if sel.any():
        n[sel], code[sel] = _solve_certified(z[sel], g[sel], design, n_lo, n_hi)
    sel = ~ok & ~huge
    if sel.any():
        n[sel], code[sel] = _solve_scan(z[sel], g[sel], design, n_lo, n_hi)
    return n, code


def optimize_n2(z1: float, cost: CostSpec, design: DesignParams) -> tuple[float, BoundaryFlag]:
    """Optimal continuous final sample size for one interim value under ``cost``."""
    g = cost.evaluate(z1, design)
    n, code = optimize_n2_many(z1, g, design)
    return float(n[0]), FLAG_BY_CODE[code[0]]


def jt_rule(z1: float, gamma: float, design: DesignParams):
    return optimize_n2(z1, Constant(gamma), design)


def lr_rule(z1: float, lambda1: float, lambda2: float, design: DesignParams):
    return optimize_n2(z1, LikelihoodRatio(lambda1, lambda2), design)


def roi_rule(z1: float, c: float, v: float, pi0: float, pi1: float, design: DesignParams):
    return optimize_n2(z1, Roi(c, v, pi0, pi1), design)


@dataclass(frozen=True)
class CpzParams:
    """Sample-size range and CP floor/ceiling of a constrained promising-zone rule."""

    n_lo: float
    n_hi: float
    cp_floor: float = 0.8
    cp_ceiling: float = 0.9

    def validate(self, design: DesignParams):
        if not design.n1 < self.n_lo <= self.n_hi:
            raise ValidationError("CPZ needs n1 < n_lo <= n_hi")
        if not 0 < self.cp_floor < self.cp_ceiling < 1:
            raise ValidationError("CPZ needs 0 < cp_floor < cp_ceiling < 1")


def cpz_many(z1, cpz: CpzParams, design: DesignParams):
    """Vectorized CPZ rule; same return convention as :func:`optimize_n2_many`."""
    cpz.validate(design)
    z = _as_z(z1)
    offset = (design.c_crit - design.w1 * z) / design.w2
    cp_hi = special.ndtr(design.K * math.sqrt(cpz.n_hi - design.n1) - offset)
    cp_lo = special.ndtr(design.K * math.sqrt(cpz.n_lo - design.n1) - offset)

    n = np.full(z.shape, float(cpz.n_lo))
    code = np.full(z.shape, AT_MIN, dtype=np.int8)
    lower = (cp_hi >= cpz.cp_floor) & (cp_hi <= cpz.cp_ceiling)
    upper = (cp_hi > cpz.cp_ceiling) & (cp_lo < cpz.cp_ceiling)
    n[lower], code[lower] = cpz.n_hi, AT_MAX
    root_m = (norm_quantile(cpz.cp_ceiling) + offset[upper]) / design.K
    n[upper] = design.n1 + root_m * root_m
    code[upper] = INTERIOR
    return n, code


def cpz_rule(z1: float, cpz: CpzParams, design: DesignParams) -> tuple[float, BoundaryFlag]:
    n, code = cpz_many(z1, cpz, design)
    return float(n[0]), FLAG_BY_CODE[code[0]]


class Rule(Protocol):
    """Anything mapping interim values to ``(n2, codes)`` arrays."""

    family: str

    def evaluate(self, z1, design: DesignParams) -> tuple[np.ndarray, np.ndarray]: ...

    def bounds(self, design: DesignParams) -> tuple[float, float]: ...

    def describe(self) -> dict: ...


@dataclass(frozen=True)
class CostRule:
    """Dynamic-cost rule; the family label follows the cost type."""

    cost: CostSpec

    @property
    def family(self):
        return self.cost.family

    def evaluate(self, z1, design):
        return optimize_n2_many(z1, self.cost.evaluate(_as_z(z1), design), design)

    def bounds(self, design):
        return design.n_min, design.n_max

    def describe(self):
        return {"family": self.family, **self.cost.params()}


@dataclass(frozen=True)
class CpzRule:
    params: CpzParams
    family = "cpz"

    def evaluate(self, z1, design):
        return cpz_many(z1, self.params, design)

    def bounds(self, design):
        return self.params.n_lo, self.params.n_hi

    def describe(self):
        p = self.params
        return {"family": "cpz", "n_lo": p.n_lo, "n_hi": p.n_hi, "cp_floor": p.cp_floor, "cp_ceiling": p.cp_ceiling}


@dataclass(frozen=True)
class FixedRule:
    """Always the same final sample size; handy as a closed-form reference."""

    n2: float
    family = "fixed"

    def evaluate(self, z1, design):
        z = _as_z(z1)
        lo, hi = self.bounds(design)
        code = AT_MIN if self.n2 == lo else AT_MAX if self.n2 == hi else INTERIOR
        return np.full(z.shape, float(self.n2)), np.full(z.shape, code, dtype=np.int8)

    def bounds(self, design):
        return min(design.n_min, self.n2), max(design.n_max, self.n2)

    def describe(self):
        return {"family": "fixed", "n2": self.n2}


def jt(gamma: float) -> CostRule:
    return CostRule(Constant(gamma))


def lr(lambda1: float, lambda2: float) -> CostRule:
    return CostRule(LikelihoodRatio(lambda1, lambda2))


def roi(c: float, v: float, pi0: float = 0.5, pi1: float = 0.5) -> CostRule:
    return CostRule(Roi(c, v, pi0, pi1))


def tabulated(z_grid, gamma) -> CostRule:
    return CostRule(Tabulated(z_grid, gamma))


def cpz(n_lo: float, n_hi: float, cp_floor: float = 0.8, cp_ceiling: float = 0.9) -> CpzRule:
    return CpzRule(CpzParams(n_lo, n_hi, cp_floor, cp_ceiling))


def _fmt(x) -> str:
    return f"{x:.10g}"


def round_half_up(n2):
    return np.floor(np.asarray(n2, dtype=float) + 0.5).astype(np.int64)


@dataclass(frozen=True, eq=False)
class RuleCurve:
    """A rule tabulated on an increasing grid of interim values.

    ``n2_values`` are continuous; :attr:`n2_integer` rounds half up.
    ``flags`` holds integer codes (see :data:`FLAG_BY_CODE`).
    """

    z_grid: np.ndarray
    n2_values: np.ndarray
    flags: np.ndarray
    design: DesignParams
    provenance: dict = field(default_factory=dict)
    n_lo: float | None = None
    n_hi: float | None = None

    def __post_init__(self):
        z = np.asarray(self.z_grid, dtype=float)
        n = np.asarray(self.n2_values, dtype=float)
        f = np.asarray(self.flags, dtype=np.int8)
        if z.ndim != 1 or z.shape != n.shape or z.shape != f.shape:
            raise ValidationError("z grid, n2 values and flags must be equal-length vectors")
        if np.any(np.diff(z) <= 0):
            raise ValidationError("z grid must be strictly increasing")
        lo = self.design.n_min if self.n_lo is None else self.n_lo
        hi = self.design.n_max if self.n_hi is None else self.n_hi
        tol = 1e-9 * hi
        if np.any(n < lo - tol) or np.any(n > hi + tol):
            raise ValidationError(f"n2 values must lie in [{lo:g}, {hi:g}]")
        if np.any((f == AT_MIN) != (np.abs(n - lo) <= tol)) or np.any((f == AT_MAX) != (np.abs(n - hi) <= tol)):
            raise ValidationError("boundary flags disagree with n2 values")
        object.__setattr__(self, "z_grid", z)
        object.__setattr__(self, "n2_values", n)
        object.__setattr__(self, "flags", f)
        object.__setattr__(self, "n_lo", float(lo))
        object.__setattr__(self, "n_hi", float(hi))

    def __len__(self):
        return self.z_grid.size

    @property
    def n2_integer(self) -> np.ndarray:
        return round_half_up(self.n2_values)

    @property
    def boundary_flags(self) -> list[BoundaryFlag]:
        return [FLAG_BY_CODE[c] for c in self.flags]

    def rows(self):
        for z, n, ni, f in zip(self.z_grid, self.n2_values, self.n2_integer, self.flags):
            yield _fmt(z), _fmt(n), str(int(ni)), FLAG_BY_CODE[f].value

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["z1", "n2_continuous", "n2_integer", "boundary_flag"])
            w.writerows(self.rows())

    @classmethod
    def from_csv(cls, path, design: DesignParams, n_lo=None, n_hi=None) -> "RuleCurve":
        """Load a curve; ``boundary_flag`` is optional and inferred from n2 when absent."""
        z, n, flags = [], [], []
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or "z1" not in reader.fieldnames:
                raise ValidationError(f"{path}: header must include z1 and n2_continuous (or n2)")
            key = "n2_continuous" if "n2_continuous" in reader.fieldnames else "n2"
            if key not in reader.fieldnames:
                raise ValidationError(f"{path}: missing n2_continuous column")
            for lineno, row in enumerate(reader, start=2):
                try:
                    z.append(float(row["z1"]))
                    n.append(float(row[key]))
                except (TypeError, ValueError):
                    raise ValidationError(f"{path}:{lineno}: non-numeric value") from None
                flags.append(row.get("boundary_flag"))
        lo = design.n_min if n_lo is None else n_lo
        hi = design.n_max if n_hi is None else n_hi
        n_arr = np.asarray(n)
        if np.any(n_arr < lo) or np.any(n_arr > hi):
            raise ValidationError(f"{path}: n2 values outside [{lo:g}, {hi:g}]")
        if all(flags):
            try:
                codes = np.array([CODE_BY_NAME[f] for f in flags], dtype=np.int8)
            except KeyError as exc:
                raise ValidationError(f"{path}: unknown boundary flag {exc.args[0]!r}") from None
        else:
            codes = _infer_codes(n_arr, lo, hi)
        return cls(np.asarray(z), n_arr, codes, design, {"family": "external", "source": str(path)}, lo, hi)


def _infer_codes(n, lo, hi):
    code = np.full(n.shape, INTERIOR, dtype=np.int8)
    code[n == lo] = AT_MIN
    code[n == hi] = AT_MAX
    return code


@dataclass(frozen=True)
class CurveRule:
    """A tabulated curve used as a rule: linear interpolation of the continuous n2 column."""

    curve: RuleCurve
    family = "curve"

    def evaluate(self, z1, design):
        z = _as_z(z1)
        c = self.curve
        n = np.interp(z, c.z_grid, c.n2_values)
        code = np.full(z.shape, INTERIOR, dtype=np.int8)
        tol = 1e-9 * c.n_hi
        code[n <= c.n_lo + tol] = AT_MIN
        code[n >= c.n_hi - tol] = AT_MAX
        n = np.where(code == AT_MIN, c.n_lo, np.where(code == AT_MAX, c.n_hi, n))
        return n, code

    def bounds(self, design):
        return self.curve.n_lo, self.curve.n_hi

    def describe(self):
        return {"family": "curve", **self.curve.provenance}


def as_rule(rule) -> Rule:
    return CurveRule(rule) if isinstance(rule, RuleCurve) else rule


def default_z_range(design: DesignParams) -> tuple[float, float]:
    return -1.0, design.drift + 5.0


def tabulate_rule(rule: Rule, design: DesignParams, z_lo: float | None = None, z_hi: float | None = None,
                  n_points: int = 501) -> RuleCurve:
    """Evaluate ``rule`` on a uniform grid; defaults to ``[-1, drift + 5]`` with 501 points."""
    d_lo, d_hi = default_z_range(design)
    z_lo = d_lo if z_lo is None else z_lo
    z_hi = d_hi if z_hi is None else z_hi
    if not z_lo < z_hi:
        raise ValidationError("need z_lo < z_hi")
    if n_points < 2:
        raise ValidationError("need at least two grid points")
    z = np.linspace(z_lo, z_hi, int(n_points))
    n, code = rule.evaluate(z, design)
    lo, hi = rule.bounds(design)
    return RuleCurve(z, n, code, design, rule.describe(), lo, hi)
