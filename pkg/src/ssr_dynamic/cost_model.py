"""Per-participant cost functions gamma(z1), in units of conditional power.

Four families: a constant cost, the likelihood-ratio cost
``lambda2 + lambda1 * f0/f_alt``, the return-on-investment cost
``(c/v) * (1 + (pi0/pi1) * f0/f_alt)`` and a tabulated cost read from data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ValidationError
from .stat_core import DesignParams, _out, likelihood_ratio


def _finite(name, value, allow_inf=False):
    if not isinstance(value, (int, float)) or math.isnan(value):
        raise ValidationError(f"{name} must be a number")
    if not allow_inf and not math.isfinite(value):
        raise ValidationError(f"{name} must be finite")


@dataclass(frozen=True)
class Constant:
    gamma: float

    def __post_init__(self):
        _finite("gamma", self.gamma, allow_inf=True)
        if not self.gamma > 0:
            raise ValidationError("constant cost gamma must be positive")

    family = "jt"

    def evaluate(self, z1, design):
        z = np.asarray(z1, dtype=float)
        return _out(np.full(z.shape, float(self.gamma)), z1)

    def params(self):
        return {"gamma": self.gamma}


@dataclass(frozen=True)
class LikelihoodRatio:
    lambda1: float
    lambda2: float

    def __post_init__(self):
        _finite("lambda1", self.lambda1)
        _finite("lambda2", self.lambda2)
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValidationError("lambda1 and lambda2 must be non-negative")
        if self.lambda1 == 0 and self.lambda2 == 0:
            raise ValidationError("lambda1 and lambda2 cannot both be zero")

    family = "lr"

    def evaluate(self, z1, design):
        return self.lambda2 + self.lambda1 * likelihood_ratio(z1, design)

    def params(self):
        return {"lambda1": self.lambda1, "lambda2": self.lambda2}


@dataclass(frozen=True)
class Roi:
    c: float
    v: float
    pi0: float = 0.5
    pi1: float = 0.5

    def __post_init__(self):
        for name in ("c", "v", "pi0", "pi1"):
            _finite(name, getattr(self, name))
        if self.c <= 0 or self.v <= 0:
            raise ValidationError("c and v must be positive")
        if self.pi0 <= 0 or self.pi1 <= 0 or abs(self.pi0 + self.pi1 - 1.0) > 1e-12:
            raise ValidationError("pi0 and pi1 must be positive and sum to 1")

    family = "roi"

    def evaluate(self, z1, design):
        return (self.c / self.v) * (1.0 + (self.pi0 / self.pi1) * likelihood_ratio(z1, design))

    def params(self):
        return {"c": self.c, "v": self.v, "pi0": self.pi0, "pi1": self.pi1}


@dataclass(frozen=True)
class Tabulated:
    """Cost known on a grid, interpolated linearly in ``log gamma``.

    Queries up to one grid spacing beyond either end are clamped to the end
    value; anything further out raises.
    """

    z_grid: tuple
    gamma: tuple

    def __post_init__(self):
        z = np.asarray(self.z_grid, dtype=float)
        g = np.asarray(self.gamma, dtype=float)
        if z.ndim != 1 or z.shape != g.shape or z.size < 2:
            raise ValidationError("tabulated cost needs matching grids of at least two points")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(g))):
            raise ValidationError("tabulated cost values must be finite")
        if np.any(np.diff(z) <= 0):
            raise ValidationError("tabulated z grid must be strictly increasing")
        if np.any(g <= 0):
            raise ValidationError("tabulated gamma values must be positive")
        object.__setattr__(self, "z_grid", tuple(float(v) for v in z))
        object.__setattr__(self, "gamma", tuple(float(v) for v in g))

    family = "tabulated"

    def evaluate(self, z1, design=None):
        z = np.asarray(z1, dtype=float)
        grid = np.asarray(self.z_grid)
        lo_gap = grid[1] - grid[0]
        hi_gap = grid[-1] - grid[-2]
        if np.any(z < grid[0] - lo_gap) or np.any(z > grid[-1] + hi_gap):
            raise ValidationError(
                f"tabulated cost queried outside [{grid[0]:.6g}, {grid[-1]:.6g}] by more than one grid spacing"
            )
        log_g = np.interp(z, grid, np.log(np.asarray(self.gamma)))
        return _out(np.exp(log_g), z1)

    def params(self):
        return {"n_points": len(self.z_grid), "z_lo": self.z_grid[0], "z_hi": self.z_grid[-1]}

    @classmethod
    def from_csv(cls, path) -> "Tabulated":
        """Read a two-column ``z1,gamma`` CSV with a header row."""
        rows = []
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or len(header) < 2:
                raise ValidationError(f"{path}: expected a header row with columns z1,gamma")
            try:
                float(header[0])
            except ValueError:
                pass
            else:
                raise ValidationError(f"{path}: header row required")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except (ValueError, IndexError):
                    raise ValidationError(f"{path}:{lineno}: expected two numeric columns") from None
        if not rows:
            raise ValidationError(f"{path}: no data rows")
        z, g = zip(*rows)
        return cls(z, g)


CostSpec = Union[Constant, LikelihoodRatio, Roi, Tabulated]


def gamma_eval(cost: CostSpec, z1, design: DesignParams):
    """Cost rate of one more participant after observing ``z1``."""
    return cost.evaluate(z1, design)


def posterior_effective(z1, pi0: float, pi1: float, design: DesignParams):
    """Posterior probability of the alternative under a two-point prior."""
    if pi0 <= 0 or pi1 <= 0 or abs(pi0 + pi1 - 1.0) > 1e-12:
        raise ValidationError("pi0 and pi1 must be positive and sum to 1")
    return 1.0 / (1.0 + (pi0 / pi1) * likelihood_ratio(z1, design))
