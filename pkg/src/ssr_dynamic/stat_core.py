"""Standard-normal primitives and the distribution of the interim statistic.

Everything here accepts scalars or numpy arrays. Scalars in give Python
floats out.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ValidationError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# exp() overflows just above this
_MAX_LOG = 709.0

NULL = "null"
ALTERNATIVE = "alternative"


def _as_finite(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    return arr


def _out(arr, like):
    if np.ndim(like) == 0:
        return float(arr)
    return arr


def norm_pdf(x):
    """Standard normal density."""
    arr = _as_finite(x)
    return _out(_INV_SQRT_2PI * np.exp(-0.5 * arr * arr), x)


def norm_cdf(x):
    """Standard normal distribution function."""
    arr = _as_finite(x)
    return _out(special.ndtr(arr), x)


def norm_quantile(p):
    """Inverse of :func:`norm_cdf` on the open unit interval."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise ValidationError("p must lie strictly between 0 and 1")
    x = special.ndtri(arr)
    # one Newton polish step
    x = x - (special.ndtr(x) - arr) / (_INV_SQRT_2PI * np.exp(-0.5 * x * x))
    return _out(x, p)


@dataclass(frozen=True)
class DesignParams:
    """Two-stage trial geometry with 1:1 allocation and known variance.

    Sample sizes are totals over both arms. When the combination weights are
    omitted they are frozen at ``w1 = sqrt(n1 / n_min)``,
    ``w2 = sqrt(1 - n1 / n_min)``.

    Derived attributes:
        K: ``theta_alt / (2 sigma)``, the drift per root participant.
        drift: mean of the interim statistic under the alternative, ``K sqrt(n1)``.
        c_crit: one-sided critical value ``Phi^-1(1 - alpha)``.
    """

    sigma: float
    theta_alt: float
    n1: float
    n_min: float
    n_max: float
    alpha: float = 0.025
    w1: float | None = None
    w2: float | None = None
    K: float = field(init=False, repr=False)
    drift: float = field(init=False, repr=False)
    c_crit: float = field(init=False, repr=False)

    def __post_init__(self):
        vals = (self.sigma, self.theta_alt, self.n1, self.n_min, self.n_max, self.alpha)
        if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals):
            raise ValidationError("design parameters must be finite numbers")
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        if self.theta_alt <= 0:
            raise ValidationError("theta_alt must be positive")
        if not 0 < self.n1 < self.n_min <= self.n_max:
            raise ValidationError("need 0 < n1 < n_min <= n_max")
        if not 0 < self.alpha < 0.5:
            raise ValidationError("alpha must lie in (0, 0.5)")

        w1, w2 = self.w1, self.w2
        if w1 is None and w2 is None:
            frac = self.n1 / self.n_min
            w1, w2 = math.sqrt(frac), math.sqrt(1.0 - frac)
        elif w1 is None or w2 is None:
            raise ValidationError("give both combination weights or neither")
        if w1 <= 0 or w2 <= 0 or abs(w1 * w1 + w2 * w2 - 1.0) > 1e-12:
            raise ValidationError("weights must be positive with w1^2 + w2^2 = 1")

        K = self.theta_alt / (2.0 * self.sigma)
        object.__setattr__(self, "w1", float(w1))
        object.__setattr__(self, "w2", float(w2))
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "drift", K * math.sqrt(self.n1))
        object.__setattr__(self, "c_crit", norm_quantile(1.0 - self.alpha))

    def replace(self, **changes) -> "DesignParams":
        """Copy with some fields changed; weights are re-derived unless given."""
        kw = {
            "sigma": self.sigma,
            "theta_alt": self.theta_alt,
            "n1": self.n1,
            "n_min": self.n_min,
            "n_max": self.n_max,
            "alpha": self.alpha,
        }
        kw.update(changes)
        return DesignParams(**kw)

    def as_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "theta_alt": self.theta_alt,
            "n1": self.n1,
            "n_min": self.n_min,
            "n_max": self.n_max,
            "alpha": self.alpha,
            "w1": self.w1,
            "w2": self.w2,
        }


def interim_density(z1, hypothesis: str, design: DesignParams):
    """Density of the interim statistic: N(0, 1) under the null, N(drift, 1) otherwise."""
    z = _as_finite(z1, "z1")
    if hypothesis == NULL:
        return norm_pdf(_out(z, z1))
    if hypothesis == ALTERNATIVE:
        return norm_pdf(_out(z - design.drift, z1))
    raise ValidationError(f"hypothesis must be {NULL!r} or {ALTERNATIVE!r}")


def log_likelihood_ratio(z1, design: DesignParams):
    """``log f0(z1) - log f_alt(z1) = -z1 * drift + drift^2 / 2``."""
    z = _as_finite(z1, "z1")
    d = design.drift
    return _out(-z * d + 0.5 * d * d, z1)


def likelihood_ratio(z1, design: DesignParams):
    """Null-to-alternative density ratio at ``z1``.

    Computed in log space. Values that would overflow are clamped to
    ``exp(709)`` with a ``RuntimeWarning``.
    """
    log_r = np.asarray(log_likelihood_ratio(z1, design))
    if np.any(log_r > _MAX_LOG):
        warnings.warn("likelihood ratio clamped to avoid overflow", RuntimeWarning, stacklevel=2)
        log_r = np.minimum(log_r, _MAX_LOG)
    return _out(np.exp(log_r), z1)
