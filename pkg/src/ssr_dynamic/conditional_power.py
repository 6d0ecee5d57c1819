"""Conditional power of the inverse normal combination test and its n2-derivatives.

With ``m = n2 - n1`` second-stage participants the conditional power is
``Phi(A)`` where ``A = K sqrt(m) - (c_crit - w1 z1) / w2``. The sample size
``n2`` is treated as continuous throughout this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from .errors import ValidationError
from .stat_core import DesignParams, norm_cdf, norm_quantile

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _increment(n2, design):
    m = np.asarray(n2, dtype=float) - design.n1
    if not np.all(np.isfinite(m)) or np.any(m <= 0):
        raise ValidationError("n2 must exceed n1")
    return m


def _offset(z1, design):
    """``(c_crit - w1 z1) / w2``: the drift the second stage must overcome."""
    z = np.asarray(z1, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValidationError("z1 must be finite")
    return (design.c_crit - design.w1 * z) / design.w2


def _phi(a):
    return _INV_SQRT_2PI * np.exp(-0.5 * a * a)


def cp_argument(z1, n2, design: DesignParams):
    """The standardized argument ``A`` with ``CP = Phi(A)``."""
    m = _increment(n2, design)
    a = design.K * np.sqrt(m) - _offset(z1, design)
    return _scalar_if(a, z1, n2)


def conditional_power(z1, n2, design: DesignParams):
    """Probability the final test rejects given ``Z1 = z1`` and ``n2`` total participants."""
    m = _increment(n2, design)
    a = design.K * np.sqrt(m) - _offset(z1, design)
    return _scalar_if(special.ndtr(a), z1, n2)


def mgp(z1, n2, design: DesignParams):
    """Marginal gain in power: ``dCP/dn2 = phi(A) K / (2 sqrt(m))``."""
    m = _increment(n2, design)
    root = np.sqrt(m)
    a = design.K * root - _offset(z1, design)
    return _scalar_if(_phi(a) * design.K / (2.0 * root), z1, n2)


def cp_curvature(z1, n2, design: DesignParams):
    """Second derivative of conditional power in ``n2``."""
    m = _increment(n2, design)
    root = np.sqrt(m)
    K = design.K
    a = K * root - _offset(z1, design)
    da = K / (2.0 * root)
    d2a = -0.25 * K * m ** -1.5
    return _scalar_if(_phi(a) * (d2a - a * da * da), z1, n2)


def _scalar_if(arr, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(arr)
    return arr


class ConcavityStatus(str, Enum):
    CERTIFIED_BY_CP_BOUND = "certified_by_cp_bound"
    CERTIFIED_BY_Z_THRESHOLD = "certified_by_z_threshold"
    UNCERTIFIED = "uncertified"

    @property
    def certified(self) -> bool:
        return self is not ConcavityStatus.UNCERTIFIED


@dataclass(frozen=True)
class ConcavityCertificate:
    status: ConcavityStatus
    cp_bound: float
    z_threshold: float

    @property
    def certified(self) -> bool:
        return self.status.certified


def _check_range(design, n_lo, n_hi):
    if not (math.isfinite(n_lo) and math.isfinite(n_hi)) or not design.n1 < n_lo <= n_hi:
        raise ValidationError("need n1 < n_lo <= n_hi")


def concavity_z_threshold(design: DesignParams, n_lo: float, n_hi: float) -> float:
    """Smallest z1 above which CP is strictly concave on all of ``[n_lo, n_hi]``.

    This is the max over the range of ``(c_crit - w2 h(m)) / w1`` with
    ``h(m) = K sqrt(m) + 1 / (K sqrt(m))``. ``h`` has a single minimum at
    ``m = 1/K^2``, so the max sits at an endpoint or at that point.
    """
    _check_range(design, n_lo, n_hi)
    K = design.K
    m_lo, m_hi = n_lo - design.n1, n_hi - design.n1
    candidates = [m_lo, m_hi]
    m_star = 1.0 / (K * K)
    if m_lo < m_star < m_hi:
        candidates.append(m_star)
    h_min = min(K * math.sqrt(m) + 1.0 / (K * math.sqrt(m)) for m in candidates)
    return (design.c_crit - design.w2 * h_min) / design.w1


def concavity_cp_bound(design: DesignParams, n_hi: float) -> float:
    """``Phi(-1 / (K sqrt(n_hi - n1)))``; CP above this on the range implies concavity."""
    return norm_cdf(-1.0 / (design.K * math.sqrt(n_hi - design.n1)))


def concavity_certificate(z1: float, design: DesignParams, n_lo: float, n_hi: float) -> ConcavityCertificate:
    """Sufficient conditions for strict concavity of CP in ``n2`` over ``[n_lo, n_hi]``.

    The z-threshold test is tried first. The CP-bound test only needs CP at
    ``n_lo`` because CP increases in ``n2``.
    """
    z_thr = concavity_z_threshold(design, n_lo, n_hi)
    bound = concavity_cp_bound(design, n_hi)
    if z1 > z_thr:
        status = ConcavityStatus.CERTIFIED_BY_Z_THRESHOLD
    elif conditional_power(z1, n_lo, design) > bound:
        status = ConcavityStatus.CERTIFIED_BY_CP_BOUND
    else:
        status = ConcavityStatus.UNCERTIFIED
    return ConcavityCertificate(status, bound, z_thr)


def certified_mask(z1: np.ndarray, design: DesignParams, n_lo: float, n_hi: float) -> np.ndarray:
    """Vectorized ``concavity_certificate(...).certified``."""
    z = np.asarray(z1, dtype=float)
    z_thr = concavity_z_threshold(design, n_lo, n_hi)
    bound = concavity_cp_bound(design, n_hi)
    return (z > z_thr) | (conditional_power(z, np.full_like(z, n_lo), design) > bound)


def solve_n2_for_cp(z1: float, target_cp: float, design: DesignParams) -> float | None:
    """Continuous ``n2`` at which CP equals ``target_cp``.

    Returns ``None`` when no ``n2 > n1`` reaches the target from below, i.e.
    CP already exceeds it as ``n2`` approaches ``n1``.
    """
    if not 0.0 < target_cp < 1.0:
        raise ValidationError("target_cp must lie in (0, 1)")
    root_m = (norm_quantile(target_cp) + float(_offset(z1, design))) / design.K
    if root_m <= 0.0:
        return None
    return design.n1 + root_m * root_m


def solve_z1_for_cp(n2: float, target_cp: float, design: DesignParams) -> float:
    """Interim value at which CP at ``n2`` equals ``target_cp`` (A is linear in z1)."""
    if not 0.0 < target_cp < 1.0:
        raise ValidationError("target_cp must lie in (0, 1)")
    m = float(_increment(n2, design))
    return (design.c_crit - design.w2 * (design.K * math.sqrt(m) - norm_quantile(target_cp))) / design.w1
