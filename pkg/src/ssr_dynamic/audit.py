"""Implied-cost audit of a tabulated re-estimation rule.

At an interior point the only cost rate that makes the rule's ``n2`` optimal
is the marginal gain in power there, ``mgp(z1, n2)``. At a boundary point the
rule only pins the cost down to one side of ``mgp`` evaluated at that
boundary. Uniqueness needs CP to be strictly concave in ``n2``, so each point
carries a concavity certificate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import conditional_power as cpw
from .conditional_power import ConcavityStatus
from .cost_model import Tabulated
from .errors import ValidationError
from .rule_engine import AT_MAX, AT_MIN, FLAG_BY_CODE, INTERIOR, RuleCurve, optimize_n2_many

GAMMA_JUMP_RATIO = 10.0
# relative rise in the implied cost that counts as increasing
_RISE = 1e-8


class BoundKind(str, Enum):
    EXACT = "exact"
    UPPER_BOUND_AT_MIN = "upper_bound_at_min"
    LOWER_BOUND_AT_MAX = "lower_bound_at_max"


_KIND_BY_CODE = {INTERIOR: BoundKind.EXACT, AT_MIN: BoundKind.UPPER_BOUND_AT_MIN, AT_MAX: BoundKind.LOWER_BOUND_AT_MAX}


@dataclass(frozen=True)
class Anomaly:
    reason: str
    z_start: float
    z_end: float
    detail: str = ""

    def as_dict(self):
        return {"reason": self.reason, "z_start": self.z_start, "z_end": self.z_end, "detail": self.detail}


@dataclass
class AuditReport:
    """Implied cost per grid point.

    ``implied_gamma`` holds the exact cost at interior points. At ``n_max``
    points it is ``mgp(z1, n_max)``, which any rationalizing cost must not
    exceed; at ``n_min`` points it is ``mgp(z1, n_min)``, which any
    rationalizing cost must be at least.
    """

    curve: RuleCurve
    implied_gamma: np.ndarray
    bound_kind: list
    concavity: list
    anomalies: list = field(default_factory=list)

    @property
    def z_grid(self):
        return self.curve.z_grid

    @property
    def n2_values(self):
        return self.curve.n2_values

    @property
    def certified(self) -> np.ndarray:
        return np.array([c.certified for c in self.concavity])

    @property
    def exact(self) -> np.ndarray:
        return np.array([k is BoundKind.EXACT for k in self.bound_kind])

    def rows(self):
        for z, n, g, k, c in zip(self.z_grid, self.n2_values, self.implied_gamma, self.bound_kind, self.concavity):
            yield f"{z:.10g}", f"{n:.10g}", f"{g:.10g}", k.value, c.status.value

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["z1", "n2", "implied_gamma", "bound_kind", "concavity_status"])
            w.writerows(self.rows())

    def as_dict(self):
        return {
            "design": self.curve.design.as_dict(),
            "rule": self.curve.provenance,
            "n_range": [self.curve.n_lo, self.curve.n_hi],
            "points": [
                {"z1": float(z), "n2": float(n), "implied_gamma": float(g), "bound_kind": k.value,
                 "concavity_status": c.status.value}
                for z, n, g, k, c in zip(self.z_grid, self.n2_values, self.implied_gamma, self.bound_kind,
                                         self.concavity)
            ],
            "anomalies": [a.as_dict() for a in self.anomalies],
        }


def implied_cost(curve: RuleCurve, design) -> AuditReport:
    """Reverse-engineer the cost function that rationalizes ``curve``."""
    if curve.design != design:
        raise ValidationError("curve was tabulated under a different design")
    z, n, codes = curve.z_grid, curve.n2_values, curve.flags
    at = np.where(codes == AT_MIN, curve.n_lo, np.where(codes == AT_MAX, curve.n_hi, n))
    gamma = cpw.mgp(z, at, design)
    kinds = [_KIND_BY_CODE[int(c)] for c in codes]
    certs = [cpw.concavity_certificate(float(zi), design, curve.n_lo, curve.n_hi) for zi in z]
    report = AuditReport(curve, np.asarray(gamma, dtype=float), kinds, certs)
    report.anomalies = audit_flags(report)
    return report


def _runs(mask):
    """``(start, stop)`` index pairs of maximal True runs, stop inclusive."""
    out = []
    i, n = 0, len(mask)
    while i < n:
        if mask[i]:
            j = i
            while j + 1 < n and mask[j + 1]:
                j += 1
            out.append((i, j))
            i = j + 1
        else:
            i += 1
    return out


def audit_flags(report: AuditReport) -> list[Anomaly]:
    """Cost patterns that are hard to justify.

    Reason codes:
        ``increasing_cost``: inside a certified interior stretch the implied
            cost rises with ``z1``, so a participant is worth more after a
            moderately promising interim than after a very promising one.
        ``cost_jump``: the implied cost changes more than tenfold between
            neighbouring grid points.
        ``boundary_jump``: the rule leaps straight between ``n_min`` and
            ``n_max`` between neighbouring grid points.
        ``uncertified_interior``: interior points where strict concavity is
            not certified, so the implied cost need not be unique.
    """
    z = report.z_grid
    g = report.implied_gamma
    codes = report.curve.flags
    exact = report.exact
    cert = report.certified
    out = []

    good = exact & cert
    rising = good[:-1] & good[1:] & (g[1:] > g[:-1] * (1.0 + _RISE))
    for i, j in _runs(rising):
        out.append(Anomaly("increasing_cost", float(z[i]), float(z[j + 1]),
                           f"implied cost rises from {g[i]:.6g} to {g[j + 1]:.6g}"))

    ratio = np.maximum(g[1:] / g[:-1], g[:-1] / g[1:])
    for i in np.nonzero(ratio > GAMMA_JUMP_RATIO)[0]:
        out.append(Anomaly("cost_jump", float(z[i]), float(z[i + 1]), f"ratio {ratio[i]:.3g}"))

    leap = ((codes[:-1] == AT_MIN) & (codes[1:] == AT_MAX)) | ((codes[:-1] == AT_MAX) & (codes[1:] == AT_MIN))
    for i in np.nonzero(leap)[0]:
        out.append(Anomaly("boundary_jump", float(z[i]), float(z[i + 1]),
                           f"{FLAG_BY_CODE[codes[i]].value} -> {FLAG_BY_CODE[codes[i + 1]].value}"))

    for i, j in _runs(exact & ~cert):
        out.append(Anomaly("uncertified_interior", float(z[i]), float(z[j]), f"{j - i + 1} grid points"))
    return out


@dataclass
class RoundTripReport:
    """Per-point outcome of re-optimizing with the implied cost.

    ``status`` entries are ``"pass"``, ``"fail"`` or ``"skipped"`` (no
    concavity certificate, so the optimum need not be unique).
    """

    z_grid: np.ndarray
    original: np.ndarray
    recovered: np.ndarray
    status: list
    tol_participants: float

    @property
    def passed(self) -> bool:
        return "fail" not in self.status

    def counts(self) -> dict:
        return {k: self.status.count(k) for k in ("pass", "fail", "skipped")}


def roundtrip_check(curve: RuleCurve, design, tol_participants: float = 1.0) -> RoundTripReport:
    """Re-optimize every certified point under its implied cost and compare.

    Interior points use the implied cost as a tabulated cost function and
    must come back within ``tol_participants``. Boundary points are
    re-optimized with the cost set exactly at the reported bound and must
    return the same boundary.
    """
    report = implied_cost(curve, design)
    z, n, codes = curve.z_grid, curve.n2_values, curve.flags
    cert = report.certified
    table = Tabulated(tuple(z), tuple(report.implied_gamma))
    gamma = np.where(codes == INTERIOR, table.evaluate(z), report.implied_gamma)
    recovered, new_codes = optimize_n2_many(z, gamma, design, curve.n_lo, curve.n_hi)

    status = []
    for i in range(z.size):
        if not cert[i]:
            status.append("skipped")
        elif codes[i] == INTERIOR:
            ok = abs(recovered[i] - n[i]) <= tol_participants
            status.append("pass" if ok else "fail")
        else:
            status.append("pass" if new_codes[i] == codes[i] else "fail")
    return RoundTripReport(z, n, recovered, status, tol_participants)


def certified_status(report: AuditReport) -> list[str]:
    return [c.status.value for c in report.concavity]


__all__ = [
    "Anomaly",
    "AuditReport",
    "BoundKind",
    "ConcavityStatus",
    "RoundTripReport",
    "audit_flags",
    "implied_cost",
    "roundtrip_check",
]
