"""Operating characteristics by quadrature, and calibration of the LR multipliers.

Rules are only piecewise smooth in ``z1``: a cost rule switches between the
boundaries and the interior, and may jump where the objective is not concave.
The quadrature locates those switch points first and integrates each smooth
piece with composite Gauss-Legendre panels, doubling the panel count until
successive estimates agree.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np
from scipy import special

from . import rule_engine as rules
from .errors import InfeasibleTargetError, NumericalError, ValidationError
from .rule_engine import Rule, RuleCurve, as_rule
from .stat_core import DesignParams

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_SCAN_POINTS = 2049
_TAIL = 8.0
MAX_LEVELS = 20


@dataclass
class OperatingChars:
    """Unconditional power, expected final sample sizes and type I error.

    ``error_bound`` maps each field name to its numerical error: the last
    refinement change for quadrature, the standard error for Monte Carlo.
    """

    power: float
    e_n_null: float
    e_n_alt: float
    type1: float
    method: str
    error_bound: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)


def _integrands(rule, design, z):
    n, _ = rule.evaluate(z, design)
    a = design.K * np.sqrt(n - design.n1) - (design.c_crit - design.w1 * z) / design.w2
    f0 = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    zd = z - design.drift
    fa = np.exp(-0.5 * zd * zd) / math.sqrt(2.0 * math.pi)
    return np.stack([special.ndtr(a) * fa, n * f0, n * fa])


def _state(rule, design, z):
    n, code = rule.evaluate(z, design)
    return n, code


def find_breakpoints(rule: Rule, design: DesignParams, lo: float, hi: float, n_scan: int = _SCAN_POINTS,
                     iters: int = 48) -> np.ndarray:
    """Interim values where the rule changes regime or jumps, located by bisection."""
    z = np.linspace(lo, hi, n_scan)
    n, code = _state(rule, design, z)
    r_lo, r_hi = rule.bounds(design)
    span = max(r_hi - r_lo, 1e-12)
    idx = np.nonzero((code[1:] != code[:-1]) | (np.abs(np.diff(n)) > 0.02 * span))[0]
    if idx.size == 0:
        return np.empty(0)
    a, b = z[idx].copy(), z[idx + 1].copy()
    n_a, c_a, n_b, c_b = n[idx], code[idx], n[idx + 1], code[idx + 1]
    by_code = c_a != c_b
    for _ in range(iters):
        mid = 0.5 * (a + b)
        n_m, c_m = _state(rule, design, mid)
        like_left = np.where(by_code, c_m == c_a, np.abs(n_m - n_a) <= np.abs(n_m - n_b))
        a = np.where(like_left, mid, a)
        b = np.where(like_left, b, mid)
    return 0.5 * (a + b)


def _integrate_piece(rule, design, a, b, tol):
    panels = max(1, int(math.ceil((b - a) / 0.5)))
    prev = None
    for level in range(MAX_LEVELS):
        edges = np.linspace(a, b, panels + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
        weights = (half[:, None] * _GL_W[None, :]).ravel()
        est = _integrands(rule, design, nodes) @ weights
        if prev is not None:
            change = np.abs(est - prev)
            if np.all(change < tol * np.maximum(1.0, np.abs(est))):
                return est, change, level
        prev = est
        panels *= 2
    raise NumericalError(
        f"quadrature did not converge on [{a:.6g}, {b:.6g}] after {MAX_LEVELS} levels",
        trace=[{"interval": [a, b], "estimate": prev.tolist()}],
    )


def operating_chars_quadrature(rule: Union[Rule, RuleCurve], design: DesignParams, tol: float = 1e-7) -> OperatingChars:
    """Power and expected sample sizes of ``rule`` by adaptive Gauss-Legendre quadrature.

    The type I error is reported as the design's ``alpha``: with fixed
    combination weights the final statistic is exactly N(0, 1) under the
    null whatever the rule does.

    Args:
        rule: a rule object or a tabulated :class:`RuleCurve`.
        design: trial design.
        tol: stopping threshold on successive estimates, absolute for
            probabilities and relative for sample sizes.
    """
    rule = as_rule(rule)
    lo = min(0.0, design.drift) - _TAIL
    hi = max(0.0, design.drift) + _TAIL
    cuts = np.concatenate([[lo], np.sort(find_breakpoints(rule, design, lo, hi)), [hi]])
    total = np.zeros(3)
    err = np.zeros(3)
    levels = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 0:
            continue
        est, change, level = _integrate_piece(rule, design, a, b, tol)
        total += est
        err += change
        levels.append(level)
    return OperatingChars(
        power=float(total[0]),
        e_n_null=float(total[1]),
        e_n_alt=float(total[2]),
        type1=design.alpha,
        method="quadrature",
        error_bound={"power": float(err[0]), "e_n_null": float(err[1]), "e_n_alt": float(err[2]), "type1": 0.0},
        details={"breakpoints": [float(c) for c in cuts[1:-1]], "max_level": max(levels, default=0)},
    )


def fixed_design_power(n2: float, design: DesignParams) -> float:
    """Closed-form power of the combination test when ``n2`` is fixed in advance."""
    return float(special.ndtr(design.K * math.sqrt(n2) - design.c_crit))


# -- calibration -------------------------------------------------------------


@dataclass(frozen=True)
class BudgetPower:
    """Target expected sample size under the null and power under the alternative."""

    b0: float
    pi_target: float


@dataclass(frozen=True)
class MatchReference:
    """Match a reference rule's expected size under the alternative, its power, or both.

    With a single quantity the ratio ``lambda2 / lambda1`` is held at
    ``ratio`` and only the scale is solved for.
    """

    reference: Union[Rule, RuleCurve]
    quantity: str = "e_n_alt"
    ratio: float = 0.62 / 0.65

    def __post_init__(self):
        if self.quantity not in ("e_n_alt", "power", "both"):
            raise ValidationError("quantity must be 'e_n_alt', 'power' or 'both'")
        if not self.ratio >= 0 or not math.isfinite(self.ratio):
            raise ValidationError("ratio must be a non-negative number")


CalibrationTarget = Union[BudgetPower, MatchReference]


@dataclass
class CalibrationResult:
    lambda1: float
    lambda2: float
    iterations: int
    converged: bool
    achieved: OperatingChars
    targets: dict
    tolerances: dict
    trace: list = field(default_factory=list)

    def __iter__(self):
        yield self.lambda1
        yield self.lambda2

    def as_dict(self):
        out = asdict(self)
        out["achieved"] = self.achieved.as_dict()
        return out


def lr_operating_chars(lambda1: float, lambda2: float, design: DesignParams, tol: float = 1e-9) -> OperatingChars:
    return operating_chars_quadrature(rules.lr(lambda1, lambda2), design, tol=tol)


def boundary_operating_chars(design: DesignParams, tol: float = 1e-9) -> tuple[OperatingChars, OperatingChars]:
    """OCs of the zero-cost limit (always ``n_max``) and the infinite-cost limit (always ``n_min``)."""
    at_max = operating_chars_quadrature(rules.FixedRule(design.n_max), design, tol=tol)
    at_min = operating_chars_quadrature(rules.FixedRule(design.n_min), design, tol=tol)
    return at_max, at_min


def _check_budget_feasible(target: BudgetPower, design: DesignParams):
    at_max, at_min = boundary_operating_chars(design)
    report = {
        "b0": target.b0,
        "pi_target": target.pi_target,
        "e_n_null_range": [at_min.e_n_null, at_max.e_n_null],
        "power_range": [at_min.power, at_max.power],
    }
    problems = []
    if not design.n_min < target.b0 < design.n_max:
        problems.append(f"b0={target.b0:g} must lie strictly inside ({design.n_min:g}, {design.n_max:g})")
    if not at_min.power < target.pi_target < at_max.power:
        problems.append(
            f"pi_target={target.pi_target:g} must lie strictly inside ({at_min.power:.6g}, {at_max.power:.6g})"
        )
    if problems:
        report["problems"] = problems
        raise InfeasibleTargetError("; ".join(problems), report)


_LOG_FLOOR = math.log(1e-14)


def _newton(residual, x0, tol_scaled, jac_step=1e-4, max_iter=40, max_halvings=30):
    """Damped Newton with a forward-difference Jacobian; returns ``(x, r, iterations, trace)``."""
    x = np.asarray(x0, dtype=float)
    r = residual(x)
    trace = [{"x": x.tolist(), "residual": r.tolist()}]
    for it in range(1, max_iter + 1):
        if np.all(np.abs(r) <= tol_scaled):
            return x, r, it - 1, trace
        jac = np.empty((r.size, x.size))
        for j in range(x.size):
            xp = x.copy()
            xp[j] += jac_step
            jac[:, j] = (residual(xp) - r) / jac_step
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            raise NumericalError("singular Jacobian in calibration", trace) from None
        norm0 = np.linalg.norm(r / tol_scaled)
        for _ in range(max_halvings):
            x_new = x + step
            r_new = residual(x_new)
            if np.linalg.norm(r_new / tol_scaled) < norm0:
                break
            step *= 0.5
        else:
            raise NumericalError("calibration line search failed to reduce the residual", trace)
        x, r = x_new, r_new
        trace.append({"x": x.tolist(), "residual": r.tolist(), "step": step.tolist()})
        if np.any(x < _LOG_FLOOR):
            raise NumericalError(
                "a multiplier was driven to zero: the target sits on the lambda = 0 boundary", trace
            )
        if np.max(np.abs(step)) < 1e-12 and not np.all(np.abs(r) <= tol_scaled):
            raise NumericalError("calibration stagnated", trace)
    if np.all(np.abs(r) <= tol_scaled):
        return x, r, max_iter, trace
    raise NumericalError(f"calibration did not converge in {max_iter} iterations", trace)


def calibrate_lambdas(target: CalibrationTarget, design: DesignParams, gamma_ref: float | None = None,
                      tol_n: float = 1e-3, tol_power: float = 1e-6, quad_tol: float = 1e-10) -> CalibrationResult:
    """Solve for the LR multipliers ``(lambda1, lambda2)`` hitting ``target``.

    Newton iterations run on ``(log lambda1, log lambda2)`` so both stay
    positive. Defaults are far tighter than half a participant and 1e-4 in
    power so the multipliers themselves are well determined.

    Raises:
        InfeasibleTargetError: the target lies outside what the fixed
            ``n_min`` and ``n_max`` designs bracket.
        NumericalError: Newton failed to converge or stagnated.
    """
    start = math.log(gamma_ref if gamma_ref else 1e-3)
    tolerances = {"e_n": tol_n, "power": tol_power, "quadrature": quad_tol}

    def ocs(log_l1, log_l2):
        return lr_operating_chars(math.exp(log_l1), math.exp(log_l2), design, tol=quad_tol)

    if isinstance(target, BudgetPower):
        _check_budget_feasible(target, design)
        start = _leave_flat_region(start, 0.0, design, quad_tol)
        targets = {"kind": "budget_power", "b0": target.b0, "pi_target": target.pi_target}

        def residual(x):
            oc = ocs(*x)
            return np.array([oc.e_n_null - target.b0, oc.power - target.pi_target])

        x, _, its, trace = _newton(residual, [start, start], np.array([tol_n, tol_power]))
        l1, l2 = math.exp(x[0]), math.exp(x[1])

    elif isinstance(target, MatchReference):
        ref = operating_chars_quadrature(target.reference, design, tol=quad_tol)
        targets = {"kind": "match_reference", "quantity": target.quantity, "reference": ref.as_dict()}
        log_ratio = math.log(target.ratio) if target.ratio > 0 else None

        if target.quantity == "both":
            start = _leave_flat_region(start, 0.0, design, quad_tol)

            def residual(x):
                oc = ocs(*x)
                return np.array([oc.e_n_alt - ref.e_n_alt, oc.power - ref.power])

            x, _, its, trace = _newton(residual, [start, start], np.array([tol_n, tol_power]))
            l1, l2 = math.exp(x[0]), math.exp(x[1])
        else:
            if log_ratio is None:
                raise ValidationError("ratio must be positive for one-dimensional matching")
            key, tol = (target.quantity, tol_n if target.quantity == "e_n_alt" else tol_power)
            targets["ratio"] = target.ratio
            start = _leave_flat_region(start, log_ratio, design, quad_tol)

            def residual(x):
                oc = ocs(x[0], x[0] + log_ratio)
                return np.array([getattr(oc, key) - getattr(ref, key)])

            x, its, trace = _secant(lambda s: residual([s])[0], start, tol)
            l1 = math.exp(x)
            l2 = l1 * target.ratio
    else:
        raise ValidationError(f"unknown calibration target {type(target).__name__}")

    achieved = lr_operating_chars(l1, l2, design, tol=quad_tol)
    return CalibrationResult(l1, l2, its, True, achieved, targets, tolerances, trace)


def _leave_flat_region(log_start, log_ratio, design, quad_tol, max_moves=60):
    """Scale the starting multipliers until the LR rule is neither always n_min nor always n_max.

    On either plateau the Jacobian vanishes and Newton cannot start.
    """
    x = log_start
    for _ in range(max_moves):
        oc = lr_operating_chars(math.exp(x), math.exp(x + log_ratio), design, tol=quad_tol)
        span = design.n_max - design.n_min
        if oc.e_n_alt <= design.n_min + 1e-6 * span:
            x -= math.log(2.0)
        elif oc.e_n_null >= design.n_max - 1e-6 * span:
            x += math.log(2.0)
        else:
            return x
    raise NumericalError("could not find a starting multiplier off the n_min/n_max plateaus")


def _secant(f, x0, tol, max_iter=60):
    """Secant iteration on a scalar residual; the first step uses a small offset."""
    x_prev, f_prev = x0, f(x0)
    trace = [{"x": x_prev, "residual": f_prev}]
    if abs(f_prev) <= tol:
        return x_prev, 0, trace
    x = x0 + 0.05
    for it in range(1, max_iter + 1):
        fx = f(x)
        trace.append({"x": x, "residual": fx})
        if abs(fx) <= tol:
            return x, it, trace
        if fx == f_prev:
            raise NumericalError("secant stagnated: flat residual", trace)
        step = -fx * (x - x_prev) / (fx - f_prev)
        # the residual is monotone in log-scale; cap wild steps
        step = max(-2.0, min(2.0, step))
        x_prev, f_prev = x, fx
        x = x + step
        if abs(step) < 1e-12:
            raise NumericalError("secant stagnated", trace)
    raise NumericalError(f"secant did not converge in {max_iter} iterations", trace)
