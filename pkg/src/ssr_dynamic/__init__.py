"""Sample size re-estimation with dynamic cost functions.

A two-stage trial picks its final size ``n2`` after seeing the interim
statistic ``z1`` by maximizing conditional power minus ``gamma(z1) * n2``.
The cost ``gamma`` may be constant, likelihood-ratio based, return on
investment based, or read from a table; any rule can be audited for the cost
it implies.
"""

from .calibration import (
    BudgetPower,
    CalibrationResult,
    MatchReference,
    OperatingChars,
    calibrate_lambdas,
    operating_chars_quadrature,
)
from .conditional_power import (
    ConcavityCertificate,
    ConcavityStatus,
    concavity_certificate,
    cp_curvature,
    mgp,
    solve_n2_for_cp,
    solve_z1_for_cp,
)
from .cost_model import Constant, LikelihoodRatio, Roi, Tabulated, gamma_eval
from .errors import InfeasibleTargetError, NumericalError, SSRError, ValidationError
from .rule_engine import BoundaryFlag, RuleCurve, cpz, jt, lr, optimize_n2, roi, tabulate_rule, tabulated
from .stat_core import DesignParams
from .audit import AuditReport, audit_flags, implied_cost, roundtrip_check
from .trial_sim import SimConfig, simulate_batch, simulate_operating_chars, simulate_trial, timing_sweep

__version__ = "0.1.0"
