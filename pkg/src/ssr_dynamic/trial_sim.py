"""Monte Carlo simulation of the two-stage trial on its sufficient statistics.

Each replicate draws the interim statistic, applies the rule (rounded to an
integer final size), draws the independent second-stage increment and tests
``w1 Z1 + w2 Z_inc > c_crit`` with the design's pre-specified weights.

Random numbers come from Philox streams keyed by the seed. Replicates are
grouped in fixed blocks of :data:`BLOCK` and block ``b`` uses counter
``(0, 0, b, 0)``, so replicate ``i`` always sees the same two normals
whatever ``n_reps`` is and however blocks are spread over workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .calibration import OperatingChars, operating_chars_quadrature
from .errors import ValidationError
from .rule_engine import Rule, as_rule, round_half_up, tabulate_rule
from .stat_core import DesignParams

BLOCK = 1 << 16
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class TrialOutcome:
    z1: float
    n2: int
    z_combined: float
    rejected: bool


@dataclass(frozen=True)
class SimConfig:
    rule: Rule
    n_reps: int
    seed: int = 1
    theta_true: float = 0.0

    def __post_init__(self):
        if not isinstance(self.n_reps, (int, np.integer)) or self.n_reps < 1:
            raise ValidationError("n_reps must be a positive integer")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed <= _MASK64:
            raise ValidationError("seed must be an integer in [0, 2**64)")
        if not math.isfinite(self.theta_true):
            raise ValidationError("theta_true must be finite")


@dataclass
class SimulationResult:
    """Rejection rate and mean final size from one batch at one true effect."""

    theta_true: float
    n_reps: int
    seed: int
    rejection_rate: float
    rejection_se: float
    mean_n2: float
    mean_n2_se: float
    rule: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)


def _block_normals(seed: int, block: int) -> np.ndarray:
    bitgen = np.random.Philox(key=seed, counter=[0, 0, block, 0])
    return np.random.Generator(bitgen).standard_normal(2 * BLOCK)


def _drift(theta, m, design):
    return theta * np.sqrt(m) / (2.0 * design.sigma)


def _run_block(rule, design, seed, theta, block, count):
    e = _block_normals(seed, block)
    z1 = _drift(theta, design.n1, design) + e[:count]
    n_cont, _ = rule.evaluate(z1, design)
    n2 = round_half_up(n_cont)
    z_inc = _drift(theta, n2 - design.n1, design) + e[BLOCK:BLOCK + count]
    zc = design.w1 * z1 + design.w2 * z_inc
    return z1, n2, zc


def simulate_arrays(config: SimConfig, design: DesignParams, workers: int = 1):
    """Per-replicate ``(z1, n2, z_combined, rejected)`` arrays in replicate order."""
    rule = as_rule(config.rule)
    n_blocks = -(-config.n_reps // BLOCK)
    jobs = [(b, min(BLOCK, config.n_reps - b * BLOCK)) for b in range(n_blocks)]

    def run(job):
        return _run_block(rule, design, int(config.seed), float(config.theta_true), *job)

    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    z1 = np.concatenate([p[0] for p in parts])
    n2 = np.concatenate([p[1] for p in parts])
    zc = np.concatenate([p[2] for p in parts])
    return z1, n2, zc, zc > design.c_crit


def simulate_trial(config: SimConfig, design: DesignParams, index: int = 0) -> TrialOutcome:
    """Replicate ``index`` of the stream defined by ``config`` (``n_reps`` is ignored)."""
    if index < 0:
        raise ValidationError("replicate index must be non-negative")
    block, offset = divmod(index, BLOCK)
    z1, n2, zc = _run_block(as_rule(config.rule), design, int(config.seed), float(config.theta_true), block,
                            offset + 1)
    return TrialOutcome(float(z1[offset]), int(n2[offset]), float(zc[offset]), bool(zc[offset] > design.c_crit))


def simulate_batch(config: SimConfig, design: DesignParams, workers: int = 1) -> SimulationResult:
    """Rejection rate (binomial SE) and mean final size (sample SE) over ``n_reps`` replicates."""
    _, n2, _, rejected = simulate_arrays(config, design, workers)
    n = config.n_reps
    rate = float(np.mean(rejected))
    mean_n2 = float(np.sum(n2.astype(float)) / n)
    sd = float(np.std(n2.astype(float), ddof=1)) if n > 1 else 0.0
    return SimulationResult(
        theta_true=float(config.theta_true),
        n_reps=n,
        seed=int(config.seed),
        rejection_rate=rate,
        rejection_se=math.sqrt(rate * (1.0 - rate) / n),
        mean_n2=mean_n2,
        mean_n2_se=sd / math.sqrt(n),
        rule=as_rule(config.rule).describe(),
    )


def simulate_operating_chars(rule: Rule, design: DesignParams, n_reps: int, seed: int = 1,
                             workers: int = 1) -> OperatingChars:
    """Monte Carlo operating characteristics: one batch under the null, one under ``theta_alt``.

    Both batches share the seed; the null batch uses the stream of ``seed`` and
    the alternative batch that of ``seed + 1``.
    """
    null = simulate_batch(SimConfig(rule, n_reps, seed, 0.0), design, workers)
    alt = simulate_batch(SimConfig(rule, n_reps, (seed + 1) & _MASK64, design.theta_alt), design, workers)
    return OperatingChars(
        power=alt.rejection_rate,
        e_n_null=null.mean_n2,
        e_n_alt=alt.mean_n2,
        type1=null.rejection_rate,
        method="monte_carlo",
        error_bound={
            "power": alt.rejection_se,
            "e_n_null": null.mean_n2_se,
            "e_n_alt": alt.mean_n2_se,
            "type1": null.rejection_se,
        },
        details={"n_reps": n_reps, "seed": seed},
    )


@dataclass
class TimingPoint:
    n1: float
    design: DesignParams
    curves: dict
    ocs: dict
    thresholds: dict


def increase_threshold(rule: Rule, design: DesignParams, z_lo: float = -3.0, z_hi: float | None = None,
                       n_scan: int = 4001, iters: int = 60) -> float:
    """Smallest ``z1`` at which the rule picks more than its minimum size (``nan`` if never)."""
    z_hi = design.drift + 6.0 if z_hi is None else z_hi
    z = np.linspace(z_lo, z_hi, n_scan)
    lo_n = rule.bounds(design)[0]
    n, _ = rule.evaluate(z, design)
    above = np.nonzero(n > lo_n)[0]
    if above.size == 0:
        return math.nan
    i = above[0]
    if i == 0:
        return float(z[0])
    a, b = z[i - 1], z[i]
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if rule.evaluate(mid, design)[0][0] > lo_n:
            b = mid
        else:
            a = mid
    return float(b)


def timing_sweep(n1_values, rules: dict, design: DesignParams, n_points: int = 501) -> list[TimingPoint]:
    """Re-tabulate fixed rules for several interim sizes.

    For each ``n1`` the design's drift and frozen combination weights are
    re-derived; the rule parameters (costs, multipliers) stay fixed.
    """
    out = []
    for n1 in n1_values:
        if not 0 < n1 < design.n_min:
            raise ValidationError(f"interim size {n1} must lie in (0, n_min)")
        d = design.replace(n1=n1)
        curves, ocs, thr = {}, {}, {}
        for name, rule in rules.items():
            curves[name] = tabulate_rule(rule, d, n_points=n_points)
            ocs[name] = operating_chars_quadrature(rule, d)
            thr[name] = increase_threshold(rule, d)
        out.append(TimingPoint(n1, d, curves, ocs, thr))
    return out

