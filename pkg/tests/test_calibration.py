import math

import numpy as np
import pytest

import oracles
from ssr_dynamic import calibration as C
from ssr_dynamic import rule_engine as R
from ssr_dynamic.calibration import BudgetPower, MatchReference, calibrate_lambdas, operating_chars_quadrature
from ssr_dynamic.errors import InfeasibleTargetError, NumericalError, ValidationError
from ssr_dynamic.scenarios import SCHIZ_GAMMA, schizophrenia_design

D = schizophrenia_design()
G = SCHIZ_GAMMA


@pytest.fixture(scope="module")
def jt_oc():
    return operating_chars_quadrature(R.jt(G), D, tol=1e-9)


@pytest.fixture(scope="module")
def lr_oc():
    return operating_chars_quadrature(R.lr(0.65 * G, 0.62 * G), D, tol=1e-9)


def test_fixed_rule_collapses_to_closed_form():
    oc = operating_chars_quadrature(R.FixedRule(442), D)
    closed = oracles.Phi(D.K * math.sqrt(442) - D.c_crit)
    assert oc.power == pytest.approx(closed, abs=1e-6)
    assert oc.power == pytest.approx(0.611, abs=5e-4)
    assert C.fixed_design_power(442, D) == pytest.approx(closed, abs=1e-12)
    assert oc.e_n_null == pytest.approx(442, rel=1e-9) and oc.e_n_alt == pytest.approx(442, rel=1e-9)
    assert oc.type1 == D.alpha


@pytest.mark.parametrize(
    "rule",
    [R.jt(G), R.lr(0.65 * G, 0.62 * G), R.roi(40e3, 1e8, 0.5, 0.5), R.FixedRule(600)],
    ids=["jt", "lr", "roi", "fixed600"],
)
def test_quadrature_against_simpson(rule):
    oc = operating_chars_quadrature(rule, D, tol=1e-9)
    ref = oracles.ocs_simpson(lambda z: rule.evaluate(z, D)[0], D)
    assert oc.power == pytest.approx(ref["power"], abs=2e-6)
    assert oc.e_n_null == pytest.approx(ref["e_n_null"], rel=2e-6)
    assert oc.e_n_alt == pytest.approx(ref["e_n_alt"], rel=2e-6)


def test_cpz_quadrature_against_simpson(cpzd):
    rule = R.cpz(280, 420)
    oc = operating_chars_quadrature(rule, cpzd, tol=1e-9)
    ref = oracles.ocs_simpson(lambda z: rule.evaluate(z, cpzd)[0], cpzd)
    assert oc.power == pytest.approx(ref["power"], abs=2e-6)
    assert oc.e_n_null == pytest.approx(ref["e_n_null"], rel=2e-6)
    assert oc.details["breakpoints"] == pytest.approx([1.18716574, 1.62709607, 2.33774701], abs=1e-6)


def test_expected_sizes_within_range(jt_oc, lr_oc):
    for oc in (jt_oc, lr_oc):
        for v in (oc.e_n_null, oc.e_n_alt):
            assert 442 <= v <= 884
        assert 0 <= oc.power <= 1


def test_curve_input_matches_rule(lr_oc):
    curve = R.tabulate_rule(R.lr(0.65 * G, 0.62 * G), D, n_points=4001)
    oc = operating_chars_quadrature(curve, D)
    assert oc.power == pytest.approx(lr_oc.power, abs=1e-4)
    assert oc.e_n_alt == pytest.approx(lr_oc.e_n_alt, rel=1e-4)


def test_quadrature_refinement_cap(monkeypatch):
    monkeypatch.setattr(C, "MAX_LEVELS", 3)
    with pytest.raises(NumericalError) as info:
        operating_chars_quadrature(R.jt(G), D, tol=0.0)
    assert info.value.trace


def test_infinite_multipliers_give_fixed_minimum():
    oc = operating_chars_quadrature(R.lr(1e3, 1e3), D)
    fixed = operating_chars_quadrature(R.FixedRule(442), D)
    assert oc.power == pytest.approx(fixed.power, abs=1e-12)
    assert oc.e_n_null == pytest.approx(442) and oc.e_n_alt == pytest.approx(442)


def test_lr_monotone_in_each_multiplier():
    # kept below the plateau where the rule never leaves n_min
    scale = [0.7, 0.85, 1.0]
    grid = {(a, b): operating_chars_quadrature(R.lr(a * 0.65 * G, b * 0.62 * G), D, tol=1e-9)
            for a in scale for b in scale}
    for field in ("e_n_null", "e_n_alt", "power"):
        for fixed in scale:
            along_1 = [getattr(grid[(a, fixed)], field) for a in scale]
            along_2 = [getattr(grid[(fixed, b)], field) for b in scale]
            assert all(x > y for x, y in zip(along_1, along_1[1:])), (field, along_1)
            assert all(x > y for x, y in zip(along_2, along_2[1:])), (field, along_2)


# -- calibration ----------------------------------------------------------------------


def test_match_reference_recovers_lambda1(jt_oc):
    res = calibrate_lambdas(MatchReference(R.jt(G), "e_n_alt", 0.62 / 0.65), D, gamma_ref=G)
    assert res.lambda1 == pytest.approx(0.65 * G, rel=0.05)
    assert res.lambda2 / res.lambda1 == pytest.approx(0.62 / 0.65, rel=1e-12)
    assert abs(res.achieved.e_n_alt - jt_oc.e_n_alt) <= 1e-3
    assert res.converged and res.targets["quantity"] == "e_n_alt"


def test_match_reference_accepts_curve(jt_oc):
    curve = R.tabulate_rule(R.jt(G), D, n_points=2001)
    res = calibrate_lambdas(MatchReference(curve, "e_n_alt"), D, gamma_ref=G)
    assert res.lambda1 == pytest.approx(0.65 * G, rel=0.05)


def test_match_reference_power():
    ref = R.lr(0.65 * G, 0.62 * G)
    res = calibrate_lambdas(MatchReference(ref, "power", 0.62 / 0.65), D, gamma_ref=G)
    assert res.lambda1 == pytest.approx(0.65 * G, rel=1e-4)


def test_budget_power_round_trip(lr_oc):
    target = BudgetPower(lr_oc.e_n_null, lr_oc.power)
    l1, l2 = calibrate_lambdas(target, D, gamma_ref=G)
    assert l1 == pytest.approx(0.65 * G, rel=0.01)
    assert l2 == pytest.approx(0.62 * G, rel=0.01)


def test_budget_power_default_start(lr_oc):
    res = calibrate_lambdas(BudgetPower(lr_oc.e_n_null, lr_oc.power), D)
    assert abs(res.achieved.e_n_null - lr_oc.e_n_null) <= 0.5
    assert abs(res.achieved.power - lr_oc.power) <= 1e-4


@pytest.mark.parametrize("b0,pi", [(900, 0.65), (442, 0.65), (400, 0.65), (460, 0.99), (460, 0.2)])
def test_budget_power_infeasible(b0, pi):
    with pytest.raises(InfeasibleTargetError) as info:
        calibrate_lambdas(BudgetPower(b0, pi), D)
    report = info.value.report
    assert report["problems"] and "power_range" in report
    assert isinstance(info.value, ValidationError)


def test_match_reference_validation():
    with pytest.raises(ValidationError):
        MatchReference(R.jt(G), "e_n_null")
    with pytest.raises(ValidationError):
        MatchReference(R.jt(G), "power", -1.0)


def test_newton_reports_failure_with_trace():
    with pytest.raises(NumericalError) as info:
        C._newton(lambda x: np.array([x[0] ** 2 + 1.0, x[1] ** 2 + 1.0]), [0.3, -0.2], np.array([1e-6, 1e-6]))
    assert info.value.trace


def test_both_quantities_against_jt_has_no_interior_solution():
    # JT maximizes power for its own e_n_alt, so matching both pushes lambda1 to zero
    with pytest.raises(NumericalError):
        calibrate_lambdas(MatchReference(R.jt(G), "both"), D, gamma_ref=G)


def test_both_quantities_against_lr():
    ref = R.lr(0.5 * G, 0.8 * G)
    res = calibrate_lambdas(MatchReference(ref, "both"), D, gamma_ref=G)
    assert res.lambda1 == pytest.approx(0.5 * G, rel=1e-3)
    assert res.lambda2 == pytest.approx(0.8 * G, rel=1e-3)


def test_result_serializes(lr_oc):
    res = calibrate_lambdas(MatchReference(R.jt(G), "e_n_alt"), D, gamma_ref=G)
    d = res.as_dict()
    assert set(d) >= {"lambda1", "lambda2", "iterations", "achieved", "targets", "tolerances", "trace"}
    assert d["achieved"]["method"] == "quadrature"


# -- optimality properties ----------------------------------------------------------


def test_lr_dominates_jt_under_null(jt_oc, lr_oc):
    assert lr_oc.e_n_null < jt_oc.e_n_null * (1 - 1e-4)
    assert abs(lr_oc.e_n_alt - jt_oc.e_n_alt) / jt_oc.e_n_alt < 0.01


def test_pareto_probe():
    """Bumping the LR rule on random intervals never improves all three criteria."""
    rule = R.lr(0.65 * G, 0.62 * G)
    z = np.linspace(-8, D.drift + 8, 40_001)
    w = np.full(z.size, z[1] - z[0])
    w[0] = w[-1] = w[0] / 2
    f0 = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    fa = np.exp(-0.5 * (z - D.drift) ** 2) / math.sqrt(2 * math.pi)
    base, _ = rule.evaluate(z, D)

    def ocs(n):
        cp = oracles._cp_vec(z, n, D)
        return np.sum(w * cp * fa), np.sum(w * n * f0), np.sum(w * n * fa)

    p0, e0, e1 = ocs(base)
    rng = np.random.default_rng(7)
    for _ in range(100):
        a = rng.uniform(-1, 4)
        b = a + rng.uniform(0.05, 1.5)
        bump = rng.choice([-5.0, 5.0])
        n = np.where((z >= a) & (z <= b), np.clip(base + bump, 442, 884), base)
        p, n0, n1 = ocs(n)
        better = p > p0 + 1e-12 and n0 < e0 - 1e-9 and n1 < e1 - 1e-9
        assert not better
