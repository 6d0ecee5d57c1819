import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from ssr_dynamic.errors import ValidationError
from ssr_dynamic.stat_core import (
    ALTERNATIVE,
    NULL,
    DesignParams,
    interim_density,
    likelihood_ratio,
    log_likelihood_ratio,
    norm_cdf,
    norm_pdf,
    norm_quantile,
)


@pytest.mark.parametrize("x", [0.0, 1.0, -1.0, 2.5, -7.0])
def test_pdf_matches_reference(x):
    assert norm_pdf(x) == pytest.approx(oracles.phi(x), rel=1e-14)


def test_pdf_values():
    assert norm_pdf(0.0) == pytest.approx(0.3989423, abs=5e-8)
    assert norm_pdf(1.0) == pytest.approx(0.2419707, abs=5e-8)
    assert norm_pdf(-1.0) == norm_pdf(1.0)


def test_cdf_values():
    assert norm_cdf(0.0) == 0.5
    assert norm_cdf(1.96) == pytest.approx(0.9750021, abs=5e-8)
    assert norm_cdf(-1.96) == pytest.approx(0.0249979, abs=5e-8)
    assert norm_cdf(1.96) == pytest.approx(oracles.Phi(1.96), abs=1e-15)


@given(st.floats(-38, 38))
def test_cdf_close_to_erf_reference(x):
    assert abs(norm_cdf(x) - oracles.Phi_erf(x)) <= 1e-10


@given(st.floats(-30, 30), st.floats(1e-6, 5))
def test_cdf_monotone(x, h):
    assert norm_cdf(x + h) >= norm_cdf(x)


def test_quantile_values():
    assert norm_quantile(0.5) == 0.0
    assert norm_quantile(0.975) == pytest.approx(oracles.quantile_bisect(0.975), abs=1e-12)
    assert norm_quantile(0.975) == pytest.approx(1.959964, abs=5e-7)
    assert norm_quantile(0.8) == pytest.approx(0.8416212, abs=5e-8)
    assert norm_quantile(0.8) == pytest.approx(oracles.quantile_bisect(0.8), abs=1e-12)


@pytest.mark.parametrize("p", np.concatenate([[1e-6, 1e-4, 0.01], np.linspace(0.05, 0.95, 19), [0.99, 1 - 1e-4, 1 - 1e-6]]))
def test_quantile_round_trip(p):
    assert abs(norm_cdf(norm_quantile(p)) - p) <= 1e-9


@given(st.floats(1e-6, 1 - 1e-6))
def test_quantile_round_trip_random(p):
    assert abs(norm_cdf(norm_quantile(p)) - p) <= 1e-9


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(ValidationError):
        norm_pdf(bad)
    with pytest.raises(ValidationError):
        norm_cdf(bad)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_quantile_domain(p):
    with pytest.raises(ValidationError):
        norm_quantile(p)


def test_vector_inputs_keep_shape():
    x = np.array([[0.0, 1.0], [-1.0, 2.0]])
    assert norm_cdf(x).shape == (2, 2)
    assert isinstance(norm_cdf(0.3), float)


# -- design ------------------------------------------------------------------


def test_design_derived_fields(schiz):
    assert schiz.K == pytest.approx(1.6 / 15.0)
    assert schiz.drift == pytest.approx(1.53837, abs=5e-6)
    assert schiz.c_crit == pytest.approx(1.959964, abs=1e-6)
    assert schiz.w1 == pytest.approx(math.sqrt(208 / 442))
    assert schiz.w2 == pytest.approx(math.sqrt(234 / 442))
    assert schiz.w1**2 + schiz.w2**2 == pytest.approx(1.0, abs=1e-12)


def test_cpz_design_reconstruction(cpzd):
    assert cpzd.K == pytest.approx(0.145)
    assert cpzd.c_crit == pytest.approx(1.96, abs=1e-12)
    assert cpzd.w1 == pytest.approx(1 / math.sqrt(2))


@pytest.mark.parametrize(
    "kw",
    [
        dict(sigma=0),
        dict(sigma=-1),
        dict(theta_alt=0),
        dict(n1=442),
        dict(n1=0),
        dict(n_min=900),
        dict(alpha=0.5),
        dict(alpha=0),
        dict(w1=0.5, w2=0.5),
        dict(w1=0.6),
        dict(sigma=math.nan),
    ],
)
def test_design_invariants(kw):
    base = dict(sigma=7.5, theta_alt=1.6, n1=208, n_min=442, n_max=884)
    base.update(kw)
    with pytest.raises(ValidationError):
        DesignParams(**base)


def test_design_replace_rederives_weights(schiz):
    d = schiz.replace(n1=80)
    assert d.w1 == pytest.approx(math.sqrt(80 / 442))
    assert d.drift == pytest.approx(1.6 / 15 * math.sqrt(80))


# -- interim densities and likelihood ratio ------------------------------------


def test_interim_density(schiz):
    assert interim_density(0.0, NULL, schiz) == pytest.approx(0.3989423, abs=5e-8)
    assert interim_density(schiz.drift, ALTERNATIVE, schiz) == pytest.approx(0.3989423, abs=5e-8)
    assert interim_density(1.0, ALTERNATIVE, schiz) == pytest.approx(oracles.phi(1.0 - schiz.drift), rel=1e-13)
    assert interim_density(1.0, ALTERNATIVE, schiz) == pytest.approx(0.3451, abs=5e-5)
    with pytest.raises(ValidationError):
        interim_density(0.0, "maybe", schiz)


def test_likelihood_ratio_values(schiz):
    d = schiz.drift
    assert likelihood_ratio(d / 2, schiz) == pytest.approx(1.0, abs=1e-14)
    assert likelihood_ratio(1.0, schiz) == pytest.approx(oracles.lr_ratio(1.0, schiz), rel=1e-13)
    assert likelihood_ratio(1.0, schiz) == pytest.approx(0.7011, abs=5e-5)
    assert likelihood_ratio(0.0, schiz) == pytest.approx(math.exp(d * d / 2)) and likelihood_ratio(0.0, schiz) > 1


@given(st.floats(-10, 10))
def test_likelihood_ratio_identity(z):
    from ssr_dynamic.scenarios import schizophrenia_design

    d = schizophrenia_design()
    lhs = likelihood_ratio(z, d) * interim_density(z, ALTERNATIVE, d)
    assert lhs == pytest.approx(interim_density(z, NULL, d), rel=1e-12)


@given(st.floats(-20, 20), st.floats(1e-3, 5))
def test_likelihood_ratio_decreasing(z, h):
    from ssr_dynamic.scenarios import schizophrenia_design

    d = schizophrenia_design()
    assert likelihood_ratio(z, d) > likelihood_ratio(z + h, d)


def test_likelihood_ratio_overflow_is_clamped(schiz):
    with pytest.warns(RuntimeWarning):
        v = likelihood_ratio(-1e4, schiz)
    assert math.isfinite(v) and v > 0
    assert log_likelihood_ratio(-1e4, schiz) > 709
