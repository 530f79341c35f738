import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from dynfloor.bidmodel import (BidObservation, FloorLinkModel, InsufficientDataError,
                               ParameterError, WeibullParams, censored_neg_log_likelihood,
                               estimate_participation, fit_bid_model, fit_censored_bid_model,
                               link_params, sample_truncated, truncated_neg_log_likelihood,
                               weibull_cdf, weibull_pdf, weibull_quantile)

E1 = 1 - math.exp(-1)


def synthetic(rng, n, shape=1.5, scale=2.0, floor_hi=1.0, a1=0.0, b1=0.0):
    m = FloorLinkModel.from_coeffs((math.log(shape), a1, math.log(scale), b1))
    floors = rng.uniform(0, floor_hi, n)
    return m, floors, sample_truncated(rng, m, floors)


# -- distribution primitives -------------------------------------------------------

@pytest.mark.parametrize("b, shape, scale, expected", [
    (0.0, 2.3, 1.7, 0.0),
    (1.7, 2.3, 1.7, E1),
    (2.0, 1.0, 2.0, E1),
])
def test_cdf_examples(b, shape, scale, expected):
    assert weibull_cdf(b, WeibullParams(shape, scale)) == pytest.approx(expected, abs=1e-12)


def test_cdf_pdf_quantile_match_scipy():
    p = WeibullParams(1.7, 2.4)
    ref = stats.weibull_min(c=1.7, scale=2.4)
    x = np.linspace(0.01, 10, 50)
    np.testing.assert_allclose(weibull_cdf(x, p), ref.cdf(x), rtol=1e-12)
    np.testing.assert_allclose(weibull_pdf(x, p), ref.pdf(x), rtol=1e-12)
    q = np.linspace(0, 0.999, 40)
    np.testing.assert_allclose(weibull_quantile(q, p), ref.ppf(q), rtol=1e-10)


def test_quantile_inverts_cdf_and_rejects_one():
    p = WeibullParams(0.8, 1.3)
    x = np.linspace(0, 8, 33)
    np.testing.assert_allclose(weibull_quantile(weibull_cdf(x, p), p), x, rtol=1e-10, atol=1e-12)
    assert weibull_quantile(0.0, p) == 0.0
    with pytest.raises(ValueError):
        weibull_quantile(1.0, p)


def test_pdf_integrates_to_quantile_mass():
    p = WeibullParams(1.5, 2.0)
    mass, _ = integrate.quad(lambda b: float(weibull_pdf(b, p)), 0, weibull_quantile(0.9999, p))
    assert mass == pytest.approx(0.9999, abs=1e-8)


@pytest.mark.parametrize("shape, scale", [(0, 1), (1, -1), (math.nan, 1), (1, math.inf)])
def test_invalid_params(shape, scale):
    with pytest.raises(ParameterError):
        WeibullParams(shape, scale)


def test_negative_bid_argument_rejected():
    with pytest.raises(ValueError):
        weibull_cdf(-1.0, WeibullParams(1, 1))


@settings(max_examples=60, deadline=None)
@given(st.floats(0.3, 6), st.floats(0.2, 5))
def test_cdf_derivative_is_pdf(shape, scale):
    p = WeibullParams(shape, scale)
    grid = np.linspace(0.05, 3 * scale, 25)
    h = 1e-6
    numeric = (weibull_cdf(grid + h, p) - weibull_cdf(grid - h, p)) / (2 * h)
    np.testing.assert_allclose(numeric, weibull_pdf(grid, p), atol=1e-6)


# -- link -------------------------------------------------------------------------

def test_link_examples():
    unit = link_params(3.0, FloorLinkModel.from_coeffs((0, 0, 0, 0)))
    assert (unit.shape, unit.scale) == (1.0, 1.0)
    m = FloorLinkModel.from_coeffs((math.log(1.5), 0, math.log(2), 0.1))
    p = link_params(1.0, m)
    assert p.shape == pytest.approx(1.5)
    assert p.scale == pytest.approx(2 * math.exp(0.1))
    const = FloorLinkModel.constant(1.3, 0.7)
    assert link_params(0.0, const) == link_params(5.0, const)


@given(st.floats(0, 100), st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_link_always_valid(floor, coeffs):
    p = link_params(floor, FloorLinkModel.from_coeffs(coeffs))
    assert p.shape > 0 and p.scale > 0 and math.isfinite(p.shape) and math.isfinite(p.scale)


# -- likelihood -------------------------------------------------------------------

def test_nll_single_observation_closed_form():
    scale = 1.8
    m = FloorLinkModel.constant(1.0, scale)
    nll = truncated_neg_log_likelihood(m, [BidObservation(0.0, scale)])
    assert nll == pytest.approx(-math.log(math.exp(-1) / scale))


def test_nll_zero_floors_equals_untruncated():
    rng = np.random.default_rng(1)
    bids = stats.weibull_min(c=1.4, scale=2.2).rvs(500, random_state=rng)
    m = FloorLinkModel.constant(1.4, 2.2)
    ours = truncated_neg_log_likelihood(m, (np.zeros_like(bids), bids))
    ref = -stats.weibull_min(c=1.4, scale=2.2).logpdf(bids).sum()
    assert ours == pytest.approx(ref, rel=1e-12)


def test_nll_lowest_at_generating_coefficients():
    rng = np.random.default_rng(11)
    m, floors, bids = synthetic(rng, 10_000, a1=0.2, b1=0.15)
    truth = truncated_neg_log_likelihood(m, (floors, bids))
    perturbed = FloorLinkModel.from_coeffs(m.coeffs * 1.1)
    assert truth <= truncated_neg_log_likelihood(perturbed, (floors, bids))


def test_nll_ignores_no_bids_and_needs_bids():
    obs = [BidObservation(0.5, 1.0), BidObservation(0.5, None)]
    m = FloorLinkModel.constant(1.0, 1.0)
    assert truncated_neg_log_likelihood(m, obs) == truncated_neg_log_likelihood(m, obs[:1])
    with pytest.raises(InsufficientDataError):
        truncated_neg_log_likelihood(m, [BidObservation(0.5, None)])


def test_observation_rejects_bid_below_floor():
    with pytest.raises(ValueError):
        BidObservation(1.0, 0.5)


# -- fitting ------------------------------------------------------------------------

def test_fit_recovers_exponential_shape():
    rng = np.random.default_rng(5)
    _, floors, bids = synthetic(rng, 10_000, shape=1.0, scale=1.5)
    fit = fit_bid_model((floors, bids))
    assert 0.9 <= link_params(0.0, fit).shape <= 1.1


def test_fit_recovers_floor_slopes():
    rng = np.random.default_rng(9)
    m, floors, bids = synthetic(rng, 20_000, shape=1.6, scale=1.5, floor_hi=2.0, a1=0.2, b1=0.25)
    fit = fit_bid_model((floors, bids))
    assert fit.diagnostics.converged and fit.diagnostics.floor_dependent
    np.testing.assert_allclose(fit.coeffs, m.coeffs, atol=0.06)


def test_fit_median_relative_error_under_five_percent():
    errors = []
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        _, floors, bids = synthetic(rng, 10_000)
        p = link_params(0.0, fit_bid_model((floors, bids)))
        errors.append(max(abs(p.shape / 1.5 - 1), abs(p.scale / 2.0 - 1)))
    assert np.median(errors) < 0.05


def test_fit_too_few_observations():
    with pytest.raises(InsufficientDataError):
        fit_bid_model([BidObservation(0.1, 1.0 + i / 10) for i in range(10)])


def test_fit_single_floor_falls_back_to_constant_link():
    rng = np.random.default_rng(2)
    bids = 0.5 + stats.weibull_min(c=2, scale=1).rvs(2000, random_state=rng)
    fit = fit_bid_model((np.full(2000, 0.5), bids))
    assert not fit.diagnostics.floor_dependent
    assert fit.coeffs[1] == 0.0 and fit.coeffs[3] == 0.0


def test_censored_fit_recovers_latent_and_participation():
    rng = np.random.default_rng(21)
    n, rate = 30_000, 0.7
    m = FloorLinkModel.from_coeffs((math.log(1.8), 0.1, math.log(1.2), 0.2))
    floors = rng.uniform(0, 1.5, n)
    shape = np.exp(m.coeffs[0] + m.coeffs[1] * floors)
    scale = np.exp(m.coeffs[2] + m.coeffs[3] * floors)
    latent = scale * rng.weibull(shape)
    present = rng.random(n) < rate
    bids = np.where(present & (latent >= floors), latent, np.nan)
    link, part = fit_censored_bid_model((floors, bids))
    assert link.diagnostics.converged
    assert part.rate == pytest.approx(rate, abs=0.02)
    np.testing.assert_allclose(link.coeffs, m.coeffs, atol=0.08)
    assert censored_neg_log_likelihood(link, part.rate, (floors, bids)) <= \
        censored_neg_log_likelihood(m, rate, (floors, bids)) + 1e-6


# -- participation ------------------------------------------------------------------

@pytest.mark.parametrize("responses, expected", [(400, 0.4), (1000, 1.0), (0, 0.0)])
def test_participation_ratio(responses, expected):
    obs = [BidObservation(0.0, 1.0 if i < responses else None) for i in range(1000)]
    assert estimate_participation(obs).rate == pytest.approx(expected)


def test_participation_needs_requests():
    with pytest.raises(InsufficientDataError):
        estimate_participation([])
