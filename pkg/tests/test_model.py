import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize

from nestpr.model import (EffectiveModel, LikelihoodSpec, PriorSpec, RepartitionScheme,
                          effective_log_pair, log_likelihood, log_prior, log_zpi, prior_cdf,
                          prior_transform)

LOG_2PI = math.log(2 * math.pi)

# every prior family exercised by the shipped experiments
SHIPPED_PRIORS = [
    PriorSpec.gaussian(0.0, 4.0, -50.0, 50.0),
    PriorSpec.gaussian([0.0, 0.0], 0.4, -5.0, 5.0),
    PriorSpec.gaussian([0.0] * 15, 0.4, -5.0, 5.0),
    PriorSpec.uniform(0.0, 50.0),
]


# -- PriorSpec ---------------------------------------------------------------

def test_prior_rejects_bad_fields():
    with pytest.raises(ValueError):
        PriorSpec.gaussian(0.0, 0.0, -1, 1)
    with pytest.raises(ValueError):
        PriorSpec.gaussian(0.0, 1.0, 1, -1)
    with pytest.raises(ValueError):
        PriorSpec.uniform(0.0, np.inf)


def test_prior_dimension_from_any_field():
    p = PriorSpec.gaussian([1.0, 2.0, 3.0], 0.5, -5, 5)
    assert p.dim == 3
    assert np.all(p.lo == -5)


# -- log_prior ---------------------------------------------------------------

def test_log_prior_gaussian_peak():
    p = PriorSpec.gaussian(0.0, 4.0, -50.0, 50.0)
    expected = -math.log(4.0) - 0.5 * LOG_2PI
    assert abs(log_prior(p, [0.0]) - expected) <= 1e-10


def test_log_prior_uniform_box():
    p = PriorSpec.uniform(0.0, 50.0)
    assert log_prior(p, [25.0]) == pytest.approx(-math.log(50.0), abs=1e-15)


def test_log_prior_outside_support():
    p = PriorSpec.gaussian(0.0, 4.0, -50.0, 50.0)
    assert log_prior(p, [60.0]) == -np.inf


def test_log_prior_dimension_mismatch():
    p = PriorSpec.gaussian([0.0, 0.0], 1.0, -5, 5)
    with pytest.raises(ValueError):
        log_prior(p, [0.0, 0.0, 0.0])


def test_log_prior_truncated_integrates_to_one():
    p = PriorSpec.gaussian(3.0, 2.0, 0.0, 4.0)
    val, _ = integrate.quad(lambda t: math.exp(log_prior(p, [t])), 0.0, 4.0)
    assert val == pytest.approx(1.0, abs=1e-10)


# -- log_likelihood ----------------------------------------------------------

def test_gaussian_likelihood_single_point():
    lik = LikelihoodSpec.gaussian([[0.0]], 1.0)
    assert log_likelihood(lik, [0.0]) == pytest.approx(-0.5 * LOG_2PI, abs=1e-14)


def test_gaussian_likelihood_zero_residuals():
    lik = LikelihoodSpec.gaussian(np.full((20, 1), 40.0), 1.0)
    assert log_likelihood(lik, [40.0]) == pytest.approx(-20 * 0.5 * LOG_2PI, abs=1e-12)


def test_laplace_likelihood_direct_substitution():
    lik = LikelihoodSpec.laplace([[0.0]], 0.1)
    expected = math.log(1 / (2 * 0.1)) - 1.0
    # independent evaluation of the density
    direct = math.log(1 / (2 * 0.1) * math.exp(-abs(0.1 - 0.0) / 0.1))
    assert log_likelihood(lik, [0.1]) == pytest.approx(expected, abs=1e-12)
    assert direct == pytest.approx(expected, abs=1e-12)


def test_gaussian_sufficient_stats_match_direct_sum():
    rng = np.random.default_rng(0)
    data = rng.normal(2.0, 0.3, size=(7, 3))
    lik = LikelihoodSpec.gaussian(data, [0.3, 0.5, 1.0])
    th = rng.normal(size=3)
    s = lik.noise_scale
    direct = np.sum(-0.5 * np.log(2 * np.pi * s ** 2) - (th - data) ** 2 / (2 * s ** 2))
    assert log_likelihood(lik, th) == pytest.approx(direct, rel=1e-12)


def test_likelihood_validation():
    with pytest.raises(ValueError):
        LikelihoodSpec.gaussian([[0.0]], 0.0)
    with pytest.raises(ValueError):
        LikelihoodSpec("cauchy", [[0.0]], 1.0)
    with pytest.raises(ValueError):
        log_likelihood(LikelihoodSpec.gaussian([[0.0, 1.0]], 1.0), [0.0])


def test_constant_likelihood():
    lik = LikelihoodSpec.constant(-3.5, 2)
    assert log_likelihood(lik, [[0.1, 0.2], [3.0, -1.0]]).tolist() == [-3.5, -3.5]


# -- log_zpi -----------------------------------------------------------------

def _quad_zpi(p, beta):
    def f(t):
        return math.exp(beta * log_prior(p, [t]))
    pts = [p.mean[0]] if p.kind == "gaussian" else None
    val, _ = integrate.quad(f, p.lo[0], p.hi[0], points=pts, limit=200,
                            epsabs=0, epsrel=1e-13)
    return math.log(val)


def test_log_zpi_normalized_at_one():
    for p in SHIPPED_PRIORS:
        assert log_zpi(p, 1.0) == pytest.approx(0.0, abs=1e-12)


def test_log_zpi_beta_zero_is_log_volume():
    assert log_zpi(PriorSpec.gaussian(0.0, 4.0, -50, 50), 0.0, support=([0.0], [50.0])) \
        == pytest.approx(math.log(50.0), abs=1e-15)
    assert log_zpi(PriorSpec.uniform(0.0, 50.0), 0.0) == pytest.approx(math.log(50.0))


def test_log_zpi_quarter_matches_quadrature():
    p = PriorSpec.gaussian(0.0, 4.0, -50.0, 50.0)
    closed = log_zpi(p, 0.25)
    # untruncated closed form for reference: (2 pi 16)^(3/8) * 0.25^(-1/2)
    untrunc = 0.375 * math.log(2 * math.pi * 16) - 0.5 * math.log(0.25)
    assert closed == pytest.approx(untrunc, abs=1e-6)
    assert closed == pytest.approx(_quad_zpi(p, 0.25), rel=1e-8)


@pytest.mark.parametrize("beta", [0.01, 0.05, 0.3, 0.7, 0.95])
def test_log_zpi_matches_quadrature_1d(beta):
    for p in (PriorSpec.gaussian(0.0, 4.0, -50, 50), PriorSpec.gaussian(1.0, 2.0, -1.5, 6.0)):
        assert log_zpi(p, beta) == pytest.approx(_quad_zpi(p, beta), rel=1e-8)


@pytest.mark.parametrize("beta", [0.05, 0.4])
def test_log_zpi_matches_quadrature_2d(beta):
    p = PriorSpec.gaussian([0.0, 0.5], [0.4, 0.8], -2.0, 2.0)

    def f(y, x):
        return math.exp(beta * log_prior(p, [x, y]))
    val, _ = integrate.dblquad(f, -2, 2, -2, 2, epsabs=0, epsrel=1e-12)
    assert log_zpi(p, beta) == pytest.approx(math.log(val), rel=1e-8)


def test_log_zpi_rejects_beta_outside_unit_interval():
    p = SHIPPED_PRIORS[0]
    for b in (-0.1, 1.1):
        with pytest.raises(ValueError):
            log_zpi(p, b)


@pytest.mark.parametrize("prior", SHIPPED_PRIORS[:3])
def test_log_zpi_nonincreasing_in_beta(prior):
    betas = np.linspace(0.0, 1.0, 101)
    z = [log_zpi(prior, b) for b in betas]
    assert np.all(np.diff(z) <= 1e-12)


# -- repartitioning ----------------------------------------------------------

def _model(prior, beta, **kw):
    rng = np.random.default_rng(1)
    data = rng.normal(1.0, 0.5, size=(3, prior.dim))
    lik = LikelihoodSpec.gaussian(data, 0.5)
    scheme = None if beta is None else RepartitionScheme.power(prior, beta, **kw)
    return EffectiveModel(prior, lik, scheme)


def test_identity_at_beta_one():
    p = SHIPPED_PRIORS[0]
    m = _model(p, 1.0)
    th = np.array([1.3])
    lpt, llt = effective_log_pair(m, th)
    assert lpt == pytest.approx(log_prior(p, th), abs=1e-14)
    assert llt == pytest.approx(log_likelihood(m.likelihood, th), abs=1e-14)


def test_beta_zero_pair_uniform_support():
    p = PriorSpec.gaussian(0.0, 4.0, -50, 50)
    m = _model(p, 0.0, support=([0.0], [50.0]))
    th = np.array([12.0])
    lpt, llt = effective_log_pair(m, th)
    assert lpt == pytest.approx(-math.log(50.0), abs=1e-14)
    expected = log_likelihood(m.likelihood, th) + log_prior(p, th) + math.log(50.0)
    assert llt == pytest.approx(expected, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(beta=st.sampled_from([0.0, 0.05, 0.3, 0.7, 1.0]),
       idx=st.integers(0, len(SHIPPED_PRIORS) - 1),
       seed=st.integers(0, 2 ** 32 - 1))
def test_repartition_identity_property(beta, idx, seed):
    p = SHIPPED_PRIORS[idx]
    m = _model(p, beta)
    rng = np.random.default_rng(seed)
    th = p.lo + (p.hi - p.lo) * rng.random((8, p.dim))
    lpt, llt = m.log_pair(th)
    base = log_prior(p, th) + log_likelihood(m.likelihood, th)
    assert np.all(np.abs((lpt + llt) - base) < 1e-10)


def test_unnormalized_scheme_volume():
    p = SHIPPED_PRIORS[1]
    m = _model(p, 0.3, normalized=False)
    assert m.log_prior_volume == pytest.approx(log_zpi(p, 0.3))
    th = np.array([0.2, -0.1])
    lpt, _ = m.log_pair(th)
    assert lpt == pytest.approx(0.3 * log_prior(p, th))


def test_general_repartition_with_modified_prior():
    p = PriorSpec.gaussian([0.0, 0.0], 0.4, -5, 5)
    q = PriorSpec.gaussian([1.0, 1.0], 2.0, -5, 5)
    lik = LikelihoodSpec.gaussian([[1.8, 2.1]], 0.1)
    m = EffectiveModel(p, lik, modified_prior=q)
    th = np.array([[1.9, 2.0], [-3.0, 4.0]])
    lpt, llt = m.log_pair(th)
    assert np.allclose(lpt, log_prior(q, th))
    assert np.allclose(lpt + llt, log_prior(p, th) + log_likelihood(lik, th), atol=1e-10)


def test_effective_model_rejects_both_schemes():
    p = SHIPPED_PRIORS[0]
    lik = LikelihoodSpec.gaussian([[0.0]], 1.0)
    with pytest.raises(ValueError):
        EffectiveModel(p, lik, RepartitionScheme.power(p, 0.5), modified_prior=p)


# -- prior_transform ---------------------------------------------------------

def test_transform_uniform_midpoint():
    assert prior_transform(PriorSpec.uniform(0.0, 50.0), [0.5])[0] == pytest.approx(25.0)


def test_transform_gaussian_median():
    assert prior_transform(PriorSpec.gaussian(0.0, 4.0, -50, 50), [0.5])[0] == \
        pytest.approx(0.0, abs=1e-12)


def test_transform_gaussian_by_bisection():
    p = PriorSpec.gaussian(0.0, 4.0, -50, 50)
    target = 0.8413
    # oracle: bisect the integrated density
    def cdf(t):
        val, _ = integrate.quad(lambda s: math.exp(log_prior(p, [s])), -50, t,
                                epsabs=0, epsrel=1e-13, limit=200)
        return val - target
    ref = optimize.bisect(cdf, 0.0, 10.0, xtol=1e-12)
    got = prior_transform(p, [target])[0]
    assert got == pytest.approx(ref, abs=1e-6)
    assert got == pytest.approx(4.0, abs=2e-3)


def test_transform_rejects_outside_cube():
    p = SHIPPED_PRIORS[1]
    with pytest.raises(ValueError):
        prior_transform(p, [0.5, 1.2])
    with pytest.raises(ValueError):
        prior_transform(p, [-0.1, 0.5])


@pytest.mark.parametrize("prior", [PriorSpec.gaussian(0.0, 4.0, -50, 50),
                                   PriorSpec.gaussian(3.0, 2.0, 0.0, 4.0),
                                   PriorSpec.gaussian(0.0, 0.4, -5, 5),
                                   PriorSpec.uniform(0.0, 50.0)])
def test_transform_inverts_cdf_on_grid(prior):
    u = (np.arange(1000) + 0.5) / 1000
    th = prior_transform(prior, u[:, None])
    assert np.all(np.diff(th[:, 0]) > 0)
    assert np.all(prior.inside(th))
    back = prior_cdf(prior, th)[:, 0]
    assert np.max(np.abs(back - u)) < 1e-9


def test_transform_far_tail_resolution():
    # the largest double below one maps to the last representable quantile
    p = PriorSpec.gaussian(0.0, 4.0, -50, 50)
    top = prior_transform(p, [1.0 - 2.0 ** -53])[0]
    assert 32.0 < top < 34.0
    assert prior_transform(p, [1.0])[0] == 50.0
