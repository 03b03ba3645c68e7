import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vwsynth.model import (
    Dataset,
    EvaluationError,
    Family,
    ModelSpec,
    PriorConfig,
    Theta,
    log_lik_matrix,
    log_lik_record,
    log_prior,
    nb_logpmf,
    pseudo_log_lik,
)

# mpmath at 40 digits
POIS_2_3 = -1.7123179275482190726
POIS_2_5 = -3.3217558399823194472
NB_100_5_100 = -4.7604692184117277229
NB_SALARY = -11.999588377519648581  # x=95000, mu=107609, phi=2.38

POISSON = ModelSpec(Family.POISSON)
NB = ModelSpec(Family.NEGATIVE_BINOMIAL)
MIX = ModelSpec(Family.NEGATIVE_BINOMIAL_MIXTURE, mixture_weights=(0.2, 0.8))


def test_poisson_record_matches_oracle():
    d = Dataset(np.array([3, 5]))
    assert log_lik_record(POISSON, Theta.from_mean(2.0), 0, d) == pytest.approx(POIS_2_3, rel=1e-13)


def test_poisson_zero_count_is_minus_mean():
    d = Dataset(np.array([0, 0]))
    assert log_lik_record(POISSON, Theta.from_mean(1.0), 1, d) == pytest.approx(-1.0, abs=1e-15)


@pytest.mark.parametrize("x,mu,phi,expected", [
    (100, 100.0, 5.0, NB_100_5_100),
    (95000, 107609.0, 2.38, NB_SALARY),
])
def test_nb_record_matches_oracle(x, mu, phi, expected):
    d = Dataset(np.array([x, 0]))
    assert log_lik_record(NB, Theta.from_mean(mu, phi), 0, d) == pytest.approx(expected, rel=1e-11)


def test_nb_approaches_poisson_for_huge_phi():
    x = np.arange(0, 40)
    nb = nb_logpmf(x, math.log(7.0), 1e12)
    pois = log_lik_matrix(POISSON, np.array([[math.log(7.0)]]), x)[0]
    np.testing.assert_allclose(nb, pois, rtol=1e-9, atol=1e-9)


def test_record_index_out_of_range():
    with pytest.raises(IndexError):
        log_lik_record(POISSON, Theta.from_mean(1.0), 2, Dataset(np.array([1, 2])))


def test_overflow_raises_evaluation_error():
    d = Dataset(np.array([1, 2]))
    with pytest.raises(EvaluationError) as info:
        log_lik_record(POISSON, Theta(np.array([1000.0])), 1, d)
    assert info.value.record_index == 1


@pytest.mark.parametrize("records", [[1], [], [1, -1], [1.5, 2], [np.nan, 1]])
def test_dataset_rejects_bad_records(records):
    with pytest.raises(ValueError):
        Dataset(np.array(records))


def test_mixture_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(Family.NEGATIVE_BINOMIAL_MIXTURE, mixture_weights=(1.0,))
    with pytest.raises(ValueError):
        ModelSpec(Family.NEGATIVE_BINOMIAL_MIXTURE, mixture_weights=(0.3, 0.3))
    with pytest.raises(ValueError):
        ModelSpec(Family.NEGATIVE_BINOMIAL, covariates=np.ones((3, 1))).design(4)


def test_theta_rejects_nonpositive_phi():
    with pytest.raises(ValueError):
        Theta(np.array([0.0]), np.array([0.0]))


def test_pseudo_log_lik_two_records():
    d = Dataset(np.array([3, 5]))
    got = pseudo_log_lik(POISSON, Theta.from_mean(2.0), d, np.array([1.0, 0.5]))
    assert got == pytest.approx(POIS_2_3 + 0.5 * POIS_2_5, rel=1e-13)


@pytest.mark.parametrize("spec,theta", [
    (POISSON, Theta.from_mean(4.0)),
    (NB, Theta.from_mean(90.0, 5.0)),
    (MIX, Theta.from_mean(100.0, 5.0, 20.0)),
])
def test_unit_weights_equal_unweighted_likelihood(spec, theta):
    x = np.array([0, 3, 17, 100, 250])
    d = Dataset(x)
    plain = sum(log_lik_record(spec, theta, i, d) for i in range(d.n))
    assert pseudo_log_lik(spec, theta, d, np.ones(d.n)) == pytest.approx(plain, rel=1e-14)
    assert pseudo_log_lik(spec, theta, d, np.zeros(d.n)) == 0.0


def test_zero_weight_skips_extreme_record():
    d = Dataset(np.array([10**7, 1]))
    theta = Theta(np.array([-700.0]))  # record 0 is essentially impossible
    val = pseudo_log_lik(POISSON, theta, d, np.array([0.0, 1.0]))
    assert math.isfinite(val)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 0.5), st.floats(0, 0.5)), min_size=2, max_size=8),
       st.floats(0.5, 200), st.floats(0.3, 50))
def test_pseudo_log_lik_linear_in_weights(pairs, mu, phi):
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    x = np.arange(len(pairs)) * 7
    d = Dataset(x)
    th = Theta.from_mean(mu, phi)
    lhs = pseudo_log_lik(NB, th, d, a) + pseudo_log_lik(NB, th, d, b)
    rhs = pseudo_log_lik(NB, th, d, a + b)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def _poisson_tail_max(mu):
    # Chernoff-style cut well past the mean; tail mass < 1e-8
    return int(mu + 12 * math.sqrt(mu) + 60)


@pytest.mark.parametrize("spec,mu,phis", [
    (POISSON, 0.5, ()), (POISSON, 100.0, ()),
    (NB, 3.0, (0.8,)), (NB, 100.0, (5.0,)), (NB, 100.0, (20.0,)),
    (MIX, 100.0, (5.0, 20.0)),
])
def test_pmf_normalises(spec, mu, phis):
    if spec.family is Family.POISSON:
        xmax = _poisson_tail_max(mu)
    else:
        # NB tail: use a generous multiple of the sd for the smallest phi
        phi = min(phis)
        sd = math.sqrt(mu + mu * mu / phi)
        xmax = int(mu + 40 * sd + 200)
    x = np.arange(xmax + 1)
    row = np.concatenate([[math.log(mu)], phis])
    total = np.exp(log_lik_matrix(spec, row[None, :], x)[0]).sum()
    assert 1 - 1e-6 <= total <= 1 + 1e-12


def test_prior_mode_matches_grid_scan():
    pr = ModelSpec(Family.NEGATIVE_BINOMIAL)
    betas = np.linspace(-3, 3, 61)
    log_phis = np.linspace(-4, 3, 71)
    grid = np.array([[log_prior(pr, Theta(np.array([b]), np.array([math.exp(lp)])))
                      for lp in log_phis] for b in betas])
    i, j = np.unravel_index(np.argmax(grid), grid.shape)
    assert betas[i] == pytest.approx(0.0, abs=1e-12)
    # half-Cauchy(0, 5) on 1/phi has its log-phi-space mode at phi = 1/5
    assert log_phis[j] == pytest.approx(math.log(0.2), abs=0.1)
    assert np.isfinite(grid.max())


def test_prior_symmetric_in_beta():
    for b in (0.3, 1.7, 12.0):
        lp = log_prior(NB, Theta(np.array([b]), np.array([2.0])))
        ln = log_prior(NB, Theta(np.array([-b]), np.array([2.0])))
        assert lp == pytest.approx(ln, rel=1e-14)


@pytest.mark.parametrize("phi", [1e-8, 1e-30, 1e-150])
def test_prior_finite_as_phi_vanishes(phi):
    assert math.isfinite(log_prior(NB, Theta(np.array([0.0]), np.array([phi]))))


def test_gamma_mean_prior_only_for_poisson():
    with pytest.raises(ValueError):
        ModelSpec(Family.NEGATIVE_BINOMIAL, prior=PriorConfig(kind="gamma_mean"))


def test_spec_roundtrip():
    spec = ModelSpec(Family.NEGATIVE_BINOMIAL_MIXTURE, mixture_weights=(0.2, 0.8),
                     prior=PriorConfig(beta_scale=1.5))
    again = ModelSpec.from_dict(spec.to_dict())
    assert again.ident == spec.ident
