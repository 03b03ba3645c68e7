import csv
import math

import numpy as np
import pytest
from scipy import stats

from vwsynth.model import Dataset, Family, ModelSpec, PriorConfig
from vwsynth.sampler import (
    SamplerConfig,
    effective_sample_size,
    sample_pseudo_posterior,
    split_rhat,
)

NB = ModelSpec(Family.NEGATIVE_BINOMIAL)
POISSON_GAMMA = ModelSpec(Family.POISSON, prior=PriorConfig(kind="gamma_mean", gamma_shape=2.0, gamma_rate=1.0))


def test_conjugate_poisson_gamma_posterior():
    # Gamma(2, 1) prior on mu; weights (1, .5) on x = (3, 5) -> Gamma(7.5, 2.5)
    d = Dataset(np.array([3, 5]))
    draws = sample_pseudo_posterior(POISSON_GAMMA, d, np.array([1.0, 0.5]),
                                    SamplerConfig(n_keep=2000, rng_seed=11))
    mu = np.exp(draws.params[:, 0])
    assert draws.converged
    assert mu.mean() == pytest.approx(3.0, abs=0.12)
    assert mu.std() == pytest.approx(math.sqrt(7.5) / 2.5, rel=0.1)


def test_zero_weights_recover_the_prior():
    d = Dataset(np.array([3, 5, 9]))
    draws = sample_pseudo_posterior(NB, d, np.zeros(3), SamplerConfig(n_keep=2000, rng_seed=1))
    qs = [0.25, 0.5, 0.75]
    beta_q = np.quantile(draws.params[:, 0], qs)
    np.testing.assert_allclose(beta_q, stats.t(3, scale=2.5).ppf(qs), atol=0.4)
    recip_q = np.quantile(1.0 / draws.params[:, 1], qs)
    np.testing.assert_allclose(recip_q, stats.halfcauchy(scale=5.0).ppf(qs), rtol=0.2)


def test_same_seed_is_bit_identical():
    d = Dataset(np.array([4, 8, 15, 16, 23, 42]))
    cfg = SamplerConfig(n_warmup=200, n_keep=200, rng_seed=5)
    a = sample_pseudo_posterior(NB, d, np.ones(d.n), cfg)
    b = sample_pseudo_posterior(NB, d, np.ones(d.n), cfg)
    assert np.array_equal(a.params, b.params)
    c = sample_pseudo_posterior(NB, d, np.ones(d.n), SamplerConfig(n_warmup=200, n_keep=200, rng_seed=6))
    assert not np.array_equal(a.params, c.params)


def test_doubling_draws_keeps_the_mean():
    rng = np.random.default_rng(3)
    d = Dataset(rng.negative_binomial(5, 5 / 105, size=300))
    short = sample_pseudo_posterior(NB, d, np.ones(d.n), SamplerConfig(n_keep=1000, rng_seed=2))
    long = sample_pseudo_posterior(NB, d, np.ones(d.n), SamplerConfig(n_keep=2000, rng_seed=2))
    sd = long.params[:, 0].std()
    assert abs(short.params[:, 0].mean() - long.params[:, 0].mean()) < 0.25 * sd


def test_constant_data_converges():
    d = Dataset(np.full(50, 7))
    draws = sample_pseudo_posterior(ModelSpec(Family.POISSON), d, np.ones(50), SamplerConfig(rng_seed=4))
    assert draws.converged
    assert np.exp(draws.params[:, 0]).mean() == pytest.approx(7.0, rel=0.05)


def test_negative_binomial_recovers_generating_parameters():
    rng = np.random.default_rng(20)
    d = Dataset(rng.negative_binomial(5, 5 / 105, size=1000))
    draws = sample_pseudo_posterior(NB, d, np.ones(d.n), SamplerConfig(rng_seed=9))
    assert draws.converged
    assert np.exp(draws.params[:, 0]).mean() == pytest.approx(100.0, rel=0.05)
    assert np.median(draws.params[:, 1]) == pytest.approx(5.0, rel=0.2)
    assert min(draws.ess.values()) > 200


def test_mixture_fit_runs_and_converges():
    rng = np.random.default_rng(21)
    comp = rng.random(600) < 0.2
    x = np.where(comp, rng.negative_binomial(5, 5 / 105, 600), rng.negative_binomial(20, 20 / 120, 600))
    spec = ModelSpec(Family.NEGATIVE_BINOMIAL_MIXTURE, mixture_weights=(0.2, 0.8))
    draws = sample_pseudo_posterior(spec, Dataset(x), np.ones(600), SamplerConfig(rng_seed=1))
    assert draws.params.shape == (4000, 3)
    assert draws.max_rhat < 1.1


def test_draws_csv(tmp_path):
    d = Dataset(np.array([1, 2, 3]))
    draws = sample_pseudo_posterior(NB, d, np.ones(3), SamplerConfig(n_chains=2, n_warmup=50, n_keep=30))
    path = tmp_path / "draws.csv"
    draws.to_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["chain", "iter", "beta0", "phi"]
    assert len(rows) == 61
    np.testing.assert_array_equal(np.array(rows[1:], dtype=float)[:, 2:], draws.params)


def test_provenance_records_inputs():
    d = Dataset(np.array([1, 2, 3]))
    draws = sample_pseudo_posterior(NB, d, np.ones(3), SamplerConfig(n_warmup=20, n_keep=20))
    assert draws.provenance["spec"] == NB.ident
    assert draws.provenance["dataset"] == d.ident


def test_rejects_bad_weights_and_config():
    d = Dataset(np.array([1, 2, 3]))
    with pytest.raises(ValueError):
        sample_pseudo_posterior(NB, d, np.array([1.0, 1.2, 0.0]))
    with pytest.raises(ValueError):
        sample_pseudo_posterior(NB, d, np.ones(2))
    with pytest.raises(ValueError):
        SamplerConfig(target_accept=0.7)


def test_rhat_and_ess_on_known_chains():
    rng = np.random.default_rng(0)
    iid = rng.standard_normal((4, 1000))
    assert split_rhat(iid) == pytest.approx(1.0, abs=0.01)
    assert effective_sample_size(iid) == pytest.approx(4000, rel=0.15)
    shifted = iid + np.arange(4)[:, None]
    assert split_rhat(shifted) > 1.5
    ar = np.zeros((4, 2000))
    for t in range(1, 2000):
        ar[:, t] = 0.9 * ar[:, t - 1] + rng.standard_normal(4)
    # AR(1) with rho = .9 has ESS about N (1 - rho) / (1 + rho)
    assert effective_sample_size(ar) == pytest.approx(8000 * 0.1 / 1.9, rel=0.35)
