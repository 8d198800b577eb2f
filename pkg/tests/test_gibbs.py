import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppmcapm.gibbs import (ChainConfig, GibbsState, alpha_mixture, alpha_star_conditional, batch_means_mcse,
                           beta_conditional, initial_state, run_fixed_partition, run_unconstrained,
                           sample_fixed_partition, sample_unconstrained, sigma2_conditional, step_alpha_mixture,
                           step_beta, step_sigma2, sweep_fixed, sweep_unconstrained)
from ppmcapm.model import AssetSeries, HyperParams, Partition
from ppmcapm.rand import make_rng

from .oracles import mixture_posterior, nig_posterior


def raw(y, x):
    # the step functions only read y, x and T, which lets the tiny
    # hand-computed cases below use fewer than three periods
    y, x = np.asarray(y, float), np.asarray(x, float)
    return SimpleNamespace(y=y, x=x, T=len(y))


def synthetic(T=50, beta=1.2, sigma=0.05, shifts=None, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 0.05, T)
    y = 0.01 + beta * x + rng.normal(0.0, sigma, T)
    for t, s in (shifts or {}).items():
        y[t - 1] += s
    return AssetSeries("S", y, x)


# -- beta ---------------------------------------------------------------------------

def test_beta_conditional_hand_value():
    state = GibbsState([0.0, 0.0], 0.5, 1.0)
    mean, var = beta_conditional(state, raw([1, 2], [1, 2]), HyperParams(b=1.0, gamma0_sq=1000.0))
    assert mean == pytest.approx(1.0, abs=1e-15)
    assert var == pytest.approx(1.0 / 5.001, rel=1e-14)


def test_beta_without_market_information_is_prior():
    h = HyperParams(b=0.8, gamma0_sq=2.0)
    data = raw([0.3, -0.1, 0.2], [0.0, 0.0, 0.0])
    state = GibbsState([0.1, 0.1, 0.1], 0.0, 0.5)
    rng = make_rng(0)
    n = 100_000
    draws = np.array([step_beta(state, data, h, rng) for _ in range(n)])
    assert abs(draws.mean() - 0.8) < 4 * math.sqrt(2.0 * 0.5 / n)
    assert draws.var() == pytest.approx(1.0, rel=0.02)


def test_beta_conditional_ols_limit():
    x = np.array([0.1, -0.2, 0.05, 0.3])
    y = 1.7 * x + np.array([0.01, -0.02, 0.0, 0.015])
    state = GibbsState(np.zeros(4), 0.0, 1.0)
    mean, _ = beta_conditional(state, raw(y, x), HyperParams(gamma0_sq=1e12))
    assert mean == pytest.approx(float(y @ x / (x @ x)), abs=1e-6)


# -- sigma2 -------------------------------------------------------------------------

def test_sigma2_shape_single_period():
    shape, _ = sigma2_conditional(GibbsState([0.0], 1.0, 1.0), raw([1.0], [1.0]), HyperParams())
    assert shape == pytest.approx(HyperParams().v0 + 1.5)


def test_sigma2_perfect_fit_keeps_prior_scale():
    h = HyperParams(a=0.0, b=1.0, v0=3.0, lambda0=0.2)
    x = np.array([0.1, 0.2, -0.1, 0.0])
    state = GibbsState([0.0, 0.0, 0.0, 0.0], 1.0, 1.0)
    data = raw(1.0 * x, x)
    shape, scale = sigma2_conditional(state, data, h)
    assert scale == pytest.approx(0.2, abs=1e-15)
    assert shape == pytest.approx(3.0 + (4 + 1 + 1) / 2)
    rng = make_rng(1)
    n = 100_000
    draws = np.array([step_sigma2(state, data, h, rng) for _ in range(n)])
    mean = scale / (shape - 1)
    sd = mean / math.sqrt(shape - 2)
    assert abs(draws.mean() - mean) < 4 * sd / math.sqrt(n)


def _scale_by_loops(alpha, beta, y, x, h):
    total = h.lambda0 + (beta - h.b) ** 2 / (2 * h.gamma0_sq)
    seen = []
    for v in alpha:
        if v not in seen:
            seen.append(v)
            total += (v - h.a) ** 2 / (2 * h.tau0_sq)
    for t in range(len(y)):
        total += 0.5 * (y[t] - alpha[t] - beta * x[t]) ** 2
    return total


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sigma2_scale_matches_independent_sum(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(3, 12))
    values = rng.normal(0, 1, 4)
    alpha = values[rng.integers(0, 4, T)]
    beta = float(rng.normal())
    y, x = rng.normal(size=T), rng.normal(size=T)
    h = HyperParams(a=float(rng.normal()), b=float(rng.normal()), tau0_sq=float(rng.uniform(0.5, 5)),
                    gamma0_sq=float(rng.uniform(0.5, 5)), lambda0=float(rng.uniform(0.01, 1)))
    state = GibbsState(alpha, beta, 1.0)
    shape, scale = sigma2_conditional(state, raw(y, x), h)
    assert scale == pytest.approx(_scale_by_loops(alpha, beta, y, x, h), abs=1e-12)
    assert shape == h.v0 + (T + len(set(alpha.tolist())) + 1) / 2


# -- alpha mixture ------------------------------------------------------------------

def test_new_value_component_follows_prior_when_tau_tiny():
    h = HyperParams(a=0.0, tau0_sq=1e-12)
    state = GibbsState([0.5, 0.5, 0.2], 1.0, 0.3)
    _, _, new_mean, new_var = alpha_mixture(state, raw([3.0, 1.0, 0.5], [0.1, 0.2, 0.3]), h, 1)
    assert abs(new_mean - h.a) < 1e-6
    assert new_var < 1e-12


def test_mixture_weights_match_pointwise_sum():
    rng = np.random.default_rng(3)
    y, x = rng.normal(size=7), rng.normal(size=7)
    alpha = np.array([0.1, 0.1, -0.4, 0.1, 0.7, -0.4, 0.2])
    h = HyperParams(a=0.05, tau0_sq=2.0, c=3.0)
    state = GibbsState(alpha, 0.9, 0.4)
    t = 4
    values, lw, _, _ = alpha_mixture(state, raw(y, x), h, t)
    r = y[t - 1] - 0.9 * x[t - 1]
    per_j = {}
    for j in range(7):
        if j != t - 1:
            per_j.setdefault(alpha[j], []).append(-(r - alpha[j]) ** 2 / (2 * 0.4))
    expect = [np.logaddexp.reduce(per_j[v]) for v in values]
    assert np.allclose(lw[:-1], expect, atol=1e-12)
    assert set(values.tolist()) == set(per_j)
    new = math.log(3.0) - (r - 0.05) ** 2 / (2 * 0.4 * 3.0) - 0.5 * math.log(3.0)
    assert lw[-1] == pytest.approx(new, abs=1e-12)


def test_mixture_stay_probability_two_identical_points():
    h = HyperParams(a=0.0, b=1.0, tau0_sq=1.0, c=1.0)
    data = raw([0.1, 0.1], [0.0, 0.0])
    sigma2 = 0.01
    # stay weight exp(0); fresh weight exp(-(0.1)^2/(2*0.01*2) - log(2)/2)
    fresh = math.exp(-0.01 / 0.04 - 0.5 * math.log(2.0))
    p_stay = 1.0 / (1.0 + fresh)
    rng = make_rng(4)
    n = 100_000
    stays = 0
    for _ in range(n):
        state = GibbsState([0.1, 0.1], 1.0, sigma2)
        step_alpha_mixture(state, data, h, rng, 1)
        stays += state.partition.num_clusters == 1
    assert abs(stays / n - p_stay) < 0.01


def test_mixture_rejects_bad_index():
    state = GibbsState([0.0, 0.0, 0.0], 1.0, 1.0)
    with pytest.raises(ValueError):
        step_alpha_mixture(state, raw([1, 2, 3], [1, 2, 3]), HyperParams(), make_rng(0), 0)


# -- remix --------------------------------------------------------------------------

def test_remix_hand_value():
    h = HyperParams(a=0.0, tau0_sq=1000.0)
    state = GibbsState([0.0, 1.0, 1.0], 1.0, 1.0, Partition([0, 1, 1]))
    means, variances = alpha_star_conditional(state, raw([5.0, 0.0, 0.0], [0.0, 0.0, 0.0]), h)
    assert means[0] == pytest.approx(4.995005, abs=1e-6)
    assert variances[0] == pytest.approx(1 / 1.001)


def test_remix_single_cluster_large_tau():
    data = synthetic(T=20)
    state = GibbsState(np.zeros(20), 1.1, 0.01)
    means, _ = alpha_star_conditional(state, data, HyperParams(tau0_sq=1e12))
    assert means[0] == pytest.approx(np.mean(data.y - 1.1 * data.x), abs=1e-6)


# -- sweeps and chains ---------------------------------------------------------------

def test_python_sweeps_match_compiled_kernel():
    data = synthetic(T=15, shifts={3: 0.3, 9: -0.3})
    h = HyperParams()
    cfg = ChainConfig(sweeps=6, burn_in=0, seed=5)
    chain = sample_unconstrained(data, h, cfg)
    state = initial_state(data, h)
    rng = make_rng(cfg.seed)
    for k in range(cfg.sweeps):
        sweep_unconstrained(state, data, h, rng)
        state.check()
        assert state.beta == pytest.approx(chain.beta[k], rel=1e-10)
        assert state.sigma2 == pytest.approx(chain.sigma2[k], rel=1e-10)
        assert np.allclose(state.alpha, chain.alpha[k], rtol=1e-10, atol=1e-14)
        assert state.partition.num_clusters == chain.num_clusters[k]


def test_python_fixed_sweeps_match_compiled_kernel():
    data = synthetic(T=12)
    h = HyperParams()
    part = Partition.from_clusters([[1, 2, 3, 4, 5, 6, 7, 8, 9], [10, 11], [12]], 12)
    cfg = ChainConfig(sweeps=5, burn_in=0, seed=6)
    chain = sample_fixed_partition(data, part, h, cfg)
    start = initial_state(data, h)
    state = GibbsState(np.full(12, start.alpha[0]), start.beta, start.sigma2, part)
    rng = make_rng(cfg.seed)
    for k in range(cfg.sweeps):
        sweep_fixed(state, data, h, rng)
        state.check()
        assert np.allclose(state.alpha, chain.alpha[k], rtol=1e-10)
        assert state.sigma2 == pytest.approx(chain.sigma2[k], rel=1e-10)


def test_sigma2_positive_and_state_consistent_over_python_chain():
    data = synthetic(T=10, sigma=1e-4, shifts={2: 0.3})
    h = HyperParams()
    state = initial_state(data, h)
    rng = make_rng(7)
    for _ in range(50):
        sweep_unconstrained(state, data, h, rng)
        state.check()


def test_zero_noise_line_recovers_beta():
    x = np.linspace(-0.1, 0.1, 40)
    data = AssetSeries("line", 0.01 + 1.3 * x, x)
    s = run_unconstrained(data, HyperParams(lambda0=1e-8, v0=2.0001), ChainConfig(2000, 200, seed=1))
    assert abs(s.beta_hat - 1.3) < 0.01


@pytest.mark.parametrize("c", [0.5, 1.0, 5.0])
def test_unconstrained_matches_enumerated_mixture(c):
    y = np.array([0.2, -0.1, 1.5, 0.3, 1.4, 0.0])
    x = np.array([0.5, -0.3, 0.2, 0.8, -0.6, 0.1])
    h = HyperParams(a=0.0, b=1.0, tau0_sq=4.0, gamma0_sq=4.0, v0=3.0, lambda0=0.5, c=c)
    oracle = mixture_posterior(y, x, h.a, h.b, h.tau0_sq, h.gamma0_sq, h.v0, h.lambda0, c)
    s = run_unconstrained(AssetSeries("m", y, x), h, ChainConfig(200_000, 1_000, seed=1))
    assert abs(s.beta_hat - oracle["beta"]) < 4 * s.mcse_beta
    assert abs(s.sigma2_hat - oracle["sigma2"]) < 4 * s.mcse_sigma2
    assert np.all(np.abs(s.alpha_hat - oracle["alpha"]) < 4 * s.mcse_alpha)


def test_unconstrained_two_periods_matches_enumeration():
    y, x = np.array([0.4, -0.3]), np.array([0.5, -0.5])
    h = HyperParams(tau0_sq=2.0, gamma0_sq=2.0, v0=3.0, lambda0=0.3)
    oracle = mixture_posterior(y, x, h.a, h.b, h.tau0_sq, h.gamma0_sq, h.v0, h.lambda0, h.c)
    chain = sample_unconstrained(raw(y, x), h, ChainConfig(200_000, 1_000, seed=2))
    s = chain.summary()
    assert abs(s.beta_hat - oracle["beta"]) < 4 * s.mcse_beta
    assert abs(s.sigma2_hat - oracle["sigma2"]) < 4 * s.mcse_sigma2


def test_unconstrained_reproducible():
    data = synthetic(T=30, shifts={5: 0.3})
    cfg = ChainConfig(1000, 100, seed=9)
    a = run_unconstrained(data, HyperParams(), cfg)
    b = run_unconstrained(data, HyperParams(), cfg)
    assert np.array_equal(a.alpha_hat, b.alpha_hat)
    assert a.beta_hat == b.beta_hat and a.sigma2_hat == b.sigma2_hat
    c = run_unconstrained(data, HyperParams(), replace(cfg, seed=10))
    assert c.beta_hat != a.beta_hat


def test_detection_signal_at_shifted_indices():
    sigma = 0.05
    shifted = (7, 22, 40)
    hits = 0
    seeds = range(20)
    for seed in seeds:
        data = synthetic(T=60, sigma=sigma, shifts={t: 6 * sigma for t in shifted}, seed=100 + seed)
        s = run_unconstrained(data, HyperParams(), ChainConfig(3000, 300, seed=seed))
        med = np.median(s.alpha_hat)
        hits += all(s.alpha_hat[t - 1] - med >= 3 * sigma for t in shifted)
    assert hits >= 0.95 * len(seeds)


# -- fixed partition -----------------------------------------------------------------

def _nig(data, part, h):
    return nig_posterior(data.y, data.x, part.labels, h.a, h.b, h.tau0_sq, h.gamma0_sq, h.v0, h.lambda0)


def test_fixed_single_cluster_matches_conjugate_posterior():
    data = synthetic(T=50, seed=11)
    h = HyperParams()
    part = Partition.single_cluster(50)
    s = run_fixed_partition(data, part, h, ChainConfig(seed=3))
    exact = _nig(data, part, h)
    assert abs(s.beta_hat - exact["beta"]) < 3 * s.mcse_beta
    assert abs(s.alpha_hat[0] - exact["alpha_star"][0]) < 3 * s.mcse_alpha[0]
    assert abs(s.sigma2_hat - exact["sigma2"]) < 4 * s.mcse_sigma2


def test_fixed_multi_cluster_matches_conjugate_posterior():
    data = synthetic(T=40, shifts={4: 0.3, 17: 0.3, 30: -0.3}, seed=12)
    h = HyperParams(tau0_sq=10.0, gamma0_sq=10.0, v0=3.0, lambda0=0.01)
    part = Partition.from_clusters([[t for t in range(1, 41) if t not in (4, 17, 30)], [4, 17], [30]], 40)
    s = run_fixed_partition(data, part, h, ChainConfig(20_000, 1_000, seed=4))
    exact = _nig(data, part, h)
    stars = s.alpha_hat[[0, 3, 29]]
    mcse = s.mcse_alpha[[0, 3, 29]]
    assert np.all(np.abs(stars - exact["alpha_star"]) < 4 * mcse)
    assert abs(s.beta_hat - exact["beta"]) < 4 * s.mcse_beta
    assert abs(s.sigma2_hat - exact["sigma2"]) < 4 * s.mcse_sigma2


def test_singletons_absorb_shift_into_intercepts():
    data = synthetic(T=30, shifts={10: 0.5}, seed=13)
    h = HyperParams(tau0_sq=1e8)
    cfg = ChainConfig(3000, 300, seed=5)
    single = run_fixed_partition(data, Partition.single_cluster(30), h, cfg)
    singletons = run_fixed_partition(data, Partition(np.arange(30)), h, cfg)
    assert singletons.sigma2_hat < single.sigma2_hat


def test_prior_only_sigma2_mean():
    h = HyperParams(v0=5.0, lambda0=4.0)
    data = synthetic(T=10)
    chain = sample_fixed_partition(data, Partition.single_cluster(10), h, ChainConfig(100_000, 1_000, seed=6),
                                   use_data=False)
    s = chain.summary()
    assert abs(s.sigma2_hat - h.lambda0 / (h.v0 - 1)) < 4 * s.mcse_sigma2
    assert abs(s.beta_hat - h.b) < 4 * s.mcse_beta


def test_fixed_partition_reproducible_and_checked():
    data = synthetic(T=20)
    part = Partition.single_cluster(20)
    cfg = ChainConfig(500, 100, seed=8)
    a = run_fixed_partition(data, part, HyperParams(), cfg)
    b = run_fixed_partition(data, part, HyperParams(), cfg)
    assert a.beta_hat == b.beta_hat and np.array_equal(a.alpha_hat, b.alpha_hat)
    with pytest.raises(ValueError):
        run_fixed_partition(data, Partition.single_cluster(19), HyperParams(), cfg)


def test_chain_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(sweeps=100, burn_in=100)
    with pytest.raises(ValueError):
        ChainConfig(sweeps=100, burn_in=-1)
    with pytest.raises(ValueError):
        run_unconstrained(synthetic(T=10), HyperParams(), ChainConfig(sweeps=50, burn_in=10))


# -- batch means ---------------------------------------------------------------------

def test_mcse_constant_chain():
    assert batch_means_mcse(np.full(600, 2.5)) == 0.0


def test_mcse_iid_chain():
    chain = np.random.default_rng(0).normal(size=10_000)
    assert 0.01 / 1.5 < batch_means_mcse(chain, 20) < 0.01 * 1.5


def test_mcse_duplicated_chain():
    chain = np.random.default_rng(1).normal(size=10_000)
    dup = np.repeat(chain, 2)
    # each batch of the duplicated chain holds the same values as the original batch
    assert batch_means_mcse(dup, 20) == pytest.approx(batch_means_mcse(chain, 20), rel=1e-12)
    iid = np.random.default_rng(2).normal(size=20_000)
    ratio = batch_means_mcse(dup, 20) / batch_means_mcse(iid, 20)
    assert math.sqrt(2) / 1.5 < ratio < math.sqrt(2) * 1.5


def test_mcse_drops_trailing_remainder_and_handles_columns():
    chain = np.arange(100.0)
    assert batch_means_mcse(np.r_[chain, 1e9], 10) == batch_means_mcse(chain, 10)
    cols = np.column_stack([chain, 2 * chain])
    out = batch_means_mcse(cols, 10)
    assert out[1] == pytest.approx(2 * out[0])


def test_mcse_rejects_short_chain():
    with pytest.raises(ValueError):
        batch_means_mcse(np.zeros(59), 30)
    with pytest.raises(ValueError):
        batch_means_mcse(np.zeros(100), 1)
