"""Gibbs sampler for the normal product-partition CAPM.

Two modes share the same conditional draws:

* unconstrained: the partition is sampled through the point-mass mixture
  update of each alpha_t (Bush & MacEachern style), followed by a remix of
  the cluster values;
* fixed partition: only beta, sigma2 and the cluster values are cycled.

The step functions below act on a :class:`GibbsState` one draw at a time and
are the readable reference.  The ``run_*`` functions drive compiled loops in
:mod:`ppmcapm._kernels` which consume random numbers in the same order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import AssetSeries, HyperParams, Partition, PosteriorSummary
from .rand import make_rng, sample_categorical, sample_inverse_gamma, sample_normal

DEFAULT_BATCHES = 30


@dataclass(frozen=True)
class ChainConfig:
    sweeps: int = 10_000
    burn_in: int = 1_000
    seed: int = 0
    num_batches: int = DEFAULT_BATCHES

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("sweeps must be positive")
        if not 0 <= self.burn_in < self.sweeps:
            raise ValueError(f"burn_in must lie in [0, sweeps), got {self.burn_in} with sweeps={self.sweeps}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.num_batches < 2:
            raise ValueError("num_batches must be at least 2")

    @property
    def kept(self) -> int:
        return self.sweeps - self.burn_in


@dataclass
class GibbsState:
    """Current draw.  ``partition`` groups exactly the tied entries of ``alpha``."""

    alpha: np.ndarray
    beta: float
    sigma2: float
    partition: Partition = field(default=None)

    def __post_init__(self):
        self.alpha = np.array(self.alpha, dtype=float)
        if self.partition is None:
            _, inverse = np.unique(self.alpha, return_inverse=True)
            self.partition = Partition(inverse)

    def cluster_values(self) -> np.ndarray:
        """alpha* in canonical cluster order."""
        first = [members[0] - 1 for members in self.partition.clusters()]
        return self.alpha[first]

    def check(self):
        if not self.sigma2 > 0:
            raise AssertionError("sigma2 must stay positive")
        labels = self.partition.labels
        if len(labels) != len(self.alpha):
            raise AssertionError("partition and alpha lengths differ")
        values = self.cluster_values()
        if not np.array_equal(values[labels], self.alpha):
            raise AssertionError("alpha is not constant within clusters")
        if len(np.unique(values)) != len(values):
            raise AssertionError("two clusters share the same alpha value")


def ols_fit(y, x):
    """Intercept, slope and residual variance of a least-squares line."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ValueError("degenerate design: market excess return is constant")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - intercept - slope * x
    dof = max(len(y) - 2, 1)
    return intercept, slope, float(resid @ resid) / dof


def initial_state(data: AssetSeries, h: HyperParams) -> GibbsState:
    """OLS start in a single cluster; sigma2 floored at 1% of its prior mean."""
    try:
        intercept, slope, s2 = ols_fit(data.y, data.x)
    except ValueError:
        intercept, slope, s2 = float(np.mean(data.y)), h.b, float(np.var(data.y))
    s2 = max(s2, h.prior_sigma2_mean / 100.0)
    return GibbsState(np.full(data.T, intercept), slope, s2, Partition.single_cluster(data.T))


# -- full conditionals -------------------------------------------------------

def beta_conditional(state: GibbsState, data: AssetSeries, h: HyperParams):
    """Mean and variance of beta | sigma2, alpha, y."""
    prec = 1.0 / h.gamma0_sq + float(data.x @ data.x)
    num = h.b / h.gamma0_sq + float((data.y - state.alpha) @ data.x)
    return num / prec, state.sigma2 / prec


def sigma2_conditional(state: GibbsState, data: AssetSeries, h: HyperParams):
    """Shape and scale of the inverse-gamma conditional of sigma2."""
    K = state.partition.num_clusters
    stars = state.cluster_values()
    resid = data.y - state.alpha - state.beta * data.x
    shape = h.v0 + (data.T + K + 1) / 2.0
    scale = (h.lambda0
             + (state.beta - h.b) ** 2 / (2.0 * h.gamma0_sq)
             + float(np.sum((stars - h.a) ** 2)) / (2.0 * h.tau0_sq)
             + 0.5 * float(resid @ resid))
    return shape, scale


def _mixture_components(state: GibbsState, data: AssetSeries, h: HyperParams, t: int):
    if not 1 <= t <= data.T:
        raise ValueError(f"time index {t} outside 1..{data.T}")
    i = t - 1
    r = data.y[i] - state.beta * data.x[i]
    seen: dict = {}
    for j, lab in enumerate(state.partition.labels):
        if j == i:
            continue
        if lab not in seen:
            seen[lab] = [state.alpha[j], 0]
        seen[lab][1] += 1
    labels = list(seen)
    values = np.array([v for v, _ in seen.values()])
    lw = [math.log(n) - (r - v) * (r - v) / (2.0 * state.sigma2) for v, n in seen.values()]
    dev = r - h.a
    lw.append(math.log(h.c) - dev * dev / (2.0 * state.sigma2 * (1.0 + h.tau0_sq))
              - 0.5 * math.log(1.0 + h.tau0_sq))
    shrink = 1.0 + 1.0 / h.tau0_sq
    return labels, values, np.array(lw), (r + h.a / h.tau0_sq) / shrink, state.sigma2 / shrink


def alpha_mixture(state: GibbsState, data: AssetSeries, h: HyperParams, t: int):
    """Components of the conditional of alpha_t (t is 1-based).

    Returns ``(values, log_weights, new_mean, new_var)``: one point mass per
    cluster of the other indices, ordered by first appearance, with log
    weight log(n_d) - (r - alpha*_d)^2 / (2 sigma2), and a final entry for a
    fresh value drawn from N(new_mean, new_var).  The fresh component carries
    log(c) - (r - a)^2 / (2 sigma2 (1 + tau0^2)) - log(1 + tau0^2) / 2.
    """
    return _mixture_components(state, data, h, t)[1:]


def alpha_star_conditional(state: GibbsState, data: AssetSeries, h: HyperParams):
    """Means and variances of each alpha*_d | partition, beta, sigma2, y."""
    labels = state.partition.labels
    K = state.partition.num_clusters
    sizes = np.bincount(labels, minlength=K)
    sums = np.bincount(labels, weights=data.y - state.beta * data.x, minlength=K)
    prec = sizes + 1.0 / h.tau0_sq
    return (sums + h.a / h.tau0_sq) / prec, state.sigma2 / prec


# -- single steps --------------------------------------------------------------

def step_beta(state: GibbsState, data: AssetSeries, h: HyperParams, rng) -> float:
    mean, var = beta_conditional(state, data, h)
    state.beta = sample_normal(rng, mean, var)
    return state.beta


def step_sigma2(state: GibbsState, data: AssetSeries, h: HyperParams, rng) -> float:
    shape, scale = sigma2_conditional(state, data, h)
    state.sigma2 = sample_inverse_gamma(rng, shape, scale)
    return state.sigma2


def step_alpha_mixture(state: GibbsState, data: AssetSeries, h: HyperParams, rng, t: int) -> float:
    """Resample alpha_t (1-based t) and update the partition to match."""
    cluster_labels, values, lw, new_mean, new_var = _mixture_components(state, data, h, t)
    pick = sample_categorical(rng, lw)
    i = t - 1
    labels = state.partition.labels.copy()
    if pick == len(values):
        state.alpha[i] = sample_normal(rng, new_mean, new_var)
        labels[i] = labels.max() + 1
    else:
        state.alpha[i] = values[pick]
        labels[i] = cluster_labels[pick]
    state.partition = Partition(labels)
    return float(state.alpha[i])


def remix_alpha_star(state: GibbsState, data: AssetSeries, h: HyperParams, rng) -> np.ndarray:
    means, variances = alpha_star_conditional(state, data, h)
    stars = np.array([sample_normal(rng, m, v) for m, v in zip(means, variances)])
    state.alpha = stars[state.partition.labels]
    return state.alpha


def sweep_unconstrained(state: GibbsState, data: AssetSeries, h: HyperParams, rng):
    step_beta(state, data, h, rng)
    step_sigma2(state, data, h, rng)
    for t in range(1, data.T + 1):
        step_alpha_mixture(state, data, h, rng, t)
    remix_alpha_star(state, data, h, rng)
    return state


def sweep_fixed(state: GibbsState, data: AssetSeries, h: HyperParams, rng):
    step_beta(state, data, h, rng)
    step_sigma2(state, data, h, rng)
    remix_alpha_star(state, data, h, rng)
    return state


# -- Monte Carlo error -----------------------------------------------------------

def batch_means_mcse(chain, num_batches: int = DEFAULT_BATCHES):
    """Batch-means standard error of the mean of ``chain``.

    The chain (or each column of a 2-d chain) is cut into ``num_batches``
    contiguous batches of equal size; any trailing remainder is dropped.
    Returns sqrt(var(batch means) / num_batches).
    """
    arr = np.asarray(chain, dtype=float)
    if num_batches < 2:
        raise ValueError("need at least 2 batches")
    n = arr.shape[0]
    if n < 2 * num_batches:
        raise ValueError(f"chain of length {n} too short for {num_batches} batches")
    size = n // num_batches
    batches = arr[: size * num_batches].reshape((num_batches, size) + arr.shape[1:]).mean(axis=1)
    var = batches.var(axis=0, ddof=1)
    out = np.sqrt(np.maximum(var, 0.0) / num_batches)
    return float(out) if out.ndim == 0 else out


# -- chains ------------------------------------------------------------------------

@dataclass(frozen=True)
class Chain:
    """Post-burn-in draws. ``alpha`` is (kept, T)."""

    beta: np.ndarray
    sigma2: np.ndarray
    alpha: np.ndarray
    num_clusters: np.ndarray

    def summary(self, num_batches: int = DEFAULT_BATCHES) -> PosteriorSummary:
        return PosteriorSummary(
            alpha_hat=self.alpha.mean(axis=0),
            beta_hat=float(self.beta.mean()),
            sigma2_hat=float(self.sigma2.mean()),
            mcse_alpha=batch_means_mcse(self.alpha, num_batches),
            mcse_beta=batch_means_mcse(self.beta, num_batches),
            mcse_sigma2=batch_means_mcse(self.sigma2, num_batches),
            sweeps_used=len(self.beta),
            mean_num_clusters=float(self.num_clusters.mean()),
        )


def _check_chain_length(cfg: ChainConfig):
    if cfg.kept < 2 * cfg.num_batches:
        raise ValueError(f"{cfg.kept} kept sweeps are too few for {cfg.num_batches} batches")


def sample_unconstrained(data: AssetSeries, h: HyperParams, cfg: ChainConfig,
                         state: GibbsState | None = None, rng=None) -> Chain:
    state = initial_state(data, h) if state is None else state
    rng = make_rng(cfg.seed) if rng is None else rng
    beta, sigma2, alpha, k = _kernels.unconstrained_chain(
        data.y, data.x, h.a, h.b, h.tau0_sq, h.gamma0_sq, h.v0, h.lambda0, h.c,
        state.alpha.astype(float), float(state.beta), float(state.sigma2),
        state.partition.labels.astype(np.int64), cfg.sweeps, cfg.burn_in, rng)
    return Chain(beta, sigma2, alpha, k)


def run_unconstrained(data: AssetSeries, h: HyperParams, cfg: ChainConfig) -> PosteriorSummary:
    """Posterior means E(alpha|y), E(beta|y), E(sigma2|y) with the partition integrated out."""
    _check_chain_length(cfg)
    return sample_unconstrained(data, h, cfg).summary(cfg.num_batches)


def sample_fixed_partition(data: AssetSeries, partition: Partition, h: HyperParams, cfg: ChainConfig,
                           state: GibbsState | None = None, rng=None, use_data: bool = True) -> Chain:
    if partition.T != data.T:
        raise ValueError(f"partition covers {partition.T} periods but the series has {data.T}")
    if state is None:
        start = initial_state(data, h)
        state = GibbsState(np.full(data.T, start.alpha[0]), start.beta, start.sigma2, partition)
    stars = np.array([state.alpha[members[0] - 1] for members in partition.clusters()])
    rng = make_rng(cfg.seed) if rng is None else rng
    labels = partition.labels.astype(np.int64)
    beta, sigma2, star_chain = _kernels.fixed_partition_chain(
        data.y, data.x, labels, partition.num_clusters, h.a, h.b, h.tau0_sq, h.gamma0_sq,
        h.v0, h.lambda0, stars, float(state.beta), float(state.sigma2),
        cfg.sweeps, cfg.burn_in, use_data, rng)
    alpha = star_chain[:, labels]
    return Chain(beta, sigma2, alpha, np.full(len(beta), partition.num_clusters))


def run_fixed_partition(data: AssetSeries, partition: Partition, h: HyperParams,
                        cfg: ChainConfig) -> PosteriorSummary:
    """Conditional posterior means E(theta | y, rho) for a given partition."""
    _check_chain_length(cfg)
    return sample_fixed_partition(data, partition, h, cfg).summary(cfg.num_batches)
