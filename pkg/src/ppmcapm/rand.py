"""Seedable samplers used by the Gibbs chains.

Every sampler takes an explicit ``numpy.random.Generator``; there is no
module-level state.  The same generator objects are passed into the compiled
chain kernels, which reproduce NumPy's draws exactly.
"""

from __future__ import annotations

import math

import numba
import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for ``seed`` and a path of nonnegative integer keys.

    ``make_rng(master, asset_index)`` gives every asset its own stream, so
    results do not depend on how many assets run or in which order.
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seed and keys must be nonnegative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def derive_seed(seed: int, *keys: int) -> int:
    """A 63-bit integer seed derived from ``seed`` and ``keys``."""
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def sample_normal(rng: np.random.Generator, mean: float, variance: float) -> float:
    """One draw from N(mean, variance); note the second argument is a variance."""
    if not variance > 0:
        raise ValueError(f"variance must be positive, got {variance}")
    return float(rng.normal(mean, math.sqrt(variance)))


def sample_inverse_gamma(rng: np.random.Generator, shape: float, scale: float) -> float:
    """Draw with density proportional to x**-(shape+1) * exp(-scale/x).

    Mean is scale / (shape - 1) for shape > 1.  Drawn as scale / Gamma(shape, 1).
    """
    if not shape > 0 or not scale > 0:
        raise ValueError("inverse gamma shape and scale must be positive")
    return float(scale / rng.gamma(shape, 1.0))


@numba.njit(cache=True)
def categorical_from_uniform(log_weights, n, u):
    """Index drawn by inverting the CDF of softmax(log_weights[:n]) at ``u``."""
    m = -np.inf
    for j in range(n):
        if log_weights[j] > m:
            m = log_weights[j]
    if m == -np.inf:
        return -1
    total = 0.0
    for j in range(n):
        total += math.exp(log_weights[j] - m)
    target = u * total
    acc = 0.0
    last = -1
    for j in range(n):
        w = math.exp(log_weights[j] - m)
        if w > 0.0:
            last = j
            acc += w
            if target < acc:
                return j
    return last


def sample_categorical(rng: np.random.Generator, log_weights) -> int:
    """Index j with probability exp(lw_j - logsumexp(lw))."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.ndim != 1 or len(lw) == 0:
        raise ValueError("log_weights must be a non-empty 1-d sequence")
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise ValueError("log weights must be finite or -inf")
    j = categorical_from_uniform(lw, len(lw), rng.random())
    if j < 0:
        raise ValueError("all log weights are -inf")
    return int(j)
