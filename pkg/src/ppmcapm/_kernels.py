"""Compiled Gibbs sweeps.

These loops mirror the step functions in :mod:`ppmcapm.gibbs` exactly,
including the order in which random numbers are consumed, so that a sweep
built from the Python steps and a sweep run here agree to rounding error.
"""

import math

import numba
import numpy as np

from .rand import categorical_from_uniform


@numba.njit(cache=True)
def _draw_beta(y, x, alpha, sigma2, b, gamma0_sq, sxx, use_data, rng):
    num = b / gamma0_sq
    prec = 1.0 / gamma0_sq
    if use_data:
        for t in range(len(y)):
            num += (y[t] - alpha[t]) * x[t]
        prec += sxx
    return rng.normal(num / prec, math.sqrt(sigma2 / prec))


@numba.njit(cache=True)
def _draw_sigma2(y, x, alpha, beta, star_sq_dev, K, b, gamma0_sq, tau0_sq, v0, lambda0, use_data, rng):
    T = len(y)
    shape = v0 + (K + 1) / 2.0
    scale = lambda0 + (beta - b) ** 2 / (2.0 * gamma0_sq) + star_sq_dev / (2.0 * tau0_sq)
    if use_data:
        ss = 0.0
        for t in range(T):
            ss += (y[t] - alpha[t] - beta * x[t]) ** 2
        shape += T / 2.0
        scale += 0.5 * ss
    return scale / rng.gamma(shape, 1.0)


@numba.njit(cache=True)
def unconstrained_chain(y, x, a, b, tau0_sq, gamma0_sq, v0, lambda0, c,
                        alpha0, beta0, sigma20, labels0, sweeps, burn_in, rng):
    """Full sweeps: beta, sigma2, every alpha_t from its mixture, then remix.

    Cluster parameters live in ``values[slot]``; ``labels[t]`` is a slot id.
    Returns post-burn-in draws of beta, sigma2, alpha (n_keep x T) and |rho|.
    """
    T = len(y)
    n_keep = sweeps - burn_in
    beta_out = np.empty(n_keep)
    sigma2_out = np.empty(n_keep)
    alpha_out = np.empty((n_keep, T))
    k_out = np.empty(n_keep, dtype=np.int64)

    labels = labels0.copy()
    values = np.zeros(T)
    counts = np.zeros(T, dtype=np.int64)
    for t in range(T):
        counts[labels[t]] += 1
        values[labels[t]] = alpha0[t]
    free = np.empty(T, dtype=np.int64)
    nfree = 0
    for s in range(T - 1, -1, -1):
        if counts[s] == 0:
            free[nfree] = s
            nfree += 1

    stamp = np.zeros(T, dtype=np.int64)
    order = np.empty(T, dtype=np.int64)
    acc = np.zeros(T)
    lw = np.empty(T + 1)
    alpha = np.empty(T)
    sxx = 0.0
    for t in range(T):
        sxx += x[t] * x[t]
    beta = beta0
    sigma2 = sigma20
    tick = 0
    log_c = math.log(c)
    half_log_1p_tau = 0.5 * math.log(1.0 + tau0_sq)
    shrink = 1.0 + 1.0 / tau0_sq

    for sweep in range(sweeps):
        for t in range(T):
            alpha[t] = values[labels[t]]
        beta = _draw_beta(y, x, alpha, sigma2, b, gamma0_sq, sxx, True, rng)

        # cluster values in order of first appearance
        tick += 1
        K = 0
        star_sq_dev = 0.0
        for t in range(T):
            slot = labels[t]
            if stamp[slot] != tick:
                stamp[slot] = tick
                K += 1
                star_sq_dev += (values[slot] - a) ** 2
        sigma2 = _draw_sigma2(y, x, alpha, beta, star_sq_dev, K, b, gamma0_sq,
                              tau0_sq, v0, lambda0, True, rng)

        for t in range(T):
            old = labels[t]
            counts[old] -= 1
            if counts[old] == 0:
                free[nfree] = old
                nfree += 1
            r = y[t] - beta * x[t]
            tick += 1
            K = 0
            for j in range(T):
                if j == t:
                    continue
                slot = labels[j]
                if stamp[slot] != tick:
                    stamp[slot] = tick
                    order[K] = slot
                    dev = r - values[slot]
                    lw[K] = math.log(counts[slot]) - dev * dev / (2.0 * sigma2)
                    K += 1
            dev = r - a
            lw[K] = log_c - dev * dev / (2.0 * sigma2 * (1.0 + tau0_sq)) - half_log_1p_tau
            pick = categorical_from_uniform(lw, K + 1, rng.random())
            if pick == K:
                nfree -= 1
                slot = free[nfree]
                values[slot] = rng.normal((r + a / tau0_sq) / shrink, math.sqrt(sigma2 / shrink))
            else:
                slot = order[pick]
            labels[t] = slot
            counts[slot] += 1

        # remix cluster values given the partition
        for t in range(T):
            acc[labels[t]] = 0.0
        for t in range(T):
            acc[labels[t]] += y[t] - beta * x[t]
        tick += 1
        K = 0
        for t in range(T):
            slot = labels[t]
            if stamp[slot] != tick:
                stamp[slot] = tick
                K += 1
                prec = counts[slot] + 1.0 / tau0_sq
                values[slot] = rng.normal((acc[slot] + a / tau0_sq) / prec, math.sqrt(sigma2 / prec))

        if sweep >= burn_in:
            i = sweep - burn_in
            beta_out[i] = beta
            sigma2_out[i] = sigma2
            k_out[i] = K
            for t in range(T):
                alpha_out[i, t] = values[labels[t]]

    return beta_out, sigma2_out, alpha_out, k_out


@numba.njit(cache=True)
def fixed_partition_chain(y, x, labels, K, a, b, tau0_sq, gamma0_sq, v0, lambda0,
                          star0, beta0, sigma20, sweeps, burn_in, use_data, rng):
    """Sweeps of beta, sigma2 and the cluster values with the partition held fixed.

    ``labels`` must be canonical (0..K-1 in order of first appearance).
    With ``use_data`` false the likelihood is dropped and the chain samples
    the prior, which is only useful for checking the sampler.
    """
    T = len(y)
    n_keep = sweeps - burn_in
    beta_out = np.empty(n_keep)
    sigma2_out = np.empty(n_keep)
    star_out = np.empty((n_keep, K))
    star = star0.copy()
    sizes = np.zeros(K, dtype=np.int64)
    for t in range(T):
        sizes[labels[t]] += 1
    acc = np.empty(K)
    alpha = np.empty(T)
    sxx = 0.0
    for t in range(T):
        sxx += x[t] * x[t]
    beta = beta0
    sigma2 = sigma20

    for sweep in range(sweeps):
        for t in range(T):
            alpha[t] = star[labels[t]]
        beta = _draw_beta(y, x, alpha, sigma2, b, gamma0_sq, sxx, use_data, rng)
        star_sq_dev = 0.0
        for d in range(K):
            star_sq_dev += (star[d] - a) ** 2
        sigma2 = _draw_sigma2(y, x, alpha, beta, star_sq_dev, K, b, gamma0_sq,
                              tau0_sq, v0, lambda0, use_data, rng)
        for d in range(K):
            acc[d] = 0.0
        if use_data:
            for t in range(T):
                acc[labels[t]] += y[t] - beta * x[t]
        for d in range(K):
            n = sizes[d] if use_data else 0
            prec = n + 1.0 / tau0_sq
            star[d] = rng.normal((acc[d] + a / tau0_sq) / prec, math.sqrt(sigma2 / prec))

        if sweep >= burn_in:
            i = sweep - burn_in
            beta_out[i] = beta
            sigma2_out[i] = sigma2
            for d in range(K):
                star_out[i, d] = star[d]

    return beta_out, sigma2_out, star_out
