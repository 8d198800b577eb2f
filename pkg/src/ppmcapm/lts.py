"""Least trimmed squares for y = intercept + slope * x, and the outlier prescreen."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .model import AssetSeries
from .rand import make_rng

EXHAUSTIVE_MAX_T = 30
N_RANDOM_STARTS = 500
MAX_CSTEPS = 50
CSTEP_TOL = 1e-12


@dataclass(frozen=True)
class LtsFit:
    intercept: float
    slope: float
    scale: float
    h: int
    objective: float
    residuals: np.ndarray
    std_residuals: np.ndarray
    subset: np.ndarray  # 0-based indices of the h best-fitting points


@dataclass(frozen=True)
class OutlierCandidates:
    """Potential outliers as sorted 1-based time indices."""

    indices: tuple = ()

    def __post_init__(self):
        idx = tuple(sorted({int(i) for i in self.indices}))
        if idx and idx[0] < 1:
            raise ValueError("time indices are 1-based")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


def default_coverage(T: int) -> int:
    return (T + 3) // 2


def consistency_factor(h: int, T: int) -> float:
    """Multiplier making the trimmed RMS consistent for sigma under normal errors."""
    q = h / T
    if q >= 1.0:
        return 1.0
    z = norm.ppf((1.0 + q) / 2.0)
    return 1.0 / math.sqrt(1.0 - 2.0 * z * norm.pdf(z) / q)


def _trimmed(lines, y, x, h):
    # lines: (n, 2) of (intercept, slope); returns objective and h-subsets
    r2 = (y[None, :] - lines[:, :1] - lines[:, 1:] * x[None, :]) ** 2
    subset = np.argpartition(r2, h - 1, axis=1)[:, :h]
    obj = np.take_along_axis(r2, subset, axis=1).sum(axis=1)
    return obj, subset


def _ols_rows(ys, xs):
    xm = xs.mean(axis=1, keepdims=True)
    ym = ys.mean(axis=1, keepdims=True)
    xc = xs - xm
    sxx = (xc * xc).sum(axis=1)
    ok = sxx > 0
    slope = np.where(ok, (xc * (ys - ym)).sum(axis=1) / np.where(ok, sxx, 1.0), 0.0)
    intercept = ym[:, 0] - slope * xm[:, 0]
    return np.column_stack([intercept, slope]), ok


def concentrate(lines, y, x, h):
    """Run C-steps from each starting line until the trimmed objective settles.

    Every C-step refits OLS on the h points with the smallest squared
    residuals; the objective never increases.  Rows whose subset has a
    constant x stop where they are.
    """
    lines = np.array(lines, dtype=float)
    obj, subset = _trimmed(lines, y, x, h)
    active = np.ones(len(lines), dtype=bool)
    for _ in range(MAX_CSTEPS):
        if not active.any():
            break
        rows = np.flatnonzero(active)
        new_lines, ok = _ols_rows(y[subset[rows]], x[subset[rows]])
        new_obj, new_subset = _trimmed(new_lines, y, x, h)
        improved = ok & (new_obj < obj[rows])
        upd = rows[improved]
        lines[upd] = new_lines[improved]
        converged = ~improved | (obj[rows] - new_obj <= CSTEP_TOL * (1.0 + obj[rows]))
        obj[upd] = new_obj[improved]
        subset[upd] = new_subset[improved]
        active[rows[converged]] = False
    return lines, obj, subset


def _elemental_lines(y, x, pairs):
    i, j = pairs[:, 0], pairs[:, 1]
    dx = x[j] - x[i]
    ok = dx != 0
    slope = np.where(ok, (y[j] - y[i]) / np.where(ok, dx, 1.0), 0.0)
    intercept = y[i] - slope * x[i]
    return np.column_stack([intercept, slope]), ok


def fit_lts(y, x, h: int | None = None, seed: int = 0, method: str = "auto") -> LtsFit:
    """Least trimmed squares line.

    Parameters
    ----------
    y, x : array_like
        Response and regressor of length T >= 4.
    h : int, optional
        Coverage; defaults to floor((T + 3) / 2).
    seed : int
        Seed for the random elemental starts.
    method : {"auto", "exhaustive", "random"}
        "exhaustive" starts C-steps from every 2-point elemental fit;
        "random" from 500 random elemental fits.  "auto" is exhaustive for
        T <= 30.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    T = len(y)
    if x.shape != y.shape or y.ndim != 1:
        raise ValueError("y and x must be 1-d of equal length")
    if T < 4:
        raise ValueError(f"LTS needs at least 4 points, got {T}")
    h = default_coverage(T) if h is None else int(h)
    if not max(2, math.ceil(T / 2)) <= h <= T:
        raise ValueError(f"coverage h={h} outside [{max(2, math.ceil(T / 2))}, {T}]")
    if np.ptp(x) == 0:
        raise ValueError("degenerate design: x is constant")
    if method == "auto":
        method = "exhaustive" if T <= EXHAUSTIVE_MAX_T else "random"
    if method == "exhaustive":
        pairs = np.array(list(itertools.combinations(range(T), 2)))
    elif method == "random":
        rng = make_rng(seed)
        i = rng.integers(T, size=N_RANDOM_STARTS)
        j = rng.integers(T - 1, size=N_RANDOM_STARTS)
        j = j + (j >= i)
        pairs = np.column_stack([i, j])
    else:
        raise ValueError(f"unknown method {method!r}")

    starts, ok = _elemental_lines(y, x, pairs)
    starts = starts[ok]
    lines, obj, subset = concentrate(starts, y, x, h)
    k = int(np.argmin(obj))  # ties go to the earliest start
    intercept, slope = float(lines[k, 0]), float(lines[k, 1])

    resid = y - intercept - slope * x
    raw = math.sqrt(float(obj[k]) / h)
    scale = raw * consistency_factor(h, T)
    tiny = 1e-12 * (1.0 + float(np.mean(np.abs(y))))
    if scale > tiny:
        std = resid / scale
    else:
        # exact fit of at least h points
        scale = tiny
        std = np.where(np.abs(resid) <= tiny, 0.0, resid / scale)
    return LtsFit(intercept, slope, scale, h, float(obj[k]), resid, std, np.sort(subset[k]))


def lts_objective(y, x, intercept: float, slope: float, h: int) -> float:
    r2 = np.sort((np.asarray(y) - intercept - slope * np.asarray(x)) ** 2)
    return float(r2[:h].sum())


def prescreen(data: AssetSeries, threshold: float = 2.5, seed: int = 0, h: int | None = None) -> OutlierCandidates:
    """Time points whose absolute standardized LTS residual exceeds ``threshold``."""
    fit = fit_lts(data.y, data.x, h=h, seed=seed)
    flagged = np.flatnonzero(np.abs(fit.std_residuals) > threshold) + 1
    return OutlierCandidates(tuple(flagged.tolist()))


def sequential_deletion(y, x, steps: int = 2, threshold: float = 2.5) -> OutlierCandidates:
    """One-at-a-time outlier deletion from OLS.

    At each step the point with the largest internally studentized residual
    is flagged and removed if it exceeds ``threshold``, then the line is
    refitted.  This is the classical procedure that suffers from masking.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    keep = np.arange(len(y))
    flagged = []
    for _ in range(steps):
        yk, xk = y[keep], x[keep]
        n = len(keep)
        X = np.column_stack([np.ones(n), xk])
        coef, *_ = np.linalg.lstsq(X, yk, rcond=None)
        resid = yk - X @ coef
        lev = np.einsum("ij,jk,ik->i", X, np.linalg.inv(X.T @ X), X)
        s = math.sqrt(float(resid @ resid) / (n - 2))
        stud = resid / (s * np.sqrt(1.0 - lev))
        worst = int(np.argmax(np.abs(stud)))
        if abs(stud[worst]) <= threshold:
            break
        flagged.append(int(keep[worst]) + 1)
        keep = np.delete(keep, worst)
    return OutlierCandidates(tuple(flagged))
