"""Domain types and the product-partition prior.

Time indices exposed to users (outlier sets, cluster members) are 1-based,
matching the usual reading of a monthly series t = 1..T.  Arrays are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

MAX_ENUMERATION_T = 12


@dataclass(frozen=True)
class AssetSeries:
    """Excess returns of one asset against the market excess return."""

    asset_id: str
    y: np.ndarray
    x: np.ndarray
    dates: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        dates = tuple(self.dates) if len(self.dates) else tuple(str(t) for t in range(1, len(y) + 1))
        if y.ndim != 1 or x.shape != y.shape or len(dates) != len(y):
            raise ValueError("y, x and dates must be 1-d sequences of equal length")
        if len(y) < 3:
            raise ValueError(f"need at least 3 periods, got {len(y)}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("returns must be finite")
        y.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "dates", dates)

    @property
    def T(self) -> int:
        return len(self.y)


def canonical_labels(labels: Iterable[int]) -> np.ndarray:
    """Relabel clusters by order of first appearance (0, 1, 2, ...)."""
    mapping: dict = {}
    out = []
    for lab in labels:
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out.append(mapping[lab])
    return np.asarray(out, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Partition:
    """A set partition of the time indices, stored as canonical labels.

    Two partitions compare equal iff they group the same indices together,
    whatever labels were used to build them.
    """

    labels: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.ndim != 1 or len(raw) == 0:
            raise ValueError("labels must be a non-empty 1-d sequence")
        labels = canonical_labels(raw.tolist())
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @classmethod
    def single_cluster(cls, T: int) -> "Partition":
        return cls(np.zeros(T, dtype=np.int64))

    @classmethod
    def from_clusters(cls, clusters: Sequence[Iterable[int]], T: int) -> "Partition":
        """Build from explicit clusters of 1-based time indices."""
        labels = np.full(T, -1, dtype=np.int64)
        for d, members in enumerate(clusters):
            members = list(members)
            if not members:
                raise ValueError(f"cluster {d} is empty")
            for t in members:
                if not 1 <= t <= T:
                    raise ValueError(f"time index {t} outside 1..{T}")
                if labels[t - 1] != -1:
                    raise ValueError(f"time index {t} appears in two clusters")
                labels[t - 1] = d
        if np.any(labels < 0):
            missing = (np.flatnonzero(labels < 0) + 1).tolist()
            raise ValueError(f"time indices not covered: {missing}")
        return cls(labels)

    @property
    def T(self) -> int:
        return len(self.labels)

    @property
    def num_clusters(self) -> int:
        return int(self.labels.max()) + 1

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_clusters)

    def clusters(self) -> list[tuple[int, ...]]:
        """Cluster member sets as sorted tuples of 1-based time indices."""
        return [tuple((np.flatnonzero(self.labels == d) + 1).tolist())
                for d in range(self.num_clusters)]

    def key(self) -> tuple:
        return tuple(self.labels.tolist())

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Partition({self.clusters()})"


@dataclass(frozen=True)
class HyperParams:
    """Prior constants of the hierarchical model.

    alpha* ~ N(a, tau0_sq * sigma2), beta ~ N(b, gamma0_sq * sigma2),
    sigma2 ~ IG(v0, lambda0) and cohesion c * (|S| - 1)!.
    """

    a: float = 0.0
    b: float = 1.0
    tau0_sq: float = 1000.0
    gamma0_sq: float = 1000.0
    v0: float = 2.0001
    lambda0: float = 0.010001
    c: float = 1.0

    def __post_init__(self):
        if not self.tau0_sq > 0 or not self.gamma0_sq > 0:
            raise ValueError("tau0_sq and gamma0_sq must be positive")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not self.v0 > 1:
            raise ValueError("v0 must exceed 1 so that E(sigma2) exists")
        if not self.c > 0:
            raise ValueError("cohesion constant c must be positive")

    @property
    def prior_sigma2_mean(self) -> float:
        return self.lambda0 / (self.v0 - 1.0)


@dataclass(frozen=True)
class CostWeights:
    k1: float = 1000.0 / 2012.0
    k2: float = 1000.0 / 2012.0
    k3: float = 1.0 / 2012.0

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3) < 0:
            raise ValueError("cost weights must be nonnegative")
        if self.k1 + self.k2 + self.k3 > 1.0 + 1e-12:
            raise ValueError("cost weights must sum to at most 1")

    @property
    def complexity(self) -> float:
        """Per-cluster penalty 1 - k1 - k2 - k3."""
        return 1.0 - self.k1 - self.k2 - self.k3


@dataclass(frozen=True)
class PosteriorSummary:
    """Ergodic averages of a chain plus batch-means standard errors."""

    alpha_hat: np.ndarray
    beta_hat: float
    sigma2_hat: float
    mcse_alpha: np.ndarray
    mcse_beta: float
    mcse_sigma2: float
    sweeps_used: int
    mean_num_clusters: float = float("nan")

    def __post_init__(self):
        alpha = np.asarray(self.alpha_hat, dtype=float)
        mcse = np.asarray(self.mcse_alpha, dtype=float)
        if alpha.shape != mcse.shape:
            raise ValueError("alpha_hat and mcse_alpha must have equal length")
        if not self.sigma2_hat > 0:
            raise ValueError("sigma2_hat must be positive")
        if np.any(mcse < 0) or self.mcse_beta < 0 or self.mcse_sigma2 < 0:
            raise ValueError("standard errors must be nonnegative")
        object.__setattr__(self, "alpha_hat", alpha)
        object.__setattr__(self, "mcse_alpha", mcse)

    @property
    def T(self) -> int:
        return len(self.alpha_hat)


def log_cohesion(cluster_size: int, c: float) -> float:
    """log(c * (n - 1)!) for a cluster of n elements."""
    if cluster_size < 1:
        raise ValueError(f"cluster size must be at least 1, got {cluster_size}")
    if not c > 0:
        raise ValueError("c must be positive")
    return math.log(c) + float(gammaln(cluster_size))


def log_partition_prior_unnormalized(p: Partition, c: float) -> float:
    return float(sum(log_cohesion(int(n), c) for n in p.sizes()))


@lru_cache(maxsize=None)
def bell_number(n: int) -> int:
    """Bell number via B(a+1) = sum_k C(a, k) B(k), B(0) = 1."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    bells = [1]
    for a in range(n):
        bells.append(sum(math.comb(a, k) * bells[k] for k in range(a + 1)))
    return bells[n]


def _restricted_growth_strings(T: int):
    # Each set partition corresponds to exactly one restricted growth string.
    labels = [0] * T
    maxes = [0] * T

    def rec(i):
        if i == T:
            yield tuple(labels)
            return
        for lab in range(maxes[i - 1] + 2):
            labels[i] = lab
            maxes[i] = max(maxes[i - 1], lab)
            yield from rec(i + 1)

    yield from rec(1)


def enumerate_partitions(T: int) -> list[Partition]:
    """All set partitions of {1..T}, one per unlabeled grouping."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if T > MAX_ENUMERATION_T:
        raise ValueError(f"refusing to enumerate B({T}) partitions; T must be <= {MAX_ENUMERATION_T}")
    return [Partition(np.array(s)) for s in _restricted_growth_strings(T)]


@lru_cache(maxsize=256)
def _log_normalizer(T: int, c: float) -> float:
    # Sum over partitions grouped by block-size multiset would be faster, but
    # explicit enumeration is what makes this usable as an oracle.
    weights = [log_partition_prior_unnormalized(p, c) for p in enumerate_partitions(T)]
    return float(logsumexp(weights))


def exact_partition_prior(p: Partition, c: float) -> float:
    if p.T > MAX_ENUMERATION_T:
        raise ValueError(f"exact prior only available for T <= {MAX_ENUMERATION_T}")
    return math.exp(log_partition_prior_unnormalized(p, c) - _log_normalizer(p.T, c))
