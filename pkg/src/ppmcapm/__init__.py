"""Robust CAPM beta estimation with a parametric product partition model."""

from .gibbs import ChainConfig, batch_means_mcse, run_fixed_partition, run_unconstrained
from .lts import OutlierCandidates, fit_lts, prescreen
from .model import (AssetSeries, CostWeights, HyperParams, Partition, PosteriorSummary, bell_number,
                    enumerate_partitions, exact_partition_prior, log_cohesion,
                    log_partition_prior_unnormalized)
from .report import MarketDataset, RunConfig, emit_synthetic, excess_returns, ingest_csv, run_pipeline
from .search import build_deviations, generate_candidates, prs, score, select_optimal

__version__ = "0.1.0"
