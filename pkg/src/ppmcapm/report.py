"""Data ingestion, configuration, the per-asset pipeline and report files."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
import os
import re
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .gibbs import ChainConfig
from .model import AssetSeries, CostWeights, HyperParams, PosteriorSummary
from .rand import derive_seed, make_rng
from .search import BASELINE, Selection, implausible_candidates, prs, select_optimal

log = logging.getLogger(__name__)

REPORT_FORMAT = "ppmcapm-report/1"
FIXED_COLUMNS = ("date", "rf", "market")


class DataError(ValueError):
    """Malformed input file; the message names the offending row and column."""


# -- data ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MarketDataset:
    dates: tuple
    market_return: np.ndarray
    risk_free: np.ndarray
    assets: dict  # asset_id -> returns, in column order

    def __post_init__(self):
        T = len(self.dates)
        if len(self.market_return) != T or len(self.risk_free) != T:
            raise ValueError("market and risk-free series must match the dates")
        if not self.assets:
            raise ValueError("dataset needs at least one asset")
        for name, r in self.assets.items():
            if len(r) != T:
                raise ValueError(f"asset {name} has {len(r)} returns, expected {T}")

    @property
    def T(self) -> int:
        return len(self.dates)

    @property
    def N(self) -> int:
        return len(self.assets)

    @property
    def asset_ids(self) -> list:
        return list(self.assets)

    def __eq__(self, other):
        if not isinstance(other, MarketDataset):
            return NotImplemented
        return (self.dates == other.dates
                and np.array_equal(self.market_return, other.market_return)
                and np.array_equal(self.risk_free, other.risk_free)
                and list(self.assets) == list(other.assets)
                and all(np.array_equal(self.assets[k], other.assets[k]) for k in self.assets))


_MONTH = re.compile(r"^\d{4}-\d{2}$")


def _date_key(text: str) -> dt.datetime:
    if _MONTH.match(text):
        return dt.datetime(int(text[:4]), int(text[5:]), 1)
    return dt.datetime.fromisoformat(text)


def ingest_csv(path) -> MarketDataset:
    """Read ``date,rf,market,<asset>...`` with decimal returns.

    Rows are returned in chronological order.  Any ragged row, empty or
    non-numeric cell, bad or duplicate date raises :class:`DataError`.
    Row numbers in messages count the header as row 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if [h.lower() for h in header[:3]] != list(FIXED_COLUMNS) or len(header) < 4:
        raise DataError(f"row 1: header must start with date,rf,market followed by at least one asset, got {header}")
    names = header[3:]
    if len(set(names)) != len(names) or any(not n for n in names):
        raise DataError("row 1: asset column names must be non-empty and unique")

    records = []
    seen = {}
    for rownum, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"row {rownum}: expected {len(header)} fields, got {len(row)}")
        date = row[0].strip()
        if not date:
            raise DataError(f"row {rownum}, column date: empty")
        try:
            key = _date_key(date)
        except ValueError:
            raise DataError(f"row {rownum}, column date: unrecognised date {date!r}") from None
        if date in seen:
            raise DataError(f"row {rownum}, column date: duplicate date {date!r} (first at row {seen[date]})")
        seen[date] = rownum
        values = []
        for col, cell in zip(header[1:], row[1:]):
            cell = cell.strip()
            if not cell:
                raise DataError(f"row {rownum}, column {col}: empty")
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"row {rownum}, column {col}: not a number {cell!r}") from None
            if not np.isfinite(v):
                raise DataError(f"row {rownum}, column {col}: not finite {cell!r}")
            values.append(v)
        records.append((key, date, values))
    if not records:
        raise DataError(f"{path}: no data rows")

    records.sort(key=lambda r: r[0])
    table = np.array([r[2] for r in records])
    return MarketDataset(
        dates=tuple(r[1] for r in records),
        market_return=table[:, 1].copy(),
        risk_free=table[:, 0].copy(),
        assets={name: table[:, 2 + k].copy() for k, name in enumerate(names)},
    )


def write_csv(md: MarketDataset, path):
    rows = [list(FIXED_COLUMNS) + md.asset_ids]
    for t, date in enumerate(md.dates):
        rows.append([date, repr(float(md.risk_free[t])), repr(float(md.market_return[t]))]
                    + [repr(float(md.assets[a][t])) for a in md.asset_ids])
    write_atomic(path, _csv_text(rows))


def excess_returns(md: MarketDataset, asset_id: str) -> AssetSeries:
    """y_t = R_it - R_ft and x_t = R_Mt - R_ft."""
    if asset_id not in md.assets:
        raise KeyError(f"unknown asset {asset_id!r}; available: {md.asset_ids}")
    return AssetSeries(asset_id, md.assets[asset_id] - md.risk_free, md.market_return - md.risk_free, md.dates)


def emit_synthetic(T: int, beta: float, sigma: float, shifts: dict, seed: int, path,
                   risk_free: float = 0.003, asset_id: str = "SYNTH") -> MarketDataset:
    """Write a one-asset CAPM series with intercept shifts at 1-based ``shifts``.

    x_t ~ N(0, 0.05^2), y_t = shift_t + beta * x_t + N(0, sigma^2), and a
    constant risk-free rate is added back to both.  ``synthetic_truth.json``
    is written next to the CSV.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    bad = [t for t in shifts if not 1 <= int(t) <= T]
    if bad:
        raise ValueError(f"shift indices outside 1..{T}: {bad}")
    rng = make_rng(seed)
    x = rng.normal(0.0, 0.05, T)
    y = beta * x + rng.normal(0.0, sigma, T)
    for t, v in shifts.items():
        y[int(t) - 1] += v
    dates = tuple(f"{1990 + m // 12:04d}-{m % 12 + 1:02d}" for m in range(T))
    rf = np.full(T, risk_free)
    md = MarketDataset(dates, x + rf, rf, {asset_id: y + rf})
    path = Path(path)
    write_csv(md, path)
    truth = {
        "asset_id": asset_id,
        "T": T,
        "beta": beta,
        "sigma": sigma,
        "risk_free": risk_free,
        "seed": seed,
        "shifts": {str(int(t)): float(v) for t, v in sorted(shifts.items(), key=lambda kv: int(kv[0]))},
        "shift_indices": sorted(int(t) for t in shifts),
    }
    write_atomic(path.with_name("synthetic_truth.json"), canonical_json(truth))
    return md


# -- configuration -----------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    hyper: HyperParams = field(default_factory=HyperParams)
    weights: CostWeights = field(default_factory=CostWeights)
    chain: ChainConfig = field(default_factory=ChainConfig)
    lts_threshold: float = 2.5
    lts_h: int | None = None
    master_seed: int = 0
    assets: tuple | None = None
    workers: int = 1
    baseline_competes: bool = False

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["hyper"] = asdict(self.hyper)
        d["weights"] = asdict(self.weights)
        chain = asdict(self.chain)
        chain.pop("seed")
        d["chain"] = chain
        d["assets"] = list(self.assets) if self.assets is not None else None
        return d


def _parse_number(text: str) -> float:
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_SECTIONS = {
    "hyper": {f.name for f in fields(HyperParams)},
    "weights": {f.name for f in fields(CostWeights)},
    "chain": {"sweeps", "burn_in", "num_batches"},
}
_TOP = {
    "lts_threshold": _parse_number,
    "lts_h": int,
    "master_seed": int,
    "workers": int,
    "baseline_competes": _parse_bool,
    "assets": lambda s: tuple(a.strip() for a in s.split(",") if a.strip()) or None,
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def build_config(values: dict, base: RunConfig | None = None) -> RunConfig:
    """Apply flat overrides (strings or typed values) to ``base``."""
    cfg = base or RunConfig()
    sections = {name: {} for name in _SECTIONS}
    top = {}
    for key, value in values.items():
        for name, keys in _SECTIONS.items():
            if key in keys:
                sections[name][key] = (int(value) if name == "chain" else _parse_number(value)) \
                    if isinstance(value, str) else value
                break
        else:
            if key not in _TOP:
                raise ValueError(f"unknown configuration key {key!r}")
            top[key] = _TOP[key](value) if isinstance(value, str) else value
    return replace(cfg,
                   hyper=replace(cfg.hyper, **sections["hyper"]),
                   weights=replace(cfg.weights, **sections["weights"]),
                   chain=replace(cfg.chain, **sections["chain"]),
                   **top)


def load_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    return build_config(parse_config_text(text, str(path)))


# -- reports --------------------------------------------------------------------------

def summary_dict(s: PosteriorSummary) -> dict:
    return {
        "alpha_hat": s.alpha_hat.tolist(),
        "beta_hat": s.beta_hat,
        "sigma2_hat": s.sigma2_hat,
        "mcse_alpha": s.mcse_alpha.tolist(),
        "mcse_beta": s.mcse_beta,
        "mcse_sigma2": s.mcse_sigma2,
        "sweeps_used": s.sweeps_used,
        "mean_num_clusters": s.mean_num_clusters,
    }


@dataclass(frozen=True)
class AssetReport:
    asset_id: str
    asset_index: int
    seed: int
    selection: Selection

    @property
    def best_score(self) -> float:
        return self.selection.best.score

    def regression_lines(self) -> list:
        """One line per cluster of the selected partition: (cluster_id, alpha*, beta, members)."""
        best = self.selection.best
        lines = []
        for d, members in enumerate(best.candidate.partition.clusters()):
            lines.append({
                "cluster_id": d,
                "alpha_star": float(best.estimates.alpha_hat[members[0] - 1]),
                "beta": best.estimates.beta_hat,
                "member_indices": list(members),
            })
        return lines

    def to_dict(self) -> dict:
        sel = self.selection
        best = sel.best
        candidates = []
        for k, cs in enumerate(sel.candidates):
            c = cs.candidate
            candidates.append({
                "candidate_index": k,
                "structure": c.structure,
                "s1_members": sorted(c.s1),
                "s3_members": sorted(c.s3),
                "num_clusters": c.num_clusters,
                "score": cs.score,
                "beta_hat": cs.estimates.beta_hat,
                "mcse_beta": cs.estimates.mcse_beta,
                "sigma2_hat": cs.estimates.sigma2_hat,
                "mcse_sigma2": cs.estimates.mcse_sigma2,
            })
        dev = sel.deviations
        return {
            "asset_id": self.asset_id,
            "asset_index": self.asset_index,
            "seed": self.seed,
            "bayes": summary_dict(sel.bayes),
            "lts_outliers": list(sel.outlier_candidates.indices),
            "lts_implausible": list(implausible_candidates(sel.bayes.alpha_hat, sel.outlier_candidates)),
            "deviations": None if dev is None else {
                "median": dev.median_me,
                "kappa": dev.kappa,
                "values": {str(t): v for t, v in sorted(dev.deviations.items())},
            },
            "best": {
                "candidate_index": next(k for k, cs in enumerate(sel.candidates) if cs is best),
                "structure": best.candidate.structure,
                "is_baseline": best.candidate.structure == BASELINE,
                "s1": sorted(best.candidate.s1),
                "s3": sorted(best.candidate.s3),
                "outliers": list(best.candidate.outliers),
                "num_clusters": best.candidate.num_clusters,
                "labels": best.candidate.partition.labels.tolist(),
                "score": best.score,
                "estimates": summary_dict(best.estimates),
            },
            "baseline": {
                "score": sel.baseline.score,
                "estimates": summary_dict(sel.baseline.estimates),
            },
            "prs_vs_baseline": prs(sel.baseline.score, best.score),
            "candidates": candidates,
            "regression_lines": self.regression_lines(),
        }


def analyze_asset(series: AssetSeries, seed: int, cfg: RunConfig, asset_index: int = 0) -> AssetReport:
    chain = replace(cfg.chain, seed=seed)
    sel = select_optimal(series, cfg.hyper, cfg.weights, chain, lts_threshold=cfg.lts_threshold,
                         lts_h=cfg.lts_h, baseline_competes=cfg.baseline_competes)
    return AssetReport(series.asset_id, asset_index, seed, sel)


def _run_one(args):
    series, seed, cfg, index = args
    try:
        return analyze_asset(series, seed, cfg, index), None
    except Exception as exc:  # isolate per-asset failures
        log.exception("asset %s failed", series.asset_id)
        return None, f"{type(exc).__name__}: {exc}"


@dataclass(frozen=True)
class PipelineResult:
    reports: list
    failures: list  # (asset_id, message)
    config: RunConfig

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "config": self.config.to_dict(),
            "assets": [r.to_dict() for r in self.reports],
            "failures": [{"asset_id": a, "error": e} for a, e in self.failures],
        }


def run_pipeline(md: MarketDataset, cfg: RunConfig) -> PipelineResult:
    """Analyse every selected asset; seeds depend only on master seed and column position."""
    ids = md.asset_ids
    if cfg.assets:
        missing = [a for a in cfg.assets if a not in md.assets]
        if missing:
            raise KeyError(f"unknown assets requested: {missing}")
    selected = [a for a in ids if not cfg.assets or a in cfg.assets]
    jobs, failures = [], []
    for a in selected:
        index = ids.index(a)
        try:
            series = excess_returns(md, a)
        except ValueError as exc:
            failures.append((a, f"{type(exc).__name__}: {exc}"))
            continue
        jobs.append((series, derive_seed(cfg.master_seed, index), cfg, index))

    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    reports = []
    for (series, *_), (rep, err) in zip(jobs, results):
        if err is None:
            reports.append(rep)
        else:
            failures.append((series.asset_id, err))
    order = {a: k for k, a in enumerate(ids)}
    failures.sort(key=lambda f: order[f[0]])
    return PipelineResult(reports, failures, cfg)


# -- serialization ------------------------------------------------------------------

def canonical_json(obj) -> str:
    """Sorted keys, two-space indent, shortest round-trip floats, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_atomic(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def safe_name(asset_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", asset_id)


def candidates_csv(rep: AssetReport) -> str:
    rows = [["candidate_index", "structure", "s1_members", "s3_members", "score"]]
    for k, cs in enumerate(rep.selection.candidates):
        c = cs.candidate
        rows.append([k, c.structure, " ".join(map(str, sorted(c.s1))), " ".join(map(str, sorted(c.s3))),
                     repr(cs.score)])
    return _csv_text(rows)


def reglines_csv(rep: AssetReport) -> str:
    rows = [["cluster_id", "alpha_star", "beta", "member_indices"]]
    for line in rep.regression_lines():
        rows.append([line["cluster_id"], repr(line["alpha_star"]), repr(line["beta"]),
                     " ".join(map(str, line["member_indices"]))])
    return _csv_text(rows)


def write_outputs(result: PipelineResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / "report.json", canonical_json(result.to_dict()))
    for rep in result.reports:
        name = safe_name(rep.asset_id)
        write_atomic(out / f"candidates_{name}.csv", candidates_csv(rep))
        write_atomic(out / f"reglines_{name}.csv", reglines_csv(rep))
    return out / "report.json"


def summary_table(result: PipelineResult) -> str:
    """Human-readable one line per asset, fixed 6 decimals."""
    lines = [f"{'asset':<12} {'outliers':<32} {'|rho|':>5} {'score':>10} {'beta_B':>10} {'beta_rho':>10}"]
    for rep in result.reports:
        best = rep.selection.best
        outl = ",".join(map(str, best.candidate.outliers)) or "-"
        lines.append(f"{rep.asset_id:<12} {outl:<32} {best.candidate.num_clusters:>5d} {best.score:>10.6f} "
                     f"{rep.selection.bayes.beta_hat:>10.6f} {best.estimates.beta_hat:>10.6f}")
    for asset, err in result.failures:
        lines.append(f"{asset:<12} FAILED: {err}")
    return "\n".join(lines)
