"""Daily batch training: exploration plan, ingestion, fitting, optimisation, output."""
from __future__ import annotations

import concurrent.futures as cf
import datetime as dt
import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .auction import BidderType
from .bidmodel import (InsufficientDataError, ParticipationModel, fit_bid_model,
                       fit_censored_bid_model)
from .config import PipelineConfig
from .logs import read_logs
from .model import FloorModelRow
from .revenue import (Bidder, BidDistributionModel, OptimizerConfig, PlacementContext,
                      optimize_floors)

logger = logging.getLogger(__name__)

PlacementKey = tuple[str, str, str]


class PipelineError(RuntimeError):
    pass


# -- exploration plan ---------------------------------------------------------

@dataclass(frozen=True)
class RandomizationPlan:
    caps: Mapping[PlacementKey, float]
    bucket_share: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.bucket_share <= 1):
            raise ValueError("bucket_share must lie in (0, 1]")
        for key, cap in self.caps.items():
            if not (math.isfinite(cap) and cap > 0):
                raise ValueError(f"floor cap for {key} must be > 0, got {cap!r}")

    def draw_floors(self, key: PlacementKey, size, rng: np.random.Generator) -> np.ndarray:
        """Independent uniform floors on [0, cap] for the exploration bucket."""
        return rng.uniform(0.0, self.caps[key], size)


def build_randomization_plan(history: pd.DataFrame, cfg: PipelineConfig = PipelineConfig()
                             ) -> RandomizationPlan:
    """Per-placement floor cap at the given percentile of historical bids."""
    caps: dict[PlacementKey, float] = {}
    if history.empty:
        logger.warning("no history supplied; randomization plan is empty")
        return RandomizationPlan(caps, cfg.bucket_share, cfg.seed)
    keys = ["publisherId", "siteId", "placementId"]
    for key, grp in history.groupby(keys, sort=True):
        bids = pd.to_numeric(grp["bid"], errors="coerce").dropna().to_numpy(dtype=float)
        if bids.size == 0:
            logger.warning("placement %s has no bids in history; excluded from plan", "/".join(key))
            continue
        cap = float(np.percentile(bids, cfg.cap_percentile))
        if cap <= 0:
            logger.warning("placement %s has a zero bid percentile; excluded from plan", "/".join(key))
            continue
        caps[tuple(key)] = cap
    return RandomizationPlan(caps, cfg.bucket_share, cfg.seed)


# -- training set -------------------------------------------------------------

@dataclass(frozen=True)
class BidderData:
    bidder_id: str
    bidder_type: BidderType
    floors: np.ndarray
    bids: np.ndarray  # NaN for no-bid

    @property
    def requests(self) -> int:
        return int(self.floors.size)

    @property
    def responses(self) -> int:
        return int(np.count_nonzero(~np.isnan(self.bids)))


@dataclass(frozen=True)
class PlacementData:
    key: PlacementKey
    bidders: tuple[BidderData, ...]
    adx_rev: float
    requests: int
    floor_cap: float


@dataclass(frozen=True)
class TrainingSet:
    window_start: dt.date
    window_end: dt.date  # exclusive: the training run date
    placements: Mapping[PlacementKey, PlacementData]
    latest_ts: Optional[pd.Timestamp] = None
    rejected_rows: int = 0

    def __post_init__(self):
        if self.latest_ts is not None and self.latest_ts >= pd.Timestamp(self.window_end):
            raise ValueError("training set contains records from the run date or later")


def training_set_from_frame(df: pd.DataFrame, run_date: Optional[dt.date] = None,
                            window_days: int = 7, rejected: int = 0) -> TrainingSet:
    """Filter a validated log frame to the exploration bucket and trailing window."""
    if run_date is None:
        if df.empty:
            raise PipelineError("cannot infer a run date from an empty log")
        run_date = (pd.Timestamp(df["ts"].max()).normalize() + pd.Timedelta(days=1)).date()
    start = run_date - dt.timedelta(days=window_days)
    ts = pd.to_datetime(df["ts"])
    keep = (df["bucket"] == "training") & (ts >= pd.Timestamp(start)) & (ts < pd.Timestamp(run_date))
    sub = df[keep]

    placements: dict[PlacementKey, PlacementData] = {}
    keys = ["publisherId", "siteId", "placementId"]
    for key, grp in sub.groupby(keys, sort=True):
        key = tuple(key)
        bidders = []
        for bidder_id, bg in grp.groupby("bidderId", sort=True):
            btype = bg["bidderType"].iloc[0]
            bidders.append(BidderData(
                str(bidder_id), BidderType(btype),
                bg["floorSent"].to_numpy(dtype=float), bg["bid"].to_numpy(dtype=float),
            ))
        passback = grp.loc[grp["settledOrigin"] == "adx", "settledRevenue"].to_numpy(dtype=float)
        if passback.size == 0:
            logger.warning("placement %s has no observed passbacks; adx_rev set to 0", "/".join(key))
        adx_rev = float(passback.mean()) if passback.size else 0.0
        cap = float(grp["floorSent"].max())
        placements[key] = PlacementData(key, tuple(bidders), adx_rev,
                                        int(grp["requestId"].nunique()), cap)
    latest = pd.Timestamp(ts[keep].max()) if keep.any() else None
    return TrainingSet(start, run_date, placements, latest, rejected)


def ingest_logs(paths: Sequence, window_days: int = 7, run_date: Optional[dt.date] = None,
                max_reject_share: float = 0.01) -> TrainingSet:
    df, rejected = read_logs(paths, max_reject_share)
    return training_set_from_frame(df, run_date, window_days, rejected)


# -- training -------------------------------------------------------------------

@dataclass(frozen=True)
class PlacementResult:
    key: PlacementKey
    row: Optional[FloorModelRow]
    status: str  # "trained" | "fallback"
    reason: Optional[str] = None  # "timeout" | "insufficient-data"
    expected_revenue: Optional[float] = None


def placement_seed(seed: int, key: PlacementKey) -> int:
    """Seed that depends only on the run seed and the placement identity."""
    return int(np.random.SeedSequence([seed, zlib.crc32("/".join(key).encode())]).generate_state(1)[0])


def _cents_within(value: float, cap: float) -> float:
    return min(round(value, 2), math.floor(cap * 100 + 1e-9) / 100)


def _fallback(key, reason, previous):
    row = previous.get(key) if previous else None
    return PlacementResult(key, row, "fallback", reason)


def build_context(data: PlacementData, cfg: PipelineConfig) -> PlacementContext:
    bidders = []
    for bd in data.bidders:
        try:
            if cfg.likelihood == "censored":
                link, part = fit_censored_bid_model((bd.floors, bd.bids),
                                                    min_observations=cfg.min_observations)
            else:
                link = fit_bid_model((bd.floors, bd.bids), min_observations=cfg.min_observations)
                part = ParticipationModel(bd.responses / bd.requests, bd.requests)
        except InsufficientDataError as exc:
            logger.info("placement %s bidder %s skipped: %s", "/".join(data.key), bd.bidder_id, exc)
            continue
        bidders.append(Bidder(bd.bidder_id, bd.bidder_type, BidDistributionModel(link, part)))
    if not bidders:
        raise InsufficientDataError(f"no bidder of placement {'/'.join(data.key)} has enough bids")
    return PlacementContext(*data.key, bidders=tuple(bidders), adx_rev=data.adx_rev,
                            floor_cap=data.floor_cap)


def train_placement(data: Optional[PlacementData], cfg: PipelineConfig, budget: Optional[float] = None,
                    previous: Optional[Mapping[PlacementKey, FloorModelRow]] = None,
                    key: Optional[PlacementKey] = None) -> PlacementResult:
    """Fit every bidder of one placement and optimise its two floors.

    Falls back to the previously published row (if any) on timeout or
    when no bidder has enough data.
    """
    key = data.key if data is not None else key
    budget = cfg.budget_seconds if budget is None else budget
    if budget <= 0:
        return _fallback(key, "timeout", previous)
    deadline = time.monotonic() + budget
    if data is None or not data.bidders or data.floor_cap <= 0:
        return _fallback(key, "insufficient-data", previous)
    try:
        ctx = build_context(data, cfg)
    except InsufficientDataError:
        return _fallback(key, "insufficient-data", previous)
    if time.monotonic() > deadline:
        return _fallback(key, "timeout", previous)
    opt_cfg = OptimizerConfig(grid_size=cfg.grid_size, mc_draws=cfg.mc_draws,
                              seed=placement_seed(cfg.seed, key), nodes=cfg.quad_nodes,
                              tail_mass=cfg.tail_mass, deadline=deadline)
    res = optimize_floors(ctx, opt_cfg)
    if res.timed_out:
        return _fallback(key, "timeout", previous)
    row = FloorModelRow(*key, _cents_within(res.floors.regular, data.floor_cap),
                        _cents_within(res.floors.rebroadcaster, data.floor_cap))
    return PlacementResult(key, row, "trained", None, res.estimate.value)


@dataclass(frozen=True)
class TrainingReport:
    status: str  # "ok" | "failed"
    trained: int
    fallback: int
    timeout: int
    insufficient: int
    placements: tuple[PlacementResult, ...] = field(repr=False, default=())

    def as_dict(self) -> dict:
        return {
            "status": self.status, "trained": self.trained, "fallback": self.fallback,
            "timeout": self.timeout, "insufficient_data": self.insufficient,
            "placements": [
                {"key": "/".join(r.key), "status": r.status, "reason": r.reason,
                 "expected_revenue": r.expected_revenue}
                for r in self.placements
            ],
        }


def _train_task(args):
    data, cfg, previous = args
    return train_placement(data, cfg, previous=previous)


def train_all(tset: TrainingSet, cfg: PipelineConfig = PipelineConfig(),
              previous: Optional[Sequence[FloorModelRow]] = None,
              parallelism: Optional[int] = None) -> tuple[list[FloorModelRow], TrainingReport]:
    """Train every placement (parallel map) and collect the floor model.

    Output order and values do not depend on the worker count.
    """
    if not tset.placements:
        raise PipelineError("training set has no placements")
    workers = cfg.parallelism if parallelism is None else parallelism
    prev = {r.key: r for r in previous} if previous else {}
    keys = sorted(tset.placements)
    tasks = [(tset.placements[k], cfg, {k: prev[k]} if k in prev else None) for k in keys]
    if workers <= 1:
        results = [_train_task(t) for t in tasks]
    else:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_task, tasks))

    rows = sorted((r.row for r in results if r.row is not None), key=lambda r: r.key)
    trained = sum(r.status == "trained" for r in results)
    fallback = len(results) - trained
    report = TrainingReport(
        "ok" if trained else "failed", trained, fallback,
        sum(r.reason == "timeout" for r in results),
        sum(r.reason == "insufficient-data" for r in results),
        tuple(results),
    )
    if not trained:
        logger.error("every placement fell back; training failed")
    return rows, report
