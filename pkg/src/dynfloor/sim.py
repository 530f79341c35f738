"""Synthetic first-price marketplace with bid-shading DSP agents and passback.

Agents draw lognormal valuations, stay silent when the valuation is below
the floor, and otherwise bid ``max(shading * valuation, floor)``. Requests
are split into the exploration (training), dynamic-floor and disabled
buckets; the production remainder is drawn but not logged.
"""
from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .auction import BidderType, BidSubmission, FloorVector
from .config import PipelineConfig, read_kv_file
from .logs import LOG_COLUMNS, empty_log
from .pipeline import RandomizationPlan, build_randomization_plan

logger = logging.getLogger(__name__)

DEFAULT_SHARES = {"dynamic": 0.05, "disabled": 0.05, "training": 0.01}


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DspAgentSpec:
    bidder_id: str
    bidder_type: BidderType
    mu: float  # log-dollars
    sigma: float
    shading: float = 1.0
    participation: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "bidder_type", BidderType(self.bidder_type))
        if not (0 < self.shading <= 1):
            raise SimConfigError(f"agent {self.bidder_id}: shading must lie in (0, 1]")
        if not (0 <= self.participation <= 1):
            raise SimConfigError(f"agent {self.bidder_id}: participation must lie in [0, 1]")
        if not (self.sigma > 0 and math.isfinite(self.mu)):
            raise SimConfigError(f"agent {self.bidder_id}: need finite mu and sigma > 0")


@dataclass(frozen=True)
class PlacementSpec:
    publisher_id: str
    site_id: str
    placement_id: str
    adx_rev: float
    value_scale: float = 1.0  # multiplies every agent's valuation here
    weight: float = 1.0

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.publisher_id, self.site_id, self.placement_id)


@dataclass(frozen=True)
class SimConfig:
    placements: tuple[PlacementSpec, ...]
    agents: tuple[DspAgentSpec, ...]
    requests_per_day: int = 100_000
    bucket_shares: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_SHARES))
    seed: int = 0
    start_date: dt.date = dt.date(2022, 11, 1)

    def __post_init__(self):
        object.__setattr__(self, "placements", tuple(self.placements))
        object.__setattr__(self, "agents", tuple(self.agents))
        if not self.placements or not self.agents:
            raise SimConfigError("need at least one placement and one agent")
        if self.requests_per_day < 1:
            raise SimConfigError("requests_per_day must be >= 1")
        unknown = set(self.bucket_shares) - set(DEFAULT_SHARES)
        if unknown:
            raise SimConfigError(f"unknown buckets {sorted(unknown)}")
        shares = [self.bucket_shares.get(b, 0.0) for b in DEFAULT_SHARES]
        if any(s < 0 for s in shares) or sum(shares) > 1 + 1e-12:
            raise SimConfigError(f"bucket shares must be >= 0 and sum to <= 1, got {dict(self.bucket_shares)}")
        ids = [a.bidder_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise SimConfigError("agent ids must be unique")

    def placement(self, key) -> PlacementSpec:
        for p in self.placements:
            if p.key == tuple(key):
                return p
        raise KeyError(key)


def reference_config(seed: int = 7, requests_per_day: int = 1_000_000) -> SimConfig:
    """Three placements under two sites, two regular DSPs and two rebroadcasters."""
    placements = (
        PlacementSpec("ABCD", "KKKK", "AAAA", adx_rev=0.45, value_scale=1.0),
        PlacementSpec("ABCD", "KKKK", "BBBB", adx_rev=0.60, value_scale=1.3),
        PlacementSpec("ABCD", "HHHH", "CCCC", adx_rev=0.30, value_scale=0.7),
    )
    agents = (
        DspAgentSpec("dsp-1", "regular", mu=math.log(1.6), sigma=0.55, shading=0.55, participation=0.75),
        DspAgentSpec("dsp-2", "regular", mu=math.log(1.3), sigma=0.60, shading=0.60, participation=0.65),
        DspAgentSpec("rb-1", "rebroadcaster", mu=math.log(1.4), sigma=0.50, shading=0.60, participation=0.70),
        DspAgentSpec("rb-2", "rebroadcaster", mu=math.log(1.1), sigma=0.65, shading=0.65, participation=0.60),
    )
    return SimConfig(placements, agents, requests_per_day, dict(DEFAULT_SHARES), seed)


def load_sim_config(path) -> SimConfig:
    """Read a SimConfig from a key-value file.

    ``[sim]`` holds ``requests_per_day``, ``seed``, ``start_date`` and the
    ``share_<bucket>`` keys; every ``[placement.<id>]`` and ``[agent.<id>]``
    section declares one placement or agent.
    """
    import configparser

    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read(path, encoding="utf-8")
    try:
        sim = parser["sim"] if parser.has_section("sim") else {}
        placements = []
        agents = []
        for name in parser.sections():
            sec = parser[name]
            if name.startswith("placement."):
                placements.append(PlacementSpec(
                    sec["publisherId"], sec["siteId"], name.split(".", 1)[1],
                    float(sec["adx_rev"]), float(sec.get("value_scale", 1.0)),
                    float(sec.get("weight", 1.0))))
            elif name.startswith("agent."):
                agents.append(DspAgentSpec(
                    name.split(".", 1)[1], sec["bidderType"], float(sec["mu"]), float(sec["sigma"]),
                    float(sec.get("shading", 1.0)), float(sec.get("participation", 1.0))))
        shares = {b: float(sim.get(f"share_{b}", DEFAULT_SHARES[b])) for b in DEFAULT_SHARES}
        start = dt.date.fromisoformat(sim.get("start_date", "2022-11-01"))
        return SimConfig(tuple(placements), tuple(agents), int(sim.get("requests_per_day", 100_000)),
                         shares, int(sim.get("seed", 0)), start)
    except (KeyError, ValueError) as exc:
        raise SimConfigError(f"invalid sim config {path}: {exc}") from exc


def dsp_agent_bid(valuation: float, floor: float, spec: DspAgentSpec) -> BidSubmission:
    """Shaded first-price bid, lifted to the floor, never above the valuation."""
    if valuation < 0:
        raise ValueError("valuation must be >= 0")
    if valuation < floor:
        return BidSubmission(spec.bidder_id, spec.bidder_type, None)
    return BidSubmission(spec.bidder_id, spec.bidder_type, max(spec.shading * valuation, floor))


def _agent_bids(values: np.ndarray, floors: np.ndarray, shading: np.ndarray,
                present: np.ndarray) -> np.ndarray:
    """Vector form of :func:`dsp_agent_bid`; NaN marks a no-bid."""
    bids = np.maximum(np.round(shading * values, 6), floors)
    return np.where(present & (values >= floors), bids, np.nan)


def _resolve_batch(bids: np.ndarray):
    """First-price resolution per row; returns (winner index or -1, price)."""
    filled = np.where(np.isnan(bids), -np.inf, bids)
    winner = np.argmax(filled, axis=1)  # first index wins ties
    price = filled[np.arange(len(bids)), winner]
    passback = ~np.isfinite(price)
    winner = np.where(passback, -1, winner)
    price = np.where(passback, 0.0, price)
    return winner, price


FloorPolicy = Union[None, float, FloorVector, Mapping, object]


def _policy_floors(policy, cfg: SimConfig) -> np.ndarray:
    """Per-placement (regular, rebroadcaster) floors for the dynamic bucket."""
    from .service import FloorIndex, FloorQuery, lookup

    out = np.empty((len(cfg.placements), 2))
    for p_idx, p in enumerate(cfg.placements):
        if policy is None:
            out[p_idx] = (p.adx_rev, p.adx_rev)
        elif isinstance(policy, (int, float)):
            out[p_idx] = (float(policy), float(policy))
        elif isinstance(policy, FloorVector):
            out[p_idx] = policy.as_tuple()
        elif isinstance(policy, FloorIndex):
            out[p_idx] = [lookup(FloorQuery(*p.key, t), policy).floor
                          for t in (BidderType.REGULAR, BidderType.REBROADCASTER)]
        elif isinstance(policy, Mapping):
            fv = policy.get(p.key)
            out[p_idx] = fv.as_tuple() if fv is not None else (p.adx_rev, p.adx_rev)
        else:
            raise TypeError(f"unsupported floor policy {type(policy).__name__}")
    return np.round(out, 6)


def _simulate_day(cfg: SimConfig, day: int, dyn_floors: np.ndarray,
                  plan: Optional[RandomizationPlan]) -> pd.DataFrame:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, day + 1_000_000]))
    n = cfg.requests_per_day
    names = list(DEFAULT_SHARES)
    probs = [cfg.bucket_shares.get(b, 0.0) for b in names]
    probs.append(max(0.0, 1.0 - sum(probs)))  # production, not logged
    bucket = rng.choice(len(probs), size=n, p=np.asarray(probs) / sum(probs))
    weights = np.array([p.weight for p in cfg.placements], dtype=float)
    placement = rng.choice(len(cfg.placements), size=n, p=weights / weights.sum())
    seq = np.flatnonzero(bucket < len(names))
    bucket, placement = bucket[seq], placement[seq]
    m = seq.size
    A = len(cfg.agents)

    adx = np.array([p.adx_rev for p in cfg.placements])
    floors2 = np.empty((m, 2))
    is_dyn = bucket == names.index("dynamic")
    is_train = bucket == names.index("training")
    floors2[:] = adx[placement, None]
    floors2[is_dyn] = dyn_floors[placement[is_dyn]]
    if plan is not None and is_train.any():
        caps = np.array([plan.caps[p.key] for p in cfg.placements])
        floors2[is_train] = caps[placement[is_train], None] * rng.random((int(is_train.sum()), 2))
    floors2 = np.round(floors2, 6)

    type_col = np.array([0 if a.bidder_type is BidderType.REGULAR else 1 for a in cfg.agents])
    floors = floors2[:, type_col]
    mu = np.array([a.mu for a in cfg.agents])
    sigma = np.array([a.sigma for a in cfg.agents])
    scale = np.array([p.value_scale for p in cfg.placements])[placement, None]
    values = scale * np.exp(mu + sigma * rng.standard_normal((m, A)))
    present = rng.random((m, A)) < np.array([a.participation for a in cfg.agents])
    bids = _agent_bids(values, floors, np.array([a.shading for a in cfg.agents]), present)
    winner, price = _resolve_batch(bids)

    origin = np.full((m, A), "none", dtype=object)
    revenue = np.zeros((m, A))
    won = winner >= 0
    origin[np.flatnonzero(won), winner[won]] = "yahoox"
    revenue[np.flatnonzero(won), winner[won]] = price[won]
    origin[~won, 0] = "adx"
    revenue[~won, 0] = adx[placement[~won]]

    day_start = pd.Timestamp(cfg.start_date) + pd.Timedelta(days=day)
    ts = day_start + pd.to_timedelta((seq * 86400) // n, unit="s")
    pl = cfg.placements
    frame = pd.DataFrame({
        "ts": np.repeat(ts.to_numpy(), A),
        "bucket": np.repeat(np.array(names, dtype=object)[bucket], A),
        "requestId": np.repeat(day * n + seq, A).astype(np.int64),
        "publisherId": np.repeat(np.array([p.publisher_id for p in pl], dtype=object)[placement], A),
        "siteId": np.repeat(np.array([p.site_id for p in pl], dtype=object)[placement], A),
        "placementId": np.repeat(np.array([p.placement_id for p in pl], dtype=object)[placement], A),
        "bidderId": np.tile(np.array([a.bidder_id for a in cfg.agents], dtype=object), m),
        "bidderType": np.tile(np.array([a.bidder_type.value for a in cfg.agents], dtype=object), m),
        "floorSent": floors.ravel(),
        "bid": bids.ravel(),
        "settledOrigin": origin.ravel(),
        "settledRevenue": np.round(revenue.ravel(), 6),
    })
    return frame[LOG_COLUMNS]


def warmup_plan(cfg: SimConfig, pipeline_cfg: PipelineConfig = PipelineConfig()) -> RandomizationPlan:
    """Exploration caps from one day of static-floor traffic preceding the period."""
    history = _simulate_day(cfg, -1, _policy_floors(None, cfg), None)
    plan = build_randomization_plan(history, pipeline_cfg)
    missing = [p.key for p in cfg.placements if p.key not in plan.caps]
    if missing:
        raise SimConfigError(f"warm-up produced no bids for placements {missing}")
    return plan


def simulate_period(cfg: SimConfig, floor_policy: FloorPolicy = None, days: int = 1,
                    plan: Optional[RandomizationPlan] = None, start_day: int = 0) -> pd.DataFrame:
    """Simulate ``days`` days of logged traffic.

    ``floor_policy`` sets dynamic-bucket floors: a FloorIndex, a FloorVector,
    a scalar, a mapping of placement key to FloorVector, or ``None`` for the
    static ADX-revenue floor. The training bucket draws from ``plan``
    (built by :func:`warmup_plan` when omitted). Each day uses its own seed
    stream, so a day's records do not depend on how many days precede it.
    """
    if days < 0:
        raise SimConfigError("days must be >= 0")
    dyn = _policy_floors(floor_policy, cfg)
    if plan is None and cfg.bucket_shares.get("training", 0) > 0:
        plan = warmup_plan(cfg)
    frames = [_simulate_day(cfg, d, dyn, plan) for d in range(start_day, start_day + days)]
    if not frames:
        return empty_log()
    return pd.concat(frames, ignore_index=True)


def true_revenue(cfg: SimConfig, key, floors: FloorVector, n: int = 1_000_000,
                 seed: int = 0) -> float:
    """Simulator ground-truth expected revenue per request at one placement."""
    p = cfg.placement(key)
    rng = np.random.default_rng(seed)
    A = len(cfg.agents)
    fl = np.array([floors.for_type(a.bidder_type) for a in cfg.agents])
    values = p.value_scale * np.exp(np.array([a.mu for a in cfg.agents])
                                    + np.array([a.sigma for a in cfg.agents]) * rng.standard_normal((n, A)))
    present = rng.random((n, A)) < np.array([a.participation for a in cfg.agents])
    bids = _agent_bids(values, np.broadcast_to(fl, (n, A)),
                       np.array([a.shading for a in cfg.agents]), present)
    winner, price = _resolve_batch(bids)
    return float(np.mean(np.where(winner >= 0, price, p.adx_rev)))


# -- A/B reporting ------------------------------------------------------------

ORIGIN_NAMES = ("total", "yahoox", "adx")
METRICS = ("revenue", "impressions", "ecpm", "ecpm_impression")


class ReportError(ValueError):
    pass


def _per_request(log: pd.DataFrame, bucket: str) -> np.ndarray:
    """Columns: yahoox revenue, adx revenue, yahoox imps, adx imps (one row per request)."""
    sub = log[log["bucket"] == bucket]
    if sub.empty:
        raise ReportError(f"log has no {bucket!r} requests")
    codes, uniques = pd.factorize(sub["requestId"], sort=True)
    k = len(uniques)
    origin = sub["settledOrigin"].to_numpy()
    rev = pd.to_numeric(sub["settledRevenue"]).to_numpy(dtype=float)
    y = origin == "yahoox"
    a = origin == "adx"
    out = np.zeros((k, 4))
    out[:, 0] = np.bincount(codes, weights=np.where(y, rev, 0.0), minlength=k)
    out[:, 1] = np.bincount(codes, weights=np.where(a, rev, 0.0), minlength=k)
    out[:, 2] = np.bincount(codes, weights=y.astype(float), minlength=k)
    out[:, 3] = np.bincount(codes, weights=a.astype(float), minlength=k)
    return out


def _bucket_metrics(sums: np.ndarray, n: np.ndarray) -> dict:
    """sums[..., 4] column totals and request counts -> metric arrays."""
    yr, ar, yi, ai = (sums[..., j] for j in range(4))
    with np.errstate(divide="ignore", invalid="ignore"):
        return {
            "total": {"revenue": (yr + ar) / n, "impressions": (yi + ai) / n,
                      "ecpm": 1000 * (yr + ar) / n, "ecpm_impression": 1000 * (yr + ar) / (yi + ai)},
            "yahoox": {"revenue": yr / n, "impressions": yi / n,
                       "ecpm": 1000 * yr / n, "ecpm_impression": 1000 * yr / yi},
            "adx": {"revenue": ar / n, "impressions": ai / n,
                    "ecpm": 1000 * ar / n, "ecpm_impression": 1000 * ar / ai},
            "adx_share": ai / (yi + ai),
        }


@dataclass(frozen=True)
class LiftReport:
    """Dynamic-vs-disabled lifts (fractions, not percent) with bootstrap errors.

    ``ecpm`` is revenue per 1000 requests; ``ecpm_impression`` is revenue
    per 1000 impressions.
    """

    lifts: dict
    std_errors: dict
    buckets: dict
    adx_share: dict
    rescale: dict

    def lift(self, origin: str, metric: str) -> float:
        return self.lifts[origin][metric]

    def se(self, origin: str, metric: str) -> float:
        return self.std_errors[origin][metric]

    def rows(self) -> list[dict]:
        out = []
        for o in ORIGIN_NAMES:
            for mname in METRICS:
                out.append({"origin": o, "metric": mname,
                            "lift_pct": 100 * self.lifts[o][mname],
                            "se_pct": 100 * self.std_errors[o][mname]})
        out.append({"origin": "adx", "metric": "impression_share",
                    "lift_pct": 100 * self.lifts["adx_share"],
                    "se_pct": 100 * self.std_errors["adx_share"]})
        return out

    def as_dict(self) -> dict:
        return {"lifts": self.lifts, "std_errors": self.std_errors, "buckets": self.buckets,
                "adx_share": self.adx_share, "rescale": self.rescale}


def compute_lift(log: pd.DataFrame, bootstrap: int = 200, seed: int = 0,
                 target_share: float = 0.94,
                 shares: Mapping[str, float] = DEFAULT_SHARES) -> LiftReport:
    """Compare the dynamic bucket against the disabled bucket.

    Each bucket is rescaled by requests to ``target_share`` of traffic, which
    makes lifts ratios of per-request rates. Standard errors come from a
    request-level bootstrap within each bucket.
    """
    dyn = _per_request(log, "dynamic")
    dis = _per_request(log, "disabled")
    n_dyn, n_dis = len(dyn), len(dis)
    total_requests = (n_dyn + n_dis) / (shares["dynamic"] + shares["disabled"])
    scale_dyn = target_share * total_requests / n_dyn
    scale_dis = target_share * total_requests / n_dis

    m_dyn = _bucket_metrics(dyn.sum(axis=0), n_dyn)
    m_dis = _bucket_metrics(dis.sum(axis=0), n_dis)

    rng = np.random.default_rng(seed)
    b_dyn = np.stack([dyn[rng.integers(0, n_dyn, n_dyn)].sum(axis=0) for _ in range(bootstrap)])
    b_dis = np.stack([dis[rng.integers(0, n_dis, n_dis)].sum(axis=0) for _ in range(bootstrap)])
    bm_dyn = _bucket_metrics(b_dyn, n_dyn)
    bm_dis = _bucket_metrics(b_dis, n_dis)

    lifts, ses = {}, {}
    for o in ORIGIN_NAMES:
        lifts[o] = {k: float(m_dyn[o][k] / m_dis[o][k] - 1) for k in METRICS}
        ses[o] = {k: float(np.std(bm_dyn[o][k] / bm_dis[o][k] - 1, ddof=1)) for k in METRICS}
    lifts["adx_share"] = float(m_dyn["adx_share"] / m_dis["adx_share"] - 1)
    ses["adx_share"] = float(np.std(bm_dyn["adx_share"] / bm_dis["adx_share"] - 1, ddof=1))

    def summary(sums, n, scale):
        return {"requests": int(n), "yahoox_revenue": float(sums[0]), "adx_revenue": float(sums[1]),
                "yahoox_impressions": int(sums[2]), "adx_impressions": int(sums[3]),
                "rescaled_revenue": float((sums[0] + sums[1]) * scale)}

    buckets = {"dynamic": summary(dyn.sum(axis=0), n_dyn, scale_dyn),
               "disabled": summary(dis.sum(axis=0), n_dis, scale_dis)}
    buckets["incremental_revenue"] = (buckets["dynamic"]["rescaled_revenue"]
                                      - buckets["disabled"]["rescaled_revenue"])
    return LiftReport(lifts, ses, buckets,
                      {"dynamic": float(m_dyn["adx_share"]), "disabled": float(m_dis["adx_share"])},
                      {"dynamic": scale_dyn, "disabled": scale_dis, "target_share": target_share})


# -- plot data ----------------------------------------------------------------

HISTOGRAM_COLUMNS = ["floor", "bin_left", "bin_right", "count"]
TIMESERIES_COLUMNS = ["date", "publisherId", "siteId", "placementId", "Regular", "Rebroadcaster"]


def bid_histograms(log: pd.DataFrame, bins=40, floor_levels: Optional[Sequence[float]] = None,
                   max_levels: int = 10, bidder_id: Optional[str] = None) -> pd.DataFrame:
    """Observed-bid histograms, one series per floor level.

    Without ``floor_levels`` the most frequent distinct floors (to the cent)
    are used. Every series shares one set of bin edges.
    """
    if log.empty:
        return pd.DataFrame(columns=HISTOGRAM_COLUMNS)
    sub = log if bidder_id is None else log[log["bidderId"] == bidder_id]
    floors = pd.to_numeric(sub["floorSent"]).round(2)
    bids = pd.to_numeric(sub["bid"], errors="coerce")
    if floor_levels is None:
        floor_levels = sorted(floors.value_counts().head(max_levels).index)
    have = bids.notna()
    if not have.any():
        return pd.DataFrame(columns=HISTOGRAM_COLUMNS)
    edges = np.histogram_bin_edges(bids[have].to_numpy(dtype=float), bins=bins)
    parts = []
    for level in floor_levels:
        sel = have & np.isclose(floors, round(float(level), 2))
        counts, _ = np.histogram(bids[sel].to_numpy(dtype=float), bins=edges)
        parts.append(pd.DataFrame({"floor": round(float(level), 2), "bin_left": edges[:-1],
                                   "bin_right": edges[1:], "count": counts}))
    return pd.concat(parts, ignore_index=True)[HISTOGRAM_COLUMNS]


def floor_timeseries(models: Sequence[tuple[object, Sequence]]) -> pd.DataFrame:
    """Long-format per-placement floors from ``(date, rows)`` pairs."""
    recs = [(str(date), r.publisher_id, r.site_id, r.placement_id, r.regular_floor, r.rebroadcaster_floor)
            for date, rows in models for r in rows]
    df = pd.DataFrame(recs, columns=TIMESERIES_COLUMNS)
    return df.sort_values(["publisherId", "siteId", "placementId", "date"], kind="stable",
                          ignore_index=True)
