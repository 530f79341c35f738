import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from dynfloor.auction import FloorVector
from dynfloor.bidmodel import fit_bid_model
from dynfloor.logs import write_log
from dynfloor.model import FloorModelRow
from dynfloor.pipeline import RandomizationPlan
from dynfloor.sim import (DspAgentSpec, PlacementSpec, ReportError, SimConfig, SimConfigError,
                          _agent_bids, bid_histograms, compute_lift, dsp_agent_bid,
                          floor_timeseries, load_sim_config, reference_config, simulate_period)

ONLY = {"training": 0.0, "dynamic": 1.0, "disabled": 0.0}


def one_placement(agents, adx=0.3, requests=50_000, shares=ONLY, seed=1):
    return SimConfig((PlacementSpec("P", "S", "X", adx),), tuple(agents), requests, shares, seed)


# -- agent rule ----------------------------------------------------------------------

@pytest.mark.parametrize("value, floor, expected", [(3, 0.5, 2.0), (2, 2.5, None), (3, 2.5, 2.5)])
def test_agent_bid_examples(value, floor, expected):
    spec = DspAgentSpec("B", "regular", 0.0, 1.0, shading=2 / 3)
    b = dsp_agent_bid(value, floor, spec)
    if expected is None:
        assert b.is_no_bid
    else:
        assert b.amount == pytest.approx(expected)


@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0, 50), st.floats(0.01, 1)), min_size=1, max_size=50))
def test_bids_never_exceed_value_and_respect_floor(rows):
    v, f, a = (np.array(c) for c in zip(*rows))
    bids = _agent_bids(v[:, None], f[:, None], a, np.ones((len(v), 1), bool))[:, 0]
    have = ~np.isnan(bids)
    assert np.all(bids[have] <= v[have] + 1e-6)  # bids are logged to the micro-dollar
    assert np.all(bids[have] >= f[have])
    assert np.all(have == (v >= f))


def test_invalid_configs_rejected():
    agent = DspAgentSpec("A", "regular", 0.0, 0.5)
    with pytest.raises(SimConfigError):
        one_placement([agent], shares={"training": 0.5, "dynamic": 0.4, "disabled": 0.2})
    with pytest.raises(SimConfigError):
        DspAgentSpec("A", "regular", 0.0, 0.5, shading=1.2)
    with pytest.raises(SimConfigError):
        one_placement([agent, agent])


def test_sim_config_file(tmp_path):
    f = tmp_path / "sim.ini"
    f.write_text("[sim]\nrequests_per_day = 500\nseed = 4\nshare_training = 0.2\n"
                 "[placement.X]\npublisherId = P\nsiteId = S\nadx_rev = 0.3\n"
                 "[agent.A]\nbidderType = regular\nmu = 0\nsigma = 0.5\nshading = 0.7\n")
    cfg = load_sim_config(f)
    assert cfg.requests_per_day == 500 and cfg.placements[0].key == ("P", "S", "X")
    assert cfg.agents[0].shading == 0.7 and cfg.bucket_shares["training"] == 0.2


# -- simulated logs ------------------------------------------------------------------

def test_log_invariants(small_sim):
    _, log = small_sim
    have = log["bid"].notna()
    assert (log.loc[have, "bid"] >= log.loc[have, "floorSent"]).all()
    assert set(log["bucket"]) == {"training", "dynamic", "disabled"}
    per_request = log.groupby("requestId")["settledOrigin"].agg(lambda s: (s != "none").sum())
    assert (per_request == 1).all()


def test_disabled_bucket_uses_adx_floor(small_sim):
    cfg, log = small_sim
    dis = log[log["bucket"] == "disabled"]
    for p in cfg.placements:
        floors = dis.loc[dis["placementId"] == p.placement_id, "floorSent"].unique()
        assert floors.tolist() == [pytest.approx(p.adx_rev)]


def test_seeded_log_bytes_reproduce(tmp_path):
    cfg = reference_config(seed=3, requests_per_day=20_000)
    write_log(simulate_period(cfg, None, days=2), tmp_path / "a.csv")
    write_log(simulate_period(cfg, None, days=2), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_unshaded_single_agent_price_is_valuation():
    agent = DspAgentSpec("A", "regular", math.log(1.2), 0.4, shading=1.0)
    log = simulate_period(one_placement([agent]), 0.0)
    prices = log.loc[log["settledOrigin"] == "yahoox", "settledRevenue"].to_numpy()
    assert len(prices) == 50_000
    ks = stats.kstest(prices, stats.lognorm(s=0.4, scale=1.2).cdf)
    assert ks.pvalue > 0.001


def test_higher_floor_shifts_and_thins_bids():
    cfg = reference_config(seed=2, requests_per_day=60_000)
    cfg = SimConfig(cfg.placements[:1], cfg.agents, 60_000, ONLY, 2)
    lo = simulate_period(cfg, FloorVector(0.5, 0.5))
    hi = simulate_period(cfg, FloorVector(1.10, 1.10))
    bl, bh = lo["bid"].dropna(), hi["bid"].dropna()
    assert bl.min() >= 0.5 and bh.min() >= 1.10
    assert bh.mean() > bl.mean() and len(bh) < len(bl)


def test_fitted_truncated_cdf_matches_held_out_bids():
    ref = reference_config()
    cfg = SimConfig(ref.placements[:1], ref.agents, 180_000,
                    {"training": 1.0, "dynamic": 0.0, "disabled": 0.0}, seed=5)
    plan = RandomizationPlan({ref.placements[0].key: 2.0})
    sub = simulate_period(cfg, None, plan=plan).query("bidderId == 'dsp-1'").dropna(subset=["bid"])
    floors, bids = sub["floorSent"].to_numpy(float), sub["bid"].to_numpy(float)
    train, test = slice(0, 50_000), slice(50_000, 100_000)
    assert len(bids) >= 100_000
    c = fit_bid_model((floors[train], bids[train])).coeffs

    rng = np.random.default_rng(0)
    f = rng.choice(floors[test], 3000, replace=False)
    k, lam = np.exp(c[0] + c[1] * f), np.exp(c[2] + c[3] * f)
    below = -np.expm1(-(f / lam) ** k)
    xs = np.sort(bids[test])
    probe = xs[::25]
    model = np.array([np.mean(np.where(x >= f, (-np.expm1(-(x / lam) ** k) - below) / (1 - below), 0.0))
                      for x in probe])
    upper = np.searchsorted(xs, probe, side="right") / len(xs)
    lower = np.searchsorted(xs, probe, side="left") / len(xs)
    ks = max(np.max(np.abs(model - upper)), np.max(np.abs(model - lower)))
    assert ks < 0.05


# -- reporting ----------------------------------------------------------------------

def test_null_experiment_has_no_lift(small_sim):
    _, log = small_sim  # both A/B buckets run static floors here
    rep = compute_lift(log, bootstrap=100)
    for origin in ("total", "yahoox", "adx"):
        for metric in ("revenue", "impressions", "ecpm"):
            assert abs(rep.lift(origin, metric)) < 3 * rep.se(origin, metric) + 1e-9


def test_metric_identities(small_sim):
    _, log = small_sim
    rep = compute_lift(log, bootstrap=20)
    d = rep.buckets["dynamic"]
    total_rev = d["yahoox_revenue"] + d["adx_revenue"]
    assert d["requests"] == log.loc[log["bucket"] == "dynamic", "requestId"].nunique()
    dyn = log[log["bucket"] == "dynamic"]
    assert total_rev == pytest.approx(dyn["settledRevenue"].sum())
    assert rep.lift("total", "ecpm") == pytest.approx(rep.lift("total", "revenue"))
    assert rep.rescale["dynamic"] * d["requests"] == pytest.approx(
        0.94 * (d["requests"] + rep.buckets["disabled"]["requests"]) / 0.10)


def test_missing_bucket_is_an_error(small_sim):
    _, log = small_sim
    with pytest.raises(ReportError):
        compute_lift(log[log["bucket"] != "disabled"])


def test_histograms_per_floor_level():
    agent = DspAgentSpec("A", "regular", 0.0, 0.5, shading=0.7)
    log = pd.concat([simulate_period(one_placement([agent], requests=5000), 0.5),
                     simulate_period(one_placement([agent], requests=5000, seed=2), 1.1)])
    hist = bid_histograms(log)
    assert sorted(hist["floor"].unique()) == [0.5, 1.1]
    for level, grp in hist.groupby("floor"):
        assert grp.loc[grp["bin_right"] <= level, "count"].sum() == 0
    assert bid_histograms(log.iloc[0:0]).columns.tolist() == ["floor", "bin_left", "bin_right", "count"]


def test_floor_timeseries_from_daily_models():
    models = [(f"2022-11-{d:02d}", [FloorModelRow("P", "S", "X", 0.5 + d / 100, 0.7),
                                    FloorModelRow("P", "S", "Y", 0.2, 0.3)]) for d in range(1, 15)]
    ts = floor_timeseries(models)
    assert len(ts) == 28
    x = ts[ts["placementId"] == "X"]
    assert x["date"].is_monotonic_increasing and x["Regular"].iloc[-1] == pytest.approx(0.64)
