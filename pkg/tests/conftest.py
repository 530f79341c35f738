import math

import numpy as np
import pytest

from dynfloor.auction import BidderType
from dynfloor.bidmodel import FloorLinkModel, ParticipationModel
from dynfloor.model import FloorModelRow
from dynfloor.revenue import Bidder, BidDistributionModel, PlacementContext

TABLE1 = [
    FloorModelRow("ABCD", "KKKK", "AAAA", 0.88, 1.15),
    FloorModelRow("ABCD", "KKKK", "BBBB", 1.34, 1.58),
    FloorModelRow("ABCD", "HHHH", "CCCC", 0.57, 0.75),
]


def make_bidder(bidder_id, shape, scale, rate=1.0, bidder_type="regular", a1=0.0, b1=0.0):
    link = FloorLinkModel.from_coeffs((math.log(shape), a1, math.log(scale), b1))
    return Bidder(bidder_id, BidderType(bidder_type),
                  BidDistributionModel(link, ParticipationModel(rate, 1000)))


def make_ctx(bidders, adx_rev=0.0, cap=1.0, key=("P", "S", "X")):
    return PlacementContext(*key, bidders=tuple(bidders), adx_rev=adx_rev, floor_cap=cap)


def random_ctx(rng: np.random.Generator, n_bidders: int, cap: float = 3.0):
    """Seeded context with mixed types, floor-dependent links and partial participation."""
    bidders = []
    for i in range(n_bidders):
        btype = "regular" if i % 2 == 0 else "rebroadcaster"
        bidders.append(make_bidder(
            f"b{i}", shape=rng.uniform(0.8, 3.0), scale=rng.uniform(0.6, 2.5),
            rate=rng.uniform(0.4, 1.0), bidder_type=btype,
            a1=rng.uniform(-0.1, 0.3), b1=rng.uniform(0.0, 0.3)))
    return make_ctx(bidders, adx_rev=float(rng.uniform(0.1, 0.8)), cap=cap)


@pytest.fixture
def table1_rows():
    return list(TABLE1)


@pytest.fixture(scope="session")
def small_sim():
    """Seven days of reference-market traffic at 100k requests/day."""
    from dynfloor.sim import reference_config, simulate_period

    cfg = reference_config(seed=11, requests_per_day=100_000)
    return cfg, simulate_period(cfg, None, days=7)


# -- acceptance verdict lines ----------------------------------------------------------

VERDICTS: dict = {}


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
