"""Deterministic auction resolution.

First-price clearing with per-bidder-type floors and a passback outside
option, plus a single-floor second-price mechanism kept as a reference.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence


class InvalidBidError(ValueError):
    """A bid amount or floor is negative or not finite."""


class BidderType(str, enum.Enum):
    REGULAR = "regular"
    REBROADCASTER = "rebroadcaster"


class LosingReason(str, enum.Enum):
    BELOW_FLOOR = "BelowFloor"
    OUTBID = "Outbid"
    NO_BID = "NoBid"


class Origin(str, enum.Enum):
    YAHOOX = "yahoox"
    ADX = "adx"


@dataclass(frozen=True)
class BidSubmission:
    bidder_id: str
    bidder_type: BidderType
    amount: Optional[float] = None  # None is an explicit no-bid

    def __post_init__(self):
        object.__setattr__(self, "bidder_type", BidderType(self.bidder_type))
        if self.amount is not None:
            _check_amount(self.amount, f"bid of {self.bidder_id!r}")

    @property
    def is_no_bid(self) -> bool:
        return self.amount is None


@dataclass(frozen=True)
class FloorVector:
    """One floor per bidder type, CPM dollars."""

    regular: float = 0.0
    rebroadcaster: float = 0.0

    def __post_init__(self):
        _check_amount(self.regular, "regular floor")
        _check_amount(self.rebroadcaster, "rebroadcaster floor")

    def for_type(self, bidder_type: BidderType | str) -> float:
        if BidderType(bidder_type) is BidderType.REGULAR:
            return self.regular
        return self.rebroadcaster

    def as_tuple(self) -> tuple[float, float]:
        return (self.regular, self.rebroadcaster)


@dataclass(frozen=True)
class AuctionOutcome:
    """Result of one auction.

    ``winner`` is ``None`` when the opportunity is passed back.
    """

    winner: Optional[str]
    clearing_price: float
    losing_reasons: Mapping[str, LosingReason] = field(default_factory=dict)

    @property
    def is_passback(self) -> bool:
        return self.winner is None


def _check_amount(value: float, what: str) -> None:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise InvalidBidError(f"{what} must be a number, got {value!r}")
    if not math.isfinite(value) or value < 0:
        raise InvalidBidError(f"{what} must be finite and >= 0, got {value!r}")


def _validate(bids: Sequence[BidSubmission]) -> None:
    if len(bids) == 0:
        raise InvalidBidError("an auction needs at least one bid submission")
    for b in bids:
        if b.amount is not None:
            _check_amount(b.amount, f"bid of {b.bidder_id!r}")


def _rank(bids, floor_of):
    """Return (winner index or None, {bidder_id: LosingReason}) for clearing bids."""
    best = None
    reasons: dict[str, LosingReason] = {}
    for idx, b in enumerate(bids):
        if b.amount is None:
            reasons[b.bidder_id] = LosingReason.NO_BID
        elif b.amount < floor_of(b):
            reasons[b.bidder_id] = LosingReason.BELOW_FLOOR
        elif best is None or b.amount > bids[best].amount:  # strict: first submitted wins ties
            best = idx
    for idx, b in enumerate(bids):
        if b.bidder_id not in reasons and idx != best:
            reasons[b.bidder_id] = LosingReason.OUTBID
    return best, reasons


def resolve_first_price(bids: Sequence[BidSubmission], floors: FloorVector) -> AuctionOutcome:
    """Highest bid at or above its type's floor wins and pays its own bid.

    When nothing clears, the outcome is a passback with price 0.
    """
    _validate(bids)
    best, reasons = _rank(bids, lambda b: floors.for_type(b.bidder_type))
    if best is None:
        return AuctionOutcome(None, 0.0, reasons)
    return AuctionOutcome(bids[best].bidder_id, float(bids[best].amount), reasons)


def resolve_second_price(bids: Sequence[BidSubmission], floor: float) -> AuctionOutcome:
    """Single-floor second-price auction: the winner pays max(floor, runner-up)."""
    _validate(bids)
    _check_amount(floor, "floor")
    best, reasons = _rank(bids, lambda b: floor)
    if best is None:
        return AuctionOutcome(None, 0.0, reasons)
    runner_up = max(
        (b.amount for i, b in enumerate(bids)
         if i != best and b.amount is not None and b.amount >= floor),
        default=floor,
    )
    return AuctionOutcome(bids[best].bidder_id, float(max(floor, runner_up)), reasons)


def settle(outcome: AuctionOutcome, adx_rev: float) -> tuple[float, Origin]:
    """Map an outcome to (revenue, origin); passbacks earn the ADX expectation."""
    _check_amount(adx_rev, "adx_rev")
    if outcome.is_passback:
        return float(adx_rev), Origin.ADX
    return outcome.clearing_price, Origin.YAHOOX
