"""Auction log schema: one CSV record per (bid request, bidder) pair.

Columns::

    ts,bucket,requestId,publisherId,siteId,placementId,bidderId,bidderType,
    floorSent,bid,settledOrigin,settledRevenue

``bid`` is empty for a no-bid. Settlement sits on one row per request: the
winner's row carries ``yahoox`` and the clearing price; on a passback the
request's first row carries ``adx`` and the passback revenue; all other
rows are ``none`` with revenue 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

LOG_COLUMNS = [
    "ts", "bucket", "requestId", "publisherId", "siteId", "placementId",
    "bidderId", "bidderType", "floorSent", "bid", "settledOrigin", "settledRevenue",
]
BUCKETS = ("dynamic", "disabled", "training")
BIDDER_TYPES = ("regular", "rebroadcaster")
ORIGINS = ("yahoox", "adx", "none")
TS_FORMAT = "%Y-%m-%dT%H:%M:%S"


class IngestionError(RuntimeError):
    """Log ingestion failed (unreadable input or too many malformed rows)."""


@dataclass(frozen=True)
class AuctionLogRecord:
    ts: pd.Timestamp
    bucket: str
    request_id: int
    publisher_id: str
    site_id: str
    placement_id: str
    bidder_id: str
    bidder_type: str
    floor_sent: float
    bid: Optional[float]
    settled_origin: str
    settled_revenue: float


def empty_log() -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype=object) for c in LOG_COLUMNS})


def records(df: pd.DataFrame) -> Iterable[AuctionLogRecord]:
    for row in df.itertuples(index=False):
        bid = None if pd.isna(row.bid) else float(row.bid)
        yield AuctionLogRecord(
            pd.Timestamp(row.ts), row.bucket, int(row.requestId), row.publisherId, row.siteId,
            row.placementId, row.bidderId, row.bidderType, float(row.floorSent), bid,
            row.settledOrigin, float(row.settledRevenue),
        )


def write_log(df: pd.DataFrame, path) -> None:
    out = df[LOG_COLUMNS].copy()
    out["ts"] = pd.to_datetime(out["ts"]).dt.strftime(TS_FORMAT)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    out.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def _validate_frame(raw: pd.DataFrame) -> tuple[pd.DataFrame, int]:
    """Coerce types; drop and count rows that do not satisfy the schema."""
    df = pd.DataFrame(index=raw.index)
    df["ts"] = pd.to_datetime(raw["ts"], format=TS_FORMAT, errors="coerce")
    for col in ("bucket", "publisherId", "siteId", "placementId", "bidderId",
                "bidderType", "settledOrigin"):
        df[col] = raw[col].astype("string").str.strip()
    df["requestId"] = pd.to_numeric(raw["requestId"], errors="coerce")
    df["floorSent"] = pd.to_numeric(raw["floorSent"], errors="coerce")
    bid_text = raw["bid"].astype("string").str.strip()
    df["bid"] = pd.to_numeric(bid_text, errors="coerce")
    df["settledRevenue"] = pd.to_numeric(raw["settledRevenue"], errors="coerce")

    ok = df["ts"].notna() & df["requestId"].notna()
    ok &= df["bucket"].isin(BUCKETS) & df["bidderType"].isin(BIDDER_TYPES)
    ok &= df["settledOrigin"].isin(ORIGINS)
    for col in ("publisherId", "siteId", "placementId", "bidderId"):
        ok &= df[col].notna() & (df[col].str.len() > 0)
    ok &= np.isfinite(df["floorSent"]) & (df["floorSent"] >= 0)
    ok &= np.isfinite(df["settledRevenue"]) & (df["settledRevenue"] >= 0)
    bid_missing = bid_text.isna() | (bid_text == "")
    bid_ok = bid_missing | (np.isfinite(df["bid"]) & (df["bid"] >= df["floorSent"]))
    ok &= bid_ok.fillna(False)
    ok = ok.fillna(False).astype(bool)
    rejected = int((~ok).sum())
    df = df[ok].copy()
    df["requestId"] = df["requestId"].astype(np.int64)
    for col in ("floorSent", "bid", "settledRevenue"):
        df[col] = df[col].astype("float64")
    for col in ("bucket", "publisherId", "siteId", "placementId", "bidderId",
                "bidderType", "settledOrigin"):
        df[col] = df[col].astype(object)
    return df[LOG_COLUMNS], rejected


def read_logs(paths: Sequence, max_reject_share: float = 0.01) -> tuple[pd.DataFrame, int]:
    """Read and validate log files; returns (frame, rejected row count).

    Raises :class:`IngestionError` when the rejected share exceeds
    ``max_reject_share``.
    """
    frames, total, rejected = [], 0, 0
    for p in paths:
        try:
            raw = pd.read_csv(p, dtype=str, keep_default_na=False, na_values=[])
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise IngestionError(f"cannot read log {p}: {exc}") from exc
        missing = set(LOG_COLUMNS) - set(raw.columns)
        if missing:
            raise IngestionError(f"log {p} lacks columns {sorted(missing)}")
        df, bad = _validate_frame(raw)
        total += len(raw)
        rejected += bad
        frames.append(df)
    if total and rejected / total > max_reject_share:
        raise IngestionError(f"{rejected} of {total} log rows malformed "
                             f"(limit {max_reject_share:.0%})")
    if rejected:
        logger.warning("rejected %d malformed log rows of %d", rejected, total)
    if not frames:
        return empty_log(), 0
    return pd.concat(frames, ignore_index=True), rejected
