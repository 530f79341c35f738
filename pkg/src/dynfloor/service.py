"""In-memory floor lookup with hot model swap, and its HTTP front end."""
from __future__ import annotations

import enum
import json
import logging
import statistics
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional, Sequence
from urllib.parse import parse_qs, urlsplit

from .auction import BidderType
from .model import FloorModelRow, MalformedModelError, model_version, parse_model_csv

logger = logging.getLogger(__name__)


class MatchLevel(str, enum.Enum):
    PLACEMENT = "Placement"
    SITE = "Site"
    PUBLISHER = "Publisher"
    GLOBAL = "Global"


@dataclass(frozen=True)
class FloorQuery:
    publisher_id: str
    site_id: str
    placement_id: str
    bidder_type: BidderType

    def __post_init__(self):
        object.__setattr__(self, "bidder_type", BidderType(self.bidder_type))


@dataclass(frozen=True)
class FloorAnswer:
    floor: float
    match_level: MatchLevel
    model_version: str

    def as_dict(self) -> dict:
        return {"floor": self.floor, "matchLevel": self.match_level.value,
                "modelVersion": self.model_version}


def _pair_median(rows):
    return (statistics.median(r.regular_floor for r in rows),
            statistics.median(r.rebroadcaster_floor for r in rows))


class FloorIndex:
    """publisher -> site -> placement -> (regular, rebroadcaster).

    Site and publisher nodes carry the per-field median of all rows beneath
    them. Treat instances as immutable once built.
    """

    __slots__ = ("tree", "site_defaults", "publisher_defaults", "global_default",
                 "version", "rows")

    def __init__(self, rows: Sequence[FloorModelRow], version: str, global_default: float = 0.10):
        tree: dict = {}
        for r in rows:
            tree.setdefault(r.publisher_id, {}).setdefault(r.site_id, {})[r.placement_id] = (
                r.regular_floor, r.rebroadcaster_floor)
        by_site: dict = {}
        by_pub: dict = {}
        for r in rows:
            by_site.setdefault((r.publisher_id, r.site_id), []).append(r)
            by_pub.setdefault(r.publisher_id, []).append(r)
        self.tree = tree
        self.site_defaults = {k: _pair_median(v) for k, v in by_site.items()}
        self.publisher_defaults = {k: _pair_median(v) for k, v in by_pub.items()}
        self.global_default = float(global_default)
        self.version = version
        self.rows = tuple(rows)

    def __len__(self) -> int:
        return len(self.rows)


def load_model(data: bytes, global_default: float = 0.10) -> FloorIndex:
    """Parse CSV bytes into an index; raises MalformedModelError on any defect."""
    rows = parse_model_csv(data)
    return FloorIndex(rows, model_version(data), global_default)


def lookup(q: FloorQuery, idx: FloorIndex) -> FloorAnswer:
    col = 0 if q.bidder_type is BidderType.REGULAR else 1
    sites = idx.tree.get(q.publisher_id)
    if sites is not None:
        placements = sites.get(q.site_id)
        if placements is not None:
            pair = placements.get(q.placement_id)
            if pair is not None:
                return FloorAnswer(pair[col], MatchLevel.PLACEMENT, idx.version)
            return FloorAnswer(idx.site_defaults[(q.publisher_id, q.site_id)][col],
                               MatchLevel.SITE, idx.version)
        return FloorAnswer(idx.publisher_defaults[q.publisher_id][col],
                           MatchLevel.PUBLISHER, idx.version)
    return FloorAnswer(idx.global_default, MatchLevel.GLOBAL, idx.version)


class FloorService:
    """Serves lookups from whichever index is current.

    Readers take one reference to the index and never lock, so a swap is a
    single attribute rebinding and each answer comes entirely from one model.
    """

    def __init__(self, index: FloorIndex,
                 validator: Optional[Callable[[list[FloorModelRow]], object]] = None):
        self._index = index
        self._swap_lock = threading.Lock()  # serialises writers only
        self._validator = validator
        self.started = time.monotonic()

    @property
    def index(self) -> FloorIndex:
        return self._index

    @property
    def version(self) -> str:
        return self._index.version

    def lookup(self, q: FloorQuery) -> FloorAnswer:
        return lookup(q, self._index)

    def swap_model(self, new_index: FloorIndex) -> None:
        with self._swap_lock:
            self._index = new_index

    def submit(self, data: bytes) -> tuple[bool, str]:
        """Validate-then-swap for an uploaded CSV; returns (accepted, reason)."""
        try:
            new = load_model(data, self._index.global_default)
        except MalformedModelError as exc:
            return False, str(exc)
        if self._validator is not None:
            report = self._validator(list(new.rows))
            if not getattr(report, "passed", True):
                return False, json.dumps(report.as_dict())
        self.swap_model(new)
        return True, new.version


def make_handler(service: FloorService, cache_max_age: int = 60):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            logger.debug("%s - " + fmt, self.address_string(), *args)

        def _send(self, code: int, body: dict, cache: bool = False):
            payload = json.dumps(body).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.send_header("Cache-Control", f"max-age={cache_max_age}" if cache else "no-store")
            self.end_headers()
            self.wfile.write(payload)

        def do_GET(self):
            url = urlsplit(self.path)
            if url.path == "/healthz":
                self._send(200, {"status": "ok", "modelVersion": service.version,
                                 "rows": len(service.index),
                                 "uptimeSeconds": round(time.monotonic() - service.started, 3)})
                return
            if url.path != "/floor":
                self._send(404, {"error": f"no route {url.path}"})
                return
            params = {k: v[-1] for k, v in parse_qs(url.query, keep_blank_values=True).items()}
            missing = [p for p in ("publisherId", "siteId", "placementId", "bidderType")
                       if not params.get(p)]
            if missing:
                self._send(400, {"error": f"missing query parameters: {', '.join(missing)}"})
                return
            try:
                q = FloorQuery(params["publisherId"], params["siteId"], params["placementId"],
                               params["bidderType"].lower())
            except ValueError:
                self._send(400, {"error": "bidderType must be one of regular, rebroadcaster"})
                return
            self._send(200, service.lookup(q).as_dict(), cache=True)

        def do_POST(self):
            if urlsplit(self.path).path != "/model":
                self._send(404, {"error": f"no route {self.path}"})
                return
            length = int(self.headers.get("Content-Length") or 0)
            ok, detail = service.submit(self.rfile.read(length))
            if ok:
                self._send(200, {"status": "swapped", "modelVersion": detail})
            else:
                self._send(422, {"status": "rejected", "reason": detail,
                                 "modelVersion": service.version})

    return Handler


def serve(service: FloorService, host: str = "127.0.0.1", port: int = 8080,
          cache_max_age: int = 60) -> ThreadingHTTPServer:
    """Build the HTTP server; the caller runs ``serve_forever`` (or a thread does)."""
    server = ThreadingHTTPServer((host, port), make_handler(service, cache_max_age))
    server.daemon_threads = True
    return server
