"""Floor model rows and their CSV file format."""
from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

MODEL_HEADER = ("publisherId", "siteId", "placementId", "Regular", "Rebroadcaster")


class MalformedModelError(ValueError):
    """A floor model file does not follow the CSV schema."""


@dataclass(frozen=True, order=True)
class FloorModelRow:
    publisher_id: str
    site_id: str
    placement_id: str
    regular_floor: float
    rebroadcaster_floor: float

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.publisher_id, self.site_id, self.placement_id)

    def floor_for(self, field: str) -> float:
        return self.regular_floor if field == "Regular" else self.rebroadcaster_floor


def model_version(data: bytes) -> str:
    """Content hash identifying a serialized model."""
    return hashlib.sha256(data).hexdigest()


def model_to_csv_bytes(rows: Iterable[FloorModelRow]) -> bytes:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MODEL_HEADER)
    for r in sorted(rows, key=lambda r: r.key):
        w.writerow([r.publisher_id, r.site_id, r.placement_id,
                    f"{r.regular_floor:.2f}", f"{r.rebroadcaster_floor:.2f}"])
    return buf.getvalue().encode("utf-8")


def emit_model_csv(rows: Iterable[FloorModelRow], path) -> str:
    """Write the model CSV atomically; returns its version hash."""
    data = model_to_csv_bytes(rows)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return model_version(data)


def _floor(text: str, lineno: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise MalformedModelError(f"line {lineno}: floor {text!r} is not a number") from None
    if not math.isfinite(v) or v < 0:
        raise MalformedModelError(f"line {lineno}: floor {text!r} must be finite and >= 0")
    return v


def parse_model_csv(data: bytes | str) -> list[FloorModelRow]:
    """Parse a model CSV strictly; any defect rejects the whole file."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedModelError(f"model is not UTF-8: {exc}") from None
    lines = list(csv.reader(io.StringIO(data, newline="")))
    if not lines or tuple(lines[0]) != MODEL_HEADER:
        raise MalformedModelError(f"expected header {','.join(MODEL_HEADER)}")
    rows, seen = [], set()
    for lineno, fields in enumerate(lines[1:], start=2):
        if not fields:
            continue
        if len(fields) != len(MODEL_HEADER):
            raise MalformedModelError(f"line {lineno}: expected 5 fields, got {len(fields)}")
        pub, site, plc = (f.strip() for f in fields[:3])
        if not (pub and site and plc):
            raise MalformedModelError(f"line {lineno}: empty identifier")
        if (pub, site, plc) in seen:
            raise MalformedModelError(f"line {lineno}: duplicate placement {pub}/{site}/{plc}")
        seen.add((pub, site, plc))
        rows.append(FloorModelRow(pub, site, plc, _floor(fields[3], lineno), _floor(fields[4], lineno)))
    return rows


def load_model_rows(path) -> list[FloorModelRow]:
    return parse_model_csv(Path(path).read_bytes())
