import os

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from dynfloor.config import PipelineConfig, load_config
from dynfloor.logs import IngestionError, LOG_COLUMNS, read_logs, write_log
from dynfloor.model import (MODEL_HEADER, FloorModelRow, MalformedModelError, emit_model_csv,
                            load_model_rows, model_to_csv_bytes, model_version, parse_model_csv)

from conftest import TABLE1


# -- model CSV -----------------------------------------------------------------------

def test_table1_row_format(tmp_path):
    path = tmp_path / "m.csv"
    emit_model_csv([FloorModelRow("ABCD", "KKKK", "AAAA", 0.88, 1.15)], path)
    assert path.read_bytes() == b"publisherId,siteId,placementId,Regular,Rebroadcaster\nABCD,KKKK,AAAA,0.88,1.15\n"


def test_empty_model_is_header_only(tmp_path):
    path = tmp_path / "m.csv"
    emit_model_csv([], path)
    assert path.read_text() == ",".join(MODEL_HEADER) + "\n"


def test_rows_sorted_and_version_is_content_hash(tmp_path):
    path = tmp_path / "m.csv"
    version = emit_model_csv(reversed(TABLE1), path)
    data = path.read_bytes()
    assert version == model_version(data)
    assert [r.placement_id for r in parse_model_csv(data)] == ["CCCC", "AAAA", "BBBB"]


cents = st.integers(0, 100_000).map(lambda c: c / 100)
ident = st.text("ABCDEFGHIJK0123456789", min_size=1, max_size=6)


@given(st.dictionaries(st.tuples(ident, ident, ident), st.tuples(cents, cents), max_size=20))
def test_round_trip(entries):
    rows = [FloorModelRow(*k, *v) for k, v in entries.items()]
    back = parse_model_csv(model_to_csv_bytes(rows))
    assert back == sorted(rows, key=lambda r: r.key)


@pytest.mark.parametrize("text", [
    "",
    "a,b,c\n",
    "publisherId,siteId,placementId,Regular,Rebroadcaster\nA,B,C,0.1\n",
    "publisherId,siteId,placementId,Regular,Rebroadcaster\nA,B,C,x,0.2\n",
    "publisherId,siteId,placementId,Regular,Rebroadcaster\nA,B,C,-1,0.2\n",
    "publisherId,siteId,placementId,Regular,Rebroadcaster\nA,B,C,1,2\nA,B,C,1,2\n",
    "publisherId,siteId,placementId,Regular,Rebroadcaster\n,B,C,1,2\n",
])
def test_malformed_models_rejected(text):
    with pytest.raises(MalformedModelError):
        parse_model_csv(text.encode())


# -- logs ------------------------------------------------------------------------------

def _log(n=10):
    return pd.DataFrame({
        "ts": pd.date_range("2022-11-01", periods=n, freq="h"),
        "bucket": "training", "requestId": np.arange(n), "publisherId": "P", "siteId": "S",
        "placementId": "X", "bidderId": "d1", "bidderType": "regular",
        "floorSent": 0.5, "bid": np.where(np.arange(n) % 2 == 0, 0.75, np.nan),
        "settledOrigin": np.where(np.arange(n) % 2 == 0, "yahoox", "adx"),
        "settledRevenue": np.where(np.arange(n) % 2 == 0, 0.75, 0.3),
    })[LOG_COLUMNS]


def test_log_round_trip(tmp_path):
    df = _log()
    write_log(df, tmp_path / "l.csv")
    back, rejected = read_logs([tmp_path / "l.csv"])
    assert rejected == 0
    pd.testing.assert_frame_equal(back, df, check_dtype=False)


def test_malformed_rows_counted_then_fatal(tmp_path):
    df = _log(200)
    write_log(df, tmp_path / "l.csv")
    lines = (tmp_path / "l.csv").read_text().splitlines()
    lines[5] = lines[5].replace("regular", "bogus")
    (tmp_path / "ok.csv").write_text("\n".join(lines) + "\n")
    _, rejected = read_logs([tmp_path / "ok.csv"])
    assert rejected == 1
    for i in (6, 7, 8):
        lines[i] = lines[i].replace("0.500000", "-1")
    (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(IngestionError):
        read_logs([tmp_path / "bad.csv"])


def test_bid_below_floor_is_rejected(tmp_path):
    df = _log(300)
    df.loc[0, "bid"] = 0.1
    write_log(df, tmp_path / "l.csv")
    back, rejected = read_logs([tmp_path / "l.csv"])
    assert rejected == 1 and len(back) == 299


def test_missing_column_is_fatal(tmp_path):
    _log().drop(columns="bid").to_csv(tmp_path / "l.csv", index=False)
    with pytest.raises(IngestionError):
        read_logs([tmp_path / "l.csv"])


# -- config ---------------------------------------------------------------------------

def test_config_precedence(tmp_path):
    f = tmp_path / "c.ini"
    f.write_text("window_days = 5\nmc_draws = 100\nseed = 1\n")
    cfg = load_config(f, env={"DYNFLOOR_MC_DRAWS": "300", "DYNFLOOR_SEED": "2"},
                      overrides={"seed": 3})
    assert (cfg.window_days, cfg.mc_draws, cfg.seed) == (5, 300, 3)
    assert cfg.grid_size == PipelineConfig().grid_size


def test_config_section_header_allowed_and_unknown_key_rejected(tmp_path):
    f = tmp_path / "c.ini"
    f.write_text("[pipeline]\ngrid_size = 9\n")
    assert load_config(f, env={}).grid_size == 9
    f.write_text("nonsense = 1\n")
    with pytest.raises(ValueError):
        load_config(f, env={})


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(likelihood="other")
    with pytest.raises(ValueError):
        PipelineConfig(parallelism=0)


def test_environment_is_read_by_default(monkeypatch):
    monkeypatch.setenv("DYNFLOOR_GRID_SIZE", "7")
    assert load_config().grid_size == 7
