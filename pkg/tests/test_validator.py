import pytest
from hypothesis import given, strategies as st

from dynfloor.model import FloorModelRow, model_to_csv_bytes, model_version
from dynfloor.validator import (DeploymentEvent, InsufficientHistoryError, ModelStore,
                                read_journal, record_deployment, tukey_fences, validate_model)

from conftest import TABLE1


CYCLE = (-0.04, -0.02, 0.02, 0.04)


def stable_history(days=14):
    """Daily models wobbling around Table 1 by a repeating +-4% pattern."""
    return [[FloorModelRow(*r.key, round(r.regular_floor * (1 + CYCLE[d % 4]), 2),
                           round(r.rebroadcaster_floor * (1 + CYCLE[(d + 1) % 4]), 2))
             for r in TABLE1] for d in range(days)]


def test_fences_hand_computed():
    assert tukey_fences([1, 2, 3, 4]) == pytest.approx((-0.5, 5.5))
    assert tukey_fences([2.5] * 6) == (2.5, 2.5)
    low, high = tukey_fences([1.0, 1.1, 0.9, 1.05, 12.0])
    # Q1 = 1.0, Q3 = 1.1 by linear interpolation
    assert (low, high) == pytest.approx((0.85, 1.25))
    assert 12.0 > high


def test_fences_need_four_values():
    with pytest.raises(InsufficientHistoryError):
        tukey_fences([1, 2, 3])


@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=30), st.randoms())
def test_fences_order_invariant(values, rnd):
    shuffled = values[:]
    rnd.shuffle(shuffled)
    base = tukey_fences(values)
    assert tukey_fences(shuffled) == pytest.approx(base)
    assert base[0] <= base[1]


def test_duplication_moves_interpolated_quartiles():
    # interpolated quartiles shift when the sample is duplicated
    assert tukey_fences([1, 2, 3, 4] * 2) == pytest.approx(tukey_fences([1, 2, 3, 4]))
    assert tukey_fences([0, 0, 0, 0, 1, 1]) == pytest.approx((-1.125, 1.875))
    assert tukey_fences([0, 0, 0, 0, 1, 1] * 2) == pytest.approx((-1.5, 2.5))


def test_unchanged_model_passes():
    hist = stable_history()
    assert validate_model(hist[-1], hist).passed


def test_tenfold_floor_fails_with_one_outlier():
    hist = stable_history()
    new = list(hist[-1])
    new[0] = FloorModelRow(*new[0].key, new[0].regular_floor * 10, new[0].rebroadcaster_floor)
    report = validate_model(new, hist)
    assert report.status == "Fail"
    assert [(o.key, o.field) for o in report.outliers] == [(new[0].key, "Regular")]


def test_new_placement_passes_with_warning():
    hist = stable_history()
    report = validate_model(hist[-1] + [FloorModelRow("NEW", "S", "P", 9.0, 9.0)], hist)
    assert report.passed and any("NEW/S/P" in w for w in report.warnings)


def test_empty_history_passes_with_warning():
    report = validate_model(TABLE1, [])
    assert report.passed and report.warnings


def test_only_trailing_window_counts():
    old = [[FloorModelRow(*r.key, 50.0, 50.0) for r in TABLE1]] * 30
    hist = old + stable_history(14)
    assert not validate_model([FloorModelRow(*TABLE1[0].key, 50.0, 50.0)], hist, window=14).passed
    assert validate_model([FloorModelRow(*TABLE1[0].key, 50.0, 50.0)], hist, window=44).passed


def test_validation_is_pure():
    hist = stable_history()
    assert validate_model(hist[-1], hist) == validate_model(hist[-1], hist)


# -- journal and store --------------------------------------------------------------

def test_journal_append(tmp_path):
    j = tmp_path / "journal.jsonl"
    record_deployment(DeploymentEvent("t1", "Deploy", "aa"), j)
    record_deployment(DeploymentEvent("t2", "Reject", "bb", "outlier"), j)
    assert [e.action for e in read_journal(j)] == ["Deploy", "Reject"]
    assert not (tmp_path / "journal.jsonl.tmp").exists()
    with pytest.raises(ValueError):
        DeploymentEvent("t", "Explode", "x")


def _served_matches_journal(store):
    return model_version(store.current_path.read_bytes()) == store.served_version()


def test_store_deploy_reject_rollback(tmp_path):
    store = ModelStore(tmp_path)
    hist = stable_history()
    for i, m in enumerate(hist):
        assert store.deploy(model_to_csv_bytes(m), ts=f"d{i}").passed
    assert _served_matches_journal(store)
    served = store.served_version()

    bad = list(hist[-1])
    bad[1] = FloorModelRow(*bad[1].key, bad[1].regular_floor, bad[1].rebroadcaster_floor * 10)
    bad_bytes = model_to_csv_bytes(bad)
    report = store.deploy(bad_bytes, ts="bad")
    assert not report.passed
    last = store.events()[-1]
    assert (last.action, last.model_version) == ("Reject", model_version(bad_bytes))
    assert store.served_version() == served and _served_matches_journal(store)

    prior = store.events()[-3].model_version
    assert store.rollback(ts="rb") == prior
    assert store.events()[-1].action == "Rollback"
    assert _served_matches_journal(store)
