from __future__ import annotations

from datetime import datetime, timedelta

import pytest

from pestpipe.split import (EXCLUDED, TEST, TRAIN, SplitAssignment,
                            audit_leakage, split_date_fallback,
                            split_different_farm, split_same_farm)

from conftest import make_record


def _records_one_class(n, field="F0"):
    return [make_record(f"r{i:03d}", field_id=field, seconds_offset=i * 5)
            for i in range(n)]


def test_same_farm_exact_count():
    records = _records_one_class(100)
    sa = split_same_farm(records, test_fraction=0.2, seed=7)
    assert sum(1 for v in sa.assignment.values() if v == TEST) == 20
    assert sum(1 for v in sa.assignment.values() if v == TRAIN) == 80


def test_same_farm_tiny_fraction_all_train():
    records = _records_one_class(50)
    sa = split_same_farm(records, test_fraction=0.001, seed=1)
    assert all(v == TRAIN for v in sa.assignment.values())


def test_same_farm_deterministic():
    records = _records_one_class(60)
    a = split_same_farm(records, test_fraction=0.3, seed=42)
    b = split_same_farm(records, test_fraction=0.3, seed=42)
    assert a.assignment == b.assignment
    c = split_same_farm(records, test_fraction=0.3, seed=43)
    assert c.assignment != a.assignment


def test_same_farm_single_record_class_flagged():
    records = [make_record("solo", pest_label="broad mite")] + _records_one_class(10)
    sa = split_same_farm(records, test_fraction=0.5, seed=0)
    assert sa.assignment["solo"] == TRAIN
    assert any("single-record" in f for f in sa.flags)


def test_different_farm_no_field_overlap():
    records = []
    for i, field in enumerate("ABCDE"):
        for j in range(4):
            records.append(make_record(f"{field}{j}", field_id=field,
                                       seconds_offset=(i * 4 + j) * 10))
    sa = split_different_farm(records, test_fields={"D", "E"})
    for r in records:
        expected = TEST if r.field_id in {"D", "E"} else TRAIN
        assert sa.assignment[r.record_id] == expected


def test_different_farm_empty_test_fields_error():
    with pytest.raises(ValueError):
        split_different_farm(_records_one_class(5), set())


def test_different_farm_class_only_in_test_field_fatal():
    records = [make_record("x0", pest_label="broad mite", field_id="D"),
               make_record("x1", pest_label="broad mite", field_id="D",
                           seconds_offset=10),
               make_record("y0", pest_label="healthy", field_id="A")]
    sa = split_different_farm(records, test_fields={"D"})
    assert sa.fatal_classes == ["broad mite|leaf|cucumber"]
    assert sa.assignment["x0"] == EXCLUDED
    assert sa.assignment["x1"] == EXCLUDED


def test_different_farm_train_only_class_marked():
    records = [make_record("a", pest_label="broad mite", field_id="A"),
               make_record("b", pest_label="healthy", field_id="A",
                           seconds_offset=5),
               make_record("c", pest_label="healthy", field_id="B",
                           seconds_offset=10)]
    sa = split_different_farm(records, test_fields={"B"})
    assert "broad mite|leaf|cucumber" in sa.train_only_classes


def test_date_fallback_one_of_three_dates():
    base = datetime(2021, 6, 1, 9, 0)
    records = []
    for d in range(3):
        for i in range(10):
            records.append(make_record(
                f"d{d}-r{i}", captured_at=base + timedelta(days=d, minutes=i)))
    sa = split_date_fallback(records, test_fraction=1 / 3, seed=3)
    test_dates = {r.captured_at.date() for r in records
                  if sa.assignment[r.record_id] == TEST}
    train_dates = {r.captured_at.date() for r in records
                   if sa.assignment[r.record_id] == TRAIN}
    assert len(test_dates) == 1
    assert test_dates.isdisjoint(train_dates)
    assert sum(1 for v in sa.assignment.values() if v == TEST) == 10


def test_date_fallback_single_date_all_train_flagged():
    records = _records_one_class(8)
    sa = split_date_fallback(records, test_fraction=0.25, seed=0)
    assert all(v == TRAIN for v in sa.assignment.values())
    assert any("single capture date" in f for f in sa.flags)


def test_date_fallback_scarce_class_list():
    base = datetime(2021, 6, 1, 9, 0)
    records = []
    for d in range(2):
        records.append(make_record(f"t{d}", pest_label="melon thrips",
                                   captured_at=base + timedelta(days=d)))
        records.append(make_record(f"h{d}", pest_label="healthy",
                                   captured_at=base + timedelta(days=d, minutes=5)))
    sa = split_date_fallback(records, class_list=["melon thrips|leaf|cucumber"],
                             test_fraction=0.5, seed=0)
    assert sa.assignment["h0"] == EXCLUDED
    assert {sa.assignment["t0"], sa.assignment["t1"]} == {TRAIN, TEST}


def test_audit_different_farm_clean_and_corrupted():
    records = []
    for field in "ABCD":
        for j in range(3):
            records.append(make_record(f"{field}{j}", field_id=field,
                                       seconds_offset=j * 10))
    sa = split_different_farm(records, test_fields={"C", "D"})
    assert audit_leakage(sa, records).is_clean

    sa.assignment["A0"] = TEST  # plant a leak
    audit = audit_leakage(sa, records)
    assert not audit.is_clean
    assert audit.violations[0].kind == "field_in_both_sides"
    assert audit.violations[0].detail == "A"


def test_audit_date_fallback_violation():
    base = datetime(2021, 6, 1, 9, 0)
    records = [make_record("a", pest_label="melon thrips", captured_at=base),
               make_record("b", pest_label="melon thrips",
                           captured_at=base + timedelta(minutes=30))]
    sa = SplitAssignment(policy="date_fallback",
                         assignment={"a": TRAIN, "b": TEST})
    audit = audit_leakage(sa, records)
    assert not audit.is_clean
    assert audit.violations[0].kind == "date_in_both_sides"


def test_partition_invariant():
    records = [make_record(f"r{i}", field_id=f"F{i % 3}",
                           pest_label="healthy" if i % 2 else "melon thrips",
                           seconds_offset=i * 7) for i in range(30)]
    sa = split_different_farm(records, test_fields={"F2"})
    assert set(sa.assignment) == {r.record_id for r in records}
    roles = set(sa.assignment.values())
    assert roles <= {TRAIN, TEST, EXCLUDED}


def test_same_farm_can_match_different_farm_test_sizes():
    records = []
    for i, field in enumerate("ABCDE"):
        for j in range(6 + i):
            records.append(make_record(f"{field}{j}", field_id=field,
                                       seconds_offset=(i * 20 + j) * 10))
    diff = split_different_farm(records, test_fields={"D", "E"})
    n_diff_test = sum(1 for v in diff.assignment.values() if v == TEST)
    counts = {"melon thrips|leaf|cucumber": n_diff_test}
    same = split_same_farm(records, seed=5, test_counts=counts)
    n_same_test = sum(1 for v in same.assignment.values() if v == TEST)
    assert n_same_test == n_diff_test


def test_assignment_round_trip(tmp_path):
    records = _records_one_class(20)
    sa = split_same_farm(records, test_fraction=0.25, seed=9)
    path = tmp_path / "assignment.jsonl"
    sa.save(path)
    loaded = SplitAssignment.load(path)
    assert loaded.assignment == sa.assignment
    assert loaded.policy == sa.policy
    assert loaded.seed == sa.seed
