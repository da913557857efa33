from __future__ import annotations

import json
from datetime import datetime

import pytest

from pestpipe import seeds
from pestpipe.catalog import (ManifestError, ingest_manifest, query_records,
                              seeded_taxonomy, validate_records)

from conftest import make_manifest, make_record, write_image, write_manifest_file


def test_ingest_three_valid_rows(tmp_path):
    records = [make_record(f"r{i}", seconds_offset=i * 5) for i in range(3)]
    path = write_manifest_file(records, tmp_path / "m.jsonl")
    manifest = ingest_manifest(path)
    assert len(manifest.records) == 3
    assert manifest.flags == []


def test_ingest_unknown_species_flagged(tmp_path):
    rows = [make_record("r0"),
            make_record("r1", pest_label="melon thrips")]
    path = write_manifest_file(rows, tmp_path / "m.jsonl")
    # corrupt the first row's label after serialization
    lines = path.read_text().splitlines()
    d = json.loads(lines[0])
    d["pest_label"] = "unicorn moth"
    path.write_text(json.dumps(d) + "\n" + lines[1] + "\n")
    manifest = ingest_manifest(path)
    assert len(manifest.records) == 1
    assert len(manifest.flags) == 1
    assert "unknown species" in manifest.flags[0].reason
    assert manifest.flags[0].line_no == 1


def test_ingest_known_combination_accepted(tmp_path):
    rec = make_record("r0", crop="tomato", portion="leaf_back",
                      pest_label="tobacco whitefly")
    path = write_manifest_file([rec], tmp_path / "m.jsonl")
    manifest = ingest_manifest(path)
    assert len(manifest.records) == 1
    issues = validate_records(manifest)
    assert not [i for i in issues if i.kind == "unknown_combination"]


def test_ingest_duplicate_record_id_fatal(tmp_path):
    records = [make_record("dup"), make_record("dup")]
    path = write_manifest_file(records, tmp_path / "m.jsonl")
    with pytest.raises(ManifestError):
        ingest_manifest(path)


def test_ingest_missing_file_fatal(tmp_path):
    with pytest.raises(ManifestError):
        ingest_manifest(tmp_path / "nope.jsonl")


def test_ingest_idempotent(tmp_path):
    records = [make_record(f"r{i}", seconds_offset=i * 5) for i in range(4)]
    path = write_manifest_file(records, tmp_path / "m.jsonl")
    a = ingest_manifest(path)
    b = ingest_manifest(path)
    assert a.records == b.records
    assert a.flags == b.flags


def test_validate_implausible_timestamp():
    rec = make_record("r0", captured_at=datetime(1970, 1, 5, 10, 0, 0))
    issues = validate_records(make_manifest([rec]))
    assert any(i.kind == "implausible_timestamp" for i in issues)


def test_validate_missing_file(tmp_path):
    manifest = make_manifest([make_record("r0")], image_root=tmp_path)
    issues = validate_records(manifest)
    assert any(i.kind == "file_not_found" for i in issues)


def test_validate_all_78_combinations_clean(tmp_path):
    combos = sorted(seeds.known_combinations())
    assert len(combos) == 78
    records = []
    for i, (pest, portion, crop) in enumerate(combos):
        rid = f"r{i:03d}"
        records.append(make_record(rid, crop=crop, portion=portion,
                                   pest_label=pest, seconds_offset=i * 10))
        write_image(tmp_path / "images" / f"{rid}.png",
                    __import__("numpy").zeros((8, 8, 3)))
    manifest = make_manifest(records, image_root=tmp_path)
    issues = validate_records(manifest)
    assert [i for i in issues if i.kind == "unknown_combination"] == []
    assert [i for i in issues if i.kind == "file_not_found"] == []


def test_validate_unknown_combination():
    # mealybug is only collected on eggplant
    rec = make_record("r0", crop="strawberry", portion="leaf_front",
                      pest_label="Solanum mealybug")
    issues = validate_records(make_manifest([rec]))
    assert any(i.kind == "unknown_combination" for i in issues)


def test_query_filters_and_order():
    records = [
        make_record("b", crop="cucumber", pest_label="tobacco whitefly"),
        make_record("a", crop="cucumber", pest_label="tobacco whitefly"),
        make_record("c", crop="tomato", pest_label="tobacco whitefly",
                    portion="leaf_back"),
        make_record("d", crop="cucumber", pest_label="healthy"),
    ]
    manifest = make_manifest(records)
    got = query_records(manifest, crop="cucumber", pest_label="tobacco whitefly")
    assert [r.record_id for r in got] == ["a", "b"]


def test_query_empty_filter_returns_all():
    records = [make_record(f"r{i}") for i in range(5)]
    assert len(query_records(make_manifest(records))) == 5


def test_query_missing_field_empty():
    records = [make_record("r0", field_id="F1")]
    assert query_records(make_manifest(records), field_id="F9") == []


def test_query_conjunctive_equals_sequential(rng):
    crops = ["cucumber", "eggplant"]
    labels = ["melon thrips", "healthy"]
    fields = ["F0", "F1", "F2"]
    records = [
        make_record(f"r{i}", crop=crops[rng.integers(2)],
                    pest_label=labels[rng.integers(2)],
                    field_id=fields[rng.integers(3)], seconds_offset=int(i))
        for i in range(60)
    ]
    manifest = make_manifest(records)
    joint = query_records(manifest, crop="cucumber", pest_label="healthy",
                          field_id="F1")
    step1 = query_records(manifest, field_id="F1")
    step2 = [r for r in step1 if r.crop == "cucumber" and r.pest_label == "healthy"]
    assert joint == sorted(step2, key=lambda r: r.record_id)


def test_taxonomy_seed_contents():
    tax = seeded_taxonomy()
    assert len(tax.species_entries) == 20
    groups = tax.integration_groups
    assert set(groups["spider mite"]) == {"Kanzawa spider mite",
                                          "twospotted spider mite"}
    assert set(groups["aphid"]) == {"cotton aphid", "green peach aphid"}
    assert len(seeds.MAIN_PEST_CLASS_IDS) == 18
