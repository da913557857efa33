from __future__ import annotations

import numpy as np
import pytest

from pestpipe.cleanse import (PixelEmbedder, cleanse_manifest, cosine_distance,
                              filter_bursts, remove_near_duplicates)

from conftest import make_manifest, make_record, solid_image, write_image


def test_burst_half_second_dropped():
    records = [make_record("a", seconds_offset=0),
               make_record("b", seconds_offset=0.5)]
    report = filter_bursts(records)
    assert report.kept == ["a"]
    assert report.dropped_burst == [("b", "a")]


def test_burst_exact_one_second_kept():
    records = [make_record("a", seconds_offset=0),
               make_record("b", seconds_offset=1.0)]
    report = filter_bursts(records)
    assert sorted(report.kept) == ["a", "b"]


def test_burst_chain_measured_from_last_kept():
    records = [make_record("a", seconds_offset=0),
               make_record("b", seconds_offset=0.4),
               make_record("c", seconds_offset=0.8)]
    report = filter_bursts(records)
    assert report.kept == ["a"]
    assert report.dropped_burst == [("b", "a"), ("c", "a")]


def test_burst_groups_isolated():
    records = [make_record("a", seconds_offset=0, field_id="F0"),
               make_record("b", seconds_offset=0.2, field_id="F1")]
    report = filter_bursts(records)
    assert sorted(report.kept) == ["a", "b"]


def test_burst_first_of_group_never_dropped(rng):
    records = []
    for f in range(4):
        base = float(rng.uniform(0, 100))
        for i in range(10):
            records.append(make_record(
                f"f{f}-r{i}", field_id=f"F{f}",
                seconds_offset=base + float(rng.uniform(0, 5))))
    report = filter_bursts(records)
    firsts = set()
    for f in range(4):
        group = sorted((r for r in records if r.field_id == f"F{f}"),
                       key=lambda r: (r.captured_at, r.record_id))
        firsts.add(group[0].record_id)
    assert firsts <= set(report.kept)


def test_burst_missing_device_id_warns():
    records = [make_record("a", device_id=None)]
    with pytest.warns(UserWarning, match="device_id"):
        filter_bursts(records)


def test_duplicates_identical_images_dropped(tmp_path):
    img = solid_image(32)
    records = []
    for rid in ("a", "b"):
        write_image(tmp_path / "images" / f"{rid}.png", img)
        records.append(make_record(rid))
    report = remove_near_duplicates(records, PixelEmbedder(),
                                    distance_threshold=0.05,
                                    image_root=tmp_path)
    assert report.kept == ["a"]
    assert report.dropped_duplicate[0][:2] == ("b", "a")
    assert report.dropped_duplicate[0][2] == pytest.approx(0.0, abs=1e-12)


def test_duplicates_orthogonal_embeddings_kept():
    class StubBackend:
        dimension = 2

        def embed(self, image):
            return np.array([1.0, 0.0]) if image[0, 0, 0] > 0 else np.array([0.0, 1.0])

    records = [make_record("a"), make_record("b")]
    images = {"a": np.full((4, 4, 3), 255, np.uint8),
              "b": np.zeros((4, 4, 3), np.uint8)}

    import pestpipe.cleanse as cleanse_mod
    orig = cleanse_mod._load_image
    cleanse_mod._load_image = lambda r, root: images[r.record_id]
    try:
        report = remove_near_duplicates(records, StubBackend(), 0.05)
    finally:
        cleanse_mod._load_image = orig
    assert cosine_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0
    assert sorted(report.kept) == ["a", "b"]
    assert report.dropped_duplicate == []


def test_duplicate_cluster_one_survivor_brute_force(tmp_path, rng):
    # cluster of 3 near-identical + 2 distinct images
    base = rng.integers(0, 255, size=(32, 32, 3)).astype(np.uint8)
    images = {
        "a": base,
        "b": np.clip(base.astype(int) + 1, 0, 255).astype(np.uint8),
        "c": np.clip(base.astype(int) - 1, 0, 255).astype(np.uint8),
        "d": rng.integers(0, 255, size=(32, 32, 3)).astype(np.uint8),
        "e": np.full((32, 32, 3), 250, np.uint8),
    }
    records = []
    for rid, img in images.items():
        write_image(tmp_path / "images" / f"{rid}.png", img)
        records.append(make_record(rid))
    backend = PixelEmbedder()
    threshold = 0.05
    report = remove_near_duplicates(records, backend, threshold,
                                    image_root=tmp_path)

    assert len([r for r in report.kept if r in {"a", "b", "c"}]) == 1

    # brute force: no kept pair may be closer than the threshold
    vecs = {rid: backend.embed(img) for rid, img in images.items()}
    for i, ka in enumerate(report.kept):
        for kb in report.kept[i + 1:]:
            assert cosine_distance(vecs[ka], vecs[kb]) >= threshold


def test_duplicates_unloadable_flagged(tmp_path):
    write_image(tmp_path / "images" / "a.png", solid_image(16))
    (tmp_path / "images" / "broken.png").write_bytes(b"not an image")
    records = [make_record("a"),
               make_record("broken", uri="images/broken.png")]
    report = remove_near_duplicates(records, PixelEmbedder(), 0.05,
                                    image_root=tmp_path)
    assert "broken" in report.flagged_for_review
    assert "broken" in report.kept


def test_report_partitions_input(tmp_path, rng):
    records = []
    for i in range(12):
        rid = f"r{i:02d}"
        img = rng.integers(0, 255, size=(16, 16, 3)).astype(np.uint8)
        if i % 3 == 0:
            img = solid_image(16, color=(10, 10, 10))
        write_image(tmp_path / "images" / f"{rid}.png", img)
        records.append(make_record(rid, seconds_offset=i * 0.4))
    manifest = make_manifest(records, image_root=tmp_path)
    report = cleanse_manifest(manifest)
    assert report.all_input_ids == {r.record_id for r in records}
    kept = set(report.kept)
    burst = {d for d, _ in report.dropped_burst}
    dup = {d for d, _, _ in report.dropped_duplicate}
    assert kept.isdisjoint(burst) and kept.isdisjoint(dup) and burst.isdisjoint(dup)


def test_cleanse_deterministic(tmp_path, rng):
    records = []
    for i in range(10):
        rid = f"r{i:02d}"
        write_image(tmp_path / "images" / f"{rid}.png",
                    rng.integers(0, 255, size=(16, 16, 3)).astype(np.uint8))
        records.append(make_record(rid, seconds_offset=i * 0.7))
    manifest = make_manifest(records, image_root=tmp_path)
    a = cleanse_manifest(manifest)
    b = cleanse_manifest(manifest)
    assert a.kept == b.kept
    assert a.dropped_burst == b.dropped_burst
    assert a.dropped_duplicate == b.dropped_duplicate
