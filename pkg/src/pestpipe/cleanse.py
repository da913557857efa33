"""Pre-split image cleansing: burst-frame removal and embedding near-duplicates.

Burst frames are dropped inside a (field, device, calendar-date) group when a
frame lands less than the configured interval after the last *kept* frame of
that group. Near-duplicates are removed by a greedy keep-first scan over
embedding cosine distances.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Optional, Protocol

import numpy as np
from PIL import Image

from .catalog import ImageRecord, Manifest

DEFAULT_BURST_INTERVAL_S = 1.0
DEFAULT_DUP_THRESHOLD = 0.05


class EmbeddingBackend(Protocol):
    dimension: int

    def embed(self, image: np.ndarray) -> np.ndarray: ...


class PixelEmbedder:
    """Trivial deterministic embedder: downsampled grayscale pixels.

    Stands in for a learned feature extractor; any backend with a stable
    `embed` of fixed dimension plugs into the same slot.
    """

    def __init__(self, side: int = 8):
        self.side = side
        self.dimension = side * side

    def embed(self, image: np.ndarray) -> np.ndarray:
        img = Image.fromarray(np.asarray(image).astype(np.uint8)).convert("L")
        small = img.resize((self.side, self.side), Image.BILINEAR)
        return np.asarray(small, dtype=np.float64).ravel()


@dataclass
class CleanseReport:
    kept: list[str] = field(default_factory=list)
    dropped_burst: list[tuple[str, str]] = field(default_factory=list)  # (dropped, kept neighbor)
    dropped_duplicate: list[tuple[str, str, float]] = field(default_factory=list)
    flagged_for_review: list[str] = field(default_factory=list)

    @property
    def all_input_ids(self) -> set[str]:
        return (set(self.kept)
                | {d for d, _ in self.dropped_burst}
                | {d for d, _, _ in self.dropped_duplicate})

    def save(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rid in self.kept:
                fh.write(json.dumps({"record_id": rid, "status": "kept"}) + "\n")
            for rid, near in self.dropped_burst:
                fh.write(json.dumps({"record_id": rid, "status": "dropped_burst",
                                     "kept_neighbor": near}) + "\n")
            for rid, near, dist in self.dropped_duplicate:
                fh.write(json.dumps({"record_id": rid, "status": "dropped_duplicate",
                                     "nearest_kept": near, "distance": dist}) + "\n")
            for rid in self.flagged_for_review:
                fh.write(json.dumps({"record_id": rid, "status": "flagged_for_review"}) + "\n")


def filter_bursts(records: list[ImageRecord],
                  min_interval: float = DEFAULT_BURST_INTERVAL_S) -> CleanseReport:
    """Drop frames taken < min_interval seconds after the last kept frame.

    Grouping key is (field_id, device_id, calendar date); a missing device_id
    degrades the key to (field_id, date) with a warning. The first frame of a
    group is always kept.
    """
    report = CleanseReport()
    groups: dict[tuple, list[ImageRecord]] = {}
    warned = False
    for r in records:
        if r.device_id is None and not warned:
            warnings.warn("records without device_id: burst groups degrade to "
                          "(field_id, date)", stacklevel=2)
            warned = True
        key = (r.field_id, r.device_id, r.captured_at.date())
        groups.setdefault(key, []).append(r)

    interval = timedelta(seconds=min_interval)
    for key in sorted(groups, key=lambda k: (k[0], str(k[1]), str(k[2]))):
        group = sorted(groups[key], key=lambda r: (r.captured_at, r.record_id))
        last_kept = None
        for r in group:
            if last_kept is not None and r.captured_at - last_kept.captured_at < interval:
                report.dropped_burst.append((r.record_id, last_kept.record_id))
            else:
                report.kept.append(r.record_id)
                last_kept = r
    return report


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    return float(1.0 - np.dot(a, b) / (na * nb))


def _load_image(record: ImageRecord, image_root: Optional[Path]) -> np.ndarray:
    path = record.resolve_uri(image_root)
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def remove_near_duplicates(records: list[ImageRecord], backend: EmbeddingBackend,
                           distance_threshold: float = DEFAULT_DUP_THRESHOLD,
                           image_root: Optional[Path] = None) -> CleanseReport:
    """Greedy keep-first duplicate removal in record_id order.

    A record is dropped when its cosine distance to any already-kept record
    falls below the threshold; the dropped entry names its nearest kept
    neighbor. Unloadable images are kept but flagged for review.
    """
    report = CleanseReport()
    kept_vecs: list[np.ndarray] = []
    kept_ids: list[str] = []
    for r in sorted(records, key=lambda r: r.record_id):
        try:
            vec = np.asarray(backend.embed(_load_image(r, image_root)), dtype=np.float64)
        except Exception:
            report.kept.append(r.record_id)
            report.flagged_for_review.append(r.record_id)
            continue
        if vec.shape != (backend.dimension,):
            raise ValueError(f"backend returned shape {vec.shape}, "
                             f"expected ({backend.dimension},)")
        nearest_d, nearest_id = None, None
        for kid, kvec in zip(kept_ids, kept_vecs):
            d = cosine_distance(vec, kvec)
            if nearest_d is None or d < nearest_d:
                nearest_d, nearest_id = d, kid
        if nearest_d is not None and nearest_d < distance_threshold:
            report.dropped_duplicate.append((r.record_id, nearest_id, nearest_d))
        else:
            report.kept.append(r.record_id)
            kept_ids.append(r.record_id)
            kept_vecs.append(vec)
    return report


def cleanse_manifest(manifest: Manifest, backend: Optional[EmbeddingBackend] = None,
                     burst_interval: float = DEFAULT_BURST_INTERVAL_S,
                     dup_threshold: float = DEFAULT_DUP_THRESHOLD) -> CleanseReport:
    """Burst filter followed by duplicate removal over the survivors."""
    backend = backend or PixelEmbedder()
    burst = filter_bursts(manifest.records, min_interval=burst_interval)
    survivors = [r for r in manifest.records if r.record_id in set(burst.kept)]
    dup = remove_near_duplicates(survivors, backend, dup_threshold,
                                 image_root=manifest.image_root)
    return CleanseReport(
        kept=dup.kept,
        dropped_burst=burst.dropped_burst,
        dropped_duplicate=dup.dropped_duplicate,
        flagged_for_review=dup.flagged_for_review,
    )
