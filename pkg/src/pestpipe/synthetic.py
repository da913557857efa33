"""Deterministic synthetic image corpus for desk-scale experiments.

Each image is a plain foreground blob (a "leaf") on a background whose color
signature is keyed to the (field, class) cell; a small class-determined cue
blob sits on the leaf. The field-keyed background is the planted confound:
splits that mix fields across train and test let a model score high without
ever reading the cue. Ground-truth polygons trace the leaf.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
from PIL import Image

from . import seeds
from .catalog import ImageRecord, Manifest, Taxonomy, seeded_taxonomy
from .roi import PolygonAnnotation

# cucumber leaf_front or healthy labels are valid taxonomy combinations
_CLASS_LABELS = ["healthy", "melon thrips", "cotton aphid", "tobacco whitefly",
                 "twospotted spider mite", "Kanzawa spider mite", "broad mite"]

_CUE_PALETTE = np.array([
    [235, 235, 235], [200, 30, 30], [30, 30, 200], [230, 210, 40],
    [150, 40, 180], [240, 130, 20], [40, 220, 220]], dtype=np.float64)

_LEAF_COLOR = np.array([80, 145, 60], dtype=np.float64)
_BASE_BACKGROUND = np.array([120, 110, 100], dtype=np.float64)


@dataclass
class SyntheticSpec:
    n_fields: int = 5
    n_classes: int = 4
    images_per_cell: int = 50
    confound_strength: float = 1.0
    cue_size_px: int = 6
    background_noise: float = 0.1
    image_side: int = 48
    n_dates: int = 3
    crop: str = "cucumber"
    portion: str = "leaf_front"
    seed: int = 0

    def __post_init__(self):
        if self.n_classes > len(_CLASS_LABELS):
            raise ValueError(f"at most {len(_CLASS_LABELS)} synthetic classes")
        for v in (self.n_fields, self.n_classes, self.images_per_cell,
                  self.image_side, self.n_dates):
            if v <= 0:
                raise ValueError("spec counts must be positive")

    @property
    def class_labels(self) -> list[str]:
        return _CLASS_LABELS[:self.n_classes]

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in (
            "n_fields", "n_classes", "images_per_cell", "confound_strength",
            "cue_size_px", "background_noise", "image_side", "n_dates",
            "crop", "portion", "seed")}


def _leaf_polygon(cx: float, cy: float, rx: float, ry: float,
                  n_vertices: int = 16) -> list[tuple[float, float]]:
    angles = np.linspace(0, 2 * np.pi, n_vertices, endpoint=False)
    return [(cx + rx * np.cos(a), cy + ry * np.sin(a)) for a in angles]


def _render(spec: SyntheticSpec, field_idx: int, class_idx: int,
            image_idx: int) -> tuple[np.ndarray, list[tuple[float, float]]]:
    rng = np.random.default_rng([spec.seed, field_idx, class_idx, image_idx])
    s = spec.image_side

    # background: global base pulled toward a (field, class)-keyed signature
    sig_rng = np.random.default_rng([spec.seed, 7919, field_idx, class_idx])
    signature = sig_rng.uniform(0, 255, size=3)
    bg = (1 - spec.confound_strength) * _BASE_BACKGROUND \
        + spec.confound_strength * signature
    img = np.tile(bg, (s, s, 1))
    if spec.background_noise > 0:
        img += rng.normal(0, 60 * spec.background_noise, size=img.shape)

    # foreground leaf: centered ellipse with mild jitter, field-independent color
    cx = s / 2 + rng.uniform(-s * 0.04, s * 0.04)
    cy = s / 2 + rng.uniform(-s * 0.04, s * 0.04)
    rx = s * rng.uniform(0.30, 0.38)
    ry = s * rng.uniform(0.30, 0.38)
    yy, xx = np.mgrid[0:s, 0:s]
    inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    leaf = _LEAF_COLOR + rng.normal(0, 6, size=3)
    img[inside] = leaf + rng.normal(0, 4, size=(int(inside.sum()), 3))

    # class cue: small colored disk on the leaf
    if spec.cue_size_px > 0:
        r = spec.cue_size_px / 2
        angle = rng.uniform(0, 2 * np.pi)
        dist = rng.uniform(0, 0.5)
        ccx = cx + np.cos(angle) * dist * rx
        ccy = cy + np.sin(angle) * dist * ry
        cue_mask = (xx - ccx) ** 2 + (yy - ccy) ** 2 <= r ** 2
        img[cue_mask] = _CUE_PALETTE[class_idx]

    polygon = _leaf_polygon(cx, cy, rx, ry)
    polygon = [(float(np.clip(x, 0, s - 1)), float(np.clip(y, 0, s - 1)))
               for x, y in polygon]
    return np.clip(img, 0, 255).astype(np.uint8), polygon


def generate_synthetic_dataset(spec: SyntheticSpec, out_dir: Path,
                               taxonomy: Taxonomy | None = None,
                               ) -> tuple[Manifest, dict[str, list[PolygonAnnotation]]]:
    """Write images, a manifest, and ground-truth polygons under out_dir.

    Fully deterministic from spec.seed: every image is rendered from an RNG
    keyed by (seed, field, class, index).
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    taxonomy = taxonomy or seeded_taxonomy()

    base_time = datetime(2021, 6, 1, 9, 0, 0)
    records: list[ImageRecord] = []
    polygons: dict[str, list[PolygonAnnotation]] = {}
    for f in range(spec.n_fields):
        for c, label in enumerate(spec.class_labels):
            for i in range(spec.images_per_cell):
                record_id = f"syn-f{f:02d}-c{c:02d}-{i:04d}"
                img, poly = _render(spec, f, c, i)
                rel = f"images/{record_id}.png"
                Image.fromarray(img).save(img_dir / f"{record_id}.png")
                # spacing > 1 s keeps synthetic data clear of the burst filter
                date_idx = i % spec.n_dates
                captured = base_time + timedelta(
                    days=7 * f + date_idx,
                    seconds=10 * (c * spec.images_per_cell + i))
                records.append(ImageRecord(
                    record_id=record_id, uri=rel, crop=spec.crop,
                    portion=spec.portion, pest_label=label,
                    field_id=f"F{f}", captured_at=captured,
                    width_px=spec.image_side, height_px=spec.image_side,
                    device_id=f"cam-{f}"))
                polygons[record_id] = [PolygonAnnotation(
                    annotation_id=f"gt-{record_id}", record_id=record_id,
                    vertices=poly, label="roi")]

    manifest = Manifest(records=records, taxonomy=taxonomy,
                        source_notes=f"synthetic {spec.to_json()}",
                        image_root=out_dir)
    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")
    ann_path = out_dir / "annotations.jsonl"
    with open(ann_path, "w", encoding="utf-8") as fh:
        for rid in sorted(polygons):
            for ann in polygons[rid]:
                fh.write(json.dumps(ann.to_json()) + "\n")
    (out_dir / "spec.json").write_text(json.dumps(spec.to_json(), indent=2) + "\n",
                                       encoding="utf-8")
    return manifest, polygons


def load_annotations_file(path: Path) -> dict[str, list[PolygonAnnotation]]:
    out: dict[str, list[PolygonAnnotation]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                ann = PolygonAnnotation.from_json(json.loads(line))
                out.setdefault(ann.record_id, []).append(ann)
    return out
