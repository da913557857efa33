from __future__ import annotations

import json
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from pestpipe.catalog import ImageRecord, Manifest, seeded_taxonomy

BASE_TIME = datetime(2021, 6, 1, 10, 0, 0)


def make_record(record_id: str, *, crop="cucumber", portion="leaf_front",
                pest_label="melon thrips", field_id="F0",
                captured_at=None, seconds_offset=0, device_id="cam-0",
                uri=None, width=64, height=64) -> ImageRecord:
    return ImageRecord(
        record_id=record_id, uri=uri or f"images/{record_id}.png",
        crop=crop, portion=portion, pest_label=pest_label, field_id=field_id,
        captured_at=captured_at or BASE_TIME + timedelta(seconds=seconds_offset),
        width_px=width, height_px=height, device_id=device_id)


def make_manifest(records, image_root=None) -> Manifest:
    return Manifest(records=list(records), taxonomy=seeded_taxonomy(),
                    image_root=image_root)


def write_manifest_file(records, path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")
    return path


def write_image(path: Path, array: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array.astype(np.uint8)).save(path)
    return path


def solid_image(side: int, color=(40, 90, 40)) -> np.ndarray:
    img = np.zeros((side, side, 3), dtype=np.uint8)
    img[:, :] = color
    return img


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
