"""Polygon ROI extraction and segmentation backends.

A crop is produced per polygon: background outside the polygon goes black,
the polygon's tight bounding box is cut out, the shorter side is padded
symmetrically with black to a square (odd remainder to the right/bottom),
and the square is resized to the requested side with linear interpolation.
Padding to square rather than stretching keeps subject shapes undistorted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field
from datetime import datetime, timezone
from typing import Optional, Protocol

import numpy as np
from PIL import Image, ImageDraw

SOURCE_HUMAN, SOURCE_MODEL, SOURCE_CORRECTED = "human", "model", "corrected"
PENDING, ACCEPTED, REJECTED = "pending", "accepted", "rejected"

Vertex = tuple[float, float]


class PolygonError(ValueError):
    pass


def polygon_area(vertices: list[Vertex]) -> float:
    """Shoelace area (absolute)."""
    n = len(vertices)
    s = 0.0
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return abs(s) / 2.0


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper crossing of open segments p1p2 and p3p4."""
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)
    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def is_self_intersecting(vertices: list[Vertex]) -> bool:
    n = len(vertices)
    for i in range(n):
        a1, a2 = vertices[i], vertices[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # shared endpoint
            b1, b2 = vertices[j], vertices[(j + 1) % n]
            if _segments_intersect(a1, a2, b1, b2):
                return True
    return False


def validate_polygon(vertices: list[Vertex],
                     bounds: Optional[tuple[int, int]] = None) -> None:
    """Raise PolygonError unless the polygon is usable as an annotation."""
    if len(vertices) < 3:
        raise PolygonError(f"polygon needs >= 3 vertices, got {len(vertices)}")
    if bounds is not None:
        w, h = bounds
        for x, y in vertices:
            if not (0 <= x <= w and 0 <= y <= h):
                raise PolygonError(f"vertex ({x}, {y}) outside {w}x{h} image")
    if polygon_area(vertices) <= 0:
        raise PolygonError("degenerate polygon (zero area)")
    if is_self_intersecting(vertices):
        raise PolygonError("self-intersecting polygon")


@dataclass
class PolygonAnnotation:
    annotation_id: str
    record_id: str
    vertices: list[Vertex]
    label: str = "roi"
    source: str = SOURCE_HUMAN
    review_status: str = ACCEPTED
    created_at: datetime = dc_field(
        default_factory=lambda: datetime.now(timezone.utc))

    def validate(self, bounds: Optional[tuple[int, int]] = None) -> None:
        validate_polygon(self.vertices, bounds)

    def to_json(self) -> dict:
        return {
            "annotation_id": self.annotation_id,
            "record_id": self.record_id,
            "vertices": [[float(x), float(y)] for x, y in self.vertices],
            "label": self.label,
            "source": self.source,
            "review_status": self.review_status,
            "created_at": self.created_at.isoformat(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PolygonAnnotation":
        return cls(
            annotation_id=d["annotation_id"], record_id=d["record_id"],
            vertices=[(float(x), float(y)) for x, y in d["vertices"]],
            label=d.get("label", "roi"), source=d.get("source", SOURCE_HUMAN),
            review_status=d.get("review_status", ACCEPTED),
            created_at=datetime.fromisoformat(d["created_at"]))


def rasterize_polygon(vertices: list[Vertex], width: int, height: int) -> np.ndarray:
    """Boolean inside-mask for a polygon over a width x height pixel grid."""
    img = Image.new("1", (width, height), 0)
    ImageDraw.Draw(img).polygon([(float(x), float(y)) for x, y in vertices],
                                fill=1, outline=1)
    return np.asarray(img, dtype=bool)


@dataclass(frozen=True)
class RoiCrop:
    crop_id: str
    record_id: str
    annotation_id: str
    bbox: tuple[int, int, int, int]        # x0, y0, x1, y1 (exclusive)
    pad: tuple[int, int, int, int]         # left, top, right, bottom
    output_side: int
    transform: float                       # scale from padded square to output

    def source_to_crop(self, point: Vertex) -> Vertex:
        x0, y0, _, _ = self.bbox
        left, top, _, _ = self.pad
        return ((point[0] - x0 + left) * self.transform,
                (point[1] - y0 + top) * self.transform)

    def crop_to_source(self, point: Vertex) -> Vertex:
        x0, y0, _, _ = self.bbox
        left, top, _, _ = self.pad
        return (point[0] / self.transform - left + x0,
                point[1] / self.transform - top + y0)


def _polygon_bbox(vertices: list[Vertex], width: int, height: int
                  ) -> tuple[int, int, int, int]:
    xs = [x for x, _ in vertices]
    ys = [y for _, y in vertices]
    x0 = max(0, int(math.floor(min(xs))))
    y0 = max(0, int(math.floor(min(ys))))
    x1 = min(width, int(math.floor(max(xs))) + 1)
    y1 = min(height, int(math.floor(max(ys))) + 1)
    return x0, y0, x1, y1


def extract_roi_crops(image: np.ndarray, polygons: list[PolygonAnnotation],
                      output_side: int = 256,
                      ) -> list[tuple[RoiCrop, np.ndarray]]:
    """Cut one square crop per polygon; degenerate polygons are skipped.

    Returned arrays are uint8 of shape (output_side, output_side, C) with
    every pixel outside the (transformed) polygon exactly zero.
    """
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
    height, width = img.shape[:2]
    out: list[tuple[RoiCrop, np.ndarray]] = []
    for idx, ann in enumerate(polygons):
        try:
            ann.validate(bounds=(width, height))
        except PolygonError as exc:
            warnings.warn(f"skipping polygon {ann.annotation_id}: {exc}",
                          stacklevel=2)
            continue
        mask = rasterize_polygon(ann.vertices, width, height)
        masked = np.where(mask[:, :, None], img, 0).astype(np.uint8)
        x0, y0, x1, y1 = _polygon_bbox(ann.vertices, width, height)
        sub = masked[y0:y1, x0:x1]
        h, w = sub.shape[:2]
        side = max(w, h)
        pad_x, pad_y = side - w, side - h
        left, top = pad_x // 2, pad_y // 2
        right, bottom = pad_x - left, pad_y - top
        square = np.zeros((side, side, img.shape[2]), dtype=np.uint8)
        square[top:top + h, left:left + w] = sub
        scale = output_side / side
        resized = np.asarray(
            Image.fromarray(square.squeeze() if img.shape[2] == 1 else square)
            .resize((output_side, output_side), Image.BILINEAR))
        if resized.ndim == 2:
            resized = resized[:, :, None]
        crop = RoiCrop(
            crop_id=f"{ann.record_id}__{ann.annotation_id}",
            record_id=ann.record_id, annotation_id=ann.annotation_id,
            bbox=(x0, y0, x1, y1), pad=(left, top, right, bottom),
            output_side=output_side, transform=scale)
        out_vertices = [crop.source_to_crop(v) for v in ann.vertices]
        out_mask = rasterize_polygon(out_vertices, output_side, output_side)
        resized = np.where(out_mask[:, :, None], resized, 0).astype(np.uint8)
        if image.ndim == 2:
            resized = resized[:, :, 0]
        out.append((crop, resized))
    return out


class SegmenterBackend(Protocol):
    def propose(self, image: np.ndarray,
                record_id: Optional[str] = None) -> list[PolygonAnnotation]: ...


class GroundTruthBackend:
    """Pass-through backend returning stored human polygons for a record."""

    def __init__(self, polygons_by_record: dict[str, list[PolygonAnnotation]]):
        self.polygons_by_record = polygons_by_record

    def propose(self, image: np.ndarray,
                record_id: Optional[str] = None) -> list[PolygonAnnotation]:
        if record_id is None:
            return []
        return [PolygonAnnotation(
            annotation_id=a.annotation_id, record_id=a.record_id,
            vertices=list(a.vertices), label=a.label,
            source=a.source, review_status=a.review_status)
            for a in self.polygons_by_record.get(record_id, [])]


class ClassicalSegmenter:
    """Threshold heuristic: the largest bright connected component, traced as
    a polygon. A desk-scale stand-in for a learned instance segmenter."""

    def __init__(self, intensity_threshold: int = 12, min_area_px: int = 16,
                 simplify_tolerance: float = 1.5):
        self.intensity_threshold = intensity_threshold
        self.min_area_px = min_area_px
        self.simplify_tolerance = simplify_tolerance
        self._counter = 0

    def propose(self, image: np.ndarray,
                record_id: Optional[str] = None) -> list[PolygonAnnotation]:
        from scipy import ndimage
        from skimage import measure

        img = np.asarray(image)
        gray = img.max(axis=2) if img.ndim == 3 else img
        fg = gray > self.intensity_threshold
        if not fg.any():
            return []
        labeled, n = ndimage.label(fg)
        if n == 0:
            return []
        sizes = ndimage.sum_labels(np.ones_like(labeled), labeled,
                                   index=range(1, n + 1))
        best = int(np.argmax(sizes)) + 1
        if sizes[best - 1] < self.min_area_px:
            return []
        component = labeled == best
        contours = measure.find_contours(component.astype(float), 0.5)
        if not contours:
            return []
        contour = max(contours, key=len)
        simplified = measure.approximate_polygon(contour, self.simplify_tolerance)
        # find_contours yields (row, col); polygons use (x, y)
        vertices = [(float(c), float(r)) for r, c in simplified]
        if len(vertices) > 1 and vertices[0] == vertices[-1]:
            vertices = vertices[:-1]
        h, w = gray.shape
        vertices = [(min(max(x, 0.0), float(w)), min(max(y, 0.0), float(h)))
                    for x, y in vertices]
        if len(vertices) < 3 or is_self_intersecting(vertices):
            vertices = _convex_hull_polygon(component)
            if vertices is None:
                return []
        self._counter += 1
        ann = PolygonAnnotation(
            annotation_id=f"seg-{self._counter:06d}",
            record_id=record_id or "", vertices=vertices, label="roi",
            source=SOURCE_MODEL, review_status=PENDING)
        try:
            ann.validate(bounds=(w, h))
        except PolygonError:
            return []
        return [ann]


def _convex_hull_polygon(mask: np.ndarray) -> Optional[list[Vertex]]:
    from scipy.spatial import ConvexHull, QhullError

    ys, xs = np.nonzero(mask)
    if len(xs) < 3:
        return None
    pts = np.stack([xs, ys], axis=1).astype(float)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return None
    return [(float(x), float(y)) for x, y in pts[hull.vertices]]


def detect_rois(image: np.ndarray, backend: SegmenterBackend,
                record_id: Optional[str] = None) -> list[PolygonAnnotation]:
    """Run the backend and stamp the results as pending model proposals.

    A backend failure yields an empty list with a warning instead of raising.
    """
    try:
        proposals = backend.propose(image, record_id=record_id)
    except Exception as exc:
        warnings.warn(f"segmenter backend failed on {record_id or 'image'}: {exc}",
                      stacklevel=2)
        return []
    for p in proposals:
        p.source = SOURCE_MODEL
        p.review_status = PENDING
    return proposals


def polygon_iou(a: list[Vertex], b: list[Vertex], width: int, height: int) -> float:
    """Raster IoU of two polygons over the given grid."""
    ma = rasterize_polygon(a, width, height)
    mb = rasterize_polygon(b, width, height)
    union = np.logical_or(ma, mb).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(ma, mb).sum() / union)
