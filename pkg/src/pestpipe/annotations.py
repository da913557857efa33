"""Append-only polygon annotation store and the self-training proposal cycle.

Every change is an event appended to events.jsonl; current state is a replay.
Reviews are idempotent: the first decision for a proposal wins and re-imports
return the stored outcome.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .catalog import ImageRecord
from .roi import (ACCEPTED, PENDING, REJECTED, SOURCE_CORRECTED, SOURCE_HUMAN,
                  SOURCE_MODEL, PolygonAnnotation, SegmenterBackend,
                  detect_rois, validate_polygon)

EVENTS_FILE = "events.jsonl"


@dataclass
class ReviewResult:
    annotation_id: str
    decision: str  # "accept" | "reject"
    vertices: Optional[list[tuple[float, float]]] = None


@dataclass
class ImportSummary:
    accepted: list[str] = field(default_factory=list)
    rejected: list[str] = field(default_factory=list)
    already_reviewed: list[str] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)


class AnnotationStore:
    """Single-writer, append-only annotation log with replayable state."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.events_path = self.directory / EVENTS_FILE
        self._state: dict[str, PolygonAnnotation] = {}
        self._rounds: dict[int, list[str]] = {}
        self._counter = 0
        if self.events_path.exists():
            self._replay()

    def _replay(self) -> None:
        with open(self.events_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    self._apply(json.loads(line), persist=False)

    def _append(self, event: dict) -> None:
        with open(self.events_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")

    def _apply(self, event: dict, persist: bool = True) -> None:
        kind = event["kind"]
        if kind in ("human", "proposed"):
            ann = PolygonAnnotation.from_json(event["annotation"])
            self._state[ann.annotation_id] = ann
            n = int(ann.annotation_id.split("-")[-1])
            self._counter = max(self._counter, n)
            if kind == "proposed":
                self._rounds.setdefault(event["round"], []).append(ann.annotation_id)
        elif kind == "reviewed":
            ann = self._state[event["annotation_id"]]
            ann.review_status = event["review_status"]
            ann.source = event["source"]
            if event.get("vertices") is not None:
                ann.vertices = [(float(x), float(y)) for x, y in event["vertices"]]
        else:
            raise ValueError(f"unknown event kind: {kind}")
        if persist:
            self._append(event)

    def _next_id(self) -> str:
        self._counter += 1
        return f"ann-{self._counter:06d}"

    # -- writes --

    def add_human(self, record_id: str, vertices: list[tuple[float, float]],
                  label: str = "roi") -> PolygonAnnotation:
        validate_polygon(vertices)
        ann = PolygonAnnotation(
            annotation_id=self._next_id(), record_id=record_id,
            vertices=list(vertices), label=label,
            source=SOURCE_HUMAN, review_status=ACCEPTED)
        self._apply({"kind": "human", "annotation": ann.to_json()})
        return ann

    def add_proposal(self, ann: PolygonAnnotation, round_id: int) -> PolygonAnnotation:
        stored = PolygonAnnotation(
            annotation_id=self._next_id(), record_id=ann.record_id,
            vertices=list(ann.vertices), label=ann.label,
            source=SOURCE_MODEL, review_status=PENDING)
        self._apply({"kind": "proposed", "round": round_id,
                     "annotation": stored.to_json()})
        return stored

    def review(self, result: ReviewResult) -> dict:
        """Apply one review decision; idempotent for already-reviewed ids."""
        ann = self._state.get(result.annotation_id)
        if ann is None:
            raise KeyError(result.annotation_id)
        if ann.review_status != PENDING:
            return {"annotation_id": ann.annotation_id,
                    "review_status": ann.review_status,
                    "source": ann.source, "vertices": list(ann.vertices),
                    "already_reviewed": True}
        if result.decision == "accept":
            vertices = result.vertices
            changed = (vertices is not None
                       and [tuple(v) for v in vertices] != [tuple(v) for v in ann.vertices])
            if changed:
                validate_polygon([tuple(v) for v in vertices])
            event = {"kind": "reviewed", "annotation_id": ann.annotation_id,
                     "review_status": ACCEPTED,
                     "source": SOURCE_CORRECTED if changed else ann.source,
                     "vertices": [[float(x), float(y)] for x, y in vertices] if changed else None}
        elif result.decision == "reject":
            event = {"kind": "reviewed", "annotation_id": ann.annotation_id,
                     "review_status": REJECTED, "source": ann.source,
                     "vertices": None}
        else:
            raise ValueError(f"unknown decision: {result.decision}")
        self._apply(event)
        return {"annotation_id": ann.annotation_id,
                "review_status": ann.review_status, "source": ann.source,
                "vertices": list(ann.vertices), "already_reviewed": False}

    # -- reads --

    def get(self, annotation_id: str) -> PolygonAnnotation:
        return self._state[annotation_id]

    def all(self) -> list[PolygonAnnotation]:
        return [self._state[k] for k in sorted(self._state)]

    def pending(self) -> list[PolygonAnnotation]:
        return [a for a in self.all() if a.review_status == PENDING]

    def accepted(self) -> list[PolygonAnnotation]:
        """Annotations usable for training (human, corrected, accepted model)."""
        return [a for a in self.all() if a.review_status == ACCEPTED]

    def seen_record_ids(self) -> set[str]:
        return {a.record_id for a in self.all()}

    def by_record(self, record_id: str) -> list[PolygonAnnotation]:
        return [a for a in self.all() if a.record_id == record_id]

    def next_round_id(self) -> int:
        return max(self._rounds, default=0) + 1

    def round_annotation_ids(self, round_id: int) -> list[str]:
        return list(self._rounds.get(round_id, []))


@dataclass
class ProposalBatch:
    round_id: int
    annotation_ids: list[str]
    flagged_records: list[str] = field(default_factory=list)


def run_self_training_round(unlabeled_records: list[ImageRecord],
                            backend: SegmenterBackend, batch_size: int,
                            store: AnnotationStore,
                            image_root: Optional[Path] = None) -> ProposalBatch:
    """Propose polygons on records the store has never seen, up to batch_size.

    If the backend exposes train(), it is refreshed on the accepted set
    first. Proposals are persisted as pending and handed to review.
    """
    train = getattr(backend, "train", None)
    if callable(train):
        train(store.accepted())

    seen = store.seen_record_ids()
    pool = sorted((r for r in unlabeled_records if r.record_id not in seen),
                  key=lambda r: r.record_id)
    round_id = store.next_round_id()
    batch = ProposalBatch(round_id=round_id, annotation_ids=[])
    for record in pool[:batch_size]:
        try:
            with Image.open(record.resolve_uri(image_root)) as img:
                image = np.asarray(img.convert("RGB"))
        except Exception as exc:
            warnings.warn(f"cannot load {record.record_id}: {exc}", stacklevel=2)
            batch.flagged_records.append(record.record_id)
            continue
        proposals = detect_rois(image, backend, record_id=record.record_id)
        if not proposals:
            batch.flagged_records.append(record.record_id)
            continue
        for p in proposals:
            stored = store.add_proposal(p, round_id)
            batch.annotation_ids.append(stored.annotation_id)
    return batch


def import_reviewed_annotations(store: AnnotationStore,
                                review_results: list[ReviewResult]) -> ImportSummary:
    """Apply a batch of review decisions; unknown ids become per-item errors."""
    summary = ImportSummary()
    for result in review_results:
        try:
            outcome = store.review(result)
        except KeyError:
            summary.errors.append((result.annotation_id, "unknown annotation_id"))
            continue
        except ValueError as exc:
            summary.errors.append((result.annotation_id, str(exc)))
            continue
        if outcome["already_reviewed"]:
            summary.already_reviewed.append(result.annotation_id)
        elif result.decision == "accept":
            summary.accepted.append(result.annotation_id)
        else:
            summary.rejected.append(result.annotation_id)
    return summary
