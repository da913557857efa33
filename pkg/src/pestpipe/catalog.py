"""Image manifest and pest taxonomy: ingestion, validation, and queries.

The manifest is a UTF-8 JSON-lines file, one record per line, so splits and
cleanse decisions stay auditable at the row level. The taxonomy mirrors the
seeded species table (common name, scientific name, integration group).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Optional

from . import seeds

MIN_PLAUSIBLE_YEAR = 2000


class ManifestError(Exception):
    """Fatal manifest problem: unreadable file or duplicate record ids."""


@dataclass(frozen=True)
class ImageRecord:
    record_id: str
    uri: str
    crop: str
    portion: str
    pest_label: str
    field_id: str
    captured_at: datetime
    width_px: int
    height_px: int
    device_id: Optional[str] = None

    def resolve_uri(self, image_root: Optional[Path] = None) -> Path:
        p = Path(self.uri)
        if not p.is_absolute() and image_root is not None:
            p = Path(image_root) / p
        return p

    def to_json(self) -> dict:
        d = {
            "record_id": self.record_id,
            "uri": self.uri,
            "crop": self.crop,
            "portion": self.portion,
            "pest_label": self.pest_label,
            "field_id": self.field_id,
            "captured_at": self.captured_at.isoformat(),
            "width_px": self.width_px,
            "height_px": self.height_px,
        }
        if self.device_id is not None:
            d["device_id"] = self.device_id
        return d


@dataclass(frozen=True)
class SpeciesEntry:
    common_name: str
    scientific_name: str
    integration_group: str


@dataclass
class Taxonomy:
    species_entries: list[SpeciesEntry]

    def __post_init__(self):
        groups: dict[str, str] = {}
        for e in self.species_entries:
            if e.common_name in groups:
                raise ValueError(f"duplicate species: {e.common_name}")
            groups[e.common_name] = e.integration_group

    @property
    def species_names(self) -> frozenset[str]:
        return frozenset(e.common_name for e in self.species_entries)

    @property
    def integration_groups(self) -> dict[str, list[str]]:
        """Group name -> member species, in seed order."""
        out: dict[str, list[str]] = {}
        for e in self.species_entries:
            out.setdefault(e.integration_group, []).append(e.common_name)
        return out

    def group_of(self, species: str) -> Optional[str]:
        for e in self.species_entries:
            if e.common_name == species:
                return e.integration_group
        return None

    def is_valid_label(self, pest_label: str) -> bool:
        return pest_label == seeds.HEALTHY or pest_label in self.species_names


def seeded_taxonomy() -> Taxonomy:
    return Taxonomy([SpeciesEntry(*row) for row in seeds.SPECIES])


def load_taxonomy(path: Path) -> Taxonomy:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            entries.append(SpeciesEntry(d["common_name"], d["scientific_name"],
                                        d["integration_group"]))
    return Taxonomy(entries)


def save_taxonomy(taxonomy: Taxonomy, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in taxonomy.species_entries:
            fh.write(json.dumps({
                "common_name": e.common_name,
                "scientific_name": e.scientific_name,
                "integration_group": e.integration_group,
            }) + "\n")


@dataclass(frozen=True)
class RowFlag:
    line_no: int
    reason: str
    raw: str


@dataclass
class Manifest:
    records: list[ImageRecord]
    taxonomy: Taxonomy
    source_notes: str = ""
    flags: list[RowFlag] = field(default_factory=list)
    image_root: Optional[Path] = None

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.record_id in seen:
                raise ManifestError(f"duplicate record_id: {r.record_id}")
            seen.add(r.record_id)

    def by_id(self, record_id: str) -> ImageRecord:
        for r in self.records:
            if r.record_id == record_id:
                return r
        raise KeyError(record_id)


_REQUIRED_FIELDS = ("record_id", "uri", "crop", "portion", "pest_label",
                    "field_id", "captured_at", "width_px", "height_px")


def _parse_row(d: dict, taxonomy: Taxonomy) -> ImageRecord:
    missing = [k for k in _REQUIRED_FIELDS if k not in d]
    if missing:
        raise ValueError(f"missing fields: {', '.join(missing)}")
    if d["crop"] not in seeds.CROPS:
        raise ValueError(f"unknown crop: {d['crop']}")
    if d["portion"] not in seeds.PORTIONS:
        raise ValueError(f"unknown portion: {d['portion']}")
    if not taxonomy.is_valid_label(d["pest_label"]):
        raise ValueError(f"unknown species: {d['pest_label']}")
    if not str(d["field_id"]).strip():
        raise ValueError("empty field_id")
    try:
        captured_at = datetime.fromisoformat(d["captured_at"])
    except (TypeError, ValueError) as exc:
        raise ValueError(f"bad captured_at: {exc}") from exc
    width, height = int(d["width_px"]), int(d["height_px"])
    if width <= 0 or height <= 0:
        raise ValueError(f"non-positive dimensions: {width}x{height}")
    return ImageRecord(
        record_id=str(d["record_id"]),
        uri=str(d["uri"]),
        crop=d["crop"],
        portion=d["portion"],
        pest_label=d["pest_label"],
        field_id=str(d["field_id"]),
        captured_at=captured_at,
        width_px=width,
        height_px=height,
        device_id=d.get("device_id"),
    )


def ingest_manifest(manifest_file: Path, image_root: Optional[Path] = None,
                    taxonomy: Optional[Taxonomy] = None) -> Manifest:
    """Load and validate a JSONL manifest.

    Malformed rows (bad fields, unknown species) are flagged with their line
    number and excluded; duplicate record ids and unreadable files are fatal.
    """
    taxonomy = taxonomy or seeded_taxonomy()
    try:
        with open(manifest_file, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {manifest_file}: {exc}") from exc

    records: list[ImageRecord] = []
    flags: list[RowFlag] = []
    seen_ids: set[str] = set()
    for line_no, line in enumerate(lines, start=1):
        raw = line.strip()
        if not raw:
            continue
        try:
            d = json.loads(raw)
        except json.JSONDecodeError as exc:
            flags.append(RowFlag(line_no, f"unparseable line: {exc.msg}", raw))
            continue
        rid = str(d.get("record_id", ""))
        if rid and rid in seen_ids:
            raise ManifestError(f"duplicate record_id '{rid}' at line {line_no}")
        try:
            rec = _parse_row(d, taxonomy)
        except ValueError as exc:
            flags.append(RowFlag(line_no, str(exc), raw))
            continue
        seen_ids.add(rec.record_id)
        records.append(rec)
    return Manifest(records=records, taxonomy=taxonomy, flags=flags,
                    image_root=Path(image_root) if image_root else None)


def save_manifest(manifest: Manifest, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in manifest.records:
            fh.write(json.dumps(r.to_json()) + "\n")


@dataclass(frozen=True)
class ValidationIssue:
    record_id: str
    kind: str
    detail: str


def validate_records(manifest: Manifest,
                     now: Optional[datetime] = None) -> list[ValidationIssue]:
    """Report machine-checkable problems; never raises.

    Checks: missing image files, zero/negative dimensions, implausible
    timestamps, and {pest, portion, crop} combinations absent from the
    known-combination table.
    """
    now = now or datetime.now(timezone.utc)
    combos = seeds.known_combinations()
    issues: list[ValidationIssue] = []
    for r in manifest.records:
        path = r.resolve_uri(manifest.image_root)
        if not path.exists():
            issues.append(ValidationIssue(r.record_id, "file_not_found", str(path)))
        if r.width_px <= 0 or r.height_px <= 0:
            issues.append(ValidationIssue(
                r.record_id, "zero_dimensions", f"{r.width_px}x{r.height_px}"))
        ts = r.captured_at
        ts_cmp = ts if ts.tzinfo else ts.replace(tzinfo=timezone.utc)
        if ts.year < MIN_PLAUSIBLE_YEAR or ts_cmp > now + timedelta(days=1):
            issues.append(ValidationIssue(
                r.record_id, "implausible_timestamp", ts.isoformat()))
        if (r.pest_label, r.portion, r.crop) not in combos:
            issues.append(ValidationIssue(
                r.record_id, "unknown_combination",
                f"({r.pest_label}, {r.portion}, {r.crop})"))
    return issues


def query_records(manifest: Manifest, crop: Optional[str] = None,
                  portion: Optional[str] = None, pest_label: Optional[str] = None,
                  field_id: Optional[str] = None,
                  date_range: Optional[tuple[datetime, datetime]] = None,
                  ) -> list[ImageRecord]:
    """Conjunctive filter over manifest records, ordered by record_id."""
    out = []
    for r in manifest.records:
        if crop is not None and r.crop != crop:
            continue
        if portion is not None and r.portion != portion:
            continue
        if pest_label is not None and r.pest_label != pest_label:
            continue
        if field_id is not None and r.field_id != field_id:
            continue
        if date_range is not None:
            lo, hi = date_range
            if not (lo <= r.captured_at <= hi):
                continue
        out.append(r)
    out.sort(key=lambda r: r.record_id)
    return out
