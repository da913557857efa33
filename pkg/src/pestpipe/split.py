"""Train/test assignment policies and the source-leakage audit.

Three policies: per-class random splits that ignore provenance
(same_farm_random), field-exclusive splits (different_farm), and the
whole-date fallback for classes too scarce to split by field (date_fallback).
The audit re-derives the policy's leakage condition from the raw records, so
a clean audit is a property of the assignment, not of the code that made it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import seeds
from .catalog import ImageRecord

TRAIN, TEST, EXCLUDED = "train", "test", "excluded"

SAME_FARM = "same_farm_random"
DIFFERENT_FARM = "different_farm"
DATE_FALLBACK = "date_fallback"


def record_class_key(record: ImageRecord) -> str:
    """Default stratification class: species + displayed portion + crop."""
    portion = seeds.PORTION_DISPLAY[record.portion]
    return f"{record.pest_label}|{portion}|{record.crop}"

ClassKey = Callable[[ImageRecord], str]


@dataclass
class SplitAssignment:
    policy: str
    assignment: dict[str, str] = field(default_factory=dict)  # record_id -> role
    seed: Optional[int] = None
    policy_params: dict = field(default_factory=dict)
    train_only_classes: list[str] = field(default_factory=list)
    fatal_classes: list[str] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def ids_with_role(self, role: str) -> list[str]:
        return sorted(rid for rid, r in self.assignment.items() if r == role)

    def save(self, path: Path) -> None:
        header = {
            "policy": self.policy, "seed": self.seed,
            "policy_params": self.policy_params,
            "train_only_classes": self.train_only_classes,
            "fatal_classes": self.fatal_classes, "flags": self.flags,
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for rid in sorted(self.assignment):
                fh.write(json.dumps({"record_id": rid,
                                     "role": self.assignment[rid]}) + "\n")

    @classmethod
    def load(cls, path: Path) -> "SplitAssignment":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            assignment = {}
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    assignment[d["record_id"]] = d["role"]
        return cls(policy=header["policy"], assignment=assignment,
                   seed=header.get("seed"),
                   policy_params=header.get("policy_params", {}),
                   train_only_classes=header.get("train_only_classes", []),
                   fatal_classes=header.get("fatal_classes", []),
                   flags=header.get("flags", []))


def _by_class(records: list[ImageRecord], class_key: ClassKey) -> dict[str, list[ImageRecord]]:
    out: dict[str, list[ImageRecord]] = {}
    for r in records:
        out.setdefault(class_key(r), []).append(r)
    return out


def split_same_farm(records: list[ImageRecord], test_fraction: float = 0.2,
                    seed: int = 0, class_key: ClassKey = record_class_key,
                    test_counts: Optional[dict[str, int]] = None) -> SplitAssignment:
    """Per-class random split with an exact stratified test count.

    `test_counts` overrides the fraction per class, which is how a same-farm
    split is forced to match another assignment's test sizes exactly.
    """
    if not records:
        raise ValueError("no records to split")
    if not test_counts and not (0 < test_fraction < 1):
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    sa = SplitAssignment(policy=SAME_FARM, seed=seed,
                         policy_params={"test_fraction": test_fraction})
    for cls in sorted(_by_class(records, class_key)):
        group = sorted(_by_class(records, class_key)[cls], key=lambda r: r.record_id)
        n = len(group)
        if n == 1:
            sa.assignment[group[0].record_id] = TRAIN
            sa.flags.append(f"single-record class kept in train: {cls}")
            continue
        if test_counts is not None:
            n_test = min(test_counts.get(cls, 0), n - 1)
        else:
            n_test = min(int(round(n * test_fraction)), n - 1)
        order = rng.permutation(n)
        for i, idx in enumerate(order):
            sa.assignment[group[idx].record_id] = TEST if i < n_test else TRAIN
    return sa


def split_different_farm(records: list[ImageRecord], test_fields: set[str],
                         class_key: ClassKey = record_class_key) -> SplitAssignment:
    """Field-exclusive split: every field's records land on one side only.

    Classes with no test-field records become train-only (their evaluation is
    skipped downstream); classes whose every field is a test field have no
    training data, which is fatal for the class and excludes its records.
    """
    if not test_fields:
        raise ValueError("test_fields must be non-empty")
    sa = SplitAssignment(policy=DIFFERENT_FARM,
                         policy_params={"test_fields": sorted(test_fields)})
    for cls, group in sorted(_by_class(records, class_key).items()):
        fields = {r.field_id for r in group}
        if fields <= set(test_fields):
            sa.fatal_classes.append(cls)
            sa.flags.append(f"no training data for class: {cls}")
            for r in group:
                sa.assignment[r.record_id] = EXCLUDED
            continue
        if not (fields & set(test_fields)):
            sa.train_only_classes.append(cls)
        for r in group:
            sa.assignment[r.record_id] = TEST if r.field_id in test_fields else TRAIN
    return sa


def split_date_fallback(records: list[ImageRecord],
                        class_list: Optional[list[str]] = None,
                        test_fraction: float = 0.2, seed: int = 0,
                        class_key: ClassKey = record_class_key) -> SplitAssignment:
    """Within each (field, class), send whole capture dates to test until the
    test fraction is met; a date never straddles the boundary.

    (field, class) cells with a single date go entirely to train, flagged.
    """
    rng = np.random.default_rng(seed)
    sa = SplitAssignment(policy=DATE_FALLBACK, seed=seed,
                         policy_params={"test_fraction": test_fraction,
                                        "class_list": class_list})
    cells: dict[tuple[str, str], list[ImageRecord]] = {}
    for r in records:
        cls = class_key(r)
        if class_list is not None and cls not in class_list:
            sa.assignment[r.record_id] = EXCLUDED
            continue
        cells.setdefault((r.field_id, cls), []).append(r)

    for (field_id, cls) in sorted(cells):
        group = cells[(field_id, cls)]
        by_date: dict = {}
        for r in group:
            by_date.setdefault(r.captured_at.date(), []).append(r)
        if len(by_date) < 2:
            for r in group:
                sa.assignment[r.record_id] = TRAIN
            sa.flags.append(f"single capture date, all train: ({field_id}, {cls})")
            continue
        dates = sorted(by_date)
        order = rng.permutation(len(dates))
        target = test_fraction * len(group)
        test_dates, cum = set(), 0
        for idx in order:
            if cum >= target:
                break
            test_dates.add(dates[idx])
            cum += len(by_date[dates[idx]])
        # never send every date to test
        if len(test_dates) == len(dates):
            test_dates.discard(dates[order[len(dates) - 1]])
        for r in group:
            sa.assignment[r.record_id] = (
                TEST if r.captured_at.date() in test_dates else TRAIN)
    return sa


@dataclass
class LeakageViolation:
    kind: str
    detail: str


@dataclass
class AuditResult:
    policy: str
    violations: list[LeakageViolation] = field(default_factory=list)
    n_train: int = 0
    n_test: int = 0
    n_excluded: int = 0

    @property
    def is_clean(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "policy": self.policy,
            "violations": [{"kind": v.kind, "detail": v.detail} for v in self.violations],
            "n_train": self.n_train, "n_test": self.n_test,
            "n_excluded": self.n_excluded, "clean": self.is_clean,
        }

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def load(cls, path: Path) -> "AuditResult":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(policy=d["policy"],
                   violations=[LeakageViolation(v["kind"], v["detail"])
                               for v in d["violations"]],
                   n_train=d["n_train"], n_test=d["n_test"],
                   n_excluded=d["n_excluded"])


def audit_leakage(assignment: SplitAssignment, records: list[ImageRecord],
                  class_key: ClassKey = record_class_key) -> AuditResult:
    """Check the assignment against its declared policy's leakage condition.

    different_farm: no field on both sides. date_fallback: no (field, class)
    capture date on both sides. same_farm_random imposes no condition and
    passes vacuously. An empty report means leakage-free under the policy.
    """
    result = AuditResult(policy=assignment.policy)
    roles = assignment.assignment
    result.n_train = sum(1 for v in roles.values() if v == TRAIN)
    result.n_test = sum(1 for v in roles.values() if v == TEST)
    result.n_excluded = sum(1 for v in roles.values() if v == EXCLUDED)

    if assignment.policy == DIFFERENT_FARM:
        sides: dict[str, set[str]] = {}
        for r in records:
            role = roles.get(r.record_id)
            if role in (TRAIN, TEST):
                sides.setdefault(r.field_id, set()).add(role)
        for field_id in sorted(sides):
            if sides[field_id] == {TRAIN, TEST}:
                result.violations.append(LeakageViolation(
                    "field_in_both_sides", field_id))
    elif assignment.policy == DATE_FALLBACK:
        dates: dict[tuple, dict[str, set]] = {}
        for r in records:
            role = roles.get(r.record_id)
            if role in (TRAIN, TEST):
                cell = dates.setdefault((r.field_id, class_key(r)),
                                        {TRAIN: set(), TEST: set()})
                cell[role].add(r.captured_at.date())
        for (field_id, cls) in sorted(dates):
            shared = dates[(field_id, cls)][TRAIN] & dates[(field_id, cls)][TEST]
            for d in sorted(shared):
                result.violations.append(LeakageViolation(
                    "date_in_both_sides", f"({field_id}, {cls}): {d.isoformat()}"))
    return result
