"""Qualitative replications at desk scale: the split-policy gap and the
masking gain, run as paired trainings with identical budgets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .catalog import ImageRecord, Manifest
from .classify import LabeledDataset, SmallCnnClassifier, TrainConfig, train
from .evaluate import EvalReport, compute_report
from .roi import PolygonAnnotation, extract_roi_crops
from .split import (SplitAssignment, TEST, TRAIN, audit_leakage,
                    split_different_farm, split_same_farm)
from .synthetic import SyntheticSpec, generate_synthetic_dataset

RQ1_SPLIT_GAP = "rq1_split_gap"
RQ2_MASK_GAIN = "rq2_mask_gain"


@dataclass
class ExperimentResult:
    scenario: str
    reports: dict[str, EvalReport]
    accuracy_delta: float
    macro_f1_delta: float
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "reports": {k: v.to_json() for k, v in self.reports.items()},
            "accuracy_delta": self.accuracy_delta,
            "macro_f1_delta": self.macro_f1_delta,
            "notes": self.notes,
        }

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def _load_image(record: ImageRecord, manifest: Manifest) -> np.ndarray:
    with Image.open(record.resolve_uri(manifest.image_root)) as img:
        return np.asarray(img.convert("RGB"))


def _masked_image(record: ImageRecord, manifest: Manifest,
                  polygons: dict[str, list[PolygonAnnotation]]) -> np.ndarray:
    image = _load_image(record, manifest)
    anns = polygons.get(record.record_id, [])
    crops = extract_roi_crops(image, anns, output_side=image.shape[0])
    if not crops:
        return image
    return crops[0][1]


def _arm_datasets(manifest: Manifest, assignment: SplitAssignment,
                  masked: bool, polygons: Optional[dict] = None,
                  ) -> tuple[LabeledDataset, np.ndarray, list[str], list[str]]:
    """Build (train dataset, test images, test labels, test record ids)."""
    audit = audit_leakage(assignment, manifest.records)
    train_recs = [r for r in manifest.records
                  if assignment.assignment.get(r.record_id) == TRAIN]
    test_recs = [r for r in manifest.records
                 if assignment.assignment.get(r.record_id) == TEST]

    def load(recs):
        if masked:
            return np.stack([_masked_image(r, manifest, polygons or {}) for r in recs])
        return np.stack([_load_image(r, manifest) for r in recs])

    class_order = sorted({r.pest_label for r in manifest.records})
    train_ds = LabeledDataset(images=load(train_recs),
                              labels=[r.pest_label for r in train_recs],
                              class_order=class_order, audit=audit)
    return (train_ds, load(test_recs), [r.pest_label for r in test_recs],
            [r.record_id for r in test_recs])


def _train_and_eval(train_ds: LabeledDataset, test_images: np.ndarray,
                    test_labels: list[str], test_ids: list[str],
                    config: TrainConfig) -> EvalReport:
    model, _ = train(train_ds, config, backend=SmallCnnClassifier())
    predictions = {}
    for rid, img in zip(test_ids, test_images):
        probs = model.predict_proba(img)
        predictions[rid] = model.class_order[int(np.argmax(probs))]
    truth = dict(zip(test_ids, test_labels))
    return compute_report(truth, predictions, evaluated_classes=train_ds.class_order)


def run_scenario_experiment(scenario: str, spec: SyntheticSpec,
                            train_config: TrainConfig, workdir: Path,
                            test_field_fraction: float = 0.4,
                            ) -> ExperimentResult:
    """Train the paired arms of one research-question replication.

    rq1_split_gap: identical model/budget under a same-farm vs a
    different-farm split, on raw images. rq2_mask_gain: raw vs ROI-masked
    inputs under the same different-farm split.
    """
    workdir = Path(workdir)
    manifest, polygons = generate_synthetic_dataset(spec, workdir / "data")

    n_test_fields = max(1, int(round(spec.n_fields * test_field_fraction)))
    test_fields = {f"F{f}" for f in range(spec.n_fields - n_test_fields,
                                          spec.n_fields)}
    diff_split = split_different_farm(manifest.records, test_fields)

    if scenario == RQ1_SPLIT_GAP:
        n_diff_test = sum(1 for v in diff_split.assignment.values() if v == TEST)
        frac = n_diff_test / len(manifest.records)
        same_split = split_same_farm(manifest.records, test_fraction=frac,
                                     seed=spec.seed)
        arms = {"same_farm": (same_split, False),
                "different_farm": (diff_split, False)}
        first, second = "same_farm", "different_farm"
    elif scenario == RQ2_MASK_GAIN:
        arms = {"baseline": (diff_split, False), "masked": (diff_split, True)}
        first, second = "masked", "baseline"
    else:
        raise ValueError(f"unknown scenario: {scenario}")

    reports: dict[str, EvalReport] = {}
    for name, (assignment, masked) in arms.items():
        train_ds, test_imgs, test_labels, test_ids = _arm_datasets(
            manifest, assignment, masked, polygons)
        reports[name] = _train_and_eval(train_ds, test_imgs, test_labels,
                                        test_ids, train_config)

    result = ExperimentResult(
        scenario=scenario, reports=reports,
        accuracy_delta=reports[first].micro_accuracy - reports[second].micro_accuracy,
        macro_f1_delta=reports[first].macro_f1 - reports[second].macro_f1,
        notes=[f"delta = {first} - {second}"])
    result.save(workdir / f"{scenario}.json")
    return result
