"""End-to-end run orchestration: ingest, cleanse, split, audit, class scheme,
ROI extraction, training, evaluation.

Every stage persists its artifact under the run directory together with the
config hash, so a run is reproducible and individual stages can be swapped
for ablations. Reruns with the same config and seed produce byte-identical
evaluation reports.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import classes as classes_mod
from .annotations import AnnotationStore
from .augment import AugmentationConfig
from .catalog import ImageRecord, Manifest, ingest_manifest, save_manifest
from .classify import (LabeledDataset, SmallCnnClassifier, TrainConfig, train)
from .cleanse import PixelEmbedder, cleanse_manifest
from .evaluate import compute_report, render_confusion_png
from .roi import PolygonAnnotation, extract_roi_crops
from .split import (AuditResult, DATE_FALLBACK, DIFFERENT_FARM, SAME_FARM,
                    SplitAssignment, TEST, TRAIN, audit_leakage,
                    split_date_fallback, split_different_farm, split_same_farm)
from .synthetic import load_annotations_file


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class LeakageAuditError(PipelineError):
    pass


@dataclass
class PipelineConfig:
    manifest: str
    image_root: str
    annotations: Optional[str] = None
    cleanse_enabled: bool = True
    burst_interval: float = 1.0
    dup_threshold: float = 0.05
    split_policy: str = DIFFERENT_FARM
    test_fields: list[str] = field(default_factory=list)
    test_fraction: float = 0.2
    scenario: Optional[dict] = None     # classes.ScenarioConfig fields
    roi_backend: str = "ground_truth"   # ground_truth | none
    roi_output_side: int = 48
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "manifest": self.manifest, "image_root": self.image_root,
            "annotations": self.annotations,
            "cleanse_enabled": self.cleanse_enabled,
            "burst_interval": self.burst_interval,
            "dup_threshold": self.dup_threshold,
            "split_policy": self.split_policy,
            "test_fields": list(self.test_fields),
            "test_fraction": self.test_fraction,
            "scenario": self.scenario,
            "roi_backend": self.roi_backend,
            "roi_output_side": self.roi_output_side,
            "train": self.train.to_json(),
            "seed": self.seed,
        }

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_json(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        train_cfg = dict(d.pop("train", None) or {})
        aug_cfg = train_cfg.pop("augmentation", None)
        augmentation = None
        if aug_cfg:
            aug_cfg = dict(aug_cfg)
            if "rotation_probs" in aug_cfg:
                aug_cfg["rotation_probs"] = {
                    int(k): v for k, v in aug_cfg["rotation_probs"].items()}
            augmentation = AugmentationConfig(**aug_cfg)
        if "conv_channels" in train_cfg:
            train_cfg["conv_channels"] = tuple(train_cfg["conv_channels"])
        tc = TrainConfig(augmentation=augmentation, **train_cfg)
        return cls(train=tc, **d)

    @classmethod
    def load(cls, path: Path) -> "PipelineConfig":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class RunResult:
    run_dir: Path
    config_hash: str
    report_path: Path
    model_dir: Path
    stage_artifacts: dict[str, str]


def _load_square(path: Path, side: int) -> np.ndarray:
    """Pad to square with black, then resize; keeps aspect like the ROI path."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"))
    h, w = arr.shape[:2]
    s = max(h, w)
    canvas = np.zeros((s, s, 3), dtype=np.uint8)
    canvas[(s - h) // 2:(s - h) // 2 + h, (s - w) // 2:(s - w) // 2 + w] = arr
    if s == side:
        return canvas
    return np.asarray(Image.fromarray(canvas).resize((side, side), Image.BILINEAR))


def _split(config: PipelineConfig, records: list[ImageRecord]) -> SplitAssignment:
    if config.split_policy == DIFFERENT_FARM:
        return split_different_farm(records, set(config.test_fields))
    if config.split_policy == SAME_FARM:
        return split_same_farm(records, test_fraction=config.test_fraction,
                               seed=config.seed)
    if config.split_policy == DATE_FALLBACK:
        return split_date_fallback(records, test_fraction=config.test_fraction,
                                   seed=config.seed)
    raise PipelineError("split", f"unknown policy: {config.split_policy}")


def _sample_images(records: list[ImageRecord], labels: dict[str, str],
                   manifest: Manifest, config: PipelineConfig,
                   polygons: dict[str, list[PolygonAnnotation]],
                   crops_dir: Optional[Path] = None,
                   ) -> tuple[list[np.ndarray], list[str], list[str]]:
    """Load one or more model inputs per record (one per ROI polygon)."""
    images, sample_labels, sample_records = [], [], []
    side = config.roi_output_side
    for r in records:
        path = r.resolve_uri(manifest.image_root)
        if config.roi_backend == "ground_truth" and polygons.get(r.record_id):
            with Image.open(path) as img:
                arr = np.asarray(img.convert("RGB"))
            for crop, crop_img in extract_roi_crops(arr, polygons[r.record_id],
                                                    output_side=side):
                if crops_dir is not None:
                    Image.fromarray(crop_img).save(
                        crops_dir / f"{crop.record_id}__{crop.annotation_id}.png")
                images.append(crop_img)
                sample_labels.append(labels[r.record_id])
                sample_records.append(r.record_id)
        else:
            images.append(_load_square(path, side))
            sample_labels.append(labels[r.record_id])
            sample_records.append(r.record_id)
    return images, sample_labels, sample_records


def run_pipeline(config: PipelineConfig, out_dir: Path) -> RunResult:
    """Execute every stage, persisting artifacts as it goes.

    Raises PipelineError with the failing stage's name; artifacts written by
    completed stages stay on disk for inspection.
    """
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg_hash = config.hash()
    (run_dir / "config.json").write_text(
        json.dumps({"hash": cfg_hash, "config": config.to_json()},
                   indent=2, sort_keys=True) + "\n", encoding="utf-8")
    artifacts: dict[str, str] = {"config": "config.json"}

    # ingest
    try:
        manifest = ingest_manifest(Path(config.manifest), Path(config.image_root))
    except Exception as exc:
        raise PipelineError("ingest", str(exc)) from exc
    save_manifest(manifest, run_dir / "manifest.validated.jsonl")
    (run_dir / "ingest.json").write_text(json.dumps({
        "n_records": len(manifest.records),
        "flags": [{"line_no": f.line_no, "reason": f.reason} for f in manifest.flags],
    }, indent=2) + "\n", encoding="utf-8")
    artifacts["ingest"] = "ingest.json"

    # cleanse
    records = manifest.records
    if config.cleanse_enabled:
        report = cleanse_manifest(manifest, PixelEmbedder(),
                                  burst_interval=config.burst_interval,
                                  dup_threshold=config.dup_threshold)
        report.save(run_dir / "cleanse.jsonl")
        artifacts["cleanse"] = "cleanse.jsonl"
        kept = set(report.kept)
        records = [r for r in records if r.record_id in kept]

    # split + audit
    assignment = _split(config, records)
    assignment.save(run_dir / "assignment.jsonl")
    artifacts["split"] = "assignment.jsonl"
    audit = audit_leakage(assignment, records)
    audit.save(run_dir / "audit.json")
    artifacts["audit"] = "audit.json"
    if not audit.is_clean:
        raise LeakageAuditError("audit", f"{len(audit.violations)} violations")

    # class scheme (+ cross-crop composition)
    scenario = None
    if config.scenario:
        sc = dict(config.scenario)
        scenario = classes_mod.ScenarioConfig(
            scenario=sc["scenario"], target_crop=sc["target_crop"],
            integrate_groups=set(sc["integrate_groups"]) if sc.get("integrate_groups") else None,
            donor_crops=set(sc.get("donor_crops", [])),
            donor_classes=set(sc.get("donor_classes", [])))
        scheme = classes_mod.build_class_scheme(manifest.taxonomy, scenario)
    else:
        scheme = classes_mod.ClassScheme(rules=[], identity_fallback=True)
    scheme.save(run_dir / "scheme.json")
    artifacts["scheme"] = "scheme.json"
    scheme_hash = hashlib.sha256(
        (run_dir / "scheme.json").read_bytes()).hexdigest()

    train_records = [r for r in records
                     if assignment.assignment.get(r.record_id) == TRAIN]
    test_records = [r for r in records
                    if assignment.assignment.get(r.record_id) == TEST]
    if scenario is not None and scenario.crosses_crops:
        target = [r for r in train_records if r.crop == scenario.target_crop]
        donors = [r for r in train_records if r.crop != scenario.target_crop]
        train_labels = classes_mod.compose_cross_crop(target, donors, scenario, scheme)
        train_records = [r for r in train_records if r.record_id in train_labels]
        test_records = [r for r in test_records if r.crop == scenario.target_crop]
    else:
        try:
            train_labels = classes_mod.apply_scheme(train_records, scheme)
        except classes_mod.SchemeError as exc:
            raise PipelineError("scheme", str(exc)) from exc
    test_labels = classes_mod.apply_scheme(test_records, scheme)

    # roi extraction
    polygons: dict[str, list[PolygonAnnotation]] = {}
    if config.roi_backend == "ground_truth":
        if not config.annotations:
            raise PipelineError("roi", "ground_truth backend needs an annotations file")
        polygons = load_annotations_file(Path(config.annotations))
    elif config.roi_backend != "none":
        raise PipelineError("roi", f"unknown roi backend: {config.roi_backend}")
    crops_dir = run_dir / "crops"
    crops_dir.mkdir(exist_ok=True)
    train_imgs, train_y, _ = _sample_images(train_records, train_labels, manifest,
                                            config, polygons, crops_dir)
    test_imgs, test_y, test_rids = _sample_images(test_records, test_labels,
                                                  manifest, config, polygons)
    artifacts["roi"] = "crops"

    # train
    class_order = sorted(set(train_y))
    dataset = LabeledDataset(images=np.stack(train_imgs), labels=train_y,
                             class_order=class_order, audit=audit)
    try:
        model, _log = train(dataset, config.train, backend=SmallCnnClassifier(),
                            scheme_hash=scheme_hash)
    except Exception as exc:
        raise PipelineError("train", str(exc)) from exc
    model_dir = run_dir / "model"
    model.save(model_dir, scheme_hash=scheme_hash, audit_hash=audit.hash())
    artifacts["model"] = "model"

    # evaluate: one prediction per test record (mean prob over its crops)
    eval_dir = run_dir / "eval"
    eval_dir.mkdir(exist_ok=True)
    probs_by_record: dict[str, list[np.ndarray]] = {}
    for rid, img in zip(test_rids, test_imgs):
        probs_by_record.setdefault(rid, []).append(model.predict_proba(img))
    predictions = {
        rid: model.class_order[int(np.argmax(np.mean(ps, axis=0)))]
        for rid, ps in probs_by_record.items()}
    truth = {rid: test_labels[rid] for rid in predictions}
    evaluated = [c for c in class_order if c in set(truth.values())]
    report = compute_report(truth, predictions, evaluated_classes=evaluated)
    report.save(eval_dir / "report.json")
    render_confusion_png(report.confusion, report.class_order,
                         eval_dir / "confusion.png")
    artifacts["eval"] = "eval/report.json"

    (run_dir / "stages.json").write_text(
        json.dumps(artifacts, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return RunResult(run_dir=run_dir, config_hash=cfg_hash,
                     report_path=eval_dir / "report.json",
                     model_dir=model_dir, stage_artifacts=artifacts)
