"""Command-line entry points for the pipeline stages.

Exit codes: 0 success, 2 validation failure, 3 leakage-audit failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import classes as classes_mod
from .annotations import AnnotationStore, run_self_training_round
from .augment import AugmentationConfig, preview_grid
from .catalog import ManifestError, ingest_manifest, validate_records
from .classify import (LabeledDataset, SmallCnnClassifier, TrainConfig,
                       UnauditedSplitError, train as train_model)
from .cleanse import PixelEmbedder, cleanse_manifest
from .evaluate import compute_report
from .experiments import RQ1_SPLIT_GAP, RQ2_MASK_GAIN, run_scenario_experiment
from .pipeline import LeakageAuditError, PipelineConfig, PipelineError, run_pipeline
from .roi import ClassicalSegmenter, GroundTruthBackend, extract_roi_crops
from .split import (AuditResult, audit_leakage, split_date_fallback,
                    split_different_farm, split_same_farm)
from .synthetic import SyntheticSpec, generate_synthetic_dataset, load_annotations_file

EXIT_VALIDATION = 2
EXIT_LEAKAGE = 3


@click.group()
def main():
    """Two-stage plant pest identification pipeline."""


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--image-root", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default=None, help="validation report JSON")
def ingest(manifest_path, image_root, out):
    """Load and validate a manifest; report malformed rows and issues."""
    try:
        manifest = ingest_manifest(Path(manifest_path),
                                   Path(image_root) if image_root else None)
    except ManifestError as exc:
        click.echo(f"fatal: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    issues = validate_records(manifest)
    report = {
        "n_records": len(manifest.records),
        "row_flags": [{"line_no": f.line_no, "reason": f.reason} for f in manifest.flags],
        "issues": [{"record_id": i.record_id, "kind": i.kind, "detail": i.detail}
                   for i in issues],
    }
    text = json.dumps(report, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    click.echo(text)
    if manifest.flags:
        sys.exit(EXIT_VALIDATION)


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--image-root", type=click.Path(), default=None)
@click.option("--burst-interval", type=float, default=1.0, show_default=True)
@click.option("--dup-threshold", type=float, default=0.05, show_default=True)
@click.option("--out", required=True, type=click.Path())
def cleanse(manifest_path, image_root, burst_interval, dup_threshold, out):
    """Remove burst frames and embedding near-duplicates."""
    manifest = ingest_manifest(Path(manifest_path),
                               Path(image_root) if image_root else None)
    report = cleanse_manifest(manifest, PixelEmbedder(),
                              burst_interval=burst_interval,
                              dup_threshold=dup_threshold)
    report.save(Path(out))
    click.echo(f"kept {len(report.kept)}, burst-dropped {len(report.dropped_burst)}, "
               f"duplicate-dropped {len(report.dropped_duplicate)}, "
               f"flagged {len(report.flagged_for_review)}")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--image-root", type=click.Path(), default=None)
@click.option("--policy", type=click.Choice(["same-farm", "different-farm", "date-fallback"]),
              required=True)
@click.option("--test-fields", default="", help="comma-separated field ids")
@click.option("--test-fraction", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--audit-out", type=click.Path(), default=None)
def split(manifest_path, image_root, policy, test_fields, test_fraction, seed,
          out, audit_out):
    """Produce a train/test assignment and audit it for leakage."""
    manifest = ingest_manifest(Path(manifest_path),
                               Path(image_root) if image_root else None)
    if policy == "different-farm":
        fields = {f.strip() for f in test_fields.split(",") if f.strip()}
        if not fields:
            click.echo("different-farm needs --test-fields", err=True)
            sys.exit(EXIT_VALIDATION)
        assignment = split_different_farm(manifest.records, fields)
    elif policy == "same-farm":
        assignment = split_same_farm(manifest.records, test_fraction, seed)
    else:
        assignment = split_date_fallback(manifest.records,
                                         test_fraction=test_fraction, seed=seed)
    assignment.save(Path(out))
    audit = audit_leakage(assignment, manifest.records)
    audit.save(Path(audit_out) if audit_out else Path(out).with_suffix(".audit.json"))
    click.echo(f"train {audit.n_train}, test {audit.n_test}, "
               f"excluded {audit.n_excluded}, violations {len(audit.violations)}")
    if not audit.is_clean:
        sys.exit(EXIT_LEAKAGE)


@main.group()
def classes():
    """Class scheme operations."""


@classes.command("build")
@click.option("--scenario", type=click.Choice(classes_mod.SCENARIOS), required=True)
@click.option("--target", "target_crop", required=True)
@click.option("--integrate-groups", default="", help="comma-separated group names")
@click.option("--donor-crops", default="")
@click.option("--donor-classes", default="")
@click.option("--out", required=True, type=click.Path())
def classes_build(scenario, target_crop, integrate_groups, donor_crops,
                  donor_classes, out):
    """Build and save a class scheme for a scenario."""
    from .catalog import seeded_taxonomy
    cfg = classes_mod.ScenarioConfig(
        scenario=scenario, target_crop=target_crop,
        integrate_groups={g.strip() for g in integrate_groups.split(",") if g.strip()} or None,
        donor_crops={c.strip() for c in donor_crops.split(",") if c.strip()},
        donor_classes={c.strip() for c in donor_classes.split(",") if c.strip()})
    scheme = classes_mod.build_class_scheme(seeded_taxonomy(), cfg)
    scheme.save(Path(out))
    click.echo(f"saved scheme with {len(scheme.rules)} rules to {out}")


@main.group()
def roi():
    """ROI extraction and the self-training annotation cycle."""


@roi.command("extract")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--image-root", type=click.Path(), default=None)
@click.option("--annotations", required=True, type=click.Path(exists=True))
@click.option("--side", type=int, default=256, show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
def roi_extract(manifest_path, image_root, annotations, side, out_dir):
    """Cut square masked crops for every annotated polygon."""
    manifest = ingest_manifest(Path(manifest_path),
                               Path(image_root) if image_root else None)
    polygons = load_annotations_file(Path(annotations))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for record in manifest.records:
        anns = polygons.get(record.record_id)
        if not anns:
            continue
        with Image.open(record.resolve_uri(manifest.image_root)) as img:
            arr = np.asarray(img.convert("RGB"))
        for crop, crop_img in extract_roi_crops(arr, anns, output_side=side):
            Image.fromarray(crop_img).save(
                out / f"{crop.record_id}__{crop.annotation_id}.png")
            n += 1
    click.echo(f"wrote {n} crops to {out}")


@roi.command("propose")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--image-root", type=click.Path(), default=None)
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--batch-size", type=int, default=1000, show_default=True)
def roi_propose(manifest_path, image_root, store_dir, batch_size):
    """Run one self-training proposal round with the classical segmenter."""
    manifest = ingest_manifest(Path(manifest_path),
                               Path(image_root) if image_root else None)
    store = AnnotationStore(Path(store_dir))
    batch = run_self_training_round(manifest.records, ClassicalSegmenter(),
                                    batch_size, store,
                                    image_root=manifest.image_root)
    click.echo(f"round {batch.round_id}: {len(batch.annotation_ids)} proposals, "
               f"{len(batch.flagged_records)} flagged")


@main.command()
@click.option("--run-dir", required=True, type=click.Path(exists=True),
              help="pipeline run directory (for dataset + audit artifacts)")
@click.option("--epochs", type=int, default=None)
def train(run_dir, epochs):
    """Re-train the model inside an existing run directory."""
    cfg_doc = json.loads((Path(run_dir) / "config.json").read_text(encoding="utf-8"))
    config = PipelineConfig.from_json(cfg_doc["config"])
    if epochs:
        config.train.epochs = epochs
    try:
        result = run_pipeline(config, Path(run_dir))
    except LeakageAuditError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_LEAKAGE)
    except (PipelineError, UnauditedSplitError) as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo(f"model saved to {result.model_dir}")


@main.group(name="eval")
def eval_group():
    """Evaluation reports."""


@eval_group.command("report")
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True),
              help="JSON mapping record_id -> true class")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True),
              help="JSON mapping record_id -> predicted class")
@click.option("--classes", "classes_csv", default="", help="evaluated classes (csv)")
@click.option("--out", type=click.Path(), default=None)
def eval_report(truth_path, pred_path, classes_csv, out):
    """Confusion matrix, per-class P/R/F1, micro accuracy, macro F1."""
    truth = json.loads(Path(truth_path).read_text(encoding="utf-8"))
    pred = json.loads(Path(pred_path).read_text(encoding="utf-8"))
    evaluated = [c.strip() for c in classes_csv.split(",") if c.strip()] or None
    try:
        report = compute_report(truth, pred, evaluated_classes=evaluated)
    except ValueError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_VALIDATION)
    if out:
        report.save(Path(out))
    click.echo(f"micro accuracy {report.micro_accuracy:.4f}, "
               f"macro F1 {report.macro_f1:.4f}, n={report.n_test}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def run(config_path, out_dir):
    """Run the full pipeline from a JSON config."""
    config = PipelineConfig.load(Path(config_path))
    try:
        result = run_pipeline(config, Path(out_dir))
    except LeakageAuditError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_LEAKAGE)
    except (PipelineError, UnauditedSplitError) as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo(f"run complete: {result.report_path}")


@main.command()
@click.option("--model", "model_dir", type=click.Path(exists=True), default=None)
@click.option("--store", "store_dir", type=click.Path(), default=None)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--image-root", type=click.Path(), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(model_dir, store_dir, manifest_path, image_root, host, port):
    """Serve identification and annotation-review endpoints."""
    import uvicorn

    from .service import create_app
    app = create_app(model_dir=Path(model_dir) if model_dir else None,
                     store_dir=Path(store_dir) if store_dir else None,
                     manifest_path=Path(manifest_path) if manifest_path else None,
                     image_root=Path(image_root) if image_root else None)
    uvicorn.run(app, host=host, port=port)


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--fields", type=int, default=5, show_default=True)
@click.option("--classes", "n_classes", type=int, default=4, show_default=True)
@click.option("--per-cell", type=int, default=50, show_default=True)
@click.option("--confound", type=float, default=1.0, show_default=True)
@click.option("--cue-size", type=int, default=6, show_default=True)
@click.option("--side", type=int, default=48, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--experiment", type=click.Choice([RQ1_SPLIT_GAP, RQ2_MASK_GAIN]),
              default=None, help="also run a scenario experiment")
def synth(out_dir, fields, n_classes, per_cell, confound, cue_size, side, seed,
          experiment):
    """Generate the synthetic benchmark; optionally run an experiment on it."""
    spec = SyntheticSpec(n_fields=fields, n_classes=n_classes,
                         images_per_cell=per_cell, confound_strength=confound,
                         cue_size_px=cue_size, image_side=side, seed=seed)
    if experiment:
        config = TrainConfig(input_side=side, epochs=8, batch_size=32,
                             learning_rate=0.01, seed=seed)
        result = run_scenario_experiment(experiment, spec, config, Path(out_dir))
        for name, report in sorted(result.reports.items()):
            click.echo(f"{name}: accuracy {report.micro_accuracy:.3f}, "
                       f"macro F1 {report.macro_f1:.3f}")
        click.echo(f"accuracy delta {result.accuracy_delta:+.3f}")
    else:
        manifest, _ = generate_synthetic_dataset(spec, Path(out_dir))
        click.echo(f"wrote {len(manifest.records)} records to {out_dir}")


@main.group()
def augment():
    """Augmentation utilities."""


@augment.command("preview")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
def augment_preview(image_path, out, seed):
    """Emit a grid of augmented variants of one image."""
    with Image.open(image_path) as img:
        arr = np.asarray(img.convert("RGB"))
    side = min(arr.shape[:2])
    arr = arr[:side, :side]
    grid = preview_grid(arr, AugmentationConfig(), seed=seed)
    Image.fromarray(grid).save(out)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
