"""HTTP service: two-stage identification plus the annotation review queue.

The service is read-only over the model; the annotation store is the only
thing it writes, through the store's single writer. Identification runs
detect -> crop -> classify per ROI and reports per-request latency.
"""

from __future__ import annotations

import io
import time
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, File, HTTPException, Query, UploadFile
from fastapi.responses import FileResponse, JSONResponse
from PIL import Image, UnidentifiedImageError

from .annotations import AnnotationStore, ReviewResult
from .catalog import Manifest, ingest_manifest
from .classify import SmallCnnClassifier, gradcam, predict
from .roi import ClassicalSegmenter, SegmenterBackend, detect_rois, extract_roi_crops

PAGE_SIZE = 50


def create_app(model_dir: Optional[Path] = None,
               store_dir: Optional[Path] = None,
               manifest_path: Optional[Path] = None,
               image_root: Optional[Path] = None,
               segmenter: Optional[SegmenterBackend] = None,
               artifacts_dir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="pestpipe service")
    app.state.model = SmallCnnClassifier.load(model_dir) if model_dir else None
    app.state.store = AnnotationStore(store_dir) if store_dir else None
    app.state.manifest = None
    if manifest_path:
        app.state.manifest = ingest_manifest(manifest_path, image_root)
    app.state.segmenter = segmenter or ClassicalSegmenter()
    app.state.artifacts_dir = Path(artifacts_dir) if artifacts_dir else None

    @app.post("/identify")
    async def identify(file: UploadFile = File(...),
                       k: int = Query(default=3, ge=1),
                       attention: bool = Query(default=False)):
        model: SmallCnnClassifier = app.state.model
        if model is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        payload = await file.read()
        try:
            with Image.open(io.BytesIO(payload)) as img:
                image = np.asarray(img.convert("RGB"))
        except (UnidentifiedImageError, OSError) as exc:
            raise HTTPException(status_code=400, detail=f"malformed image: {exc}")

        started = time.perf_counter()
        proposals = detect_rois(image, app.state.segmenter)
        rois = []
        for ann in proposals:
            crops = extract_roi_crops(image, [ann], output_side=model.input_side)
            if not crops:
                continue
            crop, crop_img = crops[0]
            ranked = predict(model, crop_img, k=k)
            entry = {
                "polygon": [[x, y] for x, y in ann.vertices],
                "bbox": list(crop.bbox),
                "classes": [{"class_name": c, "probability": p} for c, p in ranked],
                "attention_map": None,
            }
            if attention and app.state.artifacts_dir is not None:
                app.state.artifacts_dir.mkdir(parents=True, exist_ok=True)
                heat = gradcam(model, crop_img, ranked[0][0])
                name = f"attention-{int(time.time() * 1000)}-{len(rois)}.png"
                Image.fromarray((heat * 255).astype(np.uint8)).save(
                    app.state.artifacts_dir / name)
                entry["attention_map"] = name
            rois.append(entry)
        latency_ms = (time.perf_counter() - started) * 1000.0
        body = {"rois": rois, "latency_ms": latency_ms}
        if not rois:
            body["message"] = "no ROI found"
        return JSONResponse(body)

    def _store() -> AnnotationStore:
        if app.state.store is None:
            raise HTTPException(status_code=503, detail="annotation store not configured")
        return app.state.store

    @app.get("/annotations/pending")
    def pending(page: int = Query(default=1, ge=1),
                page_size: int = Query(default=PAGE_SIZE, ge=1, le=500)):
        store = _store()
        items = store.pending()
        total = len(items)
        start = (page - 1) * page_size
        chunk = items[start:start + page_size]
        return {
            "items": [{
                "annotation_id": a.annotation_id,
                "record_id": a.record_id,
                "vertices": [[x, y] for x, y in a.vertices],
                "label": a.label,
                "source": a.source,
                "review_status": a.review_status,
                "image_url": f"/annotations/{a.annotation_id}/image",
            } for a in chunk],
            "page": page, "page_size": page_size, "total": total,
            "pages": (total + page_size - 1) // page_size if total else 0,
        }

    @app.get("/annotations/{annotation_id}/image")
    def annotation_image(annotation_id: str):
        store = _store()
        try:
            ann = store.get(annotation_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown annotation")
        manifest: Manifest = app.state.manifest
        if manifest is None:
            raise HTTPException(status_code=503, detail="manifest not configured")
        try:
            record = manifest.by_id(ann.record_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown record")
        path = record.resolve_uri(manifest.image_root)
        if not path.exists():
            raise HTTPException(status_code=404, detail="image file missing")
        return FileResponse(path)

    @app.post("/annotations/{annotation_id}/review")
    def review(annotation_id: str, body: dict):
        store = _store()
        decision = body.get("decision")
        if decision not in ("accept", "reject"):
            raise HTTPException(status_code=400,
                                detail="decision must be accept or reject")
        vertices = body.get("vertices")
        if vertices is not None:
            vertices = [(float(x), float(y)) for x, y in vertices]
        try:
            outcome = store.review(ReviewResult(
                annotation_id=annotation_id, decision=decision,
                vertices=vertices))
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown annotation")
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        outcome["vertices"] = [[x, y] for x, y in outcome["vertices"]]
        return outcome

    return app
