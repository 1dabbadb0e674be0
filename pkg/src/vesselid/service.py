"""HTTP API backing the expert review UI.

GET endpoints are side-effect free and byte-deterministic; tiles are
immutable and served straight from the container files. Corrections use
optimistic concurrency: a request carries the version it saw, and a stale
version gets a 409 with the current record instead of silently overwriting
another reviewer's work.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .core import Annotation, BBox, GenusCatalog, Review, Source
from .dataset import DatasetIndex, ReviewDecision, format_annotation_line, merge_review
from .slide_store import SlideContainer


class CorrectionRequest(BaseModel):
    annotation_id: str
    expected_version: int
    action: str  # accept | adjust | reject
    bbox: Optional[list] = None  # [x_min, y_min, x_max, y_max], level-0 px
    genus: Optional[str] = None
    reviewer: str = "anonymous"


class ExportRequest(BaseModel):
    slide_id: Optional[str] = None


def _error(status: int, code: str, message: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message, **extra})


def annotation_to_dict(a: Annotation) -> dict:
    return {
        "annotation_id": a.annotation_id,
        "slide_id": a.slide_id,
        "bbox": [a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max],
        "genus": a.genus,
        "confidence": a.confidence,
        "source": a.source.value,
        "review": a.review.value,
        "version": a.version,
    }


def create_app(dataset_root, catalog: Optional[GenusCatalog] = None) -> FastAPI:
    root = Path(dataset_root)
    catalog = catalog or GenusCatalog()
    index = DatasetIndex.load(root)
    containers: dict = {}
    write_lock = threading.Lock()
    audit_path = root / "audit.jsonl"

    app = FastAPI(title="vesselid annotation service")

    def container(slide_id: str) -> SlideContainer:
        if slide_id not in containers:
            containers[slide_id] = SlideContainer.open(root / "slides" / slide_id)
        return containers[slide_id]

    @app.get("/slides")
    def list_slides():
        out = []
        for sid in sorted(index.slides):
            meta = index.slides[sid]
            out.append(
                {
                    "slide_id": sid,
                    "maceration_id": meta.maceration_id,
                    "genus": meta.genus,
                    "width_px": meta.width_px,
                    "height_px": meta.height_px,
                    "plane_count": meta.plane_count,
                    "pixel_scale_um": meta.pixel_scale_um,
                }
            )
        return out

    @app.get("/slides/{slide_id}")
    def get_slide(slide_id: str):
        if slide_id not in index.slides:
            return _error(404, "unknown_slide", f"no slide {slide_id!r}")
        meta = index.slides[slide_id]
        c = container(slide_id)
        anns = index.slide_annotations(slide_id)
        return {
            "slide_id": slide_id,
            "maceration_id": meta.maceration_id,
            "genus": meta.genus,
            "width_px": meta.width_px,
            "height_px": meta.height_px,
            "plane_count": meta.plane_count,
            "pixel_scale_um": meta.pixel_scale_um,
            "tile_size": c.tile_size,
            "levels": c.levels,
            "annotation_count": len(anns),
            "pending_count": sum(1 for a in anns if a.review == Review.PENDING),
            "genera": list(catalog.genera),
        }

    @app.get("/slides/{slide_id}/tiles/{plane}/{level}/{x}_{y}")
    def get_tile(slide_id: str, plane: int, level: int, x: int, y: int):
        if slide_id not in index.slides:
            return _error(404, "unknown_slide", f"no slide {slide_id!r}")
        path = container(slide_id).tile_path(plane, level, x, y)
        if not path.exists():
            return _error(404, "unknown_tile", f"no tile p{plane}/l{level}/t{x}_{y}")
        headers = {"Cache-Control": "public, max-age=31536000, immutable"}
        return Response(content=path.read_bytes(), media_type="image/png", headers=headers)

    @app.get("/slides/{slide_id}/annotations")
    def list_annotations(
        slide_id: str,
        source: Optional[str] = Query(default=None),
        review: Optional[str] = Query(default=None),
    ):
        if slide_id not in index.slides:
            return _error(404, "unknown_slide", f"no slide {slide_id!r}")
        anns = index.slide_annotations(slide_id)
        if source:
            anns = [a for a in anns if a.source.value == source]
        if review:
            anns = [a for a in anns if a.review.value == review]
        return [annotation_to_dict(a) for a in anns]

    @app.post("/slides/{slide_id}/corrections")
    def submit_correction(slide_id: str, req: CorrectionRequest):
        if slide_id not in index.slides:
            return _error(404, "unknown_slide", f"no slide {slide_id!r}")
        meta = index.slides[slide_id]
        if req.action not in ("accept", "adjust", "reject"):
            return _error(422, "bad_action", f"unknown action {req.action!r}")
        bbox = None
        if req.action == "adjust":
            if req.bbox is None and req.genus is None:
                return _error(422, "bad_adjust", "adjust needs a bbox and/or genus")
            if req.bbox is not None:
                if len(req.bbox) != 4 or req.bbox[0] >= req.bbox[2] or req.bbox[1] >= req.bbox[3]:
                    return _error(422, "bad_bbox", f"degenerate bbox {req.bbox}")
                if req.bbox[0] < 0 or req.bbox[1] < 0 or req.bbox[2] > meta.width_px or req.bbox[3] > meta.height_px:
                    return _error(422, "bad_bbox", f"bbox {req.bbox} outside slide bounds")
                bbox = BBox(*req.bbox)
            if req.genus is not None and req.genus not in catalog:
                return _error(422, "bad_genus", f"unknown genus {req.genus!r}")

        with write_lock:
            try:
                current = index.get(slide_id, req.annotation_id)
            except KeyError:
                return _error(404, "unknown_annotation", f"no annotation {req.annotation_id!r}")
            if current.version != req.expected_version:
                return _error(
                    409,
                    "version_conflict",
                    f"expected version {req.expected_version}, record is at {current.version}",
                    current=annotation_to_dict(current),
                )
            decision = ReviewDecision(req.action, bbox=bbox, genus=req.genus)
            merge_review(index, [], {req.annotation_id: decision})
            updated = index.get(slide_id, req.annotation_id)
            index.save_annotations(slide_id)
            with open(audit_path, "a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {
                            "ts": time.time(),
                            "reviewer": req.reviewer,
                            "annotation_id": req.annotation_id,
                            "action": req.action,
                            "from_version": req.expected_version,
                            "to_version": updated.version,
                        }
                    )
                    + "\n"
                )
        return annotation_to_dict(updated)

    @app.post("/export")
    def export(req: ExportRequest):
        slide_ids = [req.slide_id] if req.slide_id else sorted(index.slides)
        unknown = [s for s in slide_ids if s not in index.slides]
        if unknown:
            return _error(404, "unknown_slide", f"no slide {unknown[0]!r}")
        with write_lock:
            index.save_annotations()
        lines = []
        for sid in slide_ids:
            lines.extend(format_annotation_line(a) for a in index.slide_annotations(sid))
        body = "\n".join(lines) + ("\n" if lines else "")
        return Response(
            content=body,
            media_type="text/plain; charset=utf-8",
            headers={"Content-Disposition": "attachment; filename=annotations.txt"},
        )

    app.state.index = index
    return app
