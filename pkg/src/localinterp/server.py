"""HTTP API for browser annotation: serve images, snap polylines to edges,
and persist annotation records.

Binds to loopback by default (see the annotate-serve command). Annotation
writes are serialized per image id; each successful write bumps a version
counter that is echoed back so a client can detect concurrent edits."""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from .edgemap import EdgeParams, compute_edge_map, snap_polyline
from .errors import FormatError, InvalidArgument, LocalInterpError
from .formats import AnnotationRecord, canonical_dumps, load_annotation, load_image
from .schema import ModelSchema

STATIC_DIR = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"


def _schema_payload(schema: ModelSchema) -> dict:
    return {
        "class_name": schema.class_name,
        "relation_tier": schema.relation_tier,
        "slots": [
            {"slot_id": s.slot_id, "name": s.name, "primitive_type": s.primitive_type}
            for s in schema.slots
        ],
    }


def _error(status: int, kind: str, detail: str) -> JSONResponse:
    return JSONResponse({"error": kind, "detail": detail}, status_code=status)


def create_app(data_dir: Path, schema: ModelSchema, edge_params: EdgeParams = EdgeParams()) -> FastAPI:
    app = FastAPI(title="localinterp annotator", docs_url=None, redoc_url=None)
    images_dir = data_dir / "images"
    annotations_dir = data_dir / "annotations"
    annotations_dir.mkdir(parents=True, exist_ok=True)

    write_lock = threading.Lock()
    per_image_locks: dict[str, threading.Lock] = {}
    versions: dict[str, int] = {}

    def image_lock(image_id: str) -> threading.Lock:
        with write_lock:
            return per_image_locks.setdefault(image_id, threading.Lock())

    def image_path(image_id: str) -> Path | None:
        if "/" in image_id or "\\" in image_id or image_id in ("", ".", ".."):
            return None
        p = images_dir / f"{image_id}.png"
        return p if p.exists() else None

    @app.exception_handler(LocalInterpError)
    async def _domain_error(_req: Request, exc: LocalInterpError):
        return _error(422, type(exc).__name__, str(exc))

    @app.get("/api/schema")
    def get_schema():
        return _schema_payload(schema)

    @app.get("/api/images")
    def list_images():
        pending = []
        for p in sorted(images_dir.glob("*.png")):
            if not (annotations_dir / f"{p.stem}.json").exists():
                pending.append(p.stem)
        return {"pending": pending}

    @app.get("/api/image/{image_id}")
    def get_image(image_id: str):
        p = image_path(image_id)
        if p is None:
            return _error(404, "not-found", f"no image {image_id!r}")
        return FileResponse(p, media_type="image/png")

    @app.post("/api/refine")
    async def refine(request: Request):
        body = await request.json()
        image_id = body.get("image_id")
        polyline = body.get("polyline")
        if not isinstance(image_id, str) or not isinstance(polyline, list):
            return _error(400, "bad-request", "need image_id and polyline")
        p = image_path(image_id)
        if p is None:
            return _error(404, "not-found", f"no image {image_id!r}")
        image = load_image(p, image_id=image_id)
        edges = compute_edge_map(image, edge_params)
        try:
            # API coordinates are normalized; the snapper works in pixels
            pixel_pts = [
                (float(x) * image.width, float(y) * image.height) for x, y in polyline
            ]
            refined, snapped = snap_polyline(edges, pixel_pts)
        except (InvalidArgument, ValueError, TypeError) as e:
            return _error(400, "bad-polyline", str(e))
        return {
            "polyline": [[x / image.width, y / image.height] for x, y in refined],
            "snapped": snapped,
        }

    @app.post("/api/annotation")
    async def post_annotation(request: Request):
        body = await request.json()
        try:
            record = AnnotationRecord.from_dict(body)
        except (FormatError, KeyError, TypeError, ValueError) as e:
            return _error(400, "bad-annotation", str(e))
        if record.schema_name != schema.class_name:
            return _error(400, "schema-mismatch", f"server schema is {schema.class_name!r}")
        try:
            record.validate(schema)
        except InvalidArgument as e:
            return _error(400, "invalid-annotation", str(e))
        if image_path(record.image_id) is None:
            return _error(404, "not-found", f"no image {record.image_id!r}")
        with image_lock(record.image_id):
            version = versions.get(record.image_id, 0) + 1
            versions[record.image_id] = version
            (annotations_dir / f"{record.image_id}.json").write_text(
                canonical_dumps(record.to_dict())
            )
        return {"ok": True, "version": version}

    @app.get("/api/annotation/{image_id}")
    def get_annotation(image_id: str):
        p = annotations_dir / f"{image_id}.json"
        if "/" in image_id or "\\" in image_id or not p.exists():
            return _error(404, "not-found", f"no annotation for {image_id!r}")
        return JSONResponse(load_annotation(p).to_dict())

    if STATIC_DIR.is_dir():
        app.mount("/", StaticFiles(directory=STATIC_DIR, html=True), name="static")
    else:

        @app.get("/")
        def index():
            return Response("annotator UI not built", media_type="text/plain")

    return app
