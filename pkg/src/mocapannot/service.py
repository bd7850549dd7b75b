"""Local HTTP service backing the browser annotation UI: serves frames and
bbox crops, persists click sets with optimistic concurrency, and builds
templates on demand.

All writes are atomic (temp file + rename); GET returns exactly the stored
bytes, so a PUT/GET round trip is byte-identical. Concurrent writers are
serialized per resource and detected via ETag/If-Match (409 on conflict).
"""
from __future__ import annotations

import hashlib
import io
import json
import threading
from collections import defaultdict
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Header, HTTPException, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel, field_validator

from . import fileio
from .annotation import KEYPOINT_NAMES, estimate_template
from .errors import ToolkitError
from .manifest import load_manifest


class AnnotationEntry(BaseModel):
    individual_id: str
    camera_id: str
    video_frame: int
    keypoint: str
    u: Optional[float] = None
    v: Optional[float] = None
    occluded: bool = False

    @field_validator("keypoint")
    @classmethod
    def keypoint_in_vocabulary(cls, value):
        if value not in KEYPOINT_NAMES:
            raise ValueError(
                f"unknown keypoint {value!r}; expected one of "
                f"{list(KEYPOINT_NAMES)}")
        return value


class CalibrationClick(BaseModel):
    marker_id: str
    u: float
    v: float


class CalibrationClickFrame(BaseModel):
    camera_id: str
    video_frame: int
    clicks: list[CalibrationClick]


def _etag(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def create_app(manifest_path) -> FastAPI:
    manifest = load_manifest(manifest_path)
    app = FastAPI(title="mocapannot service")
    locks = defaultdict(threading.Lock)

    def check_sequence(sequence_id: str):
        if sequence_id != manifest.sequence_id:
            raise HTTPException(404, f"unknown sequence {sequence_id!r}")

    def stored_resource(path: Path) -> Response:
        if not path.exists():
            raise HTTPException(404, f"no stored resource at {path.name}")
        blob = path.read_bytes()
        return Response(blob, media_type="application/json",
                        headers={"ETag": _etag(blob)})

    def store_resource(path: Path, blob: bytes,
                       if_match: str | None) -> Response:
        with locks[str(path)]:
            current = path.read_bytes() if path.exists() else None
            if if_match is not None:
                current_tag = _etag(current) if current is not None else None
                if if_match != current_tag:
                    raise HTTPException(
                        409, "resource changed since it was read")
            fileio.atomic_write_bytes(path, blob)
        return Response(status_code=204, headers={"ETag": _etag(blob)})

    @app.get("/sequences")
    def sequences():
        return [{
            "sequence_id": manifest.sequence_id,
            "cameras": manifest.camera_ids,
            "individuals": manifest.individual_ids,
            "n_video_frames": manifest.n_video_frames,
            "keypoints": list(KEYPOINT_NAMES),
        }]

    @app.get("/sequences/{sequence_id}/frames/{camera_id}/{frame}")
    def frame_image(sequence_id: str, camera_id: str, frame: int):
        check_sequence(sequence_id)
        if manifest.frames_dir is None:
            raise HTTPException(404, "sequence has no extracted frames")
        path = manifest.frames_dir / camera_id / f"{frame:06d}.png"
        if not path.exists():
            raise HTTPException(404, f"no frame {frame} for {camera_id}")
        return Response(path.read_bytes(), media_type="image/png")

    @app.get("/sequences/{sequence_id}/crops/{individual_id}"
             "/{camera_id}/{frame}")
    def crop_image(sequence_id: str, individual_id: str, camera_id: str,
                   frame: int):
        check_sequence(sequence_id)
        if manifest.frames_dir is None:
            raise HTTPException(404, "sequence has no extracted frames")
        frame_path = manifest.frames_dir / camera_id / f"{frame:06d}.png"
        boxes_path = manifest.outputs_dir / "boxes.csv"
        if not frame_path.exists() or not boxes_path.exists():
            raise HTTPException(404, "frame or box data missing")
        boxes = fileio.read_boxes_csv(boxes_path)
        box = boxes.get((frame, individual_id, camera_id))
        if box is None:
            raise HTTPException(
                404, f"no box for {individual_id} in {camera_id} at {frame}")
        from PIL import Image

        cam = fileio.read_calibration_json(
            manifest.calibration_path(camera_id))
        with Image.open(frame_path) as img:
            # Stored frames may be thumbnails; boxes live in calibrated
            # pixel coordinates, so scale them to the stored image.
            sx = img.width / cam.image_size[0]
            sy = img.height / cam.image_size[1]
            region = img.crop((int(box[0] * sx), int(box[1] * sy),
                               max(int(box[0] * sx) + 1, int(box[2] * sx)),
                               max(int(box[1] * sy) + 1, int(box[3] * sy))))
            buffer = io.BytesIO()
            region.save(buffer, format="PNG")
        return Response(buffer.getvalue(), media_type="image/png")

    @app.get("/annotations/{individual_id}")
    def get_annotations(individual_id: str):
        if individual_id not in manifest.individual_ids:
            raise HTTPException(404, f"unknown individual {individual_id!r}")
        return stored_resource(manifest.annotations_path(individual_id))

    @app.put("/annotations/{individual_id}")
    async def put_annotations(individual_id: str, request: Request,
                              if_match: str | None = Header(default=None)):
        if individual_id not in manifest.individual_ids:
            raise HTTPException(404, f"unknown individual {individual_id!r}")
        blob = await request.body()
        try:
            payload = json.loads(blob)
            entries = [AnnotationEntry.model_validate(e) for e in payload]
        except Exception as err:
            raise HTTPException(422, f"invalid annotation payload: {err}")
        seen = set()
        for e in entries:
            key = (e.individual_id, e.camera_id, e.video_frame, e.keypoint)
            if key in seen:
                raise HTTPException(
                    422, f"duplicate click for {key}")
            seen.add(key)
            if not e.occluded and (e.u is None or e.v is None):
                raise HTTPException(
                    422, f"visible click for {key} needs u and v")
        return store_resource(manifest.annotations_path(individual_id),
                              blob, if_match)

    @app.get("/calibration-clicks/{camera_id}")
    def get_calibration_clicks(camera_id: str):
        if camera_id not in manifest.camera_ids:
            raise HTTPException(404, f"unknown camera {camera_id!r}")
        return stored_resource(manifest.calibration_clicks_path(camera_id))

    @app.put("/calibration-clicks/{camera_id}")
    async def put_calibration_clicks(
            camera_id: str, request: Request,
            if_match: str | None = Header(default=None)):
        if camera_id not in manifest.camera_ids:
            raise HTTPException(404, f"unknown camera {camera_id!r}")
        blob = await request.body()
        try:
            payload = json.loads(blob)
            [CalibrationClickFrame.model_validate(e) for e in payload]
        except Exception as err:
            raise HTTPException(422, f"invalid calibration clicks: {err}")
        return store_resource(manifest.calibration_clicks_path(camera_id),
                              blob, if_match)

    @app.post("/template/{individual_id}/build")
    def build_template(individual_id: str):
        if individual_id not in manifest.individual_ids:
            raise HTTPException(404, f"unknown individual {individual_id!r}")
        clicks_path = manifest.annotations_path(individual_id)
        if not clicks_path.exists():
            raise HTTPException(404, "no annotations saved yet")
        if not manifest.tracks_path().exists():
            raise HTTPException(404, "no tracks yet; run the track command")
        try:
            clicks = fileio.read_annotations_json(clicks_path)
            bodies = fileio.read_bodies_json(manifest.bodies_path)
            cameras = manifest.load_cameras()
            clock = manifest.reference_clock()
            tracks = fileio.read_tracks_csv(manifest.tracks_path())
            by_id = {t.body_id: t for t in tracks}
            part_tracks = {
                body.part: by_id[body.body_id] for body in bodies
                if body.individual_id == individual_id}
            result = estimate_template(clicks, cameras, part_tracks, clock,
                                       individual_id=individual_id)
        except ToolkitError as err:
            return JSONResponse(
                {"error": {"code": err.code, "message": str(err)}},
                status_code=422)
        fileio.write_template_json(manifest.template_path(individual_id),
                                   result)
        payload = fileio.template_to_payload(result)
        spread_report = {
            name: entry["spread"]
            for name, entry in payload["keypoints"].items()}
        return {"template": payload, "spread_report": spread_report,
                "path": str(manifest.template_path(individual_id))}

    return app
