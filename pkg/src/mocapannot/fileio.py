"""Readers and writers for every file format the pipeline exchanges.

Floats are serialized with ``repr`` (shortest round-trip form), so every
writer/reader pair is lossless and repeated runs produce byte-identical
artifacts. All write functions go through an atomic temp-file rename.
"""
from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .annotation import KEYPOINT_NAMES, KeypointTemplate, ManualAnnotation
from .calibration import ExtrinsicObservation
from .geometry import CameraIntrinsics, CameraModel, RigidTransform
from .hybrid import KeypointSeries
from .mocap import BodyTrack, Marker, MarkerFrame, RigidBodyDef
from .qc import PredictionRecord
from .sync import ClockMap

try:
    import tomllib
except ModuleNotFoundError:                      # Python 3.10
    import tomli as tomllib


def _fmt(value) -> str:
    return repr(float(value))


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.",
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, blob: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.",
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --- marker CSV: frame,marker_id,x,y,z,valid --------------------------------

def write_markers_csv(path, frames):
    lines = ["frame,marker_id,x,y,z,valid"]
    for frame in frames:
        for m in frame.markers:
            if m.valid and m.position is not None:
                x, y, z = (_fmt(v) for v in m.position)
                lines.append(f"{frame.frame_index},{m.marker_id},"
                             f"{x},{y},{z},1")
            else:
                lines.append(f"{frame.frame_index},{m.marker_id},,,,0")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_markers_csv(path):
    by_frame = {}
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            frame_index = int(row["frame"])
            valid = row["valid"] == "1"
            position = (np.array([float(row["x"]), float(row["y"]),
                                  float(row["z"])]) if valid else None)
            by_frame.setdefault(frame_index, []).append(
                Marker(row["marker_id"], position, valid))
    return [MarkerFrame(i, by_frame[i]) for i in sorted(by_frame)]


# --- rigid body defs JSON ----------------------------------------------------

def write_bodies_json(path, defs):
    payload = [{
        "body_id": d.body_id,
        "part": d.part,
        "individual_id": d.individual_id,
        "markers": {mid: [float(v) for v in pos]
                    for mid, pos in d.marker_template.items()},
    } for d in defs]
    atomic_write_text(path, canonical_json(payload))


def read_bodies_json(path):
    with open(path) as handle:
        payload = json.load(handle)
    return [RigidBodyDef(entry["body_id"], entry["part"],
                         entry["individual_id"], entry["markers"])
            for entry in payload]


# --- camera calibration JSON (one document per camera) -----------------------

def write_calibration_json(path, cam: CameraModel):
    payload = {
        "image_size": list(cam.image_size),
        "fx": cam.focal[0], "fy": cam.focal[1],
        "cx": cam.principal_point[0], "cy": cam.principal_point[1],
        "k1": float(cam.distortion[0]), "k2": float(cam.distortion[1]),
        "p1": float(cam.distortion[2]), "p2": float(cam.distortion[3]),
        "k3": float(cam.distortion[4]),
        "extrinsic": [[float(v) for v in row]
                      for row in cam.extrinsic.to_matrix()],
    }
    atomic_write_text(path, canonical_json(payload))


def read_calibration_json(path) -> CameraModel:
    with open(path) as handle:
        payload = json.load(handle)
    return CameraModel(
        focal=(payload["fx"], payload["fy"]),
        principal_point=(payload["cx"], payload["cy"]),
        distortion=np.array([payload[k] for k in
                             ("k1", "k2", "p1", "p2", "k3")]),
        extrinsic=RigidTransform.from_matrix(payload["extrinsic"]),
        image_size=tuple(payload["image_size"]),
    )


def read_intrinsics_json(path) -> CameraIntrinsics:
    cam = read_calibration_json(path)
    return cam.intrinsics


# --- intensity / marker-count traces -----------------------------------------

def write_trace_csv(path, values, column: str):
    lines = [f"frame,{column}"]
    for i, v in enumerate(values):
        lines.append(f"{i},{_fmt(v) if column == 'intensity' else int(v)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_trace_csv(path, column: str) -> np.ndarray:
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        rows = [(int(r["frame"]), float(r[column])) for r in reader]
    rows.sort()
    return np.array([v for _, v in rows])


# --- calibration clicks JSON --------------------------------------------------

def write_calibration_clicks_json(path, observations):
    payload = [{
        "camera_id": o["camera_id"],
        "video_frame": int(o["video_frame"]),
        "clicks": [{"marker_id": c["marker_id"], "u": float(c["u"]),
                    "v": float(c["v"])} for c in o["clicks"]],
    } for o in observations]
    atomic_write_text(path, canonical_json(payload))


def read_calibration_clicks_json(path):
    with open(path) as handle:
        return json.load(handle)


# --- manual annotation clicks JSON --------------------------------------------

def annotations_to_payload(annotations) -> list:
    payload = []
    for a in annotations:
        entry = {
            "individual_id": a.individual_id,
            "camera_id": a.camera_id,
            "video_frame": int(a.video_frame),
            "keypoint": a.keypoint,
            "occluded": bool(a.occluded),
            "u": None if a.pixel is None else float(a.pixel[0]),
            "v": None if a.pixel is None else float(a.pixel[1]),
        }
        payload.append(entry)
    return payload


def payload_to_annotations(payload) -> list:
    out = []
    for entry in payload:
        pixel = None if entry["u"] is None else \
            np.array([entry["u"], entry["v"]])
        out.append(ManualAnnotation(entry["individual_id"],
                                    entry["camera_id"],
                                    int(entry["video_frame"]),
                                    entry["keypoint"], pixel,
                                    bool(entry["occluded"])))
    return out


def write_annotations_json(path, annotations):
    atomic_write_text(path, canonical_json(annotations_to_payload(annotations)))


def read_annotations_json(path):
    with open(path) as handle:
        return payload_to_annotations(json.load(handle))


# --- keypoint template JSON ----------------------------------------------------

def template_to_payload(template: KeypointTemplate) -> dict:
    keypoints = {}
    for name in KEYPOINT_NAMES:
        if name not in template.offsets:
            continue
        spread = template.spreads.get(name)
        keypoints[name] = {
            "offset": [float(v) for v in template.offsets[name]],
            "n": int(template.sample_counts[name]),
            "spread": None if spread is None else [float(v) for v in spread],
        }
    return {"individual_id": template.individual_id, "keypoints": keypoints}


def payload_to_template(payload) -> KeypointTemplate:
    offsets, counts, spreads = {}, {}, {}
    for name, entry in payload["keypoints"].items():
        offsets[name] = np.array(entry["offset"], dtype=float)
        counts[name] = int(entry["n"])
        spreads[name] = (None if entry["spread"] is None
                         else np.array(entry["spread"], dtype=float))
    return KeypointTemplate(payload["individual_id"], offsets, counts,
                            spreads)


def write_template_json(path, template: KeypointTemplate):
    atomic_write_text(path, canonical_json(template_to_payload(template)))


def read_template_json(path) -> KeypointTemplate:
    with open(path) as handle:
        return payload_to_template(json.load(handle))


# --- body tracks CSV -----------------------------------------------------------

_TRACK_HEADER = ("body,frame,valid,residual,"
                 "r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz")


def write_tracks_csv(path, tracks):
    lines = [_TRACK_HEADER]
    for track in tracks:
        for i, frame in enumerate(track.frames):
            rot = track.rotations[i].ravel()
            tr = track.translations[i]
            residual = track.residuals[i]
            cells = [track.body_id, str(int(frame)),
                     "1" if track.valid[i] else "0",
                     "" if np.isnan(residual) else _fmt(residual)]
            cells += [_fmt(v) for v in rot] + [_fmt(v) for v in tr]
            lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_tracks_csv(path):
    rows_by_body = {}
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            rows_by_body.setdefault(row["body"], []).append(row)
    tracks = []
    for body_id in sorted(rows_by_body):
        rows = sorted(rows_by_body[body_id], key=lambda r: int(r["frame"]))
        n = len(rows)
        frames = np.array([int(r["frame"]) for r in rows])
        rotations = np.empty((n, 3, 3))
        translations = np.empty((n, 3))
        residuals = np.full(n, np.nan)
        valid = np.zeros(n, dtype=bool)
        for i, row in enumerate(rows):
            rotations[i] = np.array(
                [float(row[f"r{a}{b}"]) for a in range(3) for b in range(3)]
            ).reshape(3, 3)
            translations[i] = [float(row["tx"]), float(row["ty"]),
                               float(row["tz"])]
            if row["residual"]:
                residuals[i] = float(row["residual"])
            valid[i] = row["valid"] == "1"
        tracks.append(BodyTrack(body_id, frames, rotations, translations,
                                residuals, valid))
    return tracks


# --- annotation outputs ---------------------------------------------------------

def write_annotations_2d_csv(path, frames, camera_id):
    """One CSV per camera: frame,individual,keypoint,u,v,visible."""
    lines = ["frame,individual,keypoint,u,v,visible"]
    for frame in frames:
        for ind_id in sorted(frame.individuals):
            ann = frame.individuals[ind_id]
            if not ann.valid:
                continue
            view = ann.views.get(camera_id)
            if view is None:
                continue
            for keypoint in KEYPOINT_NAMES:
                if keypoint not in view.pixels:
                    continue
                pixel = view.pixels[keypoint]
                u = "" if pixel is None else _fmt(pixel[0])
                v = "" if pixel is None else _fmt(pixel[1])
                flag = "1" if view.visible[keypoint] else "0"
                lines.append(f"{frame.video_frame},{ind_id},{keypoint},"
                             f"{u},{v},{flag}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_annotations_2d_csv(path, camera_id) -> list:
    records = []
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            if not row["u"]:
                continue
            records.append(PredictionRecord(
                int(row["frame"]), row["individual"], camera_id,
                row["keypoint"], np.array([float(row["u"]),
                                           float(row["v"])]),
                1.0))
    return records


def write_annotations_3d_csv(path, frames):
    lines = ["frame,individual,keypoint,x,y,z,valid"]
    for frame in frames:
        for ind_id in sorted(frame.individuals):
            ann = frame.individuals[ind_id]
            for keypoint in KEYPOINT_NAMES:
                if ann.valid and keypoint in ann.keypoints3d:
                    x, y, z = (_fmt(v) for v in ann.keypoints3d[keypoint])
                    lines.append(f"{frame.video_frame},{ind_id},{keypoint},"
                                 f"{x},{y},{z},1")
                else:
                    lines.append(f"{frame.video_frame},{ind_id},{keypoint},"
                                 f",,,0")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_annotations_3d_csv(path) -> dict:
    """Returns {individual_id: KeypointSeries} on the video-frame grid."""
    rows = []
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            rows.append(row)
    individuals = sorted({r["individual"] for r in rows})
    series = {}
    for ind in individuals:
        ind_rows = [r for r in rows if r["individual"] == ind]
        frames = sorted({int(r["frame"]) for r in ind_rows})
        index = {f: i for i, f in enumerate(frames)}
        keypoints = sorted({r["keypoint"] for r in ind_rows})
        positions = {k: np.full((len(frames), 3), np.nan) for k in keypoints}
        valid = np.zeros(len(frames), dtype=bool)
        for r in ind_rows:
            if r["valid"] == "1":
                i = index[int(r["frame"])]
                positions[r["keypoint"]][i] = [float(r["x"]), float(r["y"]),
                                               float(r["z"])]
                valid[i] = True
        series[ind] = KeypointSeries(np.array(frames), positions, valid)
    return series


def write_boxes_csv(path, frames):
    lines = ["frame,individual,camera,x_min,y_min,x_max,y_max"]
    for frame in frames:
        for ind_id in sorted(frame.individuals):
            ann = frame.individuals[ind_id]
            if not ann.valid:
                continue
            for camera_id in sorted(ann.views):
                box = ann.views[camera_id].box
                if box is None:
                    continue
                cells = ",".join(_fmt(v) for v in box)
                lines.append(f"{frame.video_frame},{ind_id},{camera_id},"
                             f"{cells}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_boxes_csv(path) -> dict:
    """Returns {(frame, individual, camera): (x_min, y_min, x_max, y_max)}."""
    boxes = {}
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            key = (int(row["frame"]), row["individual"], row["camera"])
            boxes[key] = tuple(float(row[k]) for k in
                               ("x_min", "y_min", "x_max", "y_max"))
    return boxes


# --- prediction CSV --------------------------------------------------------------

def write_predictions_csv(path, records):
    lines = ["frame,individual,camera,keypoint,u,v,confidence"]
    for r in records:
        lines.append(f"{r.video_frame},{r.individual_id},{r.camera_id},"
                     f"{r.keypoint},{_fmt(r.pixel[0])},{_fmt(r.pixel[1])},"
                     f"{_fmt(r.confidence)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_predictions_csv(path) -> list:
    records = []
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            records.append(PredictionRecord(
                int(row["frame"]), row["individual"], row["camera"],
                row["keypoint"],
                np.array([float(row["u"]), float(row["v"])]),
                float(row["confidence"])))
    return records


# --- repair log -------------------------------------------------------------------

def write_repair_log(path, entries):
    lines = ["frame,permutation"]
    lines += [f"{e.frame_index},{e.label}" for e in entries]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_repair_log(path) -> list:
    with open(path) as handle:
        rows = handle.read().splitlines()[1:]
    return [(int(r.split(",", 1)[0]), r.split(",", 1)[1]) for r in rows if r]


# --- training-crop flags CSV ----------------------------------------------------------

def write_crop_flags_csv(path, rows):
    """rows: iterable of (frame, individual, camera, include bool)."""
    lines = ["frame,individual,camera,include"]
    lines += [f"{frame},{ind},{cam},{1 if keep else 0}"
              for frame, ind, cam, keep in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_crop_flags_csv(path) -> dict:
    flags = {}
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            key = (int(row["frame"]), row["individual"], row["camera"])
            flags[key] = row["include"] == "1"
    return flags


# --- clock maps JSON ----------------------------------------------------------------

def write_clocks_json(path, clocks: dict):
    payload = {camera_id: {
        "offset": c.offset, "rate": c.rate,
        "residual_rms": c.residual_rms,
        "video_hz": c.video_hz, "mocap_hz": c.mocap_hz,
    } for camera_id, c in clocks.items()}
    atomic_write_text(path, canonical_json(payload))


def read_clocks_json(path) -> dict:
    with open(path) as handle:
        payload = json.load(handle)
    return {camera_id: ClockMap(**entry)
            for camera_id, entry in payload.items()}


# --- observation assembly -----------------------------------------------------------

def clicks_to_observations(clicks_payload, marker_frames, clock) -> list:
    """Join calibration clicks with synchronized 3D marker positions."""
    frames_by_index = {f.frame_index: f for f in marker_frames}
    observations = []
    for obs in clicks_payload:
        video_frame = int(obs["video_frame"])
        mocap_frame = clock.map_frame(video_frame)
        frame = frames_by_index.get(mocap_frame)
        if frame is None:
            continue
        positions = frame.valid_positions()
        marker_ids, pixels, world = [], [], []
        for click in obs["clicks"]:
            pos = positions.get(click["marker_id"])
            if pos is None:
                continue
            marker_ids.append(click["marker_id"])
            pixels.append([click["u"], click["v"]])
            world.append(pos)
        if marker_ids:
            observations.append(ExtrinsicObservation(
                obs["camera_id"], video_frame, marker_ids,
                np.array(pixels), np.array(world)))
    return observations


# --- TOML (manifest, experiment configs) ----------------------------------------------

def read_toml(path) -> dict:
    with open(path, "rb") as handle:
        return tomllib.load(handle)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _fmt(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value)} to TOML")


def write_toml(path, document: dict):
    """Minimal TOML emitter for flat sections of scalars/lists (all the
    manifest needs); nested dicts become [section] tables."""
    lines = []
    scalars = {k: v for k, v in document.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in document.items() if isinstance(v, dict)}
    for key, value in scalars.items():
        lines.append(f"{key} = {_toml_value(value)}")
    for name, table in tables.items():
        lines.append("")
        lines.append(f"[{name}]")
        for key, value in table.items():
            if isinstance(value, dict):
                raise TypeError("write_toml supports one nesting level")
            lines.append(f"{key} = {_toml_value(value)}")
    atomic_write_text(path, "\n".join(lines) + "\n")
