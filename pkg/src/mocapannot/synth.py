"""Synthetic ground-truth scene generator.

Builds a complete rig-scale recording: per-individual head/backpack marker
patterns with identity-bearing distance multisets, scripted smooth motion,
a 100 Hz marker stream, 30 Hz flash traces with a known clock offset,
calibrated 4K cameras, manual-click files, 2D detection files, and the true
keypoint templates. Everything derives deterministically from one seed.

Truth values (poses, projections) are computed with explicit matrix math
here, independent of the estimation paths they are used to validate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import fileio
from .annotation import (
    KEYPOINT_NAMES,
    KEYPOINT_PART,
    KeypointTemplate,
    ManualAnnotation,
)
from .geometry import CameraModel, RigidTransform
from .mocap import Marker, MarkerFrame, RigidBodyDef
from .qc import PredictionRecord
from .sync import ClockMap

BASE_KEYPOINT_OFFSETS = {
    "beak": (55.0, 0.0, -8.0),
    "nose": (38.0, 0.0, 4.0),
    "left_eye": (15.0, 16.0, 8.0),
    "right_eye": (15.0, -16.0, 8.0),
    "left_shoulder": (-15.0, 32.0, 8.0),
    "right_shoulder": (-15.0, -32.0, 8.0),
    "top_keel": (25.0, 0.0, -12.0),
    "bottom_keel": (48.0, 0.0, -42.0),
    "tail": (-78.0, 0.0, -2.0),
}

VIDEO_HZ = 30.0
MOCAP_HZ = 100.0
FLASH_PERIOD_VIDEO = 180        # video frames between onsets (6 s)
FLASH_ON_VIDEO = 30             # 1 s on-time
HEAD_LIFT_MM = 220.0            # keeps head/backpack clusters separable


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_individuals: int = 2
    n_cameras: int = 4
    n_video_frames: int = 1000
    clock_offset: float = 137.0          # mo-cap frames at video frame 0
    click_video_frames: tuple = (0, 30, 60, 90, 120)
    click_noise_px: float = 0.0
    calib_frames: int = 30
    calib_noise_px: float = 0.0
    prediction_noise_px: float = 2.0
    distortion: tuple = (-0.08, 0.02, 5e-4, -4e-4, 0.005)
    image_size: tuple = (3840, 2160)
    focal_px: float = 2600.0
    write_images: bool = False
    image_downscale: int = 16            # stored frame images are thumbnails


@dataclass
class SynthScene:
    config: SynthConfig
    cameras: dict                        # camera_id -> CameraModel
    bodies: list                         # RigidBodyDef x (2 per individual)
    templates: dict                      # individual -> KeypointTemplate
    marker_frames: list                  # MarkerFrame 100 Hz stream
    intensity: dict                      # camera_id -> np.ndarray
    mocap_counts: np.ndarray
    clock: ClockMap
    clicks: dict                         # individual -> [ManualAnnotation]
    calib_clicks: dict                   # camera_id -> clicks payload
    predictions: list                    # [PredictionRecord]
    individuals: list = field(default_factory=list)

    def mocap_frame(self, video_frame: int) -> int:
        return self.clock.map_frame(video_frame)

    def pose(self, mocap_frame: int, individual: str,
             part: str) -> RigidTransform:
        return _scripted_pose(mocap_frame,
                              self.individuals.index(individual), part)

    def keypoint_world(self, mocap_frame: int, individual: str,
                       keypoint: str) -> np.ndarray:
        pose = self.pose(mocap_frame, individual, KEYPOINT_PART[keypoint])
        offset = self.templates[individual].offsets[keypoint]
        return pose.rotation @ offset + pose.translation


def _rotz(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _roty(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@lru_cache(maxsize=100000)
def _scripted_pose(mocap_frame: int, individual_index: int,
                   part: str) -> RigidTransform:
    """Circular walk with per-individual radius/phase; the head adds yaw
    scanning, pitch bobbing, and a vertical bob on top of the body pose.
    Distinct radii keep marker clusters of different birds separable."""
    phase = 2.1 * individual_index
    radius = 600.0 + 400.0 * individual_index
    theta = 0.0025 * mocap_frame + phase
    body_pos = np.array([radius * math.cos(theta),
                         radius * math.sin(theta), 120.0])
    body_rot = _rotz(theta + math.pi / 2.0)
    if part == "backpack":
        return RigidTransform(body_rot, body_pos)
    scan = 0.5 * math.sin(0.011 * mocap_frame + phase)
    pitch = 0.2 * math.sin(0.027 * mocap_frame + phase)
    bob = 25.0 * math.sin(0.035 * mocap_frame + 1.3 * phase)
    rel_rot = _rotz(scan) @ _roty(pitch)
    rel_pos = np.array([25.0, 0.0, HEAD_LIFT_MM + bob])
    rot = body_rot @ rel_rot
    pos = body_rot @ rel_pos + body_pos
    return RigidTransform(rot, pos)


def _oracle_project(cam: CameraModel, point: np.ndarray) -> np.ndarray:
    """Explicit projection used only to synthesize truth pixels."""
    rot = cam.extrinsic.rotation
    tr = cam.extrinsic.translation
    xc = rot @ point + tr
    x, y = xc[0] / xc[2], xc[1] / xc[2]
    k1, k2, p1, p2, k3 = cam.distortion
    r2 = x * x + y * y
    radial = 1 + k1 * r2 + k2 * r2 ** 2 + k3 * r2 ** 3
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    fx, fy = cam.focal
    cx, cy = cam.principal_point
    return np.array([fx * xd + cx, fy * yd + cy])


def _look_at(eye: np.ndarray, target: np.ndarray) -> RigidTransform:
    forward = target - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rot_wc = np.stack([right, down, forward])
    return RigidTransform(rot_wc, -rot_wc @ eye)


def _sample_pattern(rng, span: float, min_gap: float = 4.0,
                    existing=()) -> np.ndarray:
    """Centered 4-marker pattern whose six pairwise distances are mutually
    distinct by ``min_gap`` and whose multiset is far from ``existing``."""
    for _ in range(10000):
        pts = rng.uniform(0.0, span, (4, 3))
        iu = np.triu_indices(4, k=1)
        dists = np.sort(np.linalg.norm(pts[iu[0]] - pts[iu[1]], axis=1))
        if dists[0] < 0.4 * span:
            continue
        if np.min(np.diff(dists)) < min_gap:
            continue
        if any(np.linalg.norm(dists - other) < 8.0 for other in existing):
            continue
        return pts - pts.mean(axis=0)
    raise RuntimeError("marker pattern sampling failed")


def generate_scene(config: SynthConfig) -> SynthScene:
    rng = np.random.default_rng(config.seed)
    individuals = [f"bird{i}" for i in range(config.n_individuals)]

    # Cameras at the corners of the 3.6 x 4.2 m area.
    corners = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    cameras = {}
    for i in range(config.n_cameras):
        sx, sy = corners[i % 4]
        jitter = 150.0 * (i // 4)
        eye = np.array([sx * (2400.0 + jitter), sy * (2100.0 + jitter),
                        1600.0 + 40.0 * i])
        cameras[f"cam{i}"] = CameraModel(
            focal=(config.focal_px, config.focal_px),
            principal_point=(config.image_size[0] / 2.0,
                             config.image_size[1] / 2.0),
            distortion=np.array(config.distortion, dtype=float),
            extrinsic=_look_at(eye, np.array([0.0, 0.0, 200.0])),
            image_size=config.image_size)

    # Rigid bodies: one head and one backpack pattern per individual, all
    # with mutually distant distance multisets.
    bodies = []
    templates = {}
    multisets = []
    for ind_index, individual in enumerate(individuals):
        for part, span in (("head", 60.0), ("backpack", 95.0)):
            pattern = _sample_pattern(rng, span, existing=multisets)
            iu = np.triu_indices(4, k=1)
            multisets.append(np.sort(np.linalg.norm(
                pattern[iu[0]] - pattern[iu[1]], axis=1)))
            marker_ids = [f"{individual}_{part}_m{j}" for j in range(4)]
            bodies.append(RigidBodyDef(
                body_id=f"{individual}_{part}", part=part,
                individual_id=individual,
                marker_template=dict(zip(marker_ids, pattern))))
        offsets = {}
        for keypoint, base in BASE_KEYPOINT_OFFSETS.items():
            offsets[keypoint] = np.array(base) + rng.uniform(-3.0, 3.0, 3)
        templates[individual] = KeypointTemplate(
            individual, offsets, {k: 0 for k in offsets},
            {k: None for k in offsets})

    # 100 Hz marker stream covering every mapped video frame.
    clock = ClockMap(config.clock_offset, MOCAP_HZ / VIDEO_HZ, 0.0,
                     VIDEO_HZ, MOCAP_HZ)
    n_mocap = clock.map_frame(config.n_video_frames) + 200
    marker_frames = []
    for m in range(n_mocap):
        markers = []
        for body in bodies:
            ind_index = individuals.index(body.individual_id)
            pose = _scripted_pose(m, ind_index, body.part)
            for marker_id, local in body.marker_template.items():
                markers.append(Marker(
                    marker_id, pose.rotation @ local + pose.translation))
        marker_frames.append(MarkerFrame(m, markers))

    # Flash traces. Flash k starts at video frame 30 + 180k (a rising edge
    # needs a dark frame before it), i.e. mo-cap frame 100 + 600k + offset;
    # both land on integer frames since 30 | 180k are multiples of 3.
    intensity = {}
    n_video = config.n_video_frames
    base_trace = np.full(n_video, 10.0)
    for k in range(0, n_video // FLASH_PERIOD_VIDEO + 1):
        onset = 30 + k * FLASH_PERIOD_VIDEO
        if onset < n_video:
            base_trace[onset:onset + FLASH_ON_VIDEO] = 55.0
    for camera_id in cameras:
        intensity[camera_id] = base_trace.copy()
    mocap_counts = np.full(n_mocap, 4, dtype=int)
    for k in range(0, n_video // FLASH_PERIOD_VIDEO + 1):
        if 30 + k * FLASH_PERIOD_VIDEO >= n_video:
            continue
        onset = int(100 + 600 * k + config.clock_offset)
        if onset < n_mocap:
            mocap_counts[onset:onset + 100] = 6

    # Manual keypoint clicks: every keypoint, every camera, a few frames.
    clicks = {}
    for individual in individuals:
        entries = []
        for video_frame in config.click_video_frames:
            mframe = clock.map_frame(video_frame)
            for keypoint in KEYPOINT_NAMES:
                ind_index = individuals.index(individual)
                pose = _scripted_pose(mframe, ind_index,
                                      KEYPOINT_PART[keypoint])
                world = pose.rotation @ templates[individual].offsets[
                    keypoint] + pose.translation
                for camera_id, cam in cameras.items():
                    pixel = _oracle_project(cam, world)
                    if config.click_noise_px:
                        pixel = pixel + rng.normal(
                            0, config.click_noise_px, 2)
                    entries.append(ManualAnnotation(
                        individual, camera_id, video_frame, keypoint, pixel))
        clicks[individual] = entries

    # Calibration clicks: the first individual's head and backpack markers
    # across well-spread frames (head height gives the vertical coverage a
    # walking bird's backpack alone lacks).
    calib_bodies = [b for b in bodies if b.individual_id == individuals[0]]
    calib_clicks = {}
    stride = max(1, (config.n_video_frames - 1) // config.calib_frames)
    calib_video_frames = [i * stride for i in range(config.calib_frames)]
    for camera_id, cam in cameras.items():
        payload = []
        for video_frame in calib_video_frames:
            mframe = clock.map_frame(video_frame)
            entry = {"camera_id": camera_id, "video_frame": video_frame,
                     "clicks": []}
            for body in calib_bodies:
                pose = _scripted_pose(mframe, 0, body.part)
                for marker_id, local in body.marker_template.items():
                    world = pose.rotation @ local + pose.translation
                    pixel = _oracle_project(cam, world)
                    if config.calib_noise_px:
                        pixel = pixel + rng.normal(
                            0, config.calib_noise_px, 2)
                    entry["clicks"].append({"marker_id": marker_id,
                                            "u": float(pixel[0]),
                                            "v": float(pixel[1])})
            payload.append(entry)
        calib_clicks[camera_id] = payload

    # 2D detections for every video frame (the markerless model stand-in).
    predictions = []
    for video_frame in range(config.n_video_frames):
        mframe = clock.map_frame(video_frame)
        for ind_index, individual in enumerate(individuals):
            for keypoint in KEYPOINT_NAMES:
                pose = _scripted_pose(mframe, ind_index,
                                      KEYPOINT_PART[keypoint])
                world = pose.rotation @ templates[individual].offsets[
                    keypoint] + pose.translation
                for camera_id, cam in cameras.items():
                    pixel = _oracle_project(cam, world)
                    if config.prediction_noise_px:
                        pixel = pixel + rng.normal(
                            0, config.prediction_noise_px, 2)
                    predictions.append(PredictionRecord(
                        video_frame, individual, camera_id, keypoint,
                        pixel, 0.9))

    return SynthScene(config, cameras, bodies, templates, marker_frames,
                      intensity, mocap_counts, clock, clicks, calib_clicks,
                      predictions, individuals)


def write_scene(scene: SynthScene, outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    config = scene.config

    fileio.write_markers_csv(outdir / "markers.csv", scene.marker_frames)
    fileio.write_bodies_json(outdir / "bodies.json", scene.bodies)
    for camera_id, cam in scene.cameras.items():
        fileio.write_calibration_json(
            outdir / "calibration" / f"{camera_id}.json", cam)
    for camera_id, trace in scene.intensity.items():
        fileio.write_trace_csv(
            outdir / "traces" / f"{camera_id}_intensity.csv", trace,
            "intensity")
    fileio.write_trace_csv(outdir / "traces" / "mocap_counts.csv",
                           scene.mocap_counts, "count")
    for individual, entries in scene.clicks.items():
        fileio.write_annotations_json(
            outdir / "clicks" / f"annotations_{individual}.json", entries)
    for camera_id, payload in scene.calib_clicks.items():
        fileio.write_calibration_clicks_json(
            outdir / "clicks" / f"calibration_{camera_id}.json", payload)
    fileio.write_predictions_csv(outdir / "predictions.csv",
                                 scene.predictions)
    for individual, template in scene.templates.items():
        fileio.write_template_json(
            outdir / "truth" / f"template_{individual}.json", template)
    fileio.write_clocks_json(outdir / "truth" / "clock.json",
                             {camera_id: scene.clock
                              for camera_id in scene.cameras})
    (outdir / "outputs").mkdir(exist_ok=True)

    manifest = {
        "sequence_id": f"synth-{config.seed}",
        "seed": config.seed,
        "n_video_frames": config.n_video_frames,
        "rates": {"mocap_hz": MOCAP_HZ, "video_hz": VIDEO_HZ},
        "cameras": {"ids": sorted(scene.cameras)},
        "individuals": {"ids": list(scene.individuals)},
        "paths": {
            "markers": "markers.csv",
            "bodies": "bodies.json",
            "calibration_dir": "calibration",
            "traces_dir": "traces",
            "clicks_dir": "clicks",
            "predictions": "predictions.csv",
            "outputs_dir": "outputs",
        },
    }
    if config.write_images:
        _write_frame_images(scene, outdir / "frames")
        manifest["paths"]["frames_dir"] = "frames"
    fileio.write_toml(outdir / "manifest.toml", manifest)
    return outdir / "manifest.toml"


def _write_frame_images(scene: SynthScene, frames_dir: Path):
    """Thumbnail frames with bright dots at true keypoint pixels: enough for
    the annotation UI and crop endpoints to have real content."""
    from PIL import Image

    config = scene.config
    scale = config.image_downscale
    width = config.image_size[0] // scale
    height = config.image_size[1] // scale
    for camera_id, cam in scene.cameras.items():
        cam_dir = frames_dir / camera_id
        cam_dir.mkdir(parents=True, exist_ok=True)
        for video_frame in range(min(config.n_video_frames, 150)):
            mframe = scene.mocap_frame(video_frame)
            canvas = np.full((height, width), 32, dtype=np.uint8)
            for individual in scene.individuals:
                for keypoint in KEYPOINT_NAMES:
                    world = scene.keypoint_world(mframe, individual,
                                                 keypoint)
                    pixel = _oracle_project(cam, world) / scale
                    px, py = int(round(pixel[0])), int(round(pixel[1]))
                    if 0 <= px < width and 0 <= py < height:
                        canvas[py, px] = 255
            Image.fromarray(canvas).save(cam_dir / f"{video_frame:06d}.png")
