"""Sequence manifest: one TOML document per recording session tying together
marker data, calibration, traces, clicks, and output locations.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import fileio
from .errors import ManifestError


@dataclass
class SequenceManifest:
    sequence_id: str
    root: Path
    seed: int
    mocap_hz: float
    video_hz: float
    camera_ids: list
    individual_ids: list
    n_video_frames: int
    markers_path: Path
    bodies_path: Path
    calibration_dir: Path
    traces_dir: Path
    clicks_dir: Path
    outputs_dir: Path
    predictions_path: Path | None = None
    frames_dir: Path | None = None
    clock_path: Path | None = None

    def calibration_path(self, camera_id: str) -> Path:
        return self.calibration_dir / f"{camera_id}.json"

    def intensity_path(self, camera_id: str) -> Path:
        return self.traces_dir / f"{camera_id}_intensity.csv"

    def counts_path(self) -> Path:
        return self.traces_dir / "mocap_counts.csv"

    def annotations_path(self, individual_id: str) -> Path:
        return self.clicks_dir / f"annotations_{individual_id}.json"

    def calibration_clicks_path(self, camera_id: str) -> Path:
        return self.clicks_dir / f"calibration_{camera_id}.json"

    def template_path(self, individual_id: str) -> Path:
        return self.outputs_dir / f"template_{individual_id}.json"

    def tracks_path(self) -> Path:
        return self.outputs_dir / "tracks.csv"

    def load_cameras(self) -> dict:
        return {cid: fileio.read_calibration_json(self.calibration_path(cid))
                for cid in self.camera_ids}

    def load_clocks(self) -> dict:
        if self.clock_path is None or not self.clock_path.exists():
            raise ManifestError(
                "no clock map yet; run the sync subcommand first")
        return fileio.read_clocks_json(self.clock_path)

    def reference_clock(self):
        """Cameras share shutters via control boxes, so propagation uses the
        first camera's clock; the rest exist for verification."""
        clocks = self.load_clocks()
        return clocks[self.camera_ids[0]]


def load_manifest(path) -> SequenceManifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    doc = fileio.read_toml(path)
    root = path.parent
    try:
        rates = doc["rates"]
        paths = doc["paths"]
        manifest = SequenceManifest(
            sequence_id=doc["sequence_id"],
            root=root,
            seed=int(doc.get("seed", 0)),
            mocap_hz=float(rates["mocap_hz"]),
            video_hz=float(rates["video_hz"]),
            camera_ids=list(doc["cameras"]["ids"]),
            individual_ids=list(doc["individuals"]["ids"]),
            n_video_frames=int(doc.get("n_video_frames", 0)),
            markers_path=root / paths["markers"],
            bodies_path=root / paths["bodies"],
            calibration_dir=root / paths["calibration_dir"],
            traces_dir=root / paths["traces_dir"],
            clicks_dir=root / paths["clicks_dir"],
            outputs_dir=root / paths["outputs_dir"],
        )
    except KeyError as missing:
        raise ManifestError(f"manifest missing required key {missing}")
    if manifest.mocap_hz <= 0 or manifest.video_hz <= 0:
        raise ManifestError("frame rates must be positive")
    if "predictions" in doc["paths"]:
        manifest.predictions_path = root / doc["paths"]["predictions"]
    if "frames_dir" in doc["paths"]:
        manifest.frames_dir = root / doc["paths"]["frames_dir"]
    manifest.clock_path = root / doc["paths"].get("clock",
                                                  "outputs/clock.json")

    required = [manifest.markers_path, manifest.bodies_path,
                manifest.calibration_dir, manifest.traces_dir]
    if manifest.predictions_path is not None:
        required.append(manifest.predictions_path)
    if manifest.frames_dir is not None:
        required.append(manifest.frames_dir)
    missing = [str(p) for p in required if not p.exists()]
    if missing:
        raise ManifestError(f"manifest references missing paths: {missing}")
    for camera_id in manifest.camera_ids:
        if not manifest.calibration_path(camera_id).exists():
            raise ManifestError(
                f"no calibration file for camera {camera_id!r}")
    manifest.outputs_dir.mkdir(parents=True, exist_ok=True)
    return manifest
