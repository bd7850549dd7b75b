"""Camera extrinsic calibration in the mo-cap world frame from human-clicked
marker pixels paired with synchronized 3D marker positions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import HighReprojection, PoorCoverage
from .geometry import CameraIntrinsics, CameraModel, project_many, solve_pnp

MIN_EXTENT_MM = 200.0       # required spread along each principal axis
MAX_RMS_PX = 5.0            # calibration must beat typical annotation error


@dataclass
class ExtrinsicObservation:
    """Clicked marker pixels for one camera at one video frame, paired with
    the matching world positions at the synchronized mo-cap frame."""

    camera_id: str
    video_frame: int
    marker_ids: list
    pixels: np.ndarray          # (K, 2) px
    world_points: np.ndarray    # (K, 3) mm

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        self.world_points = np.asarray(self.world_points,
                                       dtype=float).reshape(-1, 3)
        if not (len(self.marker_ids) == len(self.pixels)
                == len(self.world_points)):
            raise ValueError("every clicked pixel needs exactly one matched "
                             "3D point")


@dataclass
class CalibrationReport:
    camera_id: str
    rms_px: float
    extents_mm: np.ndarray      # spread along the 3 principal axes
    n_points: int
    per_click: list = field(default_factory=list)
    # per_click rows: (video_frame, marker_id, error_px)


def coverage_extents(points: np.ndarray) -> np.ndarray:
    """Extent of the point cloud along its three principal axes (mm)."""
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    projected = centered @ vt.T
    return projected.max(axis=0) - projected.min(axis=0)


def calibrate_extrinsics(observations, intrinsics: CameraIntrinsics,
                         min_extent_mm: float = MIN_EXTENT_MM,
                         max_rms_px: float = MAX_RMS_PX):
    """Solve the camera pose from all observations pooled into one PnP.

    Requires >= 6 pooled correspondences spanning more than
    ``min_extent_mm`` along every principal axis (PoorCoverage otherwise),
    and an overall reprojection RMS under ``max_rms_px`` (HighReprojection).
    Returns (extrinsic RigidTransform, CalibrationReport).
    """
    observations = list(observations)
    world = np.vstack([o.world_points for o in observations]) \
        if observations else np.empty((0, 3))
    pixels = np.vstack([o.pixels for o in observations]) \
        if observations else np.empty((0, 2))
    if len(world) < 6:
        raise PoorCoverage(
            f"need >= 6 pooled correspondences, got {len(world)}")
    extents = coverage_extents(world)
    if np.min(extents) <= min_extent_mm:
        raise PoorCoverage(
            f"correspondences span {np.round(extents, 1).tolist()} mm; every "
            f"principal extent must exceed {min_extent_mm} mm")
    extrinsic, rms = solve_pnp(world, pixels, intrinsics)
    if rms > max_rms_px:
        raise HighReprojection(
            f"reprojection RMS {rms:.2f} px exceeds {max_rms_px} px")

    cam = CameraModel.from_intrinsics(intrinsics, extrinsic)
    per_click = []
    for obs in observations:
        projected, _ = project_many(cam, obs.world_points)
        errors = np.linalg.norm(projected - obs.pixels, axis=1)
        for marker_id, err in zip(obs.marker_ids, errors):
            per_click.append((obs.video_frame, marker_id, float(err)))
    camera_ids = {o.camera_id for o in observations}
    report = CalibrationReport(
        camera_id=camera_ids.pop() if len(camera_ids) == 1 else "mixed",
        rms_px=float(rms), extents_mm=extents, n_points=len(world),
        per_click=per_click)
    return extrinsic, report
