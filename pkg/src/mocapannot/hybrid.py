"""Fill mo-cap tracking gaps from triangulated multi-view 2D detections,
benchmarked against linear interpolation over the same gaps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundaryGap, InfeasibleSpec
from .geometry import triangulate_many

GAP_MIN_FRAMES = 30
GAP_MAX_FRAMES = 90
GAP_FRACTION = 0.25


@dataclass(frozen=True)
class GapSpec:
    """Artificial-dropout recipe: remove ``fraction`` of frames in disjoint
    gaps of ``min_frames``..``max_frames``, deterministically under ``seed``."""

    fraction: float = GAP_FRACTION
    min_frames: int = GAP_MIN_FRAMES
    max_frames: int = GAP_MAX_FRAMES
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction < 1.0:
            raise ValueError("fraction must be in [0, 1)")
        if self.min_frames <= 0 or self.max_frames < self.min_frames:
            raise ValueError("gap length range must be positive and ordered")


@dataclass
class KeypointSeries:
    """Per-frame 3D positions for each keypoint of one individual, with an
    explicit per-frame validity mask (frames are contiguous video frames)."""

    frames: np.ndarray                    # (N,) int
    positions: dict                       # keypoint -> (N, 3) mm
    valid: np.ndarray                     # (N,) bool

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=int)
        self.valid = np.asarray(self.valid, dtype=bool)
        self.positions = {k: np.asarray(v, dtype=float).reshape(-1, 3)
                          for k, v in self.positions.items()}
        for k, v in self.positions.items():
            if len(v) != len(self.frames):
                raise ValueError(f"series length mismatch for {k!r}")

    def copy(self) -> "KeypointSeries":
        return KeypointSeries(self.frames.copy(),
                              {k: v.copy() for k, v in self.positions.items()},
                              self.valid.copy())


@dataclass(frozen=True)
class Gap:
    start_index: int        # index into the series arrays
    length: int

    @property
    def indices(self):
        return range(self.start_index, self.start_index + self.length)


def introduce_gaps(series: KeypointSeries, spec: GapSpec):
    """Remove whole-body frames in random disjoint gaps.

    Gaps are rejection-sampled under the seeded generator: each keeps at
    least one valid frame to its neighbors and to both sequence ends (so
    linear filling stays well-posed). Sampling stops once the removed count
    reaches the target, which it can overshoot by at most one gap.
    Returns (gapped copy, list of Gap).
    """
    n = len(series.frames)
    if n <= spec.max_frames + 2:
        raise InfeasibleSpec(
            f"track of {n} frames cannot host gaps up to {spec.max_frames}")
    target = spec.fraction * n
    rng = np.random.default_rng(spec.seed)
    blocked = np.zeros(n, dtype=bool)   # gap frames plus 1-frame margins
    gaps = []
    removed = 0
    attempts = 0
    while removed < target:
        attempts += 1
        if attempts > 100000:
            raise InfeasibleSpec(
                f"could not place gaps for fraction {spec.fraction} with "
                f"lengths {spec.min_frames}-{spec.max_frames}")
        length = int(rng.integers(spec.min_frames, spec.max_frames + 1))
        start = int(rng.integers(1, n - length))
        if blocked[max(0, start - 1):start + length + 1].any():
            continue
        blocked[max(0, start - 1):start + length + 1] = True
        gaps.append(Gap(start, length))
        removed += length
    gaps.sort(key=lambda g: g.start_index)
    gapped = series.copy()
    for gap in gaps:
        gapped.valid[gap.start_index:gap.start_index + gap.length] = False
    return gapped, gaps


def fill_triangulation(gapped: KeypointSeries, gaps, predictions, cameras):
    """Fill gap frames by triangulating per-keypoint 2D detections.

    ``predictions`` is an iterable of records with (video_frame, camera_id,
    keypoint, pixel); ``cameras`` maps camera_id -> CameraModel. Frames with
    fewer than 2 views for a keypoint stay unfilled and are reported.
    Returns (filled copy, [(frame, keypoint), ...] unfilled).
    """
    by_frame_kp = {}
    for rec in predictions:
        by_frame_kp.setdefault((rec.video_frame, rec.keypoint), []).append(rec)
    frame_to_index = {int(f): i for i, f in enumerate(gapped.frames)}
    filled = gapped.copy()
    unfilled = []
    # Group fill targets by their exact camera set so each group runs as one
    # vectorized triangulation batch.
    batches = {}
    for gap in gaps:
        for idx in gap.indices:
            frame = int(gapped.frames[idx])
            for keypoint in gapped.positions:
                recs = sorted(by_frame_kp.get((frame, keypoint), []),
                              key=lambda r: r.camera_id)
                if len(recs) < 2:
                    unfilled.append((frame, keypoint))
                    continue
                cam_key = tuple(r.camera_id for r in recs)
                batches.setdefault(cam_key, []).append(
                    (idx, keypoint, np.stack([r.pixel for r in recs])))
    for cam_key, entries in batches.items():
        cams = [cameras[cid] for cid in cam_key]
        pixels = np.stack([pix for _, _, pix in entries])
        points, _ = triangulate_many(cams, pixels)
        for (idx, keypoint, _), point in zip(entries, points):
            if np.all(np.isfinite(point)):
                filled.positions[keypoint][idx] = point
            else:
                unfilled.append((int(gapped.frames[idx]), keypoint))
    unfilled.sort()
    return filled, unfilled


def fill_linear(gapped: KeypointSeries, gaps) -> KeypointSeries:
    """Per-axis linear interpolation across each gap from its bounding valid
    frames. Raises BoundaryGap for gaps touching the sequence ends."""
    filled = gapped.copy()
    n = len(gapped.frames)
    for gap in gaps:
        lo = gap.start_index - 1
        hi = gap.start_index + gap.length
        if lo < 0 or hi >= n or not (gapped.valid[lo] and gapped.valid[hi]):
            raise BoundaryGap(
                f"gap at index {gap.start_index} lacks valid frames on both "
                f"sides")
        span = hi - lo
        for keypoint, positions in filled.positions.items():
            a, b = positions[lo], positions[hi]
            for idx in gap.indices:
                t = (idx - lo) / span
                positions[idx] = (1.0 - t) * a + t * b
    return filled


def compare_fills(truth: KeypointSeries, fills: dict, gaps) -> dict:
    """Per-keypoint RMSE (mm) of each fill method over gap frames only.

    ``fills`` maps method name -> filled KeypointSeries (same frame grid as
    ``truth``). Returns {method: {keypoint: rmse or None}}; None marks
    keypoints with no evaluable gap frames.
    """
    gap_indices = [idx for gap in gaps for idx in gap.indices]
    table = {}
    for method, series in sorted(fills.items()):
        per_kp = {}
        for keypoint in truth.positions:
            diffs = (series.positions[keypoint][gap_indices]
                     - truth.positions[keypoint][gap_indices])
            sq = np.sum(diffs ** 2, axis=1)
            finite = np.isfinite(sq)
            per_kp[keypoint] = (float(math.sqrt(np.mean(sq[finite])))
                                if finite.any() else None)
        table[method] = per_kp
    return table
