"""Annotation quality control: GESD outlier detection against external 2D
predictions, frame filtering, gap statistics, RMSE/PCK metrics, and
pose-variation counting.

All metrics are fold-style reductions over immutable records, so results
never depend on input partitioning.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DegeneratePlane, NoMatchedPairs, TooFewSamples

GESD_MAX_FRACTION = 0.20    # expected outlier cap as a fraction of the data
GESD_ALPHA = 0.05
OUTLIER_KEYPOINTS_TO_DROP = 2   # "more than 1 outlier keypoint" drops a frame
POSE_BIN_DEG = 1.0

HEAD_PLANE = ("beak", "left_eye", "right_eye")      # origin, left, right
BODY_PLANE = ("tail", "left_shoulder", "right_shoulder")


@dataclass(frozen=True)
class PredictionRecord:
    """One externally-predicted 2D keypoint."""

    video_frame: int
    individual_id: str
    camera_id: str
    keypoint: str
    pixel: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "pixel",
                           np.asarray(self.pixel, dtype=float).reshape(2))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be within [0, 1]")

    @property
    def key(self):
        return (self.video_frame, self.individual_id, self.camera_id,
                self.keypoint)


@dataclass(frozen=True)
class PoseOrientation:
    """Angles between a body-part plane normal and the three world axes."""

    part: str                   # "head" | "body"
    angles_deg: tuple           # (ax, ay, az), each in [0, 180]


def gesd_outliers(values, max_outlier_fraction: float = GESD_MAX_FRACTION,
                  significance: float = GESD_ALPHA) -> set:
    """Generalized extreme Studentized deviate test (two-sided).

    Tests up to r = ceil(fraction * n) candidate outliers: iteratively remove
    the most extreme value and compare the Studentized extreme R_i against
    the critical value lambda_i; the declared outliers are the first i
    removed values for the largest i with R_i > lambda_i. Returns the set of
    outlier indices into ``values``.
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    n = len(x)
    if n <= 10:
        raise TooFewSamples(f"GESD needs n > 10, got {n}")
    if not 0.0 < max_outlier_fraction < 0.5:
        raise ValueError("max_outlier_fraction must be in (0, 0.5)")
    r = math.ceil(max_outlier_fraction * n)
    remaining = list(range(n))
    removed = []
    n_outliers = 0
    for i in range(1, r + 1):
        sub = x[remaining]
        mean = sub.mean()
        std = sub.std(ddof=1)
        if std == 0:
            break
        deviations = np.abs(sub - mean)
        worst = int(np.argmax(deviations))
        r_stat = deviations[worst] / std
        m = n - i + 1          # sample size at this step
        p = 1.0 - significance / (2.0 * m)
        t_crit = stats.t.ppf(p, m - 2)
        lam = (m - 1) * t_crit / math.sqrt((m - 2 + t_crit ** 2) * m)
        removed.append(remaining.pop(worst))
        if r_stat > lam:
            n_outliers = i
    return set(removed[:n_outliers])


def filter_frames(error_series: dict,
                  max_outlier_fraction: float = GESD_MAX_FRACTION,
                  significance: float = GESD_ALPHA,
                  drop_at: int = OUTLIER_KEYPOINTS_TO_DROP):
    """Drop frames whose annotations disagree with predictions on multiple
    keypoints at once (the signature of a bad 6-DOF pose).

    ``error_series`` maps keypoint -> list of (frame, error) pairs; frames
    may repeat across cameras. GESD runs independently per keypoint; a frame
    is dropped when at least ``drop_at`` distinct keypoints are flagged on
    it. Keypoints with too few samples are skipped. Returns
    (kept frames, dropped frames, flags) with flags mapping frame ->
    set of flagged keypoints.
    """
    flags = {}
    all_frames = set()
    for keypoint, series in error_series.items():
        frames = [f for f, _ in series]
        errors = [e for _, e in series]
        all_frames.update(frames)
        try:
            outliers = gesd_outliers(errors, max_outlier_fraction,
                                     significance)
        except TooFewSamples:
            continue
        for idx in outliers:
            flags.setdefault(frames[idx], set()).add(keypoint)
    dropped = sorted(f for f, kps in flags.items() if len(kps) >= drop_at)
    kept = sorted(all_frames.difference(dropped))
    return kept, dropped, flags


@dataclass
class GapStats:
    counts: dict                # {"1": n, "2-30": n, ">30": n}
    fraction_at_most_30: float
    n_gaps: int


def gap_statistics(dropped_frames) -> GapStats:
    """Bin contiguous dropped-frame runs by length: 1 / 2-30 / >30 frames."""
    frames = sorted(set(int(f) for f in dropped_frames))
    runs = []
    start = None
    prev = None
    for f in frames:
        if start is None:
            start = prev = f
        elif f == prev + 1:
            prev = f
        else:
            runs.append(prev - start + 1)
            start = prev = f
    if start is not None:
        runs.append(prev - start + 1)
    counts = {"1": 0, "2-30": 0, ">30": 0}
    for length in runs:
        if length == 1:
            counts["1"] += 1
        elif length <= 30:
            counts["2-30"] += 1
        else:
            counts[">30"] += 1
    n = len(runs)
    frac = (counts["1"] + counts["2-30"]) / n if n else 1.0
    return GapStats(counts, frac, n)


def match_pairs(predictions, annotations):
    """Join two record collections on (frame, individual, camera, keypoint).

    Each collection is an iterable of objects with ``key`` and ``pixel``
    (PredictionRecord works for both sides). Records missing from either
    side are skipped. Returns {keypoint: [(key, vec_a, vec_b), ...]}.
    """
    by_key = {}
    for rec in annotations:
        by_key[rec.key] = rec
    pairs = {}
    for rec in predictions:
        other = by_key.get(rec.key)
        if other is None:
            continue
        pairs.setdefault(rec.keypoint, []).append(
            (rec.key, rec.pixel, other.pixel))
    return pairs


def rmse_report(predictions, annotations) -> dict:
    """Per-keypoint root mean squared Euclidean error over matched pairs.

    Returns {keypoint: {"rmse": float, "count": int}}; raises NoMatchedPairs
    when nothing matches.
    """
    pairs = match_pairs(predictions, annotations)
    if not any(pairs.values()):
        raise NoMatchedPairs("no (frame, individual, camera, keypoint) "
                             "pairs in common")
    report = {}
    for keypoint, matched in sorted(pairs.items()):
        sq = [float(np.sum((a - b) ** 2)) for _, a, b in matched]
        report[keypoint] = {"rmse": math.sqrt(sum(sq) / len(sq)),
                            "count": len(sq)}
    return report


def pck_report(predictions, annotations, box_widths,
               thresholds=(0.05, 0.10)) -> dict:
    """Percentage of correct keypoints within each threshold fraction of the
    bounding-box width.

    ``box_widths`` maps (frame, individual, camera) -> width px. Pairs
    without a positive box width are skipped. Returns
    {keypoint: {"pck05": ..., "pck10": ..., "count": n}}.
    """
    pairs = match_pairs(predictions, annotations)
    if not any(pairs.values()):
        raise NoMatchedPairs("no matched pairs")
    report = {}
    for keypoint, matched in sorted(pairs.items()):
        hits = {t: 0 for t in thresholds}
        count = 0
        for key, a, b in matched:
            width = box_widths.get(key[:3], 0.0)
            if width <= 0:
                continue
            count += 1
            dist = float(np.linalg.norm(a - b))
            for t in thresholds:
                hits[t] += dist < t * width
        if count == 0:
            continue
        entry = {f"pck{int(round(t * 100)):02d}": hits[t] / count
                 for t in thresholds}
        entry["count"] = count
        report[keypoint] = entry
    if not report:
        raise NoMatchedPairs("no matched pairs with positive box widths")
    return report


def pose_orientation(keypoints3d: dict, part: str) -> PoseOrientation:
    """Orientation of the head or body plane in the world frame.

    The head plane passes through beak (origin), left eye, and right eye;
    the body plane through tail (origin) and the shoulders. The plane
    normal is cross(v_left, v_right), and the three reported angles are its
    angles to the world x, y, z axes in degrees.
    """
    if part == "head":
        origin_kp, left_kp, right_kp = HEAD_PLANE
    elif part == "body":
        origin_kp, left_kp, right_kp = BODY_PLANE
    else:
        raise ValueError(f"part must be 'head' or 'body', got {part!r}")
    try:
        origin = np.asarray(keypoints3d[origin_kp], dtype=float)
        v_left = np.asarray(keypoints3d[left_kp], dtype=float) - origin
        v_right = np.asarray(keypoints3d[right_kp], dtype=float) - origin
    except KeyError as missing:
        raise ValueError(f"missing keypoint {missing} for {part} plane")
    normal = np.cross(v_left, v_right)
    norm = np.linalg.norm(normal)
    if norm < 1e-9:
        raise DegeneratePlane(f"{part} plane points are collinear")
    normal = normal / norm
    angles = np.degrees(np.arccos(np.clip(normal, -1.0, 1.0)))
    return PoseOrientation(part, tuple(float(a) for a in angles))


def _quantize(orientation: PoseOrientation, bin_deg: float):
    # round() ties-to-even keeps the 1-degree grid stable for .5 inputs.
    return tuple(round(a / bin_deg) for a in orientation.angles_deg)


def count_unique_poses(samples, bin_deg: float = POSE_BIN_DEG):
    """Count distinct quantized orientations over (head, body) samples.

    ``samples`` is an iterable of (head PoseOrientation or None,
    body PoseOrientation or None) pairs, one per frame-individual. Returns
    (unique head, unique body, unique co-occurring combined).
    """
    heads, bodies, combined = set(), set(), set()
    for head, body in samples:
        hq = _quantize(head, bin_deg) if head is not None else None
        bq = _quantize(body, bin_deg) if body is not None else None
        if hq is not None:
            heads.add(hq)
        if bq is not None:
            bodies.add(bq)
        if hq is not None and bq is not None:
            combined.add((hq, bq))
    return len(heads), len(bodies), len(combined)
