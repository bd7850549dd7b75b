"""Keypoint template estimation from sparse manual clicks, and propagation
of templates to dense per-frame, per-view 2D/3D annotations.

The rigid-body assumption does the heavy lifting: keypoint offsets are fixed
in a body part's local frame, so one template plus per-frame 6-DOF poses
yields annotations for every frame of every sequence.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientViews, InvalidPose, NoVisibleKeypoints
from .geometry import project_many, triangulate

# The 9-keypoint vocabulary, in annotation order. The first four ride on the
# skull; the rest ride on the backpack-fitted torso.
HEAD_KEYPOINTS = ("beak", "nose", "left_eye", "right_eye")
BACKPACK_KEYPOINTS = ("left_shoulder", "right_shoulder", "top_keel",
                      "bottom_keel", "tail")
KEYPOINT_NAMES = HEAD_KEYPOINTS + BACKPACK_KEYPOINTS
KEYPOINT_PART = {**{k: "head" for k in HEAD_KEYPOINTS},
                 **{k: "backpack" for k in BACKPACK_KEYPOINTS}}

BBOX_MARGIN_PX = 60.0       # box expansion around the keypoint hull
CROP_OVERLAP_LIMIT = 0.30   # max tolerated box overlap for training crops
SPREAD_WARN_MM = 5.0
MAD_GATE = 3.0


def part_of(keypoint: str) -> str:
    try:
        return KEYPOINT_PART[keypoint]
    except KeyError:
        raise ValueError(f"unknown keypoint {keypoint!r}; expected one of "
                         f"{KEYPOINT_NAMES}") from None


@dataclass
class ManualAnnotation:
    """One human click (or an explicit occlusion mark) for one keypoint in
    one camera view at one video frame."""

    individual_id: str
    camera_id: str
    video_frame: int
    keypoint: str
    pixel: np.ndarray | None
    occluded: bool = False

    def __post_init__(self):
        part_of(self.keypoint)
        if self.pixel is not None:
            self.pixel = np.asarray(self.pixel, dtype=float).reshape(2)
        if self.occluded:
            self.pixel = None


@dataclass
class KeypointTemplate:
    """Per-individual 3D keypoint offsets in body-part local frames (mm)."""

    individual_id: str
    offsets: dict                 # keypoint -> (3,) mm
    sample_counts: dict           # keypoint -> int
    spreads: dict                 # keypoint -> (3,) mm std, or None if n < 2

    def __post_init__(self):
        self.offsets = {k: np.asarray(v, dtype=float).reshape(3)
                        for k, v in self.offsets.items()}
        for name in self.offsets:
            part_of(name)


@dataclass
class ViewAnnotation:
    """One individual's 2D annotations in one camera view."""

    pixels: dict                  # keypoint -> (2,) px or None
    visible: dict                 # keypoint -> bool
    box: tuple | None             # (x_min, y_min, x_max, y_max) or None


@dataclass
class IndividualAnnotation:
    individual_id: str
    valid: bool
    keypoints3d: dict | None      # keypoint -> (3,) world mm
    views: dict                   # camera_id -> ViewAnnotation


@dataclass
class AnnotatedFrame:
    video_frame: int
    individuals: dict = field(default_factory=dict)


def estimate_template(annotations, cameras, tracks, clock, *,
                      individual_id=None, mad_gate: float = MAD_GATE,
                      spread_warn_mm: float = SPREAD_WARN_MM,
                      min_angle_deg: float = 1.0) -> KeypointTemplate:
    """Estimate a keypoint template from multi-view manual clicks.

    Per annotated frame, each keypoint seen in >= 2 views is triangulated
    and mapped into its body part's local frame through the inverse of that
    part's pose at the synchronized mo-cap frame. Offsets are averaged per
    keypoint across frames after dropping outlier frames (further than
    ``mad_gate`` times the median absolute deviation from the per-keypoint
    median); the per-axis standard deviation is recorded as spread.

    ``cameras`` maps camera_id -> CameraModel, ``tracks`` maps body part
    ("head" / "backpack") -> BodyTrack for this individual.
    """
    annotations = [a for a in annotations if not a.occluded
                   and a.pixel is not None]
    if individual_id is None:
        individuals = {a.individual_id for a in annotations}
        if len(individuals) != 1:
            raise ValueError("annotations must cover exactly one individual "
                             "or individual_id must be given")
        individual_id = individuals.pop()
    else:
        annotations = [a for a in annotations
                       if a.individual_id == individual_id]

    by_frame_kp = {}
    for ann in annotations:
        by_frame_kp.setdefault((ann.video_frame, ann.keypoint), []).append(ann)

    samples = {name: [] for name in KEYPOINT_NAMES}
    seen_multiview = set()
    skipped_frames = set()
    used_any = False
    for (video_frame, keypoint), clicks in sorted(by_frame_kp.items()):
        if len(clicks) < 2:
            continue
        seen_multiview.add(keypoint)
        part = part_of(keypoint)
        pose = tracks[part].pose_at(clock.map_frame(video_frame))
        if pose is None:
            skipped_frames.add(video_frame)
            continue
        obs = [(cameras[c.camera_id], c.pixel) for c in clicks]
        world, _ = triangulate(obs, min_angle_deg=min_angle_deg)
        samples[keypoint].append(pose.invert().apply(world))
        used_any = True

    missing = [k for k in KEYPOINT_NAMES if k not in seen_multiview]
    if missing:
        raise InsufficientViews(
            f"keypoints never annotated in >= 2 views: {missing}")
    if not used_any:
        raise InvalidPose(
            f"no valid body pose at any annotated frame "
            f"(skipped video frames: {sorted(skipped_frames)})")
    empty = [k for k, v in samples.items() if not v]
    if empty:
        raise InvalidPose(
            f"no valid body pose at any frame annotating {empty} "
            f"(skipped video frames: {sorted(skipped_frames)})")

    offsets, counts, spreads = {}, {}, {}
    for keypoint, offs in samples.items():
        arr = np.array(offs)
        if len(arr) >= 3:
            median = np.median(arr, axis=0)
            dists = np.linalg.norm(arr - median, axis=1)
            mad = np.median(dists)
            # Floor keeps numerically-identical noiseless samples together.
            arr = arr[dists <= max(mad_gate * mad, 1e-9)]
        offsets[keypoint] = arr.mean(axis=0)
        counts[keypoint] = int(len(arr))
        spreads[keypoint] = arr.std(axis=0, ddof=1) if len(arr) >= 2 else None
        if spreads[keypoint] is not None and \
                np.max(spreads[keypoint]) > spread_warn_mm:
            warnings.warn(
                f"{individual_id}/{keypoint}: per-axis spread "
                f"{np.round(spreads[keypoint], 2).tolist()} mm exceeds "
                f"{spread_warn_mm} mm", stacklevel=2)
    return KeypointTemplate(individual_id, offsets, counts, spreads)


def bounding_box(pixels, image_size, margin: float = BBOX_MARGIN_PX):
    """Axis-aligned box around visible keypoint pixels, expanded by
    ``margin`` px per side and clipped to the image."""
    pts = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise NoVisibleKeypoints("no visible keypoints to box")
    w, h = image_size
    x_min = max(0.0, float(pts[:, 0].min()) - margin)
    y_min = max(0.0, float(pts[:, 1].min()) - margin)
    x_max = min(float(w), float(pts[:, 0].max()) + margin)
    y_max = min(float(h), float(pts[:, 1].max()) + margin)
    return (x_min, y_min, x_max, y_max)


def propagate_frame(template: KeypointTemplate, poses, cameras,
                    margin: float = BBOX_MARGIN_PX) -> IndividualAnnotation:
    """Apply per-part poses to the template and project into every camera.

    ``poses`` maps body part -> RigidTransform (local -> world) or None.
    Both parts must have valid poses, otherwise the individual is marked
    invalid for this frame (no keypoints emitted).
    """
    names = [k for k in KEYPOINT_NAMES if k in template.offsets]
    if any(poses.get(KEYPOINT_PART[k]) is None for k in names):
        return IndividualAnnotation(template.individual_id, False, None, {})
    world = np.empty((len(names), 3))
    for i, name in enumerate(names):
        world[i] = poses[KEYPOINT_PART[name]].apply(template.offsets[name])
    views = {}
    for camera_id, cam in cameras.items():
        pixels, visible = project_many(cam, world)
        pix_map, vis_map = {}, {}
        for i, name in enumerate(names):
            ok = np.all(np.isfinite(pixels[i]))
            pix_map[name] = pixels[i] if ok else None
            vis_map[name] = bool(visible[i])
        vis_pts = pixels[visible]
        box = bounding_box(vis_pts, cam.image_size, margin) \
            if len(vis_pts) else None
        views[camera_id] = ViewAnnotation(pix_map, vis_map, box)
    kp3d = {name: world[i] for i, name in enumerate(names)}
    return IndividualAnnotation(template.individual_id, True, kp3d, views)


def filter_training_crops(frame: AnnotatedFrame,
                          overlap_limit: float = CROP_OVERLAP_LIMIT) -> dict:
    """Per camera view, flag whether each individual's crop is clean enough
    for training: excluded when another individual's box covers more than
    ``overlap_limit`` of its own box area."""

    def area(box):
        return max(0.0, box[2] - box[0]) * max(0.0, box[3] - box[1])

    def intersection(a, b):
        x0, y0 = max(a[0], b[0]), max(a[1], b[1])
        x1, y1 = min(a[2], b[2]), min(a[3], b[3])
        return max(0.0, x1 - x0) * max(0.0, y1 - y0)

    camera_ids = set()
    for ind in frame.individuals.values():
        camera_ids.update(ind.views.keys())
    result = {}
    for camera_id in sorted(camera_ids):
        boxes = {}
        for ind_id, ind in frame.individuals.items():
            view = ind.views.get(camera_id)
            if view is not None and view.box is not None:
                boxes[ind_id] = view.box
        flags = {}
        for ind_id, box in boxes.items():
            own = area(box)
            overlap = max((intersection(box, other)
                           for other_id, other in boxes.items()
                           if other_id != ind_id), default=0.0)
            flags[ind_id] = (overlap / own) <= overlap_limit if own > 0 \
                else False
        result[camera_id] = flags
    return result


def propagate_sequence(templates, tracks, cameras, clock, video_frames,
                       margin: float = BBOX_MARGIN_PX):
    """Yield an AnnotatedFrame per video frame, in frame order.

    ``templates`` maps individual_id -> KeypointTemplate; ``tracks`` maps
    individual_id -> {part -> BodyTrack}. Invalid poses flag the individual
    invalid for that frame without stopping the sequence. Equivalent to
    calling :func:`propagate_frame` per frame, but vectorized across the
    whole sequence to sustain batch-annotation throughput.
    """
    video_frames = sorted(int(v) for v in video_frames)
    if not video_frames:
        return
    n = len(video_frames)
    mocap_frames = clock.map_frames(video_frames)
    camera_ids = list(cameras)

    per_individual = []
    for individual_id, template in templates.items():
        names = [k for k in KEYPOINT_NAMES if k in template.offsets]
        offsets = np.array([template.offsets[k] for k in names])
        world = np.zeros((n, len(names), 3))
        valid = np.ones(n, dtype=bool)
        for part in ("head", "backpack"):
            sel = np.array([KEYPOINT_PART[k] == part for k in names])
            if not sel.any():
                continue
            track = tracks[individual_id].get(part)
            if track is None:
                valid[:] = False
                continue
            idx = np.array([track._index.get(int(m), -1)
                            for m in mocap_frames])
            found = idx >= 0
            ok = found.copy()
            ok[found] &= track.valid[idx[found]]
            safe = np.clip(idx, 0, len(track.frames) - 1)
            rot = track.rotations[safe]
            tr = track.translations[safe]
            world[:, sel] = (np.einsum("nab,kb->nka", rot, offsets[sel])
                             + tr[:, None, :])
            valid &= ok
        world[~valid] = 0.0      # dummy but projectable rows, masked below

        cam_pixels, cam_finite, cam_visible, cam_boxes = [], [], [], []
        for camera_id in camera_ids:
            cam = cameras[camera_id]
            pixels, visible = project_many(cam, world.reshape(-1, 3))
            pixels = pixels.reshape(n, len(names), 2)
            visible = visible.reshape(n, len(names))
            finite = np.all(np.isfinite(pixels), axis=2)
            w, h = cam.image_size
            vx = np.where(visible, pixels[:, :, 0], np.nan)
            vy = np.where(visible, pixels[:, :, 1], np.nan)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                box = np.stack([
                    np.clip(np.nanmin(vx, axis=1) - margin, 0.0, None),
                    np.clip(np.nanmin(vy, axis=1) - margin, 0.0, None),
                    np.minimum(np.nanmax(vx, axis=1) + margin, float(w)),
                    np.minimum(np.nanmax(vy, axis=1) + margin, float(h)),
                ], axis=1)
            has_box = visible.any(axis=1) & valid
            cam_pixels.append(pixels)
            cam_finite.append(finite)
            cam_visible.append(visible)
            cam_boxes.append([tuple(row) if flag else None
                              for row, flag in zip(box.tolist(), has_box)])
        per_individual.append((individual_id, names, world, valid,
                               cam_pixels, cam_finite, cam_visible,
                               cam_boxes))

    for i, video_frame in enumerate(video_frames):
        frame = AnnotatedFrame(video_frame)
        for (individual_id, names, world, valid, cam_pixels, cam_finite,
             cam_visible, cam_boxes) in per_individual:
            if not valid[i]:
                frame.individuals[individual_id] = IndividualAnnotation(
                    individual_id, False, None, {})
                continue
            kp3d = dict(zip(names, world[i]))
            views = {}
            for c, camera_id in enumerate(camera_ids):
                row = cam_pixels[c][i]
                fin = cam_finite[c][i]
                pix_map = {name: (row[k] if fin[k] else None)
                           for k, name in enumerate(names)}
                vis_map = dict(zip(names, cam_visible[c][i].tolist()))
                views[camera_id] = ViewAnnotation(pix_map, vis_map,
                                                  cam_boxes[c][i])
            frame.individuals[individual_id] = IndividualAnnotation(
                individual_id, True, kp3d, views)
        yield frame
