"""Marker trajectories to per-frame 6-DOF body-part poses with stable
identities: label repair, pattern-based identification, and tracking.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import AmbiguousIdentity, InsufficientMarkers
from .geometry import RigidTransform, rigid_fit

RESIDUAL_THRESHOLD_MM = 3.0     # sub-mm mo-cap: above this the fit failed
REPAIR_TOLERANCE_MM = 5.0       # pairwise-distance deviation triggering repair
CLUSTER_LINK_MM = 120.0         # single-linkage distance for marker clusters
IDENTITY_MARGIN_MM = 2.0        # min score gap between competing body defs
STICKINESS_MM = 50.0            # per-frame centroid motion keeping identity


@dataclass
class Marker:
    marker_id: str
    position: np.ndarray | None   # (3,) mm; None when not tracked
    valid: bool = True

    def __post_init__(self):
        if self.position is not None:
            self.position = np.asarray(self.position, dtype=float).reshape(3)
        if self.position is None:
            self.valid = False


@dataclass
class MarkerFrame:
    """All markers observed at one 100 Hz mo-cap frame."""

    frame_index: int
    markers: list

    def valid_positions(self) -> dict:
        return {m.marker_id: m.position for m in self.markers
                if m.valid and m.position is not None}


@dataclass(frozen=True)
class RigidBodyDef:
    """A 4-marker rigid pattern for one body part of one individual.

    Backpack patterns carry identity, so their six pairwise distances must
    be mutually distinct by at least ``distance_separation_mm``.
    """

    body_id: str
    part: str                      # "head" | "backpack"
    individual_id: str
    marker_template: dict          # marker_id -> (3,) local mm
    distance_separation_mm: float = 2.0

    def __post_init__(self):
        if self.part not in ("head", "backpack"):
            raise ValueError(f"unknown body part {self.part!r}")
        template = {k: np.asarray(v, dtype=float).reshape(3)
                    for k, v in self.marker_template.items()}
        if len(template) != 4:
            raise ValueError(
                f"body {self.body_id!r} needs exactly 4 template markers, "
                f"got {len(template)}")
        object.__setattr__(self, "marker_template", template)
        if self.part == "backpack":
            dists = np.sort(self.distance_multiset())
            if np.min(np.diff(dists)) < self.distance_separation_mm:
                raise ValueError(
                    f"backpack {self.body_id!r} pairwise distances not "
                    f"distinct by {self.distance_separation_mm} mm")

    @property
    def marker_ids(self) -> list:
        return list(self.marker_template.keys())

    def template_points(self) -> np.ndarray:
        return np.array([self.marker_template[k] for k in self.marker_ids])

    def distance_multiset(self) -> np.ndarray:
        """Sorted six pairwise distances of the template pattern."""
        return _pairwise_distances(self.template_points())


def _pairwise_distances(points: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(len(points), k=1)
    diffs = points[iu[0]] - points[iu[1]]
    return np.sort(np.linalg.norm(diffs, axis=1))


@dataclass
class BodyTrack:
    """Per-frame pose history of one rigid body. Gaps stay explicit: invalid
    frames keep valid=False and are never interpolated."""

    body_id: str
    frames: np.ndarray
    rotations: np.ndarray       # (N, 3, 3)
    translations: np.ndarray    # (N, 3)
    residuals: np.ndarray       # (N,)
    valid: np.ndarray           # (N,) bool
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=int)
        self._index = {int(f): i for i, f in enumerate(self.frames)}

    def pose_at(self, frame: int):
        """RigidTransform (local -> world) at ``frame``, or None if missing
        or invalid."""
        i = self._index.get(int(frame))
        if i is None or not self.valid[i]:
            return None
        return RigidTransform(self.rotations[i], self.translations[i])

    def residual_at(self, frame: int):
        i = self._index.get(int(frame))
        return None if i is None else float(self.residuals[i])


def fit_body_pose(frame: MarkerFrame, body: RigidBodyDef, assignment):
    """Fit the body template to observed markers.

    ``assignment`` lists frame marker ids in template-marker order. At least
    3 of the 4 assigned markers must be valid in the frame, else
    InsufficientMarkers. Returns (RigidTransform local->world, residual mm).
    """
    positions = frame.valid_positions()
    template = body.template_points()
    src, tgt = [], []
    for tmpl_pt, marker_id in zip(template, assignment):
        pos = positions.get(marker_id)
        if pos is not None:
            src.append(tmpl_pt)
            tgt.append(pos)
    if len(src) < 3:
        raise InsufficientMarkers(
            f"body {body.body_id!r} has {len(src)} valid markers at frame "
            f"{frame.frame_index}; need >= 3")
    return rigid_fit(np.array(src), np.array(tgt))


def _permutation_deviations(observed: np.ndarray, template: np.ndarray,
                            perm) -> np.ndarray:
    """Per-pair |observed - template| distance deviations under a relabeling
    where slot i takes the observation currently labeled perm[i]."""
    pts = observed[list(perm)]
    n = len(pts)
    iu = np.triu_indices(n, k=1)
    d_obs = np.linalg.norm(pts[iu[0]] - pts[iu[1]], axis=1)
    d_tmpl = np.linalg.norm(template[iu[0]] - template[iu[1]], axis=1)
    return np.abs(d_obs - d_tmpl)


def _best_permutation(observed: np.ndarray, template: np.ndarray):
    """Search all 4! relabelings; returns (perm tuple, max deviation,
    total deviation) of the total-deviation minimizer."""
    best = None
    for perm in itertools.permutations(range(len(observed))):
        dev = _permutation_deviations(observed, template, perm)
        total = float(dev.sum())
        if best is None or total < best[2]:
            best = (perm, float(dev.max()), total)
    return best


def _cycle_notation(perm) -> str:
    """Cycle notation for a permutation, e.g. (0, 1, 3, 2) -> "(2 3)"."""
    seen = set()
    cycles = []
    for start in range(len(perm)):
        if start in seen or perm[start] == start:
            seen.add(start)
            continue
        cycle = [start]
        seen.add(start)
        nxt = perm[start]
        while nxt != start:
            cycle.append(nxt)
            seen.add(nxt)
            nxt = perm[nxt]
        cycles.append("(" + " ".join(str(c) for c in cycle) + ")")
    return "".join(cycles) if cycles else "()"


@dataclass
class RepairEntry:
    frame_index: int
    permutation: tuple | None     # None when the frame was unrepairable
    max_deviation_mm: float

    @property
    def label(self) -> str:
        if self.permutation is None:
            return "unrepairable"
        return _cycle_notation(self.permutation)


def repair_labels(frames, body: RigidBodyDef,
                  tolerance_mm: float = REPAIR_TOLERANCE_MM):
    """Fix marker-label swaps in one body's trajectory.

    A frame is suspect when any intra-body pairwise distance deviates from
    the template by more than ``tolerance_mm``. All 24 relabelings are then
    searched; the total-deviation minimizer is applied when it brings every
    pair back under tolerance, otherwise the frame's markers are invalidated.
    Returns (corrected frames, repair log). Frames with missing markers are
    left untouched (repair needs the full 4-marker pattern).
    """
    template = body.template_points()
    ids = body.marker_ids
    out_frames = []
    log = []
    for frame in frames:
        positions = frame.valid_positions()
        present = [positions.get(mid) for mid in ids]
        others = [m for m in frame.markers if m.marker_id not in ids]
        if any(p is None for p in present):
            out_frames.append(frame)
            continue
        observed = np.array(present)
        current_dev = _permutation_deviations(
            observed, template, range(len(ids)))
        if current_dev.max() <= tolerance_mm:
            out_frames.append(frame)
            continue
        perm, max_dev, _ = _best_permutation(observed, template)
        if max_dev <= tolerance_mm:
            relabeled = [Marker(ids[i], observed[perm[i]]) for i in range(4)]
            out_frames.append(MarkerFrame(frame.frame_index,
                                          others + relabeled))
            log.append(RepairEntry(frame.frame_index, perm, max_dev))
        else:
            invalidated = [Marker(mid, None, valid=False) for mid in ids]
            out_frames.append(MarkerFrame(frame.frame_index,
                                          others + invalidated))
            log.append(RepairEntry(frame.frame_index, None, max_dev))
    return out_frames, log


def cluster_markers(frame: MarkerFrame, link_mm: float = CLUSTER_LINK_MM):
    """Single-linkage clusters of valid markers (markers within ``link_mm``
    are connected). Returns list of lists of marker ids."""
    positions = frame.valid_positions()
    ids = list(positions.keys())
    if not ids:
        return []
    pts = np.array([positions[i] for i in ids])
    n = len(ids)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    diffs = pts[:, None, :] - pts[None, :, :]
    close = np.linalg.norm(diffs, axis=2) <= link_mm
    for i in range(n):
        for j in range(i + 1, n):
            if close[i, j]:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(ids[i])
    return list(groups.values())


def identify_individuals(frame: MarkerFrame, defs,
                         link_mm: float = CLUSTER_LINK_MM,
                         margin_mm: float = IDENTITY_MARGIN_MM) -> dict:
    """Match 4-marker clusters to body definitions by nearest pairwise
    distance multiset (L2 over sorted distances), injectively.

    Returns {body_id: [marker ids]}. Raises AmbiguousIdentity when the best
    and second-best candidate defs for some cluster score within
    ``margin_mm`` of each other.
    """
    positions = frame.valid_positions()
    clusters = [c for c in cluster_markers(frame, link_mm) if len(c) == 4]
    if not clusters or not defs:
        return {}
    multisets = [_pairwise_distances(np.array([positions[i] for i in c]))
                 for c in clusters]
    scores = np.array([[np.linalg.norm(ms - d.distance_multiset())
                        for d in defs] for ms in multisets])
    if len(defs) > 1:
        for ci, cluster in enumerate(clusters):
            ordered = np.sort(scores[ci])
            if ordered[1] - ordered[0] < margin_mm:
                raise AmbiguousIdentity(
                    f"cluster {sorted(cluster)} at frame {frame.frame_index} "
                    f"matches two body defs within {margin_mm} mm")
    rows, cols = linear_sum_assignment(scores)
    return {defs[c].body_id: clusters[r] for r, c in zip(rows, cols)}


def _marker_correspondence(cluster_ids, positions, body: RigidBodyDef):
    """Order cluster marker ids to match the template marker order."""
    template_ids = body.marker_ids
    if set(cluster_ids) == set(template_ids):
        return template_ids
    observed = np.array([positions[i] for i in cluster_ids])
    perm, _, _ = _best_permutation(observed, body.template_points())
    return [cluster_ids[p] for p in perm]


def track_sequence(frames, defs,
                   residual_threshold_mm: float = RESIDUAL_THRESHOLD_MM,
                   stickiness_mm: float = STICKINESS_MM,
                   link_mm: float = CLUSTER_LINK_MM,
                   margin_mm: float = IDENTITY_MARGIN_MM):
    """Track every body across a frame sequence.

    Identification runs per frame, but a body keeps its previous cluster
    when the cluster centroid moved less than ``stickiness_mm`` since the
    last assigned frame, so identities cannot swap inside a contiguous
    valid segment. Per-frame failures mark that frame invalid and never
    abort the sequence. Returns one BodyTrack per def, in def order.
    """
    n = len(frames)
    results = {d.body_id: {
        "rot": np.tile(np.eye(3), (n, 1, 1)),
        "tr": np.zeros((n, 3)),
        "res": np.full(n, np.nan),
        "valid": np.zeros(n, dtype=bool),
    } for d in defs}
    defs_by_id = {d.body_id: d for d in defs}
    last_centroid = {}

    for fi, frame in enumerate(frames):
        positions = frame.valid_positions()
        clusters = [c for c in cluster_markers(frame, link_mm)
                    if len(c) == 4]
        centroids = [np.mean([positions[i] for i in c], axis=0)
                     for c in clusters]
        assigned = {}
        taken = set()
        # Temporal stickiness first: nearest cluster within threshold.
        for body_id, prev in last_centroid.items():
            best, best_d = None, stickiness_mm
            for ci, centroid in enumerate(centroids):
                if ci in taken:
                    continue
                d = float(np.linalg.norm(centroid - prev))
                if d < best_d:
                    best, best_d = ci, d
            if best is not None:
                assigned[body_id] = best
                taken.add(best)
        # Remaining bodies and clusters: pattern identification.
        free_defs = [d for d in defs if d.body_id not in assigned]
        free_clusters = [ci for ci in range(len(clusters)) if ci not in taken]
        if free_defs and free_clusters:
            sub_frame = MarkerFrame(frame.frame_index, [
                Marker(mid, positions[mid])
                for ci in free_clusters for mid in clusters[ci]])
            try:
                ident = identify_individuals(sub_frame, free_defs, link_mm,
                                             margin_mm)
            except AmbiguousIdentity:
                ident = {}
            cluster_by_key = {frozenset(clusters[ci]): ci
                              for ci in free_clusters}
            for body_id, member_ids in ident.items():
                ci = cluster_by_key.get(frozenset(member_ids))
                if ci is not None and ci not in taken:
                    assigned[body_id] = ci
                    taken.add(ci)
        # Fit poses for assigned bodies.
        for body_id, ci in assigned.items():
            body = defs_by_id[body_id]
            order = _marker_correspondence(clusters[ci], positions, body)
            try:
                pose, residual = fit_body_pose(frame, body, order)
            except InsufficientMarkers:
                continue
            rec = results[body_id]
            rec["rot"][fi] = pose.rotation
            rec["tr"][fi] = pose.translation
            rec["res"][fi] = residual
            rec["valid"][fi] = residual <= residual_threshold_mm
            last_centroid[body_id] = centroids[ci]

    frame_indices = np.array([f.frame_index for f in frames], dtype=int)
    return [BodyTrack(d.body_id, frame_indices, results[d.body_id]["rot"],
                      results[d.body_id]["tr"], results[d.body_id]["res"],
                      results[d.body_id]["valid"]) for d in defs]
