"""Core 3D geometry: SE3 transforms, camera projection, rigid alignment,
triangulation, and PnP.

Conventions: all 3D quantities in millimeters, world frame = mo-cap frame.
Camera extrinsics map world to camera (x_cam = R x_world + t). Angles are
degrees at API boundaries, radians internally. All functions here are pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateConfiguration, DegenerateGeometry, NonFiniteInput

_ORTHO_TOL = 1e-9


def _as_points(points) -> np.ndarray:
    """Coerce to an (N, 3) float array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class RigidTransform:
    """SE3 pose: ``apply(p) = rotation @ p + translation``.

    rotation is 3x3 orthonormal with det +1; translation is in mm.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        tr = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tr))):
            raise NonFiniteInput("rigid transform entries must be finite")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have det +1 (no reflections)")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        m = np.asarray(matrix, dtype=float).reshape(4, 4)
        if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-9:
            raise ValueError("last row of a rigid 4x4 matrix must be [0,0,0,1]")
        return cls(m[:3, :3], m[:3, 3])

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        """Transform a (3,) point or (N, 3) point array."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        out = _as_points(pts) @ self.rotation.T + self.translation
        return out[0] if single else out

    def invert(self) -> "RigidTransform":
        rot = self.rotation.T
        return RigidTransform(rot, -rot @ self.translation)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equal to applying ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    return t.invert()


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with 5-coefficient Brown-Conrady distortion
    (k1, k2, p1, p2, k3, applied to normalized image coordinates)."""

    focal: tuple
    principal_point: tuple
    distortion: np.ndarray
    image_size: tuple

    def __post_init__(self):
        fx, fy = (float(v) for v in self.focal)
        cx, cy = (float(v) for v in self.principal_point)
        w, h = (int(v) for v in self.image_size)
        dist = np.asarray(self.distortion, dtype=float).reshape(5)
        if fx <= 0 or fy <= 0:
            raise ValueError("focal components must be strictly positive")
        if not (0 <= cx < w and 0 <= cy < h):
            raise ValueError("principal point must lie inside image bounds")
        object.__setattr__(self, "focal", (fx, fy))
        object.__setattr__(self, "principal_point", (cx, cy))
        object.__setattr__(self, "image_size", (w, h))
        object.__setattr__(self, "distortion", dist)


@dataclass(frozen=True)
class CameraModel:
    """One calibrated view: intrinsics, distortion, and world-to-camera pose."""

    focal: tuple
    principal_point: tuple
    distortion: np.ndarray
    extrinsic: RigidTransform
    image_size: tuple

    def __post_init__(self):
        intr = CameraIntrinsics(self.focal, self.principal_point,
                                self.distortion, self.image_size)
        object.__setattr__(self, "focal", intr.focal)
        object.__setattr__(self, "principal_point", intr.principal_point)
        object.__setattr__(self, "distortion", intr.distortion)
        object.__setattr__(self, "image_size", intr.image_size)

    @classmethod
    def from_intrinsics(cls, intr: CameraIntrinsics,
                        extrinsic: RigidTransform) -> "CameraModel":
        return cls(intr.focal, intr.principal_point, intr.distortion,
                   extrinsic, intr.image_size)

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.focal, self.principal_point,
                                self.distortion, self.image_size)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates (mm)."""
        e = self.extrinsic
        return -e.rotation.T @ e.translation


def _distort(xy: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Apply Brown-Conrady distortion to normalized coords (N, 2)."""
    k1, k2, p1, p2, k3 = dist
    x, y = xy[:, 0], xy[:, 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=1)


def _distort_jacobian(xy: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """d(distorted)/d(normalized) as (N, 2, 2)."""
    k1, k2, p1, p2, k3 = dist
    x, y = xy[:, 0], xy[:, 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    dradial = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)  # d(radial)/d(r2)
    jac = np.empty((xy.shape[0], 2, 2))
    jac[:, 0, 0] = radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x
    jac[:, 0, 1] = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y
    jac[:, 1, 0] = 2.0 * x * y * dradial + 2.0 * p1 * y + 2.0 * p2 * x
    jac[:, 1, 1] = radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x
    return jac


def _project_camera_points(pts_cam: np.ndarray, focal, principal_point,
                           dist: np.ndarray):
    """Project camera-frame points to pixels.

    Returns (pixels (N,2), in_front (N,) bool). Rows with depth <= 0 are NaN.
    """
    fx, fy = focal
    cx, cy = principal_point
    z = pts_cam[:, 2]
    in_front = z > 1e-9
    pixels = np.full((pts_cam.shape[0], 2), np.nan)
    if np.any(in_front):
        xy = pts_cam[in_front, :2] / z[in_front, None]
        xy = _distort(xy, dist)
        pixels[in_front, 0] = fx * xy[:, 0] + cx
        pixels[in_front, 1] = fy * xy[:, 1] + cy
    return pixels, in_front


def project_many(cam: CameraModel, points):
    """Project (N, 3) world points; returns (pixels (N,2), visible (N,) bool).

    A point is visible when it is in front of the camera and its pixel lies
    inside the image bounds. Behind-camera rows come back as NaN pixels.
    """
    pts = _as_points(points)
    if not np.all(np.isfinite(pts)):
        raise NonFiniteInput("cannot project non-finite points")
    pts_cam = cam.extrinsic.apply(pts)
    pixels, in_front = _project_camera_points(
        pts_cam, cam.focal, cam.principal_point, cam.distortion)
    w, h = cam.image_size
    with np.errstate(invalid="ignore"):
        in_bounds = ((pixels[:, 0] >= 0) & (pixels[:, 0] < w)
                     & (pixels[:, 1] >= 0) & (pixels[:, 1] < h))
    return pixels, in_front & in_bounds


def project(cam: CameraModel, point):
    """Project one world point. Returns (pixel or None, visible flag)."""
    pixels, visible = project_many(cam, np.asarray(point, dtype=float).reshape(1, 3))
    pixel = pixels[0]
    if not np.all(np.isfinite(pixel)):
        return None, False
    return pixel, bool(visible[0])


def undistort_pixels(cam: CameraModel, pixels, iterations: int = 30) -> np.ndarray:
    """Invert distortion for (N, 2) pixels -> normalized coords (N, 2).

    Fixed-point iteration; converges to <1e-9 for moderate distortion.
    """
    fx, fy = cam.focal
    cx, cy = cam.principal_point
    k1, k2, p1, p2, k3 = cam.distortion
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    xd = (px[:, 0] - cx) / fx
    yd = (px[:, 1] - cy) / fy
    x, y = xd.copy(), yd.copy()
    if not np.any(cam.distortion):
        return np.stack([x, y], axis=1)
    for _ in range(iterations):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x_new = (xd - dx) / radial
        y_new = (yd - dy) / radial
        if max(np.max(np.abs(x_new - x)), np.max(np.abs(y_new - y))) < 1e-14:
            x, y = x_new, y_new
            break
        x, y = x_new, y_new
    return np.stack([x, y], axis=1)


def undistort_pixel(cam: CameraModel, pixel, iterations: int = 30) -> np.ndarray:
    """Single-pixel variant of :func:`undistort_pixels`."""
    return undistort_pixels(cam, np.asarray(pixel, dtype=float).reshape(1, 2),
                            iterations)[0]


def unproject(cam: CameraModel, pixel, depth: float) -> np.ndarray:
    """World point on the ray through ``pixel`` at camera depth ``depth`` mm."""
    x, y = undistort_pixel(cam, pixel)
    pt_cam = np.array([x * depth, y * depth, depth])
    return cam.extrinsic.invert().apply(pt_cam)


def rigid_fit(source, target):
    """Least-squares rigid alignment (Kabsch, no scale): finds T minimizing
    sum ||T.apply(source_i) - target_i||^2.

    Returns (RigidTransform, rms residual mm). Raises DegenerateConfiguration
    for fewer than 3 points or a collinear source set.
    """
    src = _as_points(source)
    tgt = _as_points(target)
    if src.shape != tgt.shape:
        raise ValueError("source and target must have equal lengths")
    if src.shape[0] < 3:
        raise DegenerateConfiguration(
            f"rigid fit needs >= 3 correspondences, got {src.shape[0]}")
    c_src = src.mean(axis=0)
    c_tgt = tgt.mean(axis=0)
    src_c = src - c_src
    tgt_c = tgt - c_tgt
    sv = np.linalg.svd(src_c, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateConfiguration("source points are collinear")
    h = src_c.T @ tgt_c
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    tr = c_tgt - rot @ c_src
    transform = RigidTransform(rot, tr)
    residuals = transform.apply(src) - tgt
    rms = float(np.sqrt(np.mean(np.sum(residuals ** 2, axis=1))))
    return transform, rms


def _ray_directions(observations, normalized: np.ndarray) -> np.ndarray:
    """Unit world-frame ray directions for (camera, pixel) observations."""
    dirs = np.empty((len(observations), 3))
    for i, (cam, _) in enumerate(observations):
        d_cam = np.array([normalized[i, 0], normalized[i, 1], 1.0])
        d_world = cam.extrinsic.rotation.T @ d_cam
        dirs[i] = d_world / np.linalg.norm(d_world)
    return dirs


def _max_pairwise_angle_deg(dirs: np.ndarray) -> float:
    cosines = np.clip(dirs @ dirs.T, -1.0, 1.0)
    iu = np.triu_indices(len(dirs), k=1)
    return float(np.degrees(np.arccos(cosines[iu]).max()))


def _reprojection_residuals(observations, point: np.ndarray) -> np.ndarray:
    res = np.empty(2 * len(observations))
    for i, (cam, pixel) in enumerate(observations):
        pt_cam = cam.extrinsic.apply(point).reshape(1, 3)
        pred, _ = _project_camera_points(pt_cam, cam.focal,
                                         cam.principal_point, cam.distortion)
        res[2 * i:2 * i + 2] = np.asarray(pixel, dtype=float) - pred[0]
    return res


def _point_jacobian(cam: CameraModel, point: np.ndarray) -> np.ndarray:
    """d(pixel)/d(world point) for one camera, shape (2, 3)."""
    fx, fy = cam.focal
    pt_cam = cam.extrinsic.apply(point)
    z = pt_cam[2]
    xy = (pt_cam[:2] / z).reshape(1, 2)
    j_norm = np.array([[1.0 / z, 0.0, -pt_cam[0] / z ** 2],
                       [0.0, 1.0 / z, -pt_cam[1] / z ** 2]])
    j_dist = _distort_jacobian(xy, cam.distortion)[0]
    j_pix = np.diag([fx, fy]) @ j_dist @ j_norm
    return j_pix @ cam.extrinsic.rotation


def triangulate(observations, min_angle_deg: float = 1.0):
    """Recover a 3D point from >= 2 pixel observations in calibrated views.

    DLT on undistorted normalized coordinates initializes the point; a
    Levenberg-Marquardt refinement of the point alone then minimizes total
    squared pixel reprojection error. Returns (point mm, rms residual px).

    Raises DegenerateGeometry when fewer than 2 observations are given or
    the widest pair of viewing rays subtends less than ``min_angle_deg``.
    """
    observations = list(observations)
    if len(observations) < 2:
        raise DegenerateGeometry(
            f"triangulation needs >= 2 observations, got {len(observations)}")
    normalized = np.vstack([undistort_pixels(cam, np.reshape(pixel, (1, 2)))
                            for cam, pixel in observations])
    dirs = _ray_directions(observations, normalized)
    angle = _max_pairwise_angle_deg(dirs)
    if angle < min_angle_deg:
        raise DegenerateGeometry(
            f"max triangulation angle {angle:.3f} deg below "
            f"{min_angle_deg:.3f} deg threshold")

    # DLT rows: x * P[2] - P[0], y * P[2] - P[1] on normalized coords (K = I).
    a = np.zeros((2 * len(observations), 4))
    for i, (cam, _) in enumerate(observations):
        x, y = normalized[i]
        p = np.hstack([cam.extrinsic.rotation,
                       cam.extrinsic.translation.reshape(3, 1)])
        a[2 * i] = x * p[2] - p[0]
        a[2 * i + 1] = y * p[2] - p[1]
    _, _, vt = np.linalg.svd(a)
    hom = vt[-1]
    if abs(hom[3]) < 1e-15:
        raise DegenerateGeometry("triangulated point at infinity")
    point = hom[:3] / hom[3]

    # LM refinement of the 3D point.
    lam = 1e-6
    res = _reprojection_residuals(observations, point)
    cost = float(res @ res)
    for _ in range(50):
        jac = np.vstack([_point_jacobian(cam, point)
                         for cam, _ in observations])
        g = jac.T @ res
        h = jac.T @ jac
        stepped = False
        for _ in range(10):
            try:
                step = np.linalg.solve(h + lam * np.eye(3), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = point + step
            cand_res = _reprojection_residuals(observations, candidate)
            cand_cost = float(cand_res @ cand_res)
            if cand_cost <= cost:
                improvement = cost - cand_cost
                point, res, cost = candidate, cand_res, cand_cost
                lam = max(lam * 0.3, 1e-12)
                stepped = True
                break
            lam *= 10.0
        if not stepped or np.linalg.norm(step) < 1e-12:
            break
        if improvement <= 1e-12 * max(cost, 1e-20):
            break
    rms = math.sqrt(cost / len(observations))
    return point, rms


def triangulate_many(cameras, pixels, min_angle_deg: float = 1.0):
    """Triangulate K points observed by the same V >= 2 cameras at once.

    ``pixels`` is (K, V, 2), one row of per-view pixels per point. Runs the
    same DLT + point-wise LM as :func:`triangulate`, vectorized across
    points. Points whose widest ray pair subtends less than
    ``min_angle_deg`` come back as NaN rows. Returns (points (K, 3),
    rms (K,) px).
    """
    cameras = list(cameras)
    pixels = np.asarray(pixels, dtype=float)
    k, v = pixels.shape[0], len(cameras)
    if v < 2:
        raise DegenerateGeometry(f"triangulation needs >= 2 views, got {v}")
    if pixels.shape[1] != v:
        raise ValueError("pixels second axis must match camera count")
    rots = np.stack([c.extrinsic.rotation for c in cameras])
    trs = np.stack([c.extrinsic.translation for c in cameras])
    focals = np.array([c.focal for c in cameras])
    centers = np.array([c.principal_point for c in cameras])
    dists = np.stack([c.distortion for c in cameras])

    norm = np.stack([undistort_pixels(cameras[j], pixels[:, j])
                     for j in range(v)], axis=1)       # (K, V, 2)

    # Per-point degenerate-ray gate.
    d_cam = np.concatenate([norm, np.ones((k, v, 1))], axis=2)
    d_world = np.einsum("vba,kvb->kva", rots, d_cam)
    d_world /= np.linalg.norm(d_world, axis=2, keepdims=True)
    cosines = np.clip(np.einsum("kia,kja->kij", d_world, d_world), -1.0, 1.0)
    iu = np.triu_indices(v, k=1)
    max_angle = np.degrees(np.arccos(cosines[:, iu[0], iu[1]])).max(axis=1)
    ok = max_angle >= min_angle_deg

    # Batched DLT on normalized coordinates.
    p_mats = np.concatenate([rots, trs[:, :, None]], axis=2)   # (V, 3, 4)
    a = np.empty((k, 2 * v, 4))
    a[:, 0::2] = norm[:, :, 0:1] * p_mats[None, :, 2] - p_mats[None, :, 0]
    a[:, 1::2] = norm[:, :, 1:2] * p_mats[None, :, 2] - p_mats[None, :, 1]
    _, _, vts = np.linalg.svd(a)
    hom = vts[:, -1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        points = hom[:, :3] / hom[:, 3:4]
    ok &= np.abs(hom[:, 3]) > 1e-15

    def eval_batch(pts):
        pts_cam = np.einsum("vab,kb->kva", rots, pts) + trs
        z = pts_cam[..., 2]
        bad = z <= 1e-9
        z_safe = np.where(bad, 1.0, z)
        xy = pts_cam[..., :2] / z_safe[..., None]
        k1, k2, p1, p2, k3 = (dists[:, i] for i in range(5))
        x, y = xy[..., 0], xy[..., 1]
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
        yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
        pred = np.stack([focals[:, 0] * xd + centers[:, 0],
                         focals[:, 1] * yd + centers[:, 1]], axis=2)
        res = pixels - pred
        res[bad] = np.nan
        cost = np.sum(res.reshape(len(pts), -1) ** 2, axis=1)
        return pts_cam, xy, res, cost

    def jac_batch(pts_cam, xy):
        z = np.where(pts_cam[..., 2] <= 1e-9, 1.0, pts_cam[..., 2])
        j_norm = np.zeros(pts_cam.shape[:2] + (2, 3))
        j_norm[..., 0, 0] = 1.0 / z
        j_norm[..., 1, 1] = 1.0 / z
        j_norm[..., 0, 2] = -pts_cam[..., 0] / z ** 2
        j_norm[..., 1, 2] = -pts_cam[..., 1] / z ** 2
        k1, k2, p1, p2, k3 = (dists[:, i] for i in range(5))
        x, y = xy[..., 0], xy[..., 1]
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dradial = k1 + r2 * (2 * k2 + 3 * k3 * r2)
        j_dist = np.empty(pts_cam.shape[:2] + (2, 2))
        j_dist[..., 0, 0] = radial + 2 * x * x * dradial + 2 * p1 * y + 6 * p2 * x
        j_dist[..., 0, 1] = 2 * x * y * dradial + 2 * p1 * x + 2 * p2 * y
        j_dist[..., 1, 0] = 2 * x * y * dradial + 2 * p1 * y + 2 * p2 * x
        j_dist[..., 1, 1] = radial + 2 * y * y * dradial + 6 * p1 * y + 2 * p2 * x
        f_mat = np.zeros((v, 2, 2))
        f_mat[:, 0, 0] = focals[:, 0]
        f_mat[:, 1, 1] = focals[:, 1]
        j_pix = np.einsum("vab,kvbc,kvcd->kvad", f_mat, j_dist, j_norm)
        return np.einsum("kvab,vbc->kvac", j_pix, rots)

    points = np.where(ok[:, None], points, np.nan)
    pts_cam, xy, res, cost = eval_batch(np.nan_to_num(points))
    cost = np.where(ok, cost, np.nan)
    lam = np.full(k, 1e-6)
    active = ok & np.isfinite(cost)
    for _ in range(30):
        if not active.any():
            break
        prev_cost = cost.copy()
        jac = jac_batch(pts_cam, xy)                      # (K, V, 2, 3)
        jf = jac.reshape(k, 2 * v, 3)
        rf = np.nan_to_num(res.reshape(k, 2 * v))
        g = np.einsum("kra,kr->ka", jf, rf)
        h = np.einsum("kra,krb->kab", jf, jf)
        improved = np.zeros(k, dtype=bool)
        for _ in range(8):
            trial = active & ~improved
            if not trial.any():
                break
            h_damped = h + lam[:, None, None] * np.eye(3)
            try:
                step = np.linalg.solve(h_damped[trial],
                                       g[trial][..., None])[..., 0]
            except np.linalg.LinAlgError:
                lam[trial] *= 10.0
                continue
            cand = points.copy()
            cand[trial] += step
            _, _, cand_res, cand_cost = eval_batch(np.nan_to_num(cand))
            better = trial.copy()
            better[trial] = np.nan_to_num(cand_cost[trial],
                                          nan=np.inf) <= cost[trial]
            points[better] = cand[better]
            cost[better] = cand_cost[better]
            lam[better] = np.maximum(lam[better] * 0.3, 1e-12)
            worse = trial & ~better
            lam[worse] *= 10.0
            improved |= better
        pts_cam, xy, res, cost = eval_batch(np.nan_to_num(points))
        stalled = prev_cost - cost <= 1e-12 * np.maximum(cost, 1e-20)
        active &= improved & ~stalled
    cost = np.where(ok, cost, np.nan)
    rms = np.sqrt(cost / v)
    points = np.where(ok[:, None], points, np.nan)
    return points, rms


def _pose_residuals_and_jacobian(world: np.ndarray, pixels: np.ndarray,
                                 rot: np.ndarray, tr: np.ndarray,
                                 intr: CameraIntrinsics, with_jac: bool):
    fx, fy = intr.focal
    pts_cam = world @ rot.T + tr
    pred, in_front = _project_camera_points(pts_cam, intr.focal,
                                            intr.principal_point,
                                            intr.distortion)
    if not np.all(in_front):
        return None, None
    res = (pixels - pred).ravel()
    if not with_jac:
        return res, None
    n = world.shape[0]
    z = pts_cam[:, 2]
    xy = pts_cam[:, :2] / z[:, None]
    j_norm = np.zeros((n, 2, 3))
    j_norm[:, 0, 0] = 1.0 / z
    j_norm[:, 1, 1] = 1.0 / z
    j_norm[:, 0, 2] = -pts_cam[:, 0] / z ** 2
    j_norm[:, 1, 2] = -pts_cam[:, 1] / z ** 2
    j_dist = _distort_jacobian(xy, intr.distortion)
    j_pix = np.einsum("ab,nbc,ncd->nad", np.diag([fx, fy]), j_dist, j_norm)
    # Left-multiplied rotation update R <- exp(skew(delta)) R:
    # d(pts_cam)/d(delta) = -skew(R @ world) and d(pts_cam)/d(dt) = I.
    rw = world @ rot.T
    skew = np.zeros((n, 3, 3))
    skew[:, 0, 1] = -rw[:, 2]
    skew[:, 0, 2] = rw[:, 1]
    skew[:, 1, 0] = rw[:, 2]
    skew[:, 1, 2] = -rw[:, 0]
    skew[:, 2, 0] = -rw[:, 1]
    skew[:, 2, 1] = rw[:, 0]
    jac = np.empty((n, 2, 6))  # d(res)/d(delta, dt) with res = obs - pred
    jac[:, :, :3] = np.einsum("nab,nbc->nac", j_pix, skew)
    jac[:, :, 3:] = -j_pix
    return res, jac.reshape(2 * n, 6)


def solve_pnp(world_points, pixels, intrinsics: CameraIntrinsics):
    """Estimate the world-to-camera extrinsic from >= 6 2D/3D correspondences.

    DLT on undistorted normalized coordinates initializes the pose; LM over
    the 6-DOF pose then minimizes pixel reprojection error.
    Returns (RigidTransform extrinsic, rms reprojection px).
    """
    world = _as_points(world_points)
    pix = np.asarray(pixels, dtype=float).reshape(-1, 2)
    n = world.shape[0]
    if n < 6 or pix.shape[0] != n:
        raise DegenerateConfiguration(
            f"PnP needs >= 6 correspondences, got {n}")
    sv = np.linalg.svd(world - world.mean(axis=0), compute_uv=False)
    if sv[2] <= 1e-6 * max(sv[0], 1.0):
        raise DegenerateConfiguration(
            "3D points are coplanar; DLT pose is ambiguous")

    dummy_extr = RigidTransform.identity()
    cam = CameraModel.from_intrinsics(intrinsics, dummy_extr)
    norm = undistort_pixels(cam, pix)

    # DLT for P = [R|t] up to scale, rows from x*P[2]-P[0], y*P[2]-P[1].
    a = np.zeros((2 * n, 12))
    xh = np.hstack([world, np.ones((n, 1))])
    a[0::2, 8:12] = norm[:, [0]] * xh
    a[0::2, 0:4] = -xh
    a[1::2, 8:12] = norm[:, [1]] * xh
    a[1::2, 4:8] = -xh
    _, _, vt = np.linalg.svd(a)
    p = vt[-1].reshape(3, 4)
    m, b = p[:, :3], p[:, 3]
    tau = np.sign(np.linalg.det(m))
    if tau == 0:
        raise DegenerateConfiguration("singular DLT solution")
    u, s, vt2 = np.linalg.svd(tau * m)
    rot = u @ vt2
    if np.linalg.det(rot) < 0:
        rot = u @ np.diag([1.0, 1.0, -1.0]) @ vt2
    scale = 3.0 * tau / s.sum()
    tr = scale * b
    if np.mean((world @ rot.T + tr)[:, 2]) < 0:
        raise DegenerateConfiguration("points project behind the camera")

    # LM refinement over (rotation, translation).
    lam = 1e-6
    res, _ = _pose_residuals_and_jacobian(world, pix, rot, tr, intrinsics, False)
    if res is None:
        raise DegenerateConfiguration("initial pose places points behind camera")
    cost = float(res @ res)
    for _ in range(60):
        out = _pose_residuals_and_jacobian(world, pix, rot, tr, intrinsics, True)
        res, jac = out
        g = jac.T @ res
        h = jac.T @ jac
        stepped = False
        for _ in range(12):
            try:
                step = np.linalg.solve(h + lam * np.diag(np.diag(h) + 1e-12),
                                       -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand_rot = Rotation.from_rotvec(step[:3]).as_matrix() @ rot
            cand_tr = tr + step[3:]
            cand = _pose_residuals_and_jacobian(world, pix, cand_rot, cand_tr,
                                                intrinsics, False)[0]
            if cand is not None:
                cand_cost = float(cand @ cand)
                if cand_cost <= cost:
                    improvement = cost - cand_cost
                    rot, tr, cost = cand_rot, cand_tr, cand_cost
                    lam = max(lam * 0.3, 1e-12)
                    stepped = True
                    break
            lam *= 10.0
        if not stepped or np.linalg.norm(step) < 1e-14:
            break
        if improvement <= 1e-12 * max(cost, 1e-20):
            break
    # Re-orthonormalize accumulated rotation drift.
    u, _, vt2 = np.linalg.svd(rot)
    rot = u @ vt2
    extrinsic = RigidTransform(rot, tr)
    res, _ = _pose_residuals_and_jacobian(world, pix, rot, tr, intrinsics, False)
    rms = float(np.sqrt(np.mean(np.sum(res.reshape(-1, 2) ** 2, axis=1))))
    return extrinsic, rms
