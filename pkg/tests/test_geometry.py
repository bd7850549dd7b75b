"""Geometry tests: each expected value comes from an independent oracle
(explicit 4x4 matrix math, forward synthesis, or Monte-Carlo statistics)."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from mocapannot.errors import (
    DegenerateConfiguration,
    DegenerateGeometry,
    NonFiniteInput,
)
from mocapannot.geometry import (
    CameraIntrinsics,
    CameraModel,
    RigidTransform,
    compose,
    invert,
    project,
    project_many,
    rigid_fit,
    solve_pnp,
    triangulate,
    triangulate_many,
    undistort_pixel,
    unproject,
)


def random_transform(rng) -> RigidTransform:
    rot = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform(rot, rng.uniform(-1000, 1000, 3))


def matrix_apply(transform: RigidTransform, points: np.ndarray) -> np.ndarray:
    """Oracle: apply via explicit homogeneous 4x4 multiplication."""
    m = np.eye(4)
    m[:3, :3] = np.asarray(transform.rotation)
    m[:3, 3] = np.asarray(transform.translation)
    hom = np.hstack([points, np.ones((len(points), 1))])
    return (m @ hom.T).T[:, :3]


def pinhole_camera(extrinsic=None, distortion=(0, 0, 0, 0, 0),
                   focal=(2600.0, 2600.0), size=(3840, 2160)):
    return CameraModel(
        focal=focal,
        principal_point=(size[0] / 2, size[1] / 2),
        distortion=np.array(distortion, dtype=float),
        extrinsic=extrinsic or RigidTransform.identity(),
        image_size=size,
    )


def rig_cameras(distortion=(0, 0, 0, 0, 0)):
    """Four cameras at the corners of a 3.6 x 4.2 m area, ~1.6 m high,
    looking at the center."""
    cams = []
    for sx, sy in [(1, 1), (1, -1), (-1, 1), (-1, -1)]:
        eye = np.array([sx * 2400.0, sy * 2100.0, 1600.0])
        cams.append(look_at_camera(eye, np.array([0.0, 0.0, 200.0]),
                                   distortion=distortion))
    return cams


def look_at_camera(eye, target, distortion=(0, 0, 0, 0, 0)):
    forward = target - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rot_wc = np.stack([right, down, forward])  # rows: camera axes in world
    return pinhole_camera(
        extrinsic=RigidTransform(rot_wc, -rot_wc @ eye),
        distortion=distortion,
    )


class TestRigidTransform:
    def test_compose_identity(self):
        eye = RigidTransform.identity()
        out = compose(eye, eye)
        np.testing.assert_allclose(out.to_matrix(), np.eye(4), atol=1e-12)

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            t = random_transform(rng)
            out = compose(t, invert(t))
            np.testing.assert_allclose(out.to_matrix(), np.eye(4), atol=1e-9)

    def test_compose_matches_sequential_apply(self):
        rng = np.random.default_rng(11)
        t1 = random_transform(rng)
        t2 = random_transform(rng)
        points = rng.uniform(-500, 500, (100, 3))
        sequential = matrix_apply(t1, matrix_apply(t2, points))
        composed = compose(t1, t2).apply(points)
        np.testing.assert_allclose(composed, sequential, atol=1e-9)

    def test_compose_associative(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            a, b, c = (random_transform(rng) for _ in range(3))
            left = compose(a, compose(b, c)).to_matrix()
            right = compose(compose(a, b), c).to_matrix()
            np.testing.assert_allclose(left, right, atol=1e-9)

    def test_orthonormality_invariant(self):
        rng = np.random.default_rng(17)
        t = random_transform(rng)
        np.testing.assert_allclose(t.rotation.T @ t.rotation, np.eye(3),
                                   atol=1e-9)
        assert abs(np.linalg.det(t.rotation) - 1.0) < 1e-9

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_matrix_round_trip(self):
        rng = np.random.default_rng(19)
        t = random_transform(rng)
        back = RigidTransform.from_matrix(t.to_matrix())
        np.testing.assert_allclose(back.to_matrix(), t.to_matrix(), atol=0)


class TestRigidFit:
    def test_identity_when_source_equals_target(self):
        pts = np.array([[0, 0, 0], [40, 0, 0], [0, 30, 0], [10, 10, 25]],
                       dtype=float)
        t, rms = rigid_fit(pts, pts)
        np.testing.assert_allclose(t.to_matrix(), np.eye(4), atol=1e-12)
        assert rms < 1e-12

    def test_recovers_synthesized_transform(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            truth = random_transform(rng)
            src = rng.uniform(-60, 60, (4, 3))
            t, rms = rigid_fit(src, matrix_apply(truth, src))
            assert np.linalg.norm(t.rotation - truth.rotation) < 1e-9
            assert np.linalg.norm(t.translation - truth.translation) < 1e-9
            assert rms < 1e-9

    def test_noise_residual_monte_carlo(self):
        # 4 points, isotropic sigma = 0.5 mm: residual RMS stays in
        # [0.1, 1.5] mm for every one of 1000 seeded trials.
        rng = np.random.default_rng(29)
        src = np.array([[0, 0, 0], [50, 0, 0], [0, 40, 0], [15, 20, 35]],
                       dtype=float)
        residuals = []
        for _ in range(1000):
            truth = random_transform(rng)
            tgt = matrix_apply(truth, src) + rng.normal(0, 0.5, (4, 3))
            _, rms = rigid_fit(src, tgt)
            residuals.append(rms)
        residuals = np.array(residuals)
        assert residuals.min() >= 0.1
        assert residuals.max() <= 1.5

    def test_collinear_raises(self):
        pts = np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3]],
                       dtype=float)
        with pytest.raises(DegenerateConfiguration):
            rigid_fit(pts, pts)

    def test_too_few_points_raises(self):
        pts = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
        with pytest.raises(DegenerateConfiguration):
            rigid_fit(pts, pts)


class TestProjection:
    def test_optical_axis_hits_principal_point(self):
        cam = pinhole_camera()
        pixel, visible = project(cam, np.array([0.0, 0.0, 1500.0]))
        np.testing.assert_allclose(pixel, [1920.0, 1080.0], atol=1e-12)
        assert visible

    def test_analytic_pinhole(self):
        cam = pinhole_camera()
        x, y, z = 120.0, -80.0, 2500.0
        pixel, visible = project(cam, np.array([x, y, z]))
        fx, fy = cam.focal
        cx, cy = cam.principal_point
        np.testing.assert_allclose(
            pixel, [fx * x / z + cx, fy * y / z + cy], atol=1e-9)
        assert visible

    def test_distorted_round_trip(self):
        # project then iteratively undistort and reapply: < 1e-6 px.
        rng = np.random.default_rng(31)
        cam = pinhole_camera(distortion=(-0.08, 0.02, 5e-4, -4e-4, 0.005))
        pts = rng.uniform(-400, 400, (50, 3))
        pts[:, 2] = rng.uniform(1500, 4000, 50)
        pixels, _ = project_many(cam, pts)
        for px, pt in zip(pixels, pts):
            x, y = undistort_pixel(cam, px)
            np.testing.assert_allclose([x, y], pt[:2] / pt[2], atol=1e-12)
            redistorted, _ = project(cam, np.array([x, y, 1.0]) * pt[2])
            np.testing.assert_allclose(redistorted, px, atol=1e-6)

    def test_behind_camera_invisible(self):
        cam = pinhole_camera()
        pixel, visible = project(cam, np.array([0.0, 0.0, -100.0]))
        assert pixel is None
        assert not visible

    def test_outside_bounds_invisible(self):
        cam = pinhole_camera()
        pixel, visible = project(cam, np.array([10000.0, 0.0, 1000.0]))
        assert pixel is not None
        assert not visible

    def test_non_finite_rejected(self):
        cam = pinhole_camera()
        with pytest.raises(NonFiniteInput):
            project(cam, np.array([np.nan, 0.0, 100.0]))

    def test_unproject_round_trip(self):
        cam = pinhole_camera()
        for depth in (500.0, 1500.0, 4000.0):
            point = unproject(cam, np.array([2000.0, 900.0]), depth)
            pixel, _ = project(cam, point)
            np.testing.assert_allclose(pixel, [2000.0, 900.0], atol=1e-6)

    def test_focal_must_be_positive(self):
        with pytest.raises(ValueError):
            CameraModel(focal=(0.0, 100.0), principal_point=(10, 10),
                        distortion=np.zeros(5),
                        extrinsic=RigidTransform.identity(),
                        image_size=(100, 100))


class TestTriangulate:
    def test_noiseless_consistency(self):
        cams = rig_cameras()
        point = np.array([300.0, -200.0, 250.0])
        obs = []
        for cam in cams:
            pixel, visible = project(cam, point)
            assert visible
            obs.append((cam, pixel))
        recovered, rms = triangulate(obs)
        np.testing.assert_allclose(recovered, point, atol=1e-6)
        assert rms < 1e-8

    def test_noiseless_with_distortion(self):
        cams = rig_cameras(distortion=(-0.08, 0.02, 5e-4, -4e-4, 0.005))
        point = np.array([-150.0, 400.0, 180.0])
        obs = [(cam, project(cam, point)[0]) for cam in cams]
        recovered, rms = triangulate(obs)
        np.testing.assert_allclose(recovered, point, atol=1e-6)
        assert rms < 1e-8

    def test_pixel_noise_monte_carlo(self):
        # 1 px pixel noise at the rig scale: 3D RMS below 5 mm.
        rng = np.random.default_rng(37)
        cams = rig_cameras()
        errors = []
        for _ in range(300):
            point = rng.uniform(-800, 800, 3)
            point[2] = rng.uniform(50, 400)
            obs = []
            for cam in cams:
                pixel, _ = project(cam, point)
                obs.append((cam, pixel + rng.normal(0, 1.0, 2)))
            recovered, _ = triangulate(obs)
            errors.append(np.linalg.norm(recovered - point))
        rms = float(np.sqrt(np.mean(np.square(errors))))
        assert rms < 5.0

    def test_narrow_rays_degenerate(self):
        # Two cameras ~0.5 deg apart as seen from the point.
        point = np.array([0.0, 3000.0, 200.0])
        base = np.array([0.0, 0.0, 200.0])
        offset = np.array([3000.0 * np.tan(np.radians(0.5)), 0.0, 0.0])
        cam_a = look_at_camera(base, point)
        cam_b = look_at_camera(base + offset, point)
        obs = [(cam_a, project(cam_a, point)[0]),
               (cam_b, project(cam_b, point)[0])]
        with pytest.raises(DegenerateGeometry):
            triangulate(obs)

    def test_single_observation_degenerate(self):
        cam = pinhole_camera()
        with pytest.raises(DegenerateGeometry):
            triangulate([(cam, np.array([100.0, 100.0]))])

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(67)
        cams = rig_cameras(distortion=(-0.08, 0.02, 5e-4, -4e-4, 0.005))
        points = rng.uniform(-700, 700, (40, 3))
        points[:, 2] = rng.uniform(50, 400, 40)
        pixels = np.empty((40, 4, 2))
        for i, pt in enumerate(points):
            for j, cam in enumerate(cams):
                pixels[i, j] = project(cam, pt)[0] + rng.normal(0, 1.5, 2)
        batch_pts, batch_rms = triangulate_many(cams, pixels)
        for i in range(40):
            obs = [(cam, pixels[i, j]) for j, cam in enumerate(cams)]
            scalar_pt, scalar_rms = triangulate(obs)
            np.testing.assert_allclose(batch_pts[i], scalar_pt, atol=1e-6)
            assert batch_rms[i] == pytest.approx(scalar_rms, abs=1e-6)

    def test_batch_flags_degenerate_rows_nan(self):
        cam_a = look_at_camera(np.array([0.0, 0.0, 200.0]),
                               np.array([0.0, 3000.0, 200.0]))
        cam_b = look_at_camera(np.array([20.0, 0.0, 200.0]),
                               np.array([0.0, 3000.0, 200.0]))
        point = np.array([0.0, 3000.0, 200.0])
        pixels = np.array([[project(cam_a, point)[0],
                            project(cam_b, point)[0]]])
        pts, rms = triangulate_many([cam_a, cam_b], pixels)
        assert np.isnan(pts).all() and np.isnan(rms).all()


class TestSolvePnp:
    INTRINSICS = CameraIntrinsics(
        focal=(2600.0, 2600.0), principal_point=(1920.0, 1080.0),
        distortion=np.array([-0.08, 0.02, 5e-4, -4e-4, 0.005]),
        image_size=(3840, 2160))

    def synth_correspondences(self, rng, n, truth):
        cam = CameraModel.from_intrinsics(self.INTRINSICS, truth)
        world = np.empty((n, 3))
        world[:, 0] = rng.uniform(-2000, 2000, n)
        world[:, 1] = rng.uniform(-1500, 1500, n)
        world[:, 2] = rng.uniform(0, 500, n)
        pixels, _ = project_many(cam, world)
        return world, pixels

    def rig_pose(self, rng):
        eye = np.array([rng.uniform(2000, 2600), rng.uniform(1800, 2400),
                        rng.uniform(1400, 1900)])
        cam = look_at_camera(eye, np.array([0.0, 0.0, 200.0]))
        return cam.extrinsic

    def test_noiseless_recovery(self):
        rng = np.random.default_rng(41)
        truth = self.rig_pose(rng)
        world, pixels = self.synth_correspondences(rng, 30, truth)
        extrinsic, rms = solve_pnp(world, pixels, self.INTRINSICS)
        assert np.linalg.norm(extrinsic.rotation - truth.rotation) < 1e-6
        assert np.linalg.norm(extrinsic.translation - truth.translation) < 1e-3
        assert rms < 1e-6

    def test_noise_monte_carlo(self):
        # 30 correspondences, 1 px noise, 4 x 3 m volume: translation error
        # below 10 mm (checked on 200 seeded trials; acceptance runs 1000).
        rng = np.random.default_rng(43)
        for _ in range(200):
            truth = self.rig_pose(rng)
            world, pixels = self.synth_correspondences(rng, 30, truth)
            pixels = pixels + rng.normal(0, 1.0, pixels.shape)
            extrinsic, _ = solve_pnp(world, pixels, self.INTRINSICS)
            assert np.linalg.norm(extrinsic.translation - truth.translation) < 10.0

    def test_five_points_degenerate(self):
        rng = np.random.default_rng(47)
        truth = self.rig_pose(rng)
        world, pixels = self.synth_correspondences(rng, 5, truth)
        with pytest.raises(DegenerateConfiguration):
            solve_pnp(world, pixels, self.INTRINSICS)

    def test_coplanar_degenerate(self):
        rng = np.random.default_rng(53)
        truth = self.rig_pose(rng)
        world, _ = self.synth_correspondences(rng, 20, truth)
        world[:, 2] = 0.0
        cam = CameraModel.from_intrinsics(self.INTRINSICS, truth)
        pixels, _ = project_many(cam, world)
        with pytest.raises(DegenerateConfiguration):
            solve_pnp(world, pixels, self.INTRINSICS)


class TestDuality:
    def test_projection_triangulation_duality(self):
        rng = np.random.default_rng(59)
        cams = rig_cameras()
        for _ in range(25):
            point = rng.uniform(-700, 700, 3)
            point[2] = rng.uniform(20, 500)
            obs = [(cam, project(cam, point)[0]) for cam in cams]
            recovered, _ = triangulate(obs)
            np.testing.assert_allclose(recovered, point, atol=1e-6)

    def test_pnp_projection_duality(self):
        rng = np.random.default_rng(61)
        intr = CameraIntrinsics(focal=(2600.0, 2600.0),
                                principal_point=(1920.0, 1080.0),
                                distortion=np.zeros(5),
                                image_size=(3840, 2160))
        for _ in range(10):
            eye = np.array([rng.uniform(2000, 2600), rng.uniform(1800, 2400),
                            rng.uniform(1400, 1900)])
            truth = look_at_camera(eye, np.zeros(3)).extrinsic
            cam = CameraModel.from_intrinsics(intr, truth)
            world = rng.uniform(-1200, 1200, (15, 3))
            world[:, 2] = rng.uniform(0, 600, 15)
            pixels, _ = project_many(cam, world)
            extrinsic, _ = solve_pnp(world, pixels, intr)
            assert np.linalg.norm(extrinsic.rotation - truth.rotation) < 1e-6
            assert np.linalg.norm(extrinsic.translation - truth.translation) < 1e-3
