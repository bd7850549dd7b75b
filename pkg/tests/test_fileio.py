"""Round-trip tests: every output file must pass through its own reader
without loss, and repeated writes must be byte-identical."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from mocapannot import fileio
from mocapannot.annotation import (
    KeypointTemplate,
    ManualAnnotation,
    propagate_sequence,
)
from mocapannot.geometry import CameraModel, RigidTransform
from mocapannot.mocap import BodyTrack, Marker, MarkerFrame, RigidBodyDef
from mocapannot.qc import PredictionRecord
from mocapannot.sync import ClockMap

from .test_annotation import TRUE_OFFSETS, make_clock, make_tracks
from .test_geometry import rig_cameras
from .test_mocap import HEAD_TEMPLATE


def test_markers_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    frames = []
    for i in range(20):
        markers = [Marker(f"m{j}", rng.uniform(-100, 100, 3))
                   for j in range(4)]
        if i == 7:
            markers.append(Marker("ghost", None, valid=False))
        frames.append(MarkerFrame(i, markers))
    path = tmp_path / "markers.csv"
    fileio.write_markers_csv(path, frames)
    back = fileio.read_markers_csv(path)
    assert len(back) == 20
    for orig, loaded in zip(frames, back):
        assert orig.frame_index == loaded.frame_index
        vo, vl = orig.valid_positions(), loaded.valid_positions()
        assert vo.keys() == vl.keys()
        for key in vo:
            np.testing.assert_array_equal(vo[key], vl[key])


def test_bodies_round_trip(tmp_path):
    body = RigidBodyDef("bird0_head", "head", "bird0", HEAD_TEMPLATE)
    path = tmp_path / "bodies.json"
    fileio.write_bodies_json(path, [body])
    (loaded,) = fileio.read_bodies_json(path)
    assert loaded.body_id == body.body_id
    assert loaded.part == body.part
    for mid in body.marker_template:
        np.testing.assert_array_equal(loaded.marker_template[mid],
                                      body.marker_template[mid])


def test_calibration_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    cam = CameraModel(
        focal=(2600.123456789, 2598.987654321),
        principal_point=(1920.5, 1080.25),
        distortion=np.array([-0.08123, 0.0211, 5.5e-4, -4.25e-4, 0.00513]),
        extrinsic=RigidTransform(
            Rotation.random(random_state=rng).as_matrix(),
            rng.uniform(-2000, 2000, 3)),
        image_size=(3840, 2160))
    path = tmp_path / "cam0.json"
    fileio.write_calibration_json(path, cam)
    loaded = fileio.read_calibration_json(path)
    assert loaded.focal == cam.focal
    assert loaded.principal_point == cam.principal_point
    np.testing.assert_array_equal(loaded.distortion, cam.distortion)
    np.testing.assert_array_equal(loaded.extrinsic.to_matrix(),
                                  cam.extrinsic.to_matrix())
    assert loaded.image_size == cam.image_size


def test_trace_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    intensity = rng.uniform(0, 255, 100)
    counts = rng.integers(4, 7, 100)
    fileio.write_trace_csv(tmp_path / "i.csv", intensity, "intensity")
    fileio.write_trace_csv(tmp_path / "c.csv", counts, "count")
    np.testing.assert_array_equal(
        fileio.read_trace_csv(tmp_path / "i.csv", "intensity"), intensity)
    np.testing.assert_array_equal(
        fileio.read_trace_csv(tmp_path / "c.csv", "count"), counts)


def test_annotations_round_trip(tmp_path):
    clicks = [
        ManualAnnotation("bird0", "cam0", 30, "beak",
                         np.array([100.5, 200.25])),
        ManualAnnotation("bird0", "cam1", 30, "tail", None, occluded=True),
    ]
    path = tmp_path / "clicks.json"
    fileio.write_annotations_json(path, clicks)
    loaded = fileio.read_annotations_json(path)
    assert len(loaded) == 2
    np.testing.assert_array_equal(loaded[0].pixel, clicks[0].pixel)
    assert loaded[1].occluded and loaded[1].pixel is None


def test_template_round_trip_and_determinism(tmp_path):
    rng = np.random.default_rng(9)
    template = KeypointTemplate(
        "bird0", {k: rng.uniform(-60, 60, 3) for k in TRUE_OFFSETS},
        {k: 5 for k in TRUE_OFFSETS},
        {k: (None if k == "beak" else rng.uniform(0, 2, 3))
         for k in TRUE_OFFSETS})
    path_a = tmp_path / "a.json"
    path_b = tmp_path / "b.json"
    fileio.write_template_json(path_a, template)
    fileio.write_template_json(path_b, template)
    assert path_a.read_bytes() == path_b.read_bytes()
    loaded = fileio.read_template_json(path_a)
    for keypoint in TRUE_OFFSETS:
        np.testing.assert_array_equal(loaded.offsets[keypoint],
                                      template.offsets[keypoint])
        spread = template.spreads[keypoint]
        if spread is None:
            assert loaded.spreads[keypoint] is None
        else:
            np.testing.assert_array_equal(loaded.spreads[keypoint], spread)


def test_tracks_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    n = 30
    track = BodyTrack(
        "bird0_head", np.arange(n),
        np.stack([Rotation.random(random_state=rng).as_matrix()
                  for _ in range(n)]),
        rng.uniform(-500, 500, (n, 3)),
        np.where(rng.random(n) < 0.2, np.nan, rng.uniform(0, 2, n)),
        rng.random(n) < 0.8)
    path = tmp_path / "tracks.csv"
    fileio.write_tracks_csv(path, [track])
    (loaded,) = fileio.read_tracks_csv(path)
    np.testing.assert_array_equal(loaded.frames, track.frames)
    np.testing.assert_array_equal(loaded.rotations, track.rotations)
    np.testing.assert_array_equal(loaded.translations, track.translations)
    np.testing.assert_array_equal(loaded.valid, track.valid)
    np.testing.assert_array_equal(np.isnan(loaded.residuals),
                                  np.isnan(track.residuals))


@pytest.fixture(scope="module")
def propagated_frames():
    cams = {f"cam{i}": cam for i, cam in enumerate(rig_cameras())}
    templates = {"bird0": KeypointTemplate(
        "bird0", dict(TRUE_OFFSETS), {k: 5 for k in TRUE_OFFSETS},
        {k: None for k in TRUE_OFFSETS})}
    tracks = {"bird0": make_tracks(invalid=((40, 50),))}
    frames = list(propagate_sequence(templates, tracks, cams, make_clock(),
                                     range(30)))
    return frames, cams


def test_annotation_outputs_round_trip(tmp_path, propagated_frames):
    frames, cams = propagated_frames
    path2d = tmp_path / "ann_cam0.csv"
    fileio.write_annotations_2d_csv(path2d, frames, "cam0")
    records = fileio.read_annotations_2d_csv(path2d, "cam0")
    by_key = {r.key: r.pixel for r in records}
    for frame in frames:
        ann = frame.individuals["bird0"]
        if not ann.valid:
            continue
        for keypoint, pixel in ann.views["cam0"].pixels.items():
            if pixel is None:
                continue
            np.testing.assert_array_equal(
                by_key[(frame.video_frame, "bird0", "cam0", keypoint)], pixel)

    path3d = tmp_path / "ann3d.csv"
    fileio.write_annotations_3d_csv(path3d, frames)
    series = fileio.read_annotations_3d_csv(path3d)["bird0"]
    for frame in frames:
        ann = frame.individuals["bird0"]
        i = list(series.frames).index(frame.video_frame)
        assert series.valid[i] == ann.valid
        if ann.valid:
            for keypoint, world in ann.keypoints3d.items():
                np.testing.assert_array_equal(series.positions[keypoint][i],
                                              world)

    path_boxes = tmp_path / "boxes.csv"
    fileio.write_boxes_csv(path_boxes, frames)
    boxes = fileio.read_boxes_csv(path_boxes)
    for frame in frames:
        ann = frame.individuals["bird0"]
        if not ann.valid:
            continue
        for camera_id, view in ann.views.items():
            if view.box is not None:
                assert boxes[(frame.video_frame, "bird0", camera_id)] == \
                    view.box


def test_predictions_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    records = [PredictionRecord(f, "bird0", "cam1", "beak",
                                rng.uniform(0, 4000, 2),
                                float(rng.uniform(0, 1)))
               for f in range(50)]
    path = tmp_path / "pred.csv"
    fileio.write_predictions_csv(path, records)
    loaded = fileio.read_predictions_csv(path)
    for orig, back in zip(records, loaded):
        assert orig.key == back.key
        np.testing.assert_array_equal(orig.pixel, back.pixel)
        assert orig.confidence == back.confidence


def test_clocks_round_trip(tmp_path):
    clocks = {"cam0": ClockMap(137.0, 100.0 / 30.0, 0.015, 30.0, 100.0),
              "cam1": ClockMap(136.5, 3.3331, 0.25, 30.0, 100.0)}
    path = tmp_path / "clock.json"
    fileio.write_clocks_json(path, clocks)
    loaded = fileio.read_clocks_json(path)
    assert loaded == clocks


def test_toml_round_trip(tmp_path):
    doc = {
        "sequence_id": "seq-001",
        "seed": 42,
        "rates": {"mocap_hz": 100.0, "video_hz": 30.0},
        "cameras": {"ids": ["cam0", "cam1"]},
        "paths": {"markers": "markers.csv", "bodies": "bodies.json"},
    }
    path = tmp_path / "manifest.toml"
    fileio.write_toml(path, doc)
    assert fileio.read_toml(path) == doc


def test_repair_log_round_trip(tmp_path):
    from mocapannot.mocap import RepairEntry

    entries = [RepairEntry(105, (0, 1, 3, 2), 0.002),
               RepairEntry(220, None, 48.7)]
    path = tmp_path / "repair.txt"
    fileio.write_repair_log(path, entries)
    loaded = fileio.read_repair_log(path)
    assert loaded == [(105, "(2 3)"), (220, "unrepairable")]


def test_crop_flags_round_trip(tmp_path):
    rows = [(0, "bird0", "cam0", True), (0, "bird1", "cam0", False),
            (1, "bird0", "cam2", True)]
    path = tmp_path / "crop_flags.csv"
    fileio.write_crop_flags_csv(path, rows)
    flags = fileio.read_crop_flags_csv(path)
    assert flags == {(0, "bird0", "cam0"): True,
                     (0, "bird1", "cam0"): False,
                     (1, "bird0", "cam2"): True}


def test_atomic_write_leaves_no_temp_files(tmp_path):
    path = tmp_path / "out.json"
    fileio.atomic_write_text(path, "{}\n")
    fileio.atomic_write_text(path, "{\"a\": 1}\n")
    leftovers = [p for p in tmp_path.iterdir() if p.name != "out.json"]
    assert leftovers == []
    assert path.read_text() == "{\"a\": 1}\n"
