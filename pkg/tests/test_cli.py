"""CLI tests: full pipeline runs on synthetic scenes through the click
runner, including the noiseless pipeline-identity chain and determinism."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from mocapannot import fileio
from mocapannot.cli import main


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


def run(runner, *args):
    result = runner.invoke(main, list(args), catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


@pytest.fixture(scope="module")
def noiseless_scene(tmp_path_factory, runner):
    """synth -> sync -> repair -> track -> template -> propagate, all with
    zero noise. Shared by the identity-chain assertions below."""
    outdir = tmp_path_factory.mktemp("scene")
    run(runner, "synth", "--out", str(outdir), "--seed", "7",
        "--frames", "240", "--prediction-noise", "0")
    manifest = str(outdir / "manifest.toml")
    run(runner, "sync", "--config", manifest)
    run(runner, "repair", "--config", manifest)
    run(runner, "track", "--config", manifest)
    run(runner, "template", "--config", manifest)
    run(runner, "propagate", "--config", manifest)
    return outdir


class TestPipelineIdentity:
    def test_sync_recovers_known_offset(self, noiseless_scene):
        clocks = fileio.read_clocks_json(
            noiseless_scene / "outputs" / "clock.json")
        truth = fileio.read_clocks_json(
            noiseless_scene / "truth" / "clock.json")
        for camera_id, clock in clocks.items():
            assert clock.offset == pytest.approx(truth[camera_id].offset,
                                                 abs=1e-9)
            assert clock.rate == pytest.approx(truth[camera_id].rate,
                                               rel=1e-12)

    def test_template_matches_truth(self, noiseless_scene):
        for individual in ("bird0", "bird1"):
            estimated = fileio.read_template_json(
                noiseless_scene / "outputs" / f"template_{individual}.json")
            truth = fileio.read_template_json(
                noiseless_scene / "truth" / f"template_{individual}.json")
            for keypoint, offset in truth.offsets.items():
                np.testing.assert_allclose(estimated.offsets[keypoint],
                                           offset, atol=1e-6)

    def test_metrics_zero_on_noiseless_predictions(self, noiseless_scene,
                                                   runner):
        run(runner, "metrics", "--config",
            str(noiseless_scene / "manifest.toml"))
        payload = json.loads(
            (noiseless_scene / "outputs" / "metrics.json").read_text())
        for keypoint, entry in payload["rmse_px"].items():
            assert entry["rmse"] < 1e-6, keypoint
        for keypoint, entry in payload["pck"].items():
            assert entry["pck05"] == 1.0

    def test_outputs_exist(self, noiseless_scene):
        outputs = noiseless_scene / "outputs"
        expected = ["annotations_3d.csv", "boxes.csv", "crop_flags.csv",
                    "tracks.csv", "clock.json"]
        expected += [f"annotations_2d_cam{i}.csv" for i in range(4)]
        for name in expected:
            assert (outputs / name).exists(), name


class TestCalibrate:
    def test_noiseless_calibration_recovers_extrinsics(self, tmp_path,
                                                       runner):
        outdir = tmp_path / "scene"
        run(runner, "synth", "--out", str(outdir), "--seed", "3",
            "--frames", "240", "--prediction-noise", "0")
        manifest = str(outdir / "manifest.toml")
        run(runner, "sync", "--config", manifest)
        truth = {f"cam{i}": fileio.read_calibration_json(
            outdir / "calibration" / f"cam{i}.json") for i in range(4)}
        # Overwrite stored extrinsics with identity, keeping intrinsics.
        from mocapannot.geometry import CameraModel, RigidTransform
        for camera_id, cam in truth.items():
            fileio.write_calibration_json(
                outdir / "calibration" / f"{camera_id}.json",
                CameraModel.from_intrinsics(cam.intrinsics,
                                            RigidTransform.identity()))
        run(runner, "calibrate", "--config", manifest)
        for camera_id, true_cam in truth.items():
            solved = fileio.read_calibration_json(
                outdir / "calibration" / f"{camera_id}.json")
            np.testing.assert_allclose(
                solved.extrinsic.to_matrix(),
                true_cam.extrinsic.to_matrix(), atol=1e-3)
            report = json.loads(
                (outdir / "outputs" /
                 f"calibration_report_{camera_id}.json").read_text())
            assert report["rms_px"] < 1e-6


class TestQaFilter:
    def test_corrupted_frames_reported(self, tmp_path, runner):
        outdir = tmp_path / "scene"
        run(runner, "synth", "--out", str(outdir), "--seed", "11",
            "--frames", "300", "--prediction-noise", "2")
        manifest = str(outdir / "manifest.toml")
        for cmd in ("sync", "repair", "track", "template", "propagate"):
            run(runner, cmd, "--config", manifest)
        # Corrupt bird0's head annotations on a contiguous frame block by
        # shifting the stored 2D annotations (simulating a bad 6-DOF pose).
        corrupted = set(range(100, 115))
        for i in range(4):
            path = outdir / "outputs" / f"annotations_2d_cam{i}.csv"
            lines = path.read_text().splitlines()
            out = [lines[0]]
            for line in lines[1:]:
                cells = line.split(",")
                frame, individual, keypoint = int(cells[0]), cells[1], cells[2]
                if (frame in corrupted and individual == "bird0"
                        and keypoint in ("beak", "nose", "left_eye",
                                         "right_eye") and cells[3]):
                    cells[3] = repr(float(cells[3]) + 55.0)
                    cells[4] = repr(float(cells[4]) - 40.0)
                out.append(",".join(cells))
            path.write_text("\n".join(out) + "\n")
        run(runner, "qa-filter", "--config", manifest)
        report = json.loads(
            (outdir / "outputs" / "qa_report.json").read_text())
        dropped = set(report["bird0"]["dropped"])
        assert corrupted.issubset(dropped)
        clean_dropped = dropped - corrupted
        assert len(clean_dropped) <= 3
        assert report["bird1"]["dropped"] == []


class TestHybridExp:
    def test_report_orders_methods(self, tmp_path, runner):
        outdir = tmp_path / "scene"
        run(runner, "synth", "--out", str(outdir), "--seed", "13",
            "--frames", "900", "--prediction-noise", "2")
        manifest = str(outdir / "manifest.toml")
        for cmd in ("sync", "repair", "track", "template", "propagate"):
            run(runner, cmd, "--config", manifest)
        exp_path = outdir / "experiment.toml"
        fileio.write_toml(exp_path, {
            "manifest": "manifest.toml", "individual": "bird0",
            "seed": 5, "fraction": 0.25, "min_frames": 30,
            "max_frames": 90})
        run(runner, "hybrid-exp", "--config", str(exp_path))
        report = json.loads(
            (outdir / "outputs" / "hybrid_report.json").read_text())
        assert report["unfilled"] == []
        for keypoint, hybrid_rmse in report["rmse_mm"]["hybrid"].items():
            assert hybrid_rmse < report["rmse_mm"]["linear"][keypoint]

    def test_deterministic_under_seed(self, tmp_path, runner):
        outdir = tmp_path / "scene"
        run(runner, "synth", "--out", str(outdir), "--seed", "17",
            "--frames", "600", "--prediction-noise", "1")
        manifest = str(outdir / "manifest.toml")
        for cmd in ("sync", "repair", "track", "template", "propagate"):
            run(runner, cmd, "--config", manifest)
        exp_path = outdir / "experiment.toml"
        fileio.write_toml(exp_path, {
            "manifest": "manifest.toml", "seed": 23, "fraction": 0.2,
            "min_frames": 30, "max_frames": 60})
        run(runner, "hybrid-exp", "--config", str(exp_path))
        first = (outdir / "outputs" / "hybrid_report.json").read_bytes()
        run(runner, "hybrid-exp", "--config", str(exp_path))
        second = (outdir / "outputs" / "hybrid_report.json").read_bytes()
        assert first == second


class TestDeterminism:
    def test_synth_byte_identical_under_seed(self, tmp_path, runner):
        dir_a, dir_b = tmp_path / "a", tmp_path / "b"
        for outdir in (dir_a, dir_b):
            run(runner, "synth", "--out", str(outdir), "--seed", "21",
                "--frames", "120")
        for name in ("markers.csv", "bodies.json", "predictions.csv",
                     "manifest.toml", "clicks/annotations_bird0.json",
                     "calibration/cam0.json"):
            assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes(), \
                name


class TestErrors:
    def test_missing_manifest_machine_readable(self, runner):
        result = runner.invoke(main, ["sync", "--config", "/nope/mani.toml"])
        assert result.exit_code == 1
        payload = json.loads(result.output.strip().splitlines()[-1])
        assert payload["error"]["code"] == "pipeline.manifest_error"

    def test_pose_variation_runs(self, noiseless_scene, runner):
        run(runner, "pose-variation", "--config",
            str(noiseless_scene / "manifest.toml"))
        payload = json.loads(
            (noiseless_scene / "outputs" / "pose_variation.json").read_text())
        assert payload["unique_head"] > 1
        assert payload["unique_body"] >= 1
