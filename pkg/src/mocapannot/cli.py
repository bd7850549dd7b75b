"""Command-line orchestration of the pipeline.

Every subcommand reads and writes the documented file formats relative to a
sequence manifest; failures surface as machine-readable JSON on stderr with
module-qualified error codes.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import fileio
from .annotation import KEYPOINT_NAMES, estimate_template, filter_training_crops
from .annotation import propagate_sequence
from .calibration import calibrate_extrinsics
from .errors import ToolkitError
from .geometry import CameraModel
from .hybrid import (
    GapSpec,
    compare_fills,
    fill_linear,
    fill_triangulation,
    introduce_gaps,
)
from .manifest import load_manifest
from .mocap import repair_labels, track_sequence
from .qc import (
    count_unique_poses,
    filter_frames,
    gap_statistics,
    match_pairs,
    pck_report,
    pose_orientation,
    rmse_report,
)
from .sync import (
    build_clock_map,
    detect_flashes_mocap,
    detect_flashes_video,
    fill_missing_flashes,
    IntensitySignal,
)
from .errors import DegeneratePlane


def _fail(error: ToolkitError):
    payload = {"error": {"code": error.code, "message": str(error)}}
    click.echo(json.dumps(payload), err=True)
    sys.exit(1)


def _table(headers, rows) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows
              else len(str(h)) for i, h in enumerate(headers)]
    def fmt(cells):
        return "  ".join(str(c).rjust(w) for c, w in zip(cells, widths))
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines)


@click.group()
def main():
    """Mo-cap driven 2D/3D keypoint annotation pipeline."""


@main.command()
@click.option("--out", "outdir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--frames", default=1000, show_default=True)
@click.option("--individuals", default=2, show_default=True)
@click.option("--cameras", default=4, show_default=True)
@click.option("--click-noise", default=0.0, show_default=True,
              help="Gaussian click noise in px for manual annotations.")
@click.option("--calib-noise", default=0.0, show_default=True)
@click.option("--prediction-noise", default=2.0, show_default=True)
@click.option("--clock-offset", default=137.0, show_default=True)
@click.option("--write-images", is_flag=True, default=False)
def synth(outdir, seed, frames, individuals, cameras, click_noise,
          calib_noise, prediction_noise, clock_offset, write_images):
    """Generate a ground-truth synthetic scene with manifest."""
    from .synth import SynthConfig, generate_scene, write_scene

    config = SynthConfig(seed=seed, n_individuals=individuals,
                         n_cameras=cameras, n_video_frames=frames,
                         clock_offset=clock_offset,
                         click_noise_px=click_noise,
                         calib_noise_px=calib_noise,
                         prediction_noise_px=prediction_noise,
                         write_images=write_images)
    manifest_path = write_scene(generate_scene(config), outdir)
    click.echo(f"wrote {manifest_path}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def sync(config_path):
    """Build per-camera clock maps from flash traces."""
    try:
        manifest = load_manifest(config_path)
        counts = fileio.read_trace_csv(manifest.counts_path(), "count")
        mocap_tl = fill_missing_flashes(
            detect_flashes_mocap(counts, manifest.mocap_hz))
        clocks = {}
        for camera_id in manifest.camera_ids:
            trace = fileio.read_trace_csv(manifest.intensity_path(camera_id),
                                          "intensity")
            video_tl = fill_missing_flashes(detect_flashes_video(
                IntensitySignal(trace, manifest.video_hz)))
            clocks[camera_id] = build_clock_map(video_tl, mocap_tl)
        fileio.write_clocks_json(manifest.clock_path, clocks)
    except ToolkitError as err:
        _fail(err)
    rows = [(cid, f"{c.offset:.3f}", f"{c.rate:.6f}",
             f"{c.residual_rms:.4f}") for cid, c in clocks.items()]
    click.echo(_table(["camera", "offset", "rate", "residual"], rows))
    click.echo(f"wrote {manifest.clock_path}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--camera", "only_camera", default=None)
def calibrate(config_path, only_camera):
    """Solve camera extrinsics from calibration clicks."""
    try:
        manifest = load_manifest(config_path)
        marker_frames = fileio.read_markers_csv(manifest.markers_path)
        clocks = manifest.load_clocks()
        camera_ids = ([only_camera] if only_camera
                      else manifest.camera_ids)
        rows = []
        for camera_id in camera_ids:
            clicks = fileio.read_calibration_clicks_json(
                manifest.calibration_clicks_path(camera_id))
            observations = fileio.clicks_to_observations(
                clicks, marker_frames, clocks[camera_id])
            intrinsics = fileio.read_intrinsics_json(
                manifest.calibration_path(camera_id))
            extrinsic, report = calibrate_extrinsics(observations,
                                                     intrinsics)
            cam = CameraModel.from_intrinsics(intrinsics, extrinsic)
            fileio.write_calibration_json(
                manifest.calibration_path(camera_id), cam)
            report_payload = {
                "camera_id": camera_id,
                "rms_px": report.rms_px,
                "extents_mm": [float(v) for v in report.extents_mm],
                "n_points": report.n_points,
                "per_click": [{"video_frame": f, "marker_id": m,
                               "error_px": e}
                              for f, m, e in report.per_click],
            }
            fileio.atomic_write_text(
                manifest.outputs_dir / f"calibration_report_{camera_id}.json",
                fileio.canonical_json(report_payload))
            rows.append((camera_id, report.n_points,
                         f"{report.rms_px:.4f}"))
    except ToolkitError as err:
        _fail(err)
    click.echo(_table(["camera", "points", "rms_px"], rows))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--tolerance", default=5.0, show_default=True,
              help="Pairwise-distance deviation (mm) that triggers repair.")
def repair(config_path, tolerance):
    """Fix marker-label swaps; writes repaired markers and per-body logs."""
    try:
        manifest = load_manifest(config_path)
        frames = fileio.read_markers_csv(manifest.markers_path)
        bodies = fileio.read_bodies_json(manifest.bodies_path)
        total = 0
        for body in bodies:
            frames, log = repair_labels(frames, body, tolerance)
            fileio.write_repair_log(
                manifest.outputs_dir / f"repair_log_{body.body_id}.txt", log)
            total += len(log)
        fileio.write_markers_csv(
            manifest.outputs_dir / "markers_repaired.csv", frames)
    except ToolkitError as err:
        _fail(err)
    click.echo(f"repaired or invalidated {total} frame labels")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def track(config_path):
    """Track rigid-body poses for every individual."""
    try:
        manifest = load_manifest(config_path)
        repaired = manifest.outputs_dir / "markers_repaired.csv"
        markers_path = repaired if repaired.exists() else \
            manifest.markers_path
        frames = fileio.read_markers_csv(markers_path)
        bodies = fileio.read_bodies_json(manifest.bodies_path)
        tracks = track_sequence(frames, bodies)
        fileio.write_tracks_csv(manifest.tracks_path(), tracks)
    except ToolkitError as err:
        _fail(err)
    rows = [(t.body_id, int(t.valid.sum()), len(t.frames)) for t in tracks]
    click.echo(_table(["body", "valid", "frames"], rows))


def _tracks_by_individual(manifest, bodies):
    tracks = fileio.read_tracks_csv(manifest.tracks_path())
    by_id = {t.body_id: t for t in tracks}
    result = {}
    for body in bodies:
        result.setdefault(body.individual_id, {})[body.part] = \
            by_id[body.body_id]
    return result


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--individual", "only_individual", default=None)
def template(config_path, only_individual):
    """Estimate keypoint templates from manual clicks."""
    try:
        manifest = load_manifest(config_path)
        bodies = fileio.read_bodies_json(manifest.bodies_path)
        cameras = manifest.load_cameras()
        clock = manifest.reference_clock()
        tracks = _tracks_by_individual(manifest, bodies)
        individual_ids = ([only_individual] if only_individual
                          else manifest.individual_ids)
        for individual_id in individual_ids:
            clicks = fileio.read_annotations_json(
                manifest.annotations_path(individual_id))
            result = estimate_template(clicks, cameras,
                                       tracks[individual_id], clock,
                                       individual_id=individual_id)
            fileio.write_template_json(
                manifest.template_path(individual_id), result)
            click.echo(f"wrote {manifest.template_path(individual_id)}")
    except ToolkitError as err:
        _fail(err)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def propagate(config_path):
    """Propagate templates to dense 2D/3D annotations with boxes."""
    try:
        manifest = load_manifest(config_path)
        bodies = fileio.read_bodies_json(manifest.bodies_path)
        cameras = manifest.load_cameras()
        clock = manifest.reference_clock()
        tracks = _tracks_by_individual(manifest, bodies)
        templates = {ind: fileio.read_template_json(
            manifest.template_path(ind)) for ind in manifest.individual_ids}
        frames = list(propagate_sequence(
            templates, tracks, cameras, clock,
            range(manifest.n_video_frames)))
        for camera_id in manifest.camera_ids:
            fileio.write_annotations_2d_csv(
                manifest.outputs_dir / f"annotations_2d_{camera_id}.csv",
                frames, camera_id)
        fileio.write_annotations_3d_csv(
            manifest.outputs_dir / "annotations_3d.csv", frames)
        fileio.write_boxes_csv(manifest.outputs_dir / "boxes.csv", frames)
        crop_rows = []
        for frame in frames:
            flags = filter_training_crops(frame)
            for camera_id in sorted(flags):
                for ind_id in sorted(flags[camera_id]):
                    crop_rows.append((frame.video_frame, ind_id, camera_id,
                                      flags[camera_id][ind_id]))
        fileio.write_crop_flags_csv(manifest.outputs_dir / "crop_flags.csv",
                                    crop_rows)
    except ToolkitError as err:
        _fail(err)
    click.echo(f"propagated {len(frames)} frames for "
               f"{len(templates)} individuals into {manifest.outputs_dir}")


def _load_annotation_records(manifest):
    records = []
    for camera_id in manifest.camera_ids:
        path = manifest.outputs_dir / f"annotations_2d_{camera_id}.csv"
        records.extend(fileio.read_annotations_2d_csv(path, camera_id))
    return records


@main.command(name="qa-filter")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--fraction", default=0.20, show_default=True,
              help="GESD expected-outlier cap.")
@click.option("--alpha", default=0.05, show_default=True)
def qa_filter(config_path, fraction, alpha):
    """GESD-filter frames whose annotations disagree with predictions."""
    try:
        manifest = load_manifest(config_path)
        predictions = fileio.read_predictions_csv(manifest.predictions_path)
        annotations = _load_annotation_records(manifest)
        pairs = match_pairs(predictions, annotations)
        result = {}
        for individual_id in manifest.individual_ids:
            series = {}
            for keypoint, matched in pairs.items():
                entries = [(key[0], float(np.linalg.norm(a - b)))
                           for key, a, b in matched
                           if key[1] == individual_id]
                if entries:
                    series[keypoint] = entries
            kept, dropped, flags = filter_frames(series, fraction, alpha)
            stats = gap_statistics(dropped)
            result[individual_id] = {
                "kept": len(kept),
                "dropped": dropped,
                "drop_fraction": len(dropped) / max(1, len(kept)
                                                    + len(dropped)),
                "gap_counts": stats.counts,
                "fraction_at_most_30": stats.fraction_at_most_30,
            }
        fileio.atomic_write_text(manifest.outputs_dir / "qa_report.json",
                                 fileio.canonical_json(result))
    except ToolkitError as err:
        _fail(err)
    rows = [(ind, entry["kept"], len(entry["dropped"]),
             f"{entry['drop_fraction']:.3%}")
            for ind, entry in result.items()]
    click.echo(_table(["individual", "kept", "dropped", "fraction"], rows))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def metrics(config_path):
    """RMSE and PCK of predictions against propagated annotations."""
    try:
        manifest = load_manifest(config_path)
        predictions = fileio.read_predictions_csv(manifest.predictions_path)
        annotations = _load_annotation_records(manifest)
        rmse = rmse_report(predictions, annotations)
        boxes = fileio.read_boxes_csv(manifest.outputs_dir / "boxes.csv")
        widths = {key: box[2] - box[0] for key, box in boxes.items()}
        pck = pck_report(predictions, annotations, widths)
        payload = {"rmse_px": rmse, "pck": pck}
        fileio.atomic_write_text(manifest.outputs_dir / "metrics.json",
                                 fileio.canonical_json(payload))
    except ToolkitError as err:
        _fail(err)
    keypoints = [k for k in KEYPOINT_NAMES if k in rmse]
    click.echo(_table(
        ["metric"] + keypoints,
        [["rmse_px"] + [f"{rmse[k]['rmse']:.2f}" for k in keypoints],
         ["pck05"] + [f"{pck[k]['pck05']:.2f}" if k in pck else "-"
                      for k in keypoints],
         ["pck10"] + [f"{pck[k]['pck10']:.2f}" if k in pck else "-"
                      for k in keypoints]]))


@main.command(name="pose-variation")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--bin-deg", default=1.0, show_default=True)
def pose_variation(config_path, bin_deg):
    """Count unique quantized head/body orientations."""
    try:
        manifest = load_manifest(config_path)
        series = fileio.read_annotations_3d_csv(
            manifest.outputs_dir / "annotations_3d.csv")
        samples = []
        for individual_id, kp_series in series.items():
            for i in range(len(kp_series.frames)):
                if not kp_series.valid[i]:
                    samples.append((None, None))
                    continue
                kp3d = {k: v[i] for k, v in kp_series.positions.items()}
                try:
                    head = pose_orientation(kp3d, "head")
                    body = pose_orientation(kp3d, "body")
                except DegeneratePlane:
                    samples.append((None, None))
                    continue
                samples.append((head, body))
        heads, bodies, combined = count_unique_poses(samples, bin_deg)
        payload = {"unique_head": heads, "unique_body": bodies,
                   "unique_combined": combined,
                   "samples": len(samples), "bin_deg": bin_deg}
        fileio.atomic_write_text(
            manifest.outputs_dir / "pose_variation.json",
            fileio.canonical_json(payload))
    except ToolkitError as err:
        _fail(err)
    click.echo(_table(["unique_head", "unique_body", "unique_combined"],
                      [[heads, bodies, combined]]))


@main.command(name="hybrid-exp")
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="Experiment TOML: manifest, individual, seed, fraction, "
                   "gap frame range.")
def hybrid_exp(config_path):
    """Gap-filling experiment: triangulated detections vs linear interp."""
    try:
        exp = fileio.read_toml(config_path)
        manifest = load_manifest(
            Path(config_path).parent / exp["manifest"])
        individual = exp.get("individual", manifest.individual_ids[0])
        spec = GapSpec(fraction=float(exp.get("fraction", 0.25)),
                       min_frames=int(exp.get("min_frames", 30)),
                       max_frames=int(exp.get("max_frames", 90)),
                       seed=int(exp.get("seed", manifest.seed)))
        series = fileio.read_annotations_3d_csv(
            manifest.outputs_dir / "annotations_3d.csv")[individual]
        cameras = manifest.load_cameras()
        predictions = [r for r in
                       fileio.read_predictions_csv(manifest.predictions_path)
                       if r.individual_id == individual]
        gapped, gaps = introduce_gaps(series, spec)
        hybrid_fill, unfilled = fill_triangulation(gapped, gaps, predictions,
                                                   cameras)
        linear_fill = fill_linear(gapped, gaps)
        table = compare_fills(series, {"hybrid": hybrid_fill,
                                       "linear": linear_fill}, gaps)
        payload = {
            "individual": individual,
            "gaps": [{"start_frame": int(series.frames[g.start_index]),
                      "length": g.length} for g in gaps],
            "removed_frames": int(sum(g.length for g in gaps)),
            "unfilled": [[f, k] for f, k in unfilled],
            "rmse_mm": table,
        }
        fileio.atomic_write_text(manifest.outputs_dir / "hybrid_report.json",
                                 fileio.canonical_json(payload))
    except ToolkitError as err:
        _fail(err)
    keypoints = [k for k in KEYPOINT_NAMES if k in table["hybrid"]]
    click.echo(_table(
        ["method"] + keypoints,
        [[method] + [f"{table[method][k]:.1f}" for k in keypoints]
         for method in ("hybrid", "linear")]))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--port", default=8008, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(config_path, port, host):
    """Serve frames, crops, and annotation persistence for the browser UI."""
    import uvicorn

    from .service import create_app

    try:
        app = create_app(config_path)
    except ToolkitError as err:
        _fail(err)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
