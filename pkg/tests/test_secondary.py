"""Secondary acceptance: UI coordinate fidelity feeding the pipeline.

Replays a synthetic click file through the browser UI's session code (via
the compiled node harness, which pushes every click through the screen
transform) and verifies the resulting template is byte-identical whether
built by the CLI or by the service from the UI-entered clicks."""

import json
import shutil
import subprocess
from pathlib import Path

import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from mocapannot.cli import main
from mocapannot.service import create_app

FRONTEND = Path(__file__).resolve().parent.parent / "frontend"
REPLAY = FRONTEND / "dist" / "replay.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not REPLAY.exists(),
    reason="needs node and a built frontend (cd frontend && npm run build)")


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("ui_scene")
    runner = CliRunner()
    result = runner.invoke(main, [
        "synth", "--out", str(outdir), "--seed", "31", "--frames", "240",
        "--prediction-noise", "0"], catch_exceptions=False)
    assert result.exit_code == 0, result.output
    manifest = str(outdir / "manifest.toml")
    for cmd in ("sync", "repair", "track"):
        result = runner.invoke(main, [cmd, "--config", manifest],
                               catch_exceptions=False)
        assert result.exit_code == 0, result.output
    return outdir


def replay(clicks_in: Path, clicks_out: Path):
    subprocess.run(["node", str(REPLAY), str(clicks_in), str(clicks_out)],
                   check=True, capture_output=True)


class TestUiPipelineEquivalence:
    def test_replayed_clicks_preserve_values_exactly(self, scene, tmp_path):
        clicks_in = scene / "clicks" / "annotations_bird0.json"
        clicks_out = tmp_path / "ui_clicks.json"
        replay(clicks_in, clicks_out)
        original = {(e["camera_id"], e["video_frame"], e["keypoint"]):
                    (e["u"], e["v"], e["occluded"])
                    for e in json.loads(clicks_in.read_text())}
        replayed = {(e["camera_id"], e["video_frame"], e["keypoint"]):
                    (e["u"], e["v"], e["occluded"])
                    for e in json.loads(clicks_out.read_text())}
        assert replayed == original

    def test_template_byte_identical_ui_vs_cli(self, scene, tmp_path):
        clicks_path = scene / "clicks" / "annotations_bird0.json"
        template_path = scene / "outputs" / "template_bird0.json"
        ui_clicks = tmp_path / "ui_clicks.json"
        replay(clicks_path, ui_clicks)

        # CLI route: template built from the UI-entered click file.
        clicks_path.write_bytes(ui_clicks.read_bytes())
        runner = CliRunner()
        result = runner.invoke(main, [
            "template", "--config", str(scene / "manifest.toml"),
            "--individual", "bird0"], catch_exceptions=False)
        assert result.exit_code == 0, result.output
        cli_bytes = template_path.read_bytes()
        template_path.unlink()

        # Service route: the UI PUTs the same clicks, then POSTs a build.
        client = TestClient(create_app(scene / "manifest.toml"))
        response = client.put("/annotations/bird0",
                              content=ui_clicks.read_bytes())
        assert response.status_code == 204
        response = client.post("/template/bird0/build")
        assert response.status_code == 200, response.text
        service_bytes = template_path.read_bytes()

        assert service_bytes == cli_bytes
        print("\nACCEPTANCE PASS: UI-entered clicks produce byte-identical "
              "templates via CLI and service")
