import csv
import json

import numpy as np
import pytest
from PIL import Image

from sdf_uncertainty.cli import EXIT_CONFIG, EXIT_INPUT, EXIT_OK, main
from sdf_uncertainty.colormaps import apply_colormap, colormap_table, luminance, to_uint8
from sdf_uncertainty.errors import InvalidInputError
from sdf_uncertainty.hessian import load_hessian

SCENE = {
    "aabb": {"min": [-1.5, -1.5, -1.5], "max": [1.5, 1.5, 1.5]},
    "primitives": [{"shape": "sphere", "center": [0, 0, 0], "radius": 0.8, "albedo": [0.5, 0.5, 0.5],
                    "texture": {"amplitude": 0.1, "frequency": 6.0, "phase": [0.0, 2.1, 4.2]}}],
}
EMPTY = {"aabb": SCENE["aabb"], "primitives": [{"shape": "sphere", "center": [10, 10, 10], "radius": 0.5,
                                              "albedo": [0.5, 0.5, 0.5]}]}


def write_config(tmp_path, name="run.json", scene=SCENE, **extra):
    (tmp_path / "scene.json").write_text(json.dumps(scene))
    cfg = {
        "scene": "scene.json",
        "level": 3,
        "seed": 3,
        "render": {"s": 32, "n_coarse": 16, "n_fine": 8},
        "cameras": {"source": "orbit", "n": 2, "radius": 4.0, "width": 12, "height": 12},
        "field": {"voxel_resolution": 16,
                  "corruption": {"regions": [{"center": [0, 0.4, 0.7], "radius": 0.4}], "magnitude": 0.3,
                                 "seed": 2}},
        "rays_per_camera": 64,
        "out": "out",
        "eval": {"ensemble_size": 2, "fractions": [0.0, 0.25, 0.5, 0.75]},
    }
    cfg.update(extra)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestRender:
    def test_spiral_frame_count(self, tmp_path):
        cams = {"source": "spiral", "n_frames": 4, "radius": 0.3,
                "reference": {"position": [0, 0.5, 4], "look_at": [0, 0, 0], "width": 10, "height": 8}}
        cfg = write_config(tmp_path, cameras=cams)
        assert run("render", "--config", cfg) == EXIT_OK
        frames = sorted((tmp_path / "out").glob("frame_*.png"))
        assert [f.name for f in frames] == [f"frame_{i:04d}.png" for i in range(4)]
        img = np.asarray(Image.open(frames[0]))
        assert img.shape == (8, 30, 3)
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["panels"] == ["rgb", "uncertainty", "depth"]
        assert len(manifest["frames"]) == 4

    def test_no_hessian_gives_flat_uncertainty_panel(self, tmp_path):
        cfg = write_config(tmp_path)
        assert run("render", "--config", cfg) == EXIT_OK
        img = np.asarray(Image.open(tmp_path / "out" / "frame_0000.png"))
        panel = img[:, 12:24].reshape(-1, 3)
        assert np.all(panel == to_uint8(apply_colormap(0.0)))

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        assert run("render", "--config", cfg) == EXIT_OK
        first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
        assert run("render", "--config", cfg) == EXIT_OK
        second = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
        assert first == second

    def test_manifest_reproduces_run(self, tmp_path):
        cfg = write_config(tmp_path)
        assert run("render", "--config", cfg) == EXIT_OK
        manifest = tmp_path / "out" / "manifest.json"
        frame = (tmp_path / "out" / "frame_0001.png").read_bytes()
        saved = manifest.with_name("saved_manifest.json")
        saved.write_text(manifest.read_text())
        assert run("render", "--config", saved, "--out", tmp_path / "again") == EXIT_OK
        assert (tmp_path / "again" / "frame_0001.png").read_bytes() == frame

    def test_hessian_changes_uncertainty_panel(self, tmp_path):
        cfg = write_config(tmp_path, hessian="h.bin")
        assert run("hessian", "--config", cfg) == EXIT_OK
        assert run("render", "--config", cfg) == EXIT_OK
        img = np.asarray(Image.open(tmp_path / "out" / "frame_0000.png"))
        assert len(np.unique(img[:, 12:24].reshape(-1, 3), axis=0)) > 1


class TestHessianCommand:
    def test_round_trip_and_summary(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert run("hessian", "--config", cfg) == EXIT_OK
        out = capsys.readouterr().out
        h = load_hessian(tmp_path / "out" / "hessian.bin", expected_level=3)
        assert h.iterations == 2 * 64
        touched = int(np.count_nonzero(h.values))
        assert 0 < touched <= 9 ** 3
        assert f"touched corners {touched} / 729" in out
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["command"] == "hessian" and manifest["summary"]["touched_corners"] == touched
        assert run("hessian", "--config", cfg) == EXIT_OK
        again = load_hessian(tmp_path / "out" / "hessian.bin")
        np.testing.assert_array_equal(h.values, again.values)

    def test_empty_scene(self, tmp_path):
        cfg = write_config(tmp_path, scene=EMPTY, field={})
        assert run("hessian", "--config", cfg) == EXIT_OK
        h = load_hessian(tmp_path / "out" / "hessian.bin")
        assert h.values.max() < 1e-8

    def test_threads_match_serial(self, tmp_path):
        cfg = write_config(tmp_path)
        assert run("hessian", "--config", cfg, "--out", tmp_path / "a") == EXIT_OK
        assert run("hessian", "--config", cfg, "--out", tmp_path / "b", "--threads", 3, "--bit-exact") == EXIT_OK
        assert (tmp_path / "a" / "hessian.bin").read_bytes() == (tmp_path / "b" / "hessian.bin").read_bytes()


class TestEvalCommand:
    def test_curves_and_report(self, tmp_path):
        cfg = write_config(tmp_path, hessian="h.bin")
        assert run("hessian", "--config", cfg) == EXIT_OK
        assert run("eval", "--config", cfg) == EXIT_OK
        out = tmp_path / "out"
        curves = sorted((out / "curves").glob("*.csv"))
        assert len(curves) == 2
        rows = list(csv.reader(curves[0].open()))
        assert len(rows) == 1 + 4
        report = list(csv.DictReader((out / "ause_report.csv").open()))
        assert [(r["method"], r["scene"]) for r in report] == [("Ensemble", "scene"), ("Hessian", "scene"),
                                                                ("Oracle", "scene")]
        assert all(np.isfinite(float(r["ause"])) for r in report)

    def test_injected_oracle_reports_zero(self, tmp_path, capsys):
        cfg = write_config(tmp_path, hessian="h.bin",
                           eval={"ensemble_size": 2, "inject_oracle": True, "fractions": [0.0, 0.5]})
        assert run("hessian", "--config", cfg) == EXIT_OK
        capsys.readouterr()
        assert run("eval", "--config", cfg) == EXIT_OK
        table = capsys.readouterr().out
        hessian_line = [line for line in table.splitlines() if line.startswith("Hessian")][0]
        assert hessian_line.split()[1] == "0.000"

    def test_compare_two_scenes(self, tmp_path):
        (tmp_path / "scene.json").write_text(json.dumps(SCENE))
        cfg = write_config(tmp_path, scenes=[{"name": "a", "scene": "scene.json"},
                                             {"name": "b", "scene": "scene.json",
                                              "field": {"voxel_resolution": 12}}])
        assert run("compare", "--config", cfg) == EXIT_OK
        report = list(csv.DictReader((tmp_path / "out" / "ause_report.csv").open()))
        assert len(report) == 6
        assert {(r["method"], r["scene"]) for r in report} == {(m, s) for m in ("Ensemble", "Hessian", "Oracle")
                                                              for s in ("a", "b")}


class TestErrors:
    def test_level_mismatch(self, tmp_path, capsys):
        cfg = write_config(tmp_path, hessian="h.bin")
        assert run("hessian", "--config", cfg) == EXIT_OK
        bad = write_config(tmp_path, name="bad.json", hessian="h.bin", level=4)
        capsys.readouterr()
        assert run("eval", "--config", bad) == EXIT_CONFIG
        assert "level" in capsys.readouterr().err

    def test_missing_hessian_file(self, tmp_path, capsys):
        cfg = write_config(tmp_path, hessian="nowhere.bin")
        assert run("eval", "--config", cfg) == EXIT_INPUT
        assert "nowhere.bin" in capsys.readouterr().err

    def test_missing_scene_file(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        (tmp_path / "scene.json").unlink()
        assert run("render", "--config", cfg) == EXIT_INPUT
        assert "scene.json" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert run("render", "--config", tmp_path / "none.json") == EXIT_INPUT

    @pytest.mark.parametrize("extra, field", [
        ({"level": 9}, "level"),
        ({"render": {"n_coarse": "many"}}, "render.n_coarse"),
        ({"cameras": {"source": "teleport"}}, "cameras.source"),
        ({"colormap": "rainbow"}, "colormap"),
    ])
    def test_invalid_fields_name_the_field(self, tmp_path, capsys, extra, field):
        cfg = write_config(tmp_path, **extra)
        assert run("render", "--config", cfg) == EXIT_CONFIG
        err = capsys.readouterr().err
        assert err.startswith("error: ") and field in err and err.count("\n") == 1


class TestColormaps:
    def test_grayscale_endpoints(self):
        np.testing.assert_array_equal(apply_colormap(0.0, "grayscale"), [0, 0, 0])
        np.testing.assert_array_equal(apply_colormap(1.0, "grayscale"), [1, 1, 1])

    def test_inferno_luminance_monotone(self):
        lum = luminance(apply_colormap(np.linspace(0, 1, 2001)))
        assert np.all(np.diff(lum) >= 0)

    def test_clamping_and_nan(self):
        np.testing.assert_array_equal(apply_colormap(-3.0), apply_colormap(0.0))
        np.testing.assert_array_equal(apply_colormap(7.0), apply_colormap(1.0))
        np.testing.assert_array_equal(apply_colormap(np.nan), apply_colormap(0.0))

    def test_table_entries_hit_exactly(self):
        table = colormap_table("viridis")
        np.testing.assert_allclose(apply_colormap(np.arange(256) / 255, "viridis"), table, atol=1e-12)

    def test_unknown(self):
        with pytest.raises(InvalidInputError):
            apply_colormap(0.5, "rainbow")
