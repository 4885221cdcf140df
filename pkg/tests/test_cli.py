import json
import time

import numpy as np
import pytest

from lenstext import __version__
from lenstext.cli import DEFAULT_CONFIG, ConfigError, load_config, main
from lenstext.imgcore import load_image
from lenstext.scene import read_annotations, read_named_dataset
from lenstext.sweep import SWEEP_CSV_HEADER, read_measurements


def run(*argv):
    return main([str(a) for a in argv])


def tree(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert run("synth", "--out", out, "--set", "scene.count=10", "--set", "scene.seed=21") == 0
    return out


# -- configuration and exit codes -------------------------------------------------------------------


def test_defaults_validate():
    assert load_config() == DEFAULT_CONFIG


def test_set_override_parses_json():
    cfg = load_config(overrides=["solver.tau=0.01", "scene.kind=crops"])
    assert cfg["solver"]["tau"] == 0.01 and cfg["scene"]["kind"] == "crops"


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"solver": {"stepsize": 1}}))
    with pytest.raises(ConfigError):
        load_config(path)
    assert run("pipeline", "--config", path, "--out", tmp_path) == 2


def test_exit_codes(tmp_path):
    assert run("capture", "--dataset", tmp_path / "missing", "--out", tmp_path / "o") == 2
    assert run("pipeline", "--set", "solver.name=bogus", "--out", tmp_path) == 2
    assert run("synth", "--set", "paths.glyph_image=/nope.png", "--set", "paths.glyph_meta=/nope.json",
               "--out", tmp_path) == 2
    assert run("frobnicate") == 2
    assert run("synth", "--workers", "0", "--out", tmp_path) == 2


def test_runtime_failure_exit_1(tmp_path, dataset):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n4 4\n255\n")  # truncated raster
    assert run("capture", "--dataset", dataset, "--out", tmp_path / "m", "--set", "psf.kind=file",
               "--set", f"psf.path={bad}") == 1


# -- subcommands -------------------------------------------------------------------------------------------


def test_synth_is_reproducible(tmp_path, dataset):
    assert run("synth", "--out", tmp_path, "--set", "scene.count=10", "--set", "scene.seed=21") == 0
    assert tree(tmp_path) == tree(dataset)


def test_manifest_contents(dataset):
    m = json.loads((dataset / "manifest.json").read_text())
    assert m["version"] == __version__ and m["command"] == "synth"
    assert m["seeds"]["scene"] == 21 and m["config"]["scene"]["count"] == 10


def test_delta_capture_equals_scenes(tmp_path, dataset):
    assert run("capture", "--dataset", dataset, "--out", tmp_path, "--set", "psf.kind=delta") == 0
    items, _ = read_measurements(tmp_path)
    scenes = {n: img for n, img, _ in read_named_dataset(dataset)}
    for name, meas in items:
        assert np.max(np.abs(meas - scenes[name])) <= 1 / 255
    assert read_annotations(tmp_path) == read_annotations(dataset)
    assert (tmp_path / "manifest.json").is_file()


@pytest.fixture(scope="module")
def measurements(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("meas")
    assert run("capture", "--dataset", dataset, "--out", out) == 0
    return out


def test_wiener_at_least_ten_times_faster(tmp_path, measurements):
    t0 = time.perf_counter()
    assert run("reconstruct", "--measurements", measurements, "--out", tmp_path / "w",
               "--set", "solver.name=wiener") == 0
    t1 = time.perf_counter()
    assert run("reconstruct", "--measurements", measurements, "--out", tmp_path / "a",
               "--set", "solver.name=admm", "--set", "solver.tol=0") == 0
    t2 = time.perf_counter()
    assert (t2 - t1) >= 10 * (t1 - t0)
    diags = [json.loads(line) for line in (tmp_path / "a" / "diagnostics.jsonl").read_text().splitlines()]
    assert len(diags) == 10 and all(d["iterations_run"] == 100 for d in diags)


def test_detect_recognize_evaluate_chain(tmp_path, dataset):
    assert run("detect", "--images", dataset, "--out", tmp_path / "det") == 0
    assert run("recognize", "--images", dataset, "--detections", tmp_path / "det", "--out", tmp_path / "rec") == 0
    assert run("evaluate", "--truth", dataset, "--predictions", tmp_path / "rec", "--out", tmp_path / "ev") == 0
    r = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert r["precision"] == r["recall"] == r["crwr"] == 1.0


def test_evaluate_empty_predictions(tmp_path, dataset):
    pred = tmp_path / "empty.jsonl"
    pred.write_text("")
    assert run("evaluate", "--truth", dataset, "--predictions", pred, "--out", tmp_path) == 0
    r = json.loads((tmp_path / "report.json").read_text())
    words = sum(len(a) for a in read_annotations(dataset).values())
    assert r["recall"] == 0.0 and r["crwr"] == 0.0
    assert r["total_edit_distance"] == sum(len(w.text) for a in read_annotations(dataset).values() for w in a)
    assert r["total_words"] == words


def test_pipeline_on_standard_images(tmp_path, dataset):
    assert run("pipeline", "--out", tmp_path, "--set", f"paths.dataset={dataset}",
               "--set", "solver.name=none") == 0
    r = json.loads((tmp_path / "report.json").read_text())
    assert (r["precision"], r["recall"], r["crwr"]) == (1.0, 1.0, 1.0)
    assert json.loads((tmp_path / "manifest.json").read_text())["inputs"] == {"dataset": str(dataset)}


def test_reconstruction_files_are_images(tmp_path, dataset):
    assert run("pipeline", "--out", tmp_path, "--set", f"paths.dataset={dataset}",
               "--set", "solver.name=wiener") == 0
    first = sorted((tmp_path / "reconstructions").iterdir())[0]
    assert load_image(first).shape == (243, 324)


def test_sweep_csv_header(tmp_path):
    assert run("sweep", "--out", tmp_path, "--set", "sweep.axis=intensity", "--set", "sweep.values=[1.0, 1.2]",
               "--set", "sweep.scenes_per_point=2", "--set", "solver.name=wiener") == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_CSV_HEADER) and len(lines) == 3


def test_sweep_missing_baseline_is_config_error(tmp_path):
    assert run("sweep", "--out", tmp_path, "--set", "sweep.values=[0.9]") == 2


def test_pipeline_workers_byte_identical(tmp_path):
    args = ["--set", "scene.count=4", "--set", "solver.name=fista", "--set", "solver.max_iters=20",
            "--set", "capture.noise_sigma=0.01"]
    assert run("pipeline", "--out", tmp_path / "a", "--workers", 1, *args) == 0
    assert run("pipeline", "--out", tmp_path / "b", "--workers", 3, *args) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
