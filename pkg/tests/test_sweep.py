import json

import numpy as np
import pytest

from lenstext import scene
from lenstext.evaluation import BBox
from lenstext.optics import CaptureParams, delta_psf
from lenstext.recon import SolverConfig
from lenstext.scene import Annotation, SceneSpec, synthesize_dataset
from lenstext.sweep import (BASELINE, SWEEP_CSV_HEADER, PipelineError, PipelineOptions, SweepSpec,
                            named_scenes, read_measurements, run_pipeline, run_sweep, shift_annotations,
                            write_measurements, write_pipeline_outputs, write_sweep)


@pytest.fixture(scope="module")
def scenes(glyphs):
    return named_scenes(synthesize_dataset(glyphs, SceneSpec(char_height=40, seed=11), 4))


@pytest.fixture(scope="module")
def baseline(scenes, glyphs, speckle_psf):
    return run_pipeline(scenes, speckle_psf, options=PipelineOptions(solver="none"), glyphs=glyphs)


def test_standard_images_are_read_perfectly(baseline):
    r = baseline.report
    assert (r.precision, r.recall, r.f_score, r.crwr) == (1.0, 1.0, 1.0, 1.0)


def test_identity_optics_report_matches_baseline(scenes, glyphs, baseline):
    psf = delta_psf(scene.CANVAS_WIDTH, scene.CANVAS_HEIGHT)
    opts = PipelineOptions(solver="admm", solver_cfg=SolverConfig(tau=0.0, max_iters=50))
    result = run_pipeline(scenes, psf, options=opts, glyphs=glyphs)
    assert result.report.to_json() == baseline.report.to_json()


def test_reconstruction_never_beats_baseline(scenes, glyphs, speckle_psf, baseline):
    result = run_pipeline(scenes, speckle_psf, options=PipelineOptions(solver="wiener"), glyphs=glyphs)
    assert result.report.crwr <= baseline.report.crwr


def test_shape_mismatch_names_scene(scenes, glyphs):
    with pytest.raises(PipelineError) as info:
        run_pipeline(scenes[:1], delta_psf(10, 10), glyphs=glyphs)
    assert info.value.name == scenes[0][0] and info.value.stage == "setup"


def test_pipeline_workers_identical(scenes, glyphs, speckle_psf):
    opts = PipelineOptions(solver="wiener")
    a = run_pipeline(scenes, speckle_psf, CaptureParams(noise_sigma=0.01, seed=5), opts, glyphs, workers=1)
    b = run_pipeline(scenes, speckle_psf, CaptureParams(noise_sigma=0.01, seed=5), opts, glyphs, workers=3)
    assert a.report.to_json() == b.report.to_json()


def test_pipeline_outputs_layout(tmp_path, scenes, glyphs, speckle_psf):
    result = run_pipeline(scenes[:2], speckle_psf, options=PipelineOptions(solver="wiener"), glyphs=glyphs,
                          out_dir=tmp_path)
    for name in ("detections.jsonl", "report.json", "report.csv"):
        assert (tmp_path / name).is_file()
    # the closed-form solver has no iteration diagnostics
    assert not (tmp_path / "diagnostics.jsonl").exists()
    assert len(list((tmp_path / "reconstructions").iterdir())) == 2
    items, _ = read_measurements(tmp_path / "measurements")
    assert [n for n, _ in items] == [s[0] for s in scenes[:2]]
    assert json.loads((tmp_path / "report.json").read_text()) == result.report.to_dict()


def test_measurement_round_trip(tmp_path, scenes, speckle_psf):
    from lenstext.optics import forward_capture
    names = [s[0] for s in scenes[:2]]
    data = [forward_capture(s[1], speckle_psf).data for s in scenes[:2]]
    write_measurements(tmp_path, names, data, [s[2] for s in scenes[:2]], CaptureParams(), speckle_psf)
    items, meta = read_measurements(tmp_path)
    for (n, got), want in zip(items, data):
        # 16-bit storage relative to the per-image peak
        assert np.max(np.abs(got - want)) <= max(1.0, want.max()) / 65535 + 1e-12
    assert meta["capture"] == CaptureParams().to_dict()
    assert scene.read_annotations(tmp_path)[names[0]] == scenes[0][2]


def test_read_measurements_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_measurements(tmp_path / "absent")


# -- sweep spec ------------------------------------------------------------------------------------


def test_spec_requires_baseline():
    with pytest.raises(ValueError):
        SweepSpec("intensity", values=(0.9, 1.1))
    with pytest.raises(ValueError):
        SweepSpec("size", values=(30, 20))


def test_spec_rejects_bad_inputs():
    with pytest.raises(ValueError):
        SweepSpec("rotation")
    with pytest.raises(ValueError):
        SweepSpec("intensity", solver="none")
    with pytest.raises(ValueError):
        SweepSpec("size", values=(40, 25))


def test_spec_defaults_include_baseline():
    for axis, base in BASELINE.items():
        assert base in SweepSpec(axis).values


def test_shift_annotations():
    anns = [Annotation(BBox(0, 0, 10, 10), "A"), Annotation(BBox(300, 230, 320, 240), "B")]
    out = shift_annotations(anns, 3, 4, 324, 243)
    assert out == [Annotation(BBox(3, 4, 13, 14), "A")]
    assert shift_annotations(anns, 0, 0, 324, 243) == anns


# -- sweeps ----------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def intensity_sweep(glyphs, speckle_psf):
    spec = SweepSpec("intensity", values=(0.9, 1.0, 1.1), scenes_per_point=3, base_seed=4, solver="wiener")
    return spec, run_sweep(spec, speckle_psf, glyphs=glyphs)


def test_sweep_rows(intensity_sweep):
    spec, result = intensity_sweep
    lines = result.to_csv().splitlines()
    assert lines[0] == ",".join(SWEEP_CSV_HEADER)
    assert len(lines) - 1 == len(spec.values)
    assert [p.scenes for p in result.points] == [3, 3, 3]


def test_sweep_baseline_point_equals_pipeline(intensity_sweep, glyphs, speckle_psf):
    _, result = intensity_sweep
    sc = named_scenes(synthesize_dataset(glyphs, SceneSpec(char_height=40, seed=4), 3))
    plain = run_pipeline(sc, speckle_psf, options=PipelineOptions(solver="wiener"), glyphs=glyphs,
                         size_tags={n: 40 for n, _, _ in sc})
    base = [p for p in result.points if p.value == 1.0][0]
    assert base.report.to_json() == plain.report.to_json()


def test_sweep_workers_identical(tmp_path, intensity_sweep, glyphs, speckle_psf):
    spec, result = intensity_sweep
    again = run_sweep(spec, speckle_psf, glyphs=glyphs, workers=2)
    write_sweep(tmp_path / "a", result)
    write_sweep(tmp_path / "b", again)
    for name in ("sweep.csv", "sweep.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_crwr_lookup(intensity_sweep):
    _, result = intensity_sweep
    assert 0.0 <= result.crwr(1.0) <= 1.0
    with pytest.raises(KeyError):
        result.crwr(7.0)
