"""End-to-end pipeline runs and optical-condition sweeps.

``run_pipeline`` pushes a scene dataset through capture, reconstruction,
detection and recognition and scores the result.  ``run_sweep`` repeats it
along one study axis (text size, light intensity, lateral shift, axial
PSF magnification).  Every per-scene random draw uses a seed derived from
``(base seed, scene index)``, so outputs do not depend on worker count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import BBox, EvalReport, evaluate_dataset
from .imgcore import Image, ensure_dir, load_image, save_image
from .ocr import recognize_word
from .optics import CaptureParams, Psf, SensorMeasurement, forward_capture
from .recon import SOLVERS, SolverConfig, reconstruct
from .scene import (ANNOTATION_FILE, Annotation, GlyphSet, SceneSpec, default_glyphs, derive_seed,
                    image_name, synthesize_dataset, write_annotations)
from .textdet import DetectParams, detect_text

log = logging.getLogger(__name__)

AXES = ("size", "intensity", "xy_shift", "z_magnification")
BASELINE = {"size": 40, "intensity": 1.0, "xy_shift": 0, "z_magnification": 1.0}
DEFAULT_VALUES = {
    "size": (40, 30, 20, 10),
    "intensity": tuple(round(0.8 + 0.05 * k, 2) for k in range(9)),
    "xy_shift": (-37, -18, 0, 18, 37),
    "z_magnification": (0.95, 0.975, 1.0, 1.025, 1.05),
}
SWEEP_CSV_HEADER = ("axis", "value", "precision", "recall", "f_score", "crwr", "avg_edit_distance", "scenes")
CAPTURE_FILE = "capture.json"


class PipelineError(RuntimeError):
    """A stage failed on one image; the message names the image and stage."""

    def __init__(self, name: str, stage: str, cause: Exception):
        super().__init__(f"{name}: {stage} failed: {cause}")
        self.name = name
        self.stage = stage


@dataclass(frozen=True)
class PipelineOptions:
    solver: str = "admm"
    solver_cfg: SolverConfig = field(default_factory=SolverConfig)
    detect: DetectParams = field(default_factory=DetectParams)
    crop_pad: int = 2

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; expected one of {', '.join(SOLVERS)}")
        if self.crop_pad < 0:
            raise ValueError("crop_pad must be >= 0")


@dataclass
class ImageResult:
    name: str
    words: list[Annotation]
    measurement: np.ndarray | None = None
    reconstruction: np.ndarray | None = None
    diagnostics: dict | None = None


@dataclass
class PipelineResult:
    images: list[ImageResult]
    report: EvalReport


# -- per-image stages ------------------------------------------------------------


def recognize_boxes(img: Image, boxes: Sequence[BBox], glyphs: GlyphSet, pad: int = 2) -> list[Annotation]:
    """Read each detected box from ``img``, padded by ``pad`` pixels and clipped."""
    h, w = img.shape
    out = []
    for box in boxes:
        x0, y0 = max(box.x0 - pad, 0), max(box.y0 - pad, 0)
        x1, y1 = min(box.x1 + pad, w), min(box.y1 + pad, h)
        out.append(Annotation(box, recognize_word(img[y0:y1, x0:x1], glyphs)))
    return out


def _process(task) -> ImageResult:
    name, scene, psf, capture, opts, glyphs, keep = task
    meas = None
    diag = None
    try:
        if opts.solver == "none":
            recon = scene
        else:
            meas = forward_capture(scene, psf, capture)
    except Exception as exc:
        raise PipelineError(name, "capture", exc) from exc
    if opts.solver != "none":
        try:
            recon, d = reconstruct(meas, psf, opts.solver, opts.solver_cfg)
            diag = None if d is None else d.to_dict(timing=False)
        except Exception as exc:
            raise PipelineError(name, "reconstruct", exc) from exc
    try:
        boxes = detect_text(recon, opts.detect)
    except Exception as exc:
        raise PipelineError(name, "detect", exc) from exc
    try:
        words = recognize_boxes(recon, boxes, glyphs, opts.crop_pad)
    except Exception as exc:
        raise PipelineError(name, "recognize", exc) from exc
    return ImageResult(name, words,
                       measurement=meas.data if (keep and meas is not None) else None,
                       reconstruction=recon if keep else None,
                       diagnostics=diag)


def _map(fn, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def run_pipeline(scenes: Sequence[tuple[str, Image, Sequence[Annotation]]], psf: Psf,
                 capture: CaptureParams | None = None, options: PipelineOptions | None = None,
                 glyphs: GlyphSet | None = None, size_tags: dict[str, int] | None = None,
                 out_dir=None, workers: int = 1) -> PipelineResult:
    """Capture, reconstruct, detect, recognize and score a named scene dataset.

    Parameters
    ----------
    scenes : sequence of (name, image, ground-truth annotations)
    psf : Psf
        Used for capture (possibly magnified per ``capture``) and always,
        unchanged, for reconstruction.
    capture : CaptureParams
        Scene ``k`` is captured with noise seed ``derive_seed(capture.seed, k)``.
    options : PipelineOptions
        Solver ``"none"`` skips capture and reconstruction and runs
        detection on the scene itself (the standard-image baseline).
    size_tags : mapping name -> text size, optional
        Size axis of the report breakdown.
    out_dir : path, optional
        When given, measurements, reconstructions, detections, diagnostics
        and the report are written there.
    workers : int
        Process count; results are identical for any value.
    """
    capture = capture or CaptureParams()
    options = options or PipelineOptions()
    glyphs = glyphs or default_glyphs()
    keep = out_dir is not None
    for name, img, _ in scenes:
        if img.shape != psf.shape:
            raise PipelineError(name, "setup", ValueError(f"scene {img.shape} and PSF {psf.shape} dimensions differ"))
    tasks = [(name, img, psf, replace(capture, seed=derive_seed(capture.seed, k)), options, glyphs, keep)
             for k, (name, img, _) in enumerate(scenes)]
    results = _map(_process, tasks, workers)
    gts = {name: list(anns) for name, _, anns in scenes}
    preds = {r.name: r.words for r in results}
    report = evaluate_dataset(gts, preds, size_tags=size_tags)
    if out_dir is not None:
        write_pipeline_outputs(out_dir, results, report, capture, psf)
    return PipelineResult(results, report)


# -- persistence -------------------------------------------------------------------


def write_detections(directory, records: Sequence[tuple[str, Sequence[Annotation]]],
                     filename: str = "detections.jsonl") -> Path:
    path = ensure_dir(directory) / filename
    lines = [json.dumps({"image": name, "words": [a.to_dict() for a in words]}) for name, words in records]
    path.write_text("".join(line + "\n" for line in lines))
    return path


def write_measurements(directory, names: Sequence[str], data: Sequence[np.ndarray],
                       annotations: Sequence[Sequence[Annotation]] | None, params: CaptureParams,
                       psf: Psf) -> None:
    """Store measurements as 16-bit PGMs, each divided by ``max(1, peak)``.

    The per-image divisor goes to ``capture.json`` together with the capture
    parameters and PSF provenance, so ``read_measurements`` restores the
    values to 16-bit precision.
    """
    directory = ensure_dir(directory)
    scales = {}
    for name, b in zip(names, data):
        scale = max(1.0, float(np.max(b)))
        save_image(b / scale, directory / name, depth=16)
        scales[name] = scale
    if annotations is not None:
        write_annotations(directory, list(zip(names, annotations)))
    meta = {"capture": params.to_dict(), "psf": psf.provenance, "scales": scales}
    (directory / CAPTURE_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_measurements(directory) -> tuple[list[tuple[str, np.ndarray]], dict]:
    directory = Path(directory)
    path = directory / CAPTURE_FILE
    try:
        meta = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc}") from None
    items = [(name, load_image(directory / name) * float(scale))
             for name, scale in sorted(meta["scales"].items())]
    return items, meta


def write_pipeline_outputs(out_dir, results: Sequence[ImageResult], report: EvalReport,
                           capture: CaptureParams, psf: Psf) -> None:
    out = ensure_dir(out_dir)
    write_detections(out, [(r.name, r.words) for r in results])
    measured = [r for r in results if r.measurement is not None]
    if measured:
        write_measurements(out / "measurements", [r.name for r in measured],
                           [r.measurement for r in measured], None, capture, psf)
    recon_dir = ensure_dir(out / "reconstructions")
    for r in results:
        if r.reconstruction is not None:
            save_image(r.reconstruction, recon_dir / r.name)
    diags = [json.dumps({"image": r.name, **r.diagnostics}) for r in results if r.diagnostics is not None]
    if diags:
        (out / "diagnostics.jsonl").write_text("".join(d + "\n" for d in diags))
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())


# -- sweeps ------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple = ()
    scenes_per_point: int = 50
    base_seed: int = 0
    solver: str = "admm"
    solver_cfg: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; expected one of {', '.join(AXES)}")
        values = tuple(self.values) if len(self.values) else DEFAULT_VALUES[self.axis]
        object.__setattr__(self, "values", values)
        if self.scenes_per_point < 1:
            raise ValueError("scenes_per_point must be >= 1")
        if self.solver not in ("admm", "fista", "wiener"):
            raise ValueError(f"sweep solver must be admm, fista or wiener, got {self.solver!r}")
        if BASELINE[self.axis] not in values:
            raise ValueError(f"sweep values must include the baseline {self.axis}={BASELINE[self.axis]}")
        if self.axis == "size" and any(v not in (40, 30, 20, 10) for v in values):
            raise ValueError("size values must be drawn from 40, 30, 20, 10")
        if self.axis == "xy_shift" and any(int(v) != v for v in values):
            raise ValueError("xy_shift values must be whole pixels")
        if self.axis in ("intensity", "z_magnification") and any(v <= 0 for v in values):
            raise ValueError(f"{self.axis} values must be > 0")


@dataclass
class SweepPoint:
    value: float
    report: EvalReport
    scenes: int


@dataclass
class SweepResult:
    axis: str
    points: list[SweepPoint]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SWEEP_CSV_HEADER)
        for p in self.points:
            r = p.report
            writer.writerow([self.axis, repr(p.value), repr(r.precision), repr(r.recall), repr(r.f_score),
                             repr(r.crwr), repr(r.average_edit_distance), p.scenes])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"axis": self.axis,
                "points": [{"value": p.value, "scenes": p.scenes, "report": p.report.to_dict()}
                           for p in self.points]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def crwr(self, value) -> float:
        for p in self.points:
            if p.value == value:
                return p.report.crwr
        raise KeyError(value)


def shift_annotations(anns: Sequence[Annotation], dx: int, dy: int, width: int, height: int) -> list[Annotation]:
    """Translate ground truth with the scene; words pushed partly off the canvas are dropped."""
    out = []
    for a in anns:
        b = a.bbox
        x0, y0, x1, y1 = b.x0 + dx, b.y0 + dy, b.x1 + dx, b.y1 + dy
        if x0 >= 0 and y0 >= 0 and x1 <= width and y1 <= height:
            out.append(Annotation(BBox(x0, y0, x1, y1), a.text))
    return out


def named_scenes(items: Sequence[tuple[Image, Sequence[Annotation]]]) -> list[tuple[str, Image, list[Annotation]]]:
    return [(image_name(k), img, list(anns)) for k, (img, anns) in enumerate(items)]


def run_sweep(spec: SweepSpec, psf: Psf, scene_spec: SceneSpec | None = None,
              capture: CaptureParams | None = None, detect: DetectParams | None = None,
              glyphs: GlyphSet | None = None, workers: int = 1, crop_pad: int = 2) -> SweepResult:
    """One ``run_pipeline`` per axis value on scenes seeded by ``spec.base_seed``.

    Non-size axes reuse one scene set (text size from ``scene_spec``), so the
    baseline value reproduces the plain baseline run exactly.  The capture
    PSF is magnified on the z axis; reconstruction always uses ``psf``.
    """
    scene_spec = scene_spec or SceneSpec()
    capture = capture or CaptureParams()
    glyphs = glyphs or default_glyphs()
    options = PipelineOptions(spec.solver, spec.solver_cfg, detect or DetectParams(), crop_pad)
    cache: dict[int, list] = {}

    def scenes_for(size: int):
        if size not in cache:
            s = replace(scene_spec, char_height=int(size), seed=spec.base_seed)
            cache[size] = named_scenes(synthesize_dataset(glyphs, s, spec.scenes_per_point))
        return cache[size]

    points = []
    for value in spec.values:
        size = int(value) if spec.axis == "size" else scene_spec.char_height
        scenes = scenes_for(size)
        cap = capture
        if spec.axis == "intensity":
            cap = replace(capture, intensity_scale=float(value))
        elif spec.axis == "z_magnification":
            cap = replace(capture, psf_magnification=float(value))
        elif spec.axis == "xy_shift":
            shift = int(value)
            cap = replace(capture, shift_x=shift, shift_y=shift)
            w, h = scene_spec.canvas_width, scene_spec.canvas_height
            scenes = [(n, img, shift_annotations(anns, shift, shift, w, h)) for n, img, anns in scenes]
        tags = {n: size for n, _, _ in scenes}
        log.info("sweep %s=%s: %d scenes", spec.axis, value, len(scenes))
        result = run_pipeline(scenes, psf, cap, options, glyphs, size_tags=tags, workers=workers)
        points.append(SweepPoint(value, result.report, len(scenes)))
    return SweepResult(spec.axis, points)


def write_sweep(out_dir, result: SweepResult) -> None:
    out = ensure_dir(out_dir)
    (out / "sweep.csv").write_text(result.to_csv())
    (out / "sweep.json").write_text(result.to_json())


__all__ = [
    "ANNOTATION_FILE", "AXES", "BASELINE", "DEFAULT_VALUES", "ImageResult", "PipelineError",
    "PipelineOptions", "PipelineResult", "SweepPoint", "SweepResult", "SweepSpec", "named_scenes",
    "read_measurements", "recognize_boxes", "run_pipeline", "run_sweep", "shift_annotations",
    "write_detections", "write_measurements", "write_pipeline_outputs", "write_sweep",
]
