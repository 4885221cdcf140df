"""Command-line entry point: ``lenstext <subcommand> --config run.json``.

Every subcommand reads one JSON configuration (sections ``scene``,
``capture``, ``solver``, ``detect``, ``sweep``, ``psf``, ``paths``),
validates it against the bundled schema, applies ``--set section.key=value``
overrides and writes its outputs plus a ``manifest.json`` into the output
directory.  Exit status is 0 on success, 2 for configuration or input
validation problems and 1 for failures during the run.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import shutil
import sys
import time
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path

import jsonschema

from . import __version__
from .evaluation import evaluate_dataset
from .imgcore import ImageIOError, ensure_dir, load_image, save_image
from .optics import CaptureParams, DegeneratePsfError, GeometryError, delta_psf, forward_capture, load_psf, simulate_psf
from .recon import SolverConfig, SolverDivergedError, reconstruct
from .scene import (ANNOTATION_FILE, META_FILE, Annotation, AtlasError, DatasetError, SceneSpec, compose_dataset, derive_seed,
                    load_glyph_atlas, read_annotations, read_crops, read_meta, read_named_dataset,
                    synthesize_dataset, write_dataset)
from .sweep import (PipelineError, PipelineOptions, SweepSpec, named_scenes, read_measurements, recognize_boxes,
                    run_pipeline, run_sweep, write_detections, write_measurements, write_sweep)
from .textdet import DetectParams, detect_text

log = logging.getLogger("lenstext")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
SUBCOMMANDS = ("synth", "capture", "reconstruct", "detect", "recognize", "evaluate", "pipeline", "sweep")

DEFAULT_CONFIG = {
    "scene": {"kind": "ncd", "count": 200, **asdict(SceneSpec()), "crop_min_height": 30},
    "capture": asdict(CaptureParams()),
    "solver": {"name": "admm", **asdict(SolverConfig())},
    "detect": {**asdict(DetectParams()), "crop_pad": 2},
    "sweep": {"axis": "intensity", "scenes_per_point": 50, "base_seed": 0},
    "psf": {"kind": "simulate", "speckle_count": 300, "aperture_fraction": 0.25, "speckle_sigma": 1.5, "seed": 0},
    "paths": {},
}


class ConfigError(ValueError):
    """Invalid configuration or missing input; maps to exit status 2."""


# -- configuration -------------------------------------------------------------------


def load_schema() -> dict:
    return json.loads((resources.files("lenstext") / "data" / "config.schema.json").read_text())


def _validate(doc: dict, schema: dict, origin: str) -> None:
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{origin}: {where}: {e.message}")
        raise ConfigError("\n".join(lines))


def _parse_override(text: str) -> tuple[str, str, object]:
    key, sep, raw = text.partition("=")
    section, dot, name = key.partition(".")
    if not sep or not dot or not section or not name:
        raise ConfigError(f"--set expects section.key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, name, value


def load_config(path=None, overrides=()) -> dict:
    """Merge defaults, the config file and ``--set`` overrides, validating each layer."""
    schema = load_schema()
    user: dict = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        _validate(user, schema, str(path))
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for section, values in user.items():
        cfg[section].update(values)
    for text in overrides:
        section, name, value = _parse_override(text)
        cfg.setdefault(section, {})[name] = value
    _validate(cfg, schema, "merged config")
    return cfg


def _build(cls, values: dict, section: str):
    names = {f.name for f in fields(cls)}
    try:
        return cls(**{k: v for k, v in values.items() if k in names})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def scene_spec(cfg: dict) -> SceneSpec:
    return _build(SceneSpec, cfg["scene"], "scene")


def capture_params(cfg: dict) -> CaptureParams:
    return _build(CaptureParams, cfg["capture"], "capture")


def solver_config(cfg: dict) -> SolverConfig:
    return _build(SolverConfig, cfg["solver"], "solver")


def pipeline_options(cfg: dict) -> PipelineOptions:
    det = _build(DetectParams, cfg["detect"], "detect")
    try:
        return PipelineOptions(cfg["solver"]["name"], solver_config(cfg), det, cfg["detect"]["crop_pad"])
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None


def sweep_spec(cfg: dict) -> SweepSpec:
    s = cfg["sweep"]
    try:
        return SweepSpec(s["axis"], tuple(s.get("values", ())), s["scenes_per_point"], s["base_seed"],
                         cfg["solver"]["name"], solver_config(cfg))
    except ValueError as exc:
        raise ConfigError(f"sweep: {exc}") from None


def _existing(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} given")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def glyphs_from(cfg: dict):
    paths = cfg["paths"]
    image, meta = paths.get("glyph_image"), paths.get("glyph_meta")
    if image is None and meta is None:
        return load_glyph_atlas()
    if image is None or meta is None:
        raise ConfigError("paths: glyph_image and glyph_meta must be given together")
    return load_glyph_atlas(_existing(image, "paths.glyph_image"), _existing(meta, "paths.glyph_meta"))


def psf_from(cfg: dict):
    p, s = cfg["psf"], cfg["scene"]
    if p["kind"] == "delta":
        return delta_psf(s["canvas_width"], s["canvas_height"])
    if p["kind"] == "file":
        return load_psf(_existing(p.get("path"), "psf.path"))
    try:
        return simulate_psf(s["canvas_width"], s["canvas_height"], p["speckle_count"], p["aperture_fraction"],
                            p["speckle_sigma"], p["seed"])
    except ValueError as exc:
        raise ConfigError(f"psf: {exc}") from None


def _seeds(cfg: dict) -> dict:
    return {"scene": cfg["scene"]["seed"], "capture": cfg["capture"]["seed"], "psf": cfg["psf"]["seed"],
            "sweep": cfg["sweep"]["base_seed"]}


def write_manifest(out: Path, command: str, cfg: dict, inputs: dict | None = None) -> None:
    """Config copy, version and seeds; no timestamps so reruns are byte-identical."""
    manifest = {"tool": "lenstext", "version": __version__, "command": command,
                "seeds": _seeds(cfg), "inputs": inputs or {}, "config": cfg}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(args, cfg: dict, fallback_key: str = "output") -> Path:
    out = args.out or cfg["paths"].get(fallback_key)
    if out is None:
        raise ConfigError(f"no output directory: pass --out or set paths.{fallback_key}")
    return ensure_dir(out)


def _size_tags(directory, names) -> dict | None:
    size = read_meta(directory).get("char_height")
    return None if size is None else {n: size for n in names}


# -- subcommands ---------------------------------------------------------------------


def cmd_synth(args, cfg: dict) -> int:
    out = _out_dir(args, cfg, "dataset")
    spec = scene_spec(cfg)
    glyphs = glyphs_from(cfg)
    s = cfg["scene"]
    if s["kind"] == "crops":
        crops_dir = _existing(cfg["paths"].get("crops"), "paths.crops")
        crops = read_crops(crops_dir, s["crop_min_height"])
        if not crops:
            raise ConfigError(f"no usable crops in {crops_dir}")
        items = compose_dataset(crops, spec.canvas_width, spec.canvas_height, spec.margin, spec.seed)
        meta = {"kind": "crops", "seed": spec.seed}
    else:
        items = synthesize_dataset(glyphs, spec, s["count"])
        meta = {"kind": "ncd", **asdict(spec)}
    write_dataset(out, items, meta=meta)
    write_manifest(out, "synth", cfg)
    print(f"synth: wrote {len(items)} scenes (seed {spec.seed}) to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_capture(args, cfg: dict) -> int:
    src = _existing(args.dataset or cfg["paths"].get("dataset"), "dataset")
    out = _out_dir(args, cfg)
    params = capture_params(cfg)
    psf = psf_from(cfg)
    scenes = read_named_dataset(src)
    data = []
    for k, (name, img, _) in enumerate(scenes):
        if img.shape != psf.shape:
            raise ConfigError(f"{name}: scene {img.shape} and PSF {psf.shape} dimensions differ")
        p = CaptureParams(**{**params.to_dict(), "seed": derive_seed(params.seed, k)})
        data.append(forward_capture(img, psf, p).data)
    write_measurements(out, [n for n, _, _ in scenes], data, [a for _, _, a in scenes], params, psf)
    _copy_meta(src, out)
    write_manifest(out, "capture", cfg, {"dataset": str(src)})
    print(f"capture: {len(scenes)} measurements written to {out}", file=sys.stderr)
    return EXIT_OK


def _copy_meta(src: Path, out: Path) -> None:
    if (src / META_FILE).exists() and src.resolve() != out.resolve():
        shutil.copyfile(src / META_FILE, out / META_FILE)


def cmd_reconstruct(args, cfg: dict) -> int:
    src = _existing(args.measurements or cfg["paths"].get("dataset"), "measurement directory")
    out = _out_dir(args, cfg)
    opts = pipeline_options(cfg)
    psf = psf_from(cfg)
    try:
        items, _ = read_measurements(src)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    diags = []
    start = time.perf_counter()
    for name, b in items:
        try:
            x, d = reconstruct(b, psf, opts.solver, opts.solver_cfg)
        except (SolverDivergedError, DegeneratePsfError, GeometryError) as exc:
            raise PipelineError(name, "reconstruct", exc) from exc
        save_image(x, out / name)
        if d is not None:
            diags.append(json.dumps({"image": name, **d.to_dict(timing=False)}))
    (out / "diagnostics.jsonl").write_text("".join(line + "\n" for line in diags))
    if (src / ANNOTATION_FILE).exists() and src.resolve() != out.resolve():
        shutil.copyfile(src / ANNOTATION_FILE, out / ANNOTATION_FILE)
    _copy_meta(src, out)
    write_manifest(out, "reconstruct", cfg, {"measurements": str(src)})
    print(f"reconstruct: {len(items)} images with {opts.solver} in {time.perf_counter() - start:.2f} s",
          file=sys.stderr)
    return EXIT_OK


def _image_items(directory: Path):
    if (directory / ANNOTATION_FILE).exists():
        names = list(read_annotations(directory))
    else:
        names = sorted(p.name for p in directory.iterdir() if p.suffix.lower() in (".pgm", ".png"))
    return [(n, load_image(directory / n)) for n in names]


def cmd_detect(args, cfg: dict) -> int:
    src = _existing(args.images or cfg["paths"].get("dataset"), "image directory")
    out = _out_dir(args, cfg)
    det = pipeline_options(cfg).detect
    records = [(n, [Annotation(b, None) for b in detect_text(img, det)]) for n, img in _image_items(src)]
    write_detections(out, records)
    write_manifest(out, "detect", cfg, {"images": str(src)})
    return EXIT_OK


def _read_words(path: Path) -> dict:
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out[rec["image"]] = [Annotation.from_dict(w) for w in rec["words"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path} line {lineno}: malformed record ({exc})") from None
    return out


def _detections_file(arg, default_dir: Path) -> Path:
    p = Path(arg) if arg else default_dir / "detections.jsonl"
    if p.is_dir():
        p = p / "detections.jsonl"
    return _existing(p, "detections file")


def cmd_recognize(args, cfg: dict) -> int:
    src = _existing(args.images or cfg["paths"].get("dataset"), "image directory")
    dets = _read_words(_detections_file(args.detections, src))
    out = _out_dir(args, cfg)
    glyphs = glyphs_from(cfg)
    pad = cfg["detect"]["crop_pad"]
    records = []
    for name, words in dets.items():
        img = load_image(_existing(src / name, "image"))
        records.append((name, recognize_boxes(img, [w.bbox for w in words], glyphs, pad)))
    write_detections(out, records)
    write_manifest(out, "recognize", cfg, {"images": str(src)})
    return EXIT_OK


def cmd_evaluate(args, cfg: dict) -> int:
    truth = _existing(args.truth or cfg["paths"].get("dataset"), "ground-truth directory")
    try:
        gts = read_annotations(truth)
    except DatasetError as exc:
        raise ConfigError(str(exc)) from None
    preds = _read_words(_detections_file(args.predictions, truth))
    for name in gts:
        preds.setdefault(name, [])
    extra = sorted(set(preds) - set(gts))
    if extra:
        raise ConfigError(f"predictions name images absent from ground truth: {extra[:5]}")
    out = _out_dir(args, cfg)
    report = evaluate_dataset(gts, preds, size_tags=_size_tags(truth, gts))
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    write_manifest(out, "evaluate", cfg, {"truth": str(truth)})
    print(f"evaluate: P={report.precision:.4f} R={report.recall:.4f} F={report.f_score:.4f} "
          f"crwr={report.crwr:.4f}", file=sys.stderr)
    return EXIT_OK


def _pipeline_scenes(cfg: dict, glyphs):
    src = cfg["paths"].get("dataset")
    if src is not None:
        src = _existing(src, "paths.dataset")
        scenes = read_named_dataset(src)
        return scenes, _size_tags(src, [n for n, _, _ in scenes]), {"dataset": str(src)}
    spec = scene_spec(cfg)
    scenes = named_scenes(synthesize_dataset(glyphs, spec, cfg["scene"]["count"]))
    return scenes, {n: spec.char_height for n, _, _ in scenes}, {}


def cmd_pipeline(args, cfg: dict) -> int:
    out = _out_dir(args, cfg)
    glyphs = glyphs_from(cfg)
    opts = pipeline_options(cfg)
    capture = capture_params(cfg)
    psf = psf_from(cfg)
    scenes, tags, inputs = _pipeline_scenes(cfg, glyphs)
    for name, img, _ in scenes:
        if img.shape != psf.shape:
            raise ConfigError(f"{name}: scene {img.shape} and PSF {psf.shape} dimensions differ")
    result = run_pipeline(scenes, psf, capture, opts, glyphs, size_tags=tags, out_dir=out, workers=args.workers)
    write_manifest(out, "pipeline", cfg, inputs)
    r = result.report
    print(f"pipeline: {len(scenes)} images, P={r.precision:.4f} R={r.recall:.4f} F={r.f_score:.4f} "
          f"crwr={r.crwr:.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args, cfg: dict) -> int:
    out = _out_dir(args, cfg)
    spec = sweep_spec(cfg)
    glyphs = glyphs_from(cfg)
    det = pipeline_options(cfg).detect
    result = run_sweep(spec, psf_from(cfg), scene_spec(cfg), capture_params(cfg), det, glyphs,
                       workers=args.workers, crop_pad=cfg["detect"]["crop_pad"])
    write_sweep(out, result)
    write_manifest(out, "sweep", cfg)
    for p in result.points:
        print(f"sweep {spec.axis}={p.value}: crwr={p.report.crwr:.4f}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "capture": cmd_capture, "reconstruct": cmd_reconstruct, "detect": cmd_detect,
            "recognize": cmd_recognize, "evaluate": cmd_evaluate, "pipeline": cmd_pipeline, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config field (value parsed as JSON when possible)")
    common.add_argument("--out", type=Path, help="output directory (default: paths.output)")
    common.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lenstext", description="Lensless text detection and recognition simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="synthesize a scene dataset")
    p = sub.add_parser("capture", parents=[common], help="simulate lensless measurements of a dataset")
    p.add_argument("--dataset", type=Path)
    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct scenes from measurements")
    p.add_argument("--measurements", type=Path)
    p = sub.add_parser("detect", parents=[common], help="detect word boxes")
    p.add_argument("--images", type=Path)
    p = sub.add_parser("recognize", parents=[common], help="read detected words")
    p.add_argument("--images", type=Path)
    p.add_argument("--detections", type=Path, help="detections.jsonl (default: inside --images)")
    p = sub.add_parser("evaluate", parents=[common], help="score predictions against ground truth")
    p.add_argument("--truth", type=Path)
    p.add_argument("--predictions", type=Path, help="detections.jsonl with text (default: inside --truth)")
    sub.add_parser("pipeline", parents=[common], help="capture, reconstruct, detect, recognize and score")
    sub.add_parser("sweep", parents=[common], help="run one optical-condition or size sweep")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.config, args.overrides)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, AtlasError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PipelineError, SolverDivergedError, DegeneratePsfError, GeometryError, DatasetError, ImageIOError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
