"""Synthetic text scenes with exact word-level ground truth.

Two generators are provided: NCD-style scenes (random uppercase
alphanumeric words rendered white on black from a fixed glyph atlas) and
composites of pre-cropped word images on a blank canvas.  Both place words
by rejection sampling so annotation boxes never overlap and are never
clipped.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import BBox
from .imgcore import Image, as_image, ensure_dir, load_image, resize_bilinear, save_image

log = logging.getLogger(__name__)

ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
CANVAS_WIDTH = 324
CANVAS_HEIGHT = 243
TEXT_SIZES = (40, 30, 20, 10)
SPACING_FACTOR = 0.15
CROP_HEIGHT = 50
MAX_ATTEMPTS = 1000
ANNOTATION_FILE = "annotations.jsonl"
META_FILE = "dataset.json"


class AtlasError(ValueError):
    pass


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class GlyphSet:
    glyphs: dict[str, Image]
    cell_height: int

    def __post_init__(self):
        if len(self.glyphs) != len(ALPHABET) or set(self.glyphs) != set(ALPHABET):
            raise AtlasError(f"glyph set must hold exactly the {len(ALPHABET)} symbols {ALPHABET}")
        for ch, g in self.glyphs.items():
            if g.shape[0] != self.cell_height:
                raise AtlasError(f"glyph {ch!r} height {g.shape[0]} != cell height {self.cell_height}")
            if not np.any(g > 0.5):
                raise AtlasError(f"glyph {ch!r} has no pixel above 0.5")

    @property
    def widths(self) -> dict[str, int]:
        return {ch: g.shape[1] for ch, g in self.glyphs.items()}

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other


@dataclass(frozen=True)
class Annotation:
    bbox: BBox
    text: str | None

    def to_dict(self) -> dict:
        d = self.bbox.as_dict()
        if self.text is not None:
            d["text"] = self.text
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Annotation":
        return cls(BBox(int(d["x0"]), int(d["y0"]), int(d["x1"]), int(d["y1"])), d.get("text"))


@dataclass(frozen=True)
class SceneSpec:
    canvas_width: int = CANVAS_WIDTH
    canvas_height: int = CANVAS_HEIGHT
    char_height: int = 40
    words_min: int = 1
    words_max: int = 4
    len_min: int = 1
    len_max: int = 10
    margin: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.canvas_width < 1 or self.canvas_height < 1:
            raise ValueError("canvas dimensions must be >= 1")
        if not 1 <= self.words_min <= self.words_max:
            raise ValueError(f"need 1 <= words_min <= words_max, got {self.words_min}, {self.words_max}")
        if not 1 <= self.len_min <= self.len_max:
            raise ValueError(f"need 1 <= len_min <= len_max, got {self.len_min}, {self.len_max}")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if not 1 <= self.char_height <= self.canvas_height - 2 * self.margin:
            raise ValueError(f"char_height {self.char_height} does not fit the canvas with margin {self.margin}")


def derive_seed(base_seed: int, index: int) -> int:
    """Per-item seed, independent of generation order."""
    return int(np.random.SeedSequence([base_seed & (2**64 - 1), index]).generate_state(1, np.uint64)[0])


# -- glyphs ------------------------------------------------------------------


def load_glyph_atlas(image_path=None, meta_path=None) -> GlyphSet:
    """Load a horizontal strip atlas of 36 equal cells plus JSON metadata.

    Without arguments the built-in atlas is loaded.  Each glyph is cropped
    to its horizontal ink extent and keeps the full cell height.
    """
    if image_path is None and meta_path is None:
        return default_glyphs()
    if image_path is None or meta_path is None:
        raise AtlasError("both image_path and meta_path are required")
    meta = json.loads(Path(meta_path).read_text())
    return _atlas_from(load_image(image_path), meta)


@lru_cache(maxsize=1)
def default_glyphs() -> GlyphSet:
    data = resources.files("lenstext") / "data"
    meta = json.loads((data / "glyphs.json").read_text())
    with resources.as_file(data / "glyphs.pgm") as p:
        strip = load_image(p)
    return _atlas_from(strip, meta)


def _atlas_from(strip: Image, meta: dict) -> GlyphSet:
    try:
        cell_w, cell_h, order = int(meta["cell_width"]), int(meta["cell_height"]), str(meta["order"])
    except (KeyError, TypeError, ValueError) as exc:
        raise AtlasError(f"bad atlas metadata: {exc}") from None
    missing = [c for c in ALPHABET if c not in order]
    if missing:
        raise AtlasError(f"missing character(s) in declared order: {''.join(missing)}")
    if len(order) != len(ALPHABET):
        raise AtlasError(f"glyph count mismatch: order declares {len(order)} symbols, expected {len(ALPHABET)}")
    if strip.shape[0] != cell_h or strip.shape[1] % cell_w:
        raise AtlasError(f"atlas {strip.shape[1]}x{strip.shape[0]} is not a strip of {cell_w}x{cell_h} cells")
    n_cells = strip.shape[1] // cell_w
    if n_cells != len(order):
        raise AtlasError(f"glyph count mismatch: {n_cells} cells for {len(order)} symbols")
    glyphs = {}
    for i, ch in enumerate(order):
        cell = strip[:, i * cell_w : (i + 1) * cell_w]
        cols = np.flatnonzero(cell.max(axis=0) > 0)
        if cols.size == 0:
            raise AtlasError(f"empty glyph cell for {ch!r}")
        glyphs[ch] = np.ascontiguousarray(cell[:, cols[0] : cols[-1] + 1])
    return GlyphSet(glyphs, cell_h)


def word_spacing(char_height: int) -> int:
    return int(round(SPACING_FACTOR * char_height))


def scaled_glyph(glyphs: GlyphSet, ch: str, char_height: int) -> Image:
    g = glyphs.glyphs[ch]
    if char_height == glyphs.cell_height:
        return g
    width = max(1, int(round(g.shape[1] * char_height / glyphs.cell_height)))
    return resize_bilinear(g, width, char_height)


def glyph_layout(glyphs: GlyphSet, text: str, char_height: int) -> list[tuple[int, int]]:
    """Column span ``(x_start, x_end)`` of each character in a rendered word."""
    spans, x = [], 0
    gap = word_spacing(char_height)
    for ch in text:
        w = scaled_glyph(glyphs, ch, char_height).shape[1]
        spans.append((x, x + w))
        x += w + gap
    return spans


def render_word(glyphs: GlyphSet, text: str, char_height: int) -> Image:
    """Render ``text`` left to right, ink in (0, 1] on a zero background."""
    if not text:
        raise ValueError("cannot render an empty word")
    unknown = sorted(set(text) - set(glyphs.glyphs))
    if unknown:
        raise ValueError(f"unknown character(s) {''.join(unknown)!r}")
    if char_height < 1:
        raise ValueError("char_height must be >= 1")
    spans = glyph_layout(glyphs, text, char_height)
    out = np.zeros((char_height, spans[-1][1]))
    for ch, (x0, x1) in zip(text, spans):
        out[:, x0:x1] = scaled_glyph(glyphs, ch, char_height)
    return out


def ink_box(img: Image) -> BBox | None:
    rows = np.flatnonzero(img.max(axis=1) > 0)
    cols = np.flatnonzero(img.max(axis=0) > 0)
    if rows.size == 0:
        return None
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


# -- placement ---------------------------------------------------------------


def _try_place(rng: np.random.Generator, w: int, h: int, canvas_w: int, canvas_h: int,
               margin: int, hclear: int, placed: list[BBox]) -> BBox | None:
    """Rejection-sample a box position; dilated boxes must not overlap."""
    x_hi = canvas_w - margin - w
    y_hi = canvas_h - margin - h
    if x_hi < margin or y_hi < margin:
        return None
    for _ in range(MAX_ATTEMPTS):
        x = int(rng.integers(margin, x_hi + 1))
        y = int(rng.integers(margin, y_hi + 1))
        box = BBox(x, y, x + w, y + h)
        grown = box.dilate(hclear, margin)
        if all(grown.intersection_area(p.dilate(hclear, margin)) == 0 for p in placed):
            return box
    return None


def random_word(rng: np.random.Generator, len_min: int, len_max: int) -> str:
    n = int(rng.integers(len_min, len_max + 1))
    return "".join(ALPHABET[i] for i in rng.integers(0, len(ALPHABET), size=n))


def synthesize_scene(glyphs: GlyphSet, spec: SceneSpec) -> tuple[Image, list[Annotation]]:
    """Random NCD-style scene, deterministic for a fixed ``spec.seed``.

    Words that cannot be placed within ``MAX_ATTEMPTS`` draws are dropped.
    Horizontally, boxes keep at least half a character height of clearance so
    neighbouring words on a line stay separable.
    """
    rng = np.random.default_rng(spec.seed)
    canvas = np.zeros((spec.canvas_height, spec.canvas_width))
    hclear = max(spec.margin, (spec.char_height + 1) // 2)
    annotations: list[Annotation] = []
    n_words = int(rng.integers(spec.words_min, spec.words_max + 1))
    for _ in range(n_words):
        text = random_word(rng, spec.len_min, spec.len_max)
        word = render_word(glyphs, text, spec.char_height)
        tight = ink_box(word)
        word = word[tight.y0 : tight.y1, tight.x0 : tight.x1]
        h, w = word.shape
        box = _try_place(rng, w, h, spec.canvas_width, spec.canvas_height, spec.margin, hclear,
                         [a.bbox for a in annotations])
        if box is None:
            continue
        canvas[box.y0 : box.y1, box.x0 : box.x1] = word
        annotations.append(Annotation(box, text))
    if not annotations:
        log.warning("scene seed=%d: no word could be placed; returning a blank canvas", spec.seed)
    return canvas, annotations


def compose_from_crops(crops: Sequence[tuple[Image, str]], canvas_width: int = CANVAS_WIDTH,
                       canvas_height: int = CANVAS_HEIGHT, margin: int = 4, seed: int = 0,
                       ) -> tuple[Image, list[Annotation], list[int]]:
    """Paste cropped word images onto one blank canvas.

    Crops are visited once each in a seeded random order; those taller than
    50 px are first resized to a height of 50.  Crops that cannot be placed
    are skipped.

    Returns
    -------
    image, annotations, used
        ``used`` lists the indices (into ``crops``) that were placed, so a
        caller can build further composites from the remainder.
    """
    if not crops:
        raise ValueError("empty crop list")
    for k, (img, _) in enumerate(crops):
        if img.shape[0] > canvas_height - 2 * margin:
            raise ValueError(f"crop {k} height {img.shape[0]} exceeds canvas height minus margins")
    rng = np.random.default_rng(seed)
    canvas = np.zeros((canvas_height, canvas_width))
    annotations: list[Annotation] = []
    used: list[int] = []
    for k in rng.permutation(len(crops)):
        img, text = crops[int(k)]
        img = as_image(img)
        if img.shape[0] > CROP_HEIGHT:
            new_w = max(1, int(round(img.shape[1] * CROP_HEIGHT / img.shape[0])))
            img = resize_bilinear(img, new_w, CROP_HEIGHT)
        h, w = img.shape
        box = _try_place(rng, w, h, canvas_width, canvas_height, margin, margin,
                         [a.bbox for a in annotations])
        if box is None:
            continue
        canvas[box.y0 : box.y1, box.x0 : box.x1] = np.clip(img, 0.0, 1.0)
        annotations.append(Annotation(box, text.upper()))
        used.append(int(k))
    return canvas, annotations, used


def compose_dataset(crops: Sequence[tuple[Image, str]], canvas_width: int = CANVAS_WIDTH,
                    canvas_height: int = CANVAS_HEIGHT, margin: int = 4, seed: int = 0,
                    ) -> list[tuple[Image, list[Annotation]]]:
    """Consume every crop exactly once across as many composites as needed."""
    remaining = list(range(len(crops)))
    items = []
    index = 0
    while remaining:
        sub = [crops[i] for i in remaining]
        img, anns, used = compose_from_crops(sub, canvas_width, canvas_height, margin,
                                             derive_seed(seed, index))
        if not used:
            log.warning("%d crop(s) could not be placed on an empty canvas; skipped", len(remaining))
            break
        items.append((img, anns))
        used_set = set(used)
        remaining = [r for k, r in enumerate(remaining) if k not in used_set]
        index += 1
    return items


def read_crops(directory, min_height: int = 30) -> list[tuple[Image, str]]:
    """Load cropped word images listed in ``labels.jsonl`` (``{"image": ..., "text": ...}``).

    Crops whose label is not purely alphanumeric or whose height is below
    ``min_height`` are ignored.
    """
    directory = Path(directory)
    crops = []
    for lineno, line in enumerate((directory / "labels.jsonl").read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            name, text = rec["image"], str(rec["text"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetError(f"labels.jsonl line {lineno}: {exc}") from None
        if not text or not text.isascii() or not text.isalnum():
            continue
        img = load_image(directory / name)
        if img.shape[0] < min_height:
            continue
        crops.append((img, text))
    return crops


# -- dataset I/O ---------------------------------------------------------------


def image_name(index: int) -> str:
    return f"{index:05d}.pgm"


def write_annotations(directory, records: Sequence[tuple[str, Sequence[Annotation]]]) -> None:
    lines = [json.dumps({"image": name, "words": [a.to_dict() for a in anns]}) for name, anns in records]
    (Path(directory) / ANNOTATION_FILE).write_text("".join(line + "\n" for line in lines))


def read_annotations(directory) -> dict[str, list[Annotation]]:
    """Parse ``annotations.jsonl`` into an ordered mapping name -> annotations."""
    path = Path(directory) / ANNOTATION_FILE
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc.strerror or exc}") from None
    out: dict[str, list[Annotation]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out[rec["image"]] = [Annotation.from_dict(w) for w in rec["words"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path.name} line {lineno}: malformed record ({exc})") from None
    return out


def write_dataset(directory, items: Sequence[tuple[Image, Sequence[Annotation]]],
                  meta: dict | None = None, depth: int = 8) -> list[str]:
    """Write images as zero-padded PGMs plus one JSONL annotation file."""
    directory = ensure_dir(directory)
    names = []
    for k, (img, _) in enumerate(items):
        name = image_name(k)
        save_image(img, directory / name, depth=depth)
        names.append(name)
    write_annotations(directory, [(n, anns) for n, (_, anns) in zip(names, items)])
    if meta is not None:
        (directory / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return names


def read_dataset(directory) -> list[tuple[Image, list[Annotation]]]:
    return [(img, anns) for _, img, anns in read_named_dataset(directory)]


def read_named_dataset(directory) -> list[tuple[str, Image, list[Annotation]]]:
    directory = Path(directory)
    out = []
    for name, anns in read_annotations(directory).items():
        path = directory / name
        if not path.exists():
            raise DatasetError(f"missing referenced image {name}")
        out.append((name, load_image(path), anns))
    return out


def read_meta(directory) -> dict:
    path = Path(directory) / META_FILE
    return json.loads(path.read_text()) if path.exists() else {}


def synthesize_dataset(glyphs: GlyphSet, spec: SceneSpec, count: int) -> list[tuple[Image, list[Annotation]]]:
    """``count`` scenes; scene ``k`` uses the seed derived from ``(spec.seed, k)``."""
    return [synthesize_scene(glyphs, replace(spec, seed=derive_seed(spec.seed, k))) for k in range(count)]
