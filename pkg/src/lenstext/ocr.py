"""Character segmentation and template-matching recognition.

Words are split at empty ink columns; each piece is scored against the 36
glyph templates with zero-mean normalized cross-correlation at a single
aligned placement.  Works for the fixed font/alphabet regime only.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .evaluation import BBox
from .imgcore import Image, as_image, resize_bilinear
from .scene import ALPHABET, GlyphSet
from .textdet import binarize

MIN_SEGMENT_AREA = 2
# horizontal context around the aligned pair; a bare solid stroke ("I") has zero variance
MATCH_PAD_FRACTION = 0.125


@dataclass(frozen=True)
class MatchResult:
    character: str
    score: float


def segment_characters(word_img: Image) -> list[BBox]:
    """Column-ordered character boxes, split at runs of empty (Otsu) columns.

    A one-pixel zero border is added before thresholding so a crop that is
    entirely ink still has a background class.
    """
    mask = binarize(np.pad(as_image(word_img), 1))[1:-1, 1:-1]
    cols = mask.any(axis=0)
    boxes = []
    x = 0
    n = cols.size
    while x < n:
        if not cols[x]:
            x += 1
            continue
        start = x
        while x < n and cols[x]:
            x += 1
        sub = mask[:, start:x]
        rows = np.flatnonzero(sub.any(axis=1))
        if int(sub.sum()) >= MIN_SEGMENT_AREA:
            boxes.append(BBox(start, int(rows[0]), x, int(rows[-1]) + 1))
    return boxes


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if denom == 0:
        return 0.0
    return float(np.sum(a * b) / denom)


def _center_pad(img: np.ndarray, width: int) -> np.ndarray:
    if img.shape[1] == width:
        return img
    out = np.zeros((img.shape[0], width))
    left = (width - img.shape[1]) // 2
    out[:, left : left + img.shape[1]] = img
    return out


@lru_cache(maxsize=8)
def _templates(glyphs: GlyphSet) -> tuple[tuple[str, np.ndarray], ...]:
    order = [c for c in ALPHABET if c in glyphs.glyphs]
    return tuple((c, glyphs.glyphs[c]) for c in order)


def match_glyph(char_img: Image, glyphs: GlyphSet) -> MatchResult:
    """Best-matching symbol for one character image.

    The ink box of ``char_img`` is scaled to the template height with its
    aspect ratio kept; both images are centered in a common box so width
    differences (``O`` vs ``0``) still count.  Ties go to the earlier symbol
    in ``A-Z0-9`` order.
    """
    char_img = as_image(char_img)
    ink = char_img > 0
    if not ink.any():
        raise ValueError("cannot match a blank character image")
    rows = np.flatnonzero(ink.any(axis=1))
    cols = np.flatnonzero(ink.any(axis=0))
    tight = char_img[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    h = glyphs.cell_height
    width = max(1, int(round(tight.shape[1] * h / tight.shape[0])))
    probe = resize_bilinear(tight, width, h)
    pad = 2 * max(1, int(round(MATCH_PAD_FRACTION * h)))
    best = MatchResult(ALPHABET[0], -np.inf)
    for ch, tmpl in _templates(glyphs):
        common = max(width, tmpl.shape[1]) + pad
        score = _ncc(_center_pad(probe, common), _center_pad(tmpl, common))
        if score > best.score:
            best = MatchResult(ch, score)
    return best


def recognize_word(word_img: Image, glyphs: GlyphSet) -> str:
    word_img = as_image(word_img)
    chars = []
    for box in segment_characters(word_img):
        piece = word_img[box.y0 : box.y1, box.x0 : box.x1]
        chars.append(match_glyph(piece, glyphs).character)
    return "".join(chars)
