"""Classical horizontal word detection: threshold, label, merge.

Components of the binarized image are grouped into words when they overlap
vertically and sit within a fraction of their height of each other
horizontally.  This stands in for a learned text-proposal network on the
white-on-black scenes used here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .evaluation import BBox
from .imgcore import Image, as_image

LEVELS = 256
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class DetectParams:
    """``threshold`` is ``"otsu"`` or a fixed level in [0, 1]."""

    threshold: str | float = "otsu"
    min_component_area: int = 4
    merge_gap_factor: float = 0.6
    vertical_overlap_min: float = 0.5
    min_box_height: int = 5

    def __post_init__(self):
        if self.threshold != "otsu" and not isinstance(self.threshold, (int, float)):
            raise ValueError(f"threshold must be 'otsu' or a number, got {self.threshold!r}")
        for name in ("merge_gap_factor", "vertical_overlap_min"):
            if not 0 < getattr(self, name) <= 5:
                raise ValueError(f"{name} must lie in (0, 5]")
        if self.min_component_area < 1 or self.min_box_height < 1:
            raise ValueError("minimum area and height must be >= 1")


def otsu_threshold(img: Image) -> float | None:
    """Otsu level over a 256-bin histogram of [0, 1]; ``None`` for a constant image.

    The returned level sits halfway between the last bin of the background
    class and the first bin of the foreground class.
    """
    img = as_image(img)
    if img.max() == img.min():
        return None
    q = np.clip(np.rint(img * (LEVELS - 1)), 0, LEVELS - 1).astype(np.intp)
    hist = np.bincount(q.ravel(), minlength=LEVELS).astype(np.float64)
    p = hist / hist.sum()
    levels = np.arange(LEVELS)
    w0 = np.cumsum(p)
    m0 = np.cumsum(p * levels)
    mt = m0[-1]
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mt * w0 - m0) ** 2 / (w0 * w1)
    between[~np.isfinite(between)] = -1.0
    k = int(np.argmax(between))
    return (k + 0.5) / (LEVELS - 1)


def binarize(img: Image, threshold: str | float = "otsu") -> np.ndarray:
    img = as_image(img)
    if threshold == "otsu":
        level = otsu_threshold(img)
        if level is None:
            return np.zeros(img.shape, dtype=bool)
        return img > level
    return img > float(threshold)


def connected_components(mask: np.ndarray) -> list[tuple[BBox, int]]:
    """8-connected components as (tight bbox, pixel count), in label order."""
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    out = []
    for k, sl in enumerate(ndimage.find_objects(labels), 1):
        ys, xs = sl
        out.append((BBox(xs.start, ys.start, xs.stop, ys.stop), int(areas[k])))
    return out


def _joinable(a: BBox, b: BBox, p: DetectParams) -> bool:
    overlap = min(a.y1, b.y1) - max(a.y0, b.y0)
    if overlap <= 0 or overlap < p.vertical_overlap_min * min(a.height, b.height):
        return False
    gap = max(a.x0, b.x0) - min(a.x1, b.x1)
    return gap <= p.merge_gap_factor * max(a.height, b.height)


def group_boxes(boxes: list[BBox], params: DetectParams) -> list[BBox]:
    """Union boxes under the transitive closure of the join rule."""
    parent = list(range(len(boxes)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    # sweep in x0 order; the gap to later boxes only grows, so stop early
    reach = params.merge_gap_factor * max(b.height for b in boxes)
    order = sorted(range(len(boxes)), key=lambda i: boxes[i].x0)
    for ii, i in enumerate(order):
        for j in order[ii + 1 :]:
            if boxes[j].x0 - boxes[i].x1 > reach:
                break
            if _joinable(boxes[i], boxes[j], params):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, BBox] = {}
    for i, box in enumerate(boxes):
        r = find(i)
        groups[r] = box if r not in groups else groups[r].union(box)
    return list(groups.values())


def detect_text(img: Image, params: DetectParams | None = None) -> list[BBox]:
    """Word boxes sorted top-to-bottom, then left-to-right."""
    params = params or DetectParams()
    mask = binarize(img, params.threshold)
    comps = [box for box, area in connected_components(mask)
             if area >= params.min_component_area and box.height >= params.min_box_height]
    if not comps:
        return []
    words = group_boxes(comps, params)
    return sorted(set(words), key=lambda b: (b.y0, b.x0, b.y1, b.x1))
