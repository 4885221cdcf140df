"""Detection and recognition scoring.

Detection uses greedy one-to-one IoU matching (IoU >= 0.5 by default) with
micro-averaged precision/recall/F.  Recognition uses unit-cost Levenshtein
distance and Crwr, the rate of correctly recognized words, broken down by
text size and word length.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence


@dataclass(frozen=True, order=True)
class BBox:
    """Axis-aligned box; ``(x0, y0)`` inclusive, ``(x1, y1)`` exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def intersection_area(self, other: "BBox") -> int:
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        return max(w, 0) * max(h, 0)

    def union(self, other: "BBox") -> "BBox":
        return BBox(min(self.x0, other.x0), min(self.y0, other.y0),
                    max(self.x1, other.x1), max(self.y1, other.y1))

    def dilate(self, dx: int, dy: int) -> "BBox":
        return BBox(self.x0 - dx, self.y0 - dy, self.x1 + dx, self.y1 + dy)

    def as_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1}


def iou(a: BBox, b: BBox) -> float:
    inter = a.intersection_area(b)
    if inter == 0:
        return 0.0
    return inter / (a.area + b.area - inter)


def f_measure(precision: float, recall: float) -> float:
    if precision + recall > 0:
        return 2 * precision * recall / (precision + recall)
    return 0.0


def _greedy_pairs(preds: Sequence[BBox], gts: Sequence[BBox], iou_min: float) -> list[tuple[int, int]]:
    candidates = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            v = iou(p, g)
            if v >= iou_min:
                candidates.append((v, i, j))
    # descending IoU; index order only breaks exact ties
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_p, used_g, matches = set(), set(), []
    for _, i, j in candidates:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        matches.append((i, j))
    return matches


def match_detections(preds: Sequence[BBox], gts: Sequence[BBox], iou_min: float = 0.5):
    """Greedy one-to-one matching in descending IoU order.

    Returns
    -------
    matches : list of (pred_idx, gt_idx)
    precision, recall, f_score : float
        Precision is 1 for an empty prediction list, recall is 1 for an
        empty ground-truth list.
    """
    if not 0 < iou_min <= 1:
        raise ValueError(f"iou_min must lie in (0, 1], got {iou_min}")
    matches = _greedy_pairs(preds, gts, iou_min)
    precision = len(matches) / len(preds) if preds else 1.0
    recall = len(matches) / len(gts) if gts else 1.0
    return matches, precision, recall, f_measure(precision, recall)


def levenshtein(s: str, t: str) -> int:
    """Minimum number of unit-cost insertions, deletions and substitutions turning s into t."""
    if len(s) < len(t):
        s, t = t, s
    prev = list(range(len(t) + 1))
    for i, cs in enumerate(s, 1):
        cur = [i]
        for j, ct in enumerate(t, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (cs != ct)))
        prev = cur
    return prev[-1]


@dataclass
class Cell:
    words: int = 0
    correct: int = 0
    edit_distance: int = 0

    @property
    def crwr(self) -> float:
        return self.correct / self.words if self.words else 0.0

    @property
    def avg_edit_distance(self) -> float:
        return self.edit_distance / self.words if self.words else 0.0

    def table_entry(self) -> str:
        """Edit distance over word count, e.g. ``"4/1344"``."""
        return f"{self.edit_distance}/{self.words}"


@dataclass
class EvalReport:
    precision: float | None
    recall: float | None
    f_score: float | None
    total_words: int
    correct_words: int
    crwr: float
    total_edit_distance: int
    average_edit_distance: float
    breakdowns: dict[tuple[int | None, int], Cell] = field(default_factory=dict)
    detections: int | None = None
    ground_truths: int | None = None
    matched: int | None = None

    def cell(self, size: int | None, word_length: int) -> Cell:
        return self.breakdowns[(size, word_length)]

    def to_dict(self) -> dict:
        cells = [
            {"size": size, "word_length": length, "words": c.words, "correct": c.correct,
             "crwr": c.crwr, "edit_distance": c.edit_distance,
             "avg_edit_distance": c.avg_edit_distance}
            for (size, length), c in sorted(self.breakdowns.items(), key=_cell_sort_key)
        ]
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f_score": self.f_score,
            "total_words": self.total_words,
            "correct_words": self.correct_words,
            "crwr": self.crwr,
            "total_edit_distance": self.total_edit_distance,
            "average_edit_distance": self.average_edit_distance,
            "detections": self.detections,
            "ground_truths": self.ground_truths,
            "matched": self.matched,
            "breakdowns": cells,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["size", "word_length", "words", "correct", "crwr",
                         "edit_distance", "avg_edit_distance"])
        for (size, length), c in sorted(self.breakdowns.items(), key=_cell_sort_key):
            writer.writerow(["" if size is None else size, length, c.words, c.correct,
                             repr(c.crwr), c.edit_distance, repr(c.avg_edit_distance)])
        return buf.getvalue()

    def table(self, size: int | None = None) -> dict[int, str]:
        """Word length -> ``"edits/words"`` rendering for one text size."""
        return {length: c.table_entry()
                for (s, length), c in sorted(self.breakdowns.items(), key=_cell_sort_key)
                if s == size}

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        cells = {(c["size"], c["word_length"]): Cell(c["words"], c["correct"], c["edit_distance"])
                 for c in d.get("breakdowns", [])}
        keys = ("precision", "recall", "f_score", "total_words", "correct_words", "crwr",
                "total_edit_distance", "average_edit_distance", "detections",
                "ground_truths", "matched")
        return cls(breakdowns=cells, **{k: d.get(k) for k in keys})


def _cell_sort_key(item):
    (size, length), _ = item
    return (-1 if size is None else size, length)


def _accumulate(cells: dict, size, truth: str, predicted: str | None) -> tuple[int, bool]:
    truth_u = truth.upper()
    if predicted is None:
        dist, correct = len(truth), False
    else:
        pred_u = predicted.upper()
        dist = levenshtein(pred_u, truth_u)
        correct = pred_u == truth_u
    cell = cells.setdefault((size, len(truth)), Cell())
    cell.words += 1
    cell.correct += int(correct)
    cell.edit_distance += dist
    return dist, correct


def _recognition_report(cells: dict, **detection) -> EvalReport:
    total = sum(c.words for c in cells.values())
    correct = sum(c.correct for c in cells.values())
    edits = sum(c.edit_distance for c in cells.values())
    return EvalReport(
        total_words=total,
        correct_words=correct,
        crwr=correct / total if total else 0.0,
        total_edit_distance=edits,
        average_edit_distance=edits / total if total else 0.0,
        breakdowns=cells,
        **detection,
    )


def score_recognition(pairs: Sequence[tuple[str, str]], size_tags: Sequence[int | None] | None = None) -> EvalReport:
    """Score (predicted, truth) string pairs; correctness is case-insensitive.

    Detection fields of the returned report are ``None``.
    """
    if not pairs:
        raise ValueError("score_recognition needs at least one pair")
    if size_tags is not None and len(size_tags) != len(pairs):
        raise ValueError("size_tags must have one entry per pair")
    cells: dict = {}
    for k, (pred, truth) in enumerate(pairs):
        _accumulate(cells, None if size_tags is None else size_tags[k], truth, pred)
    return _recognition_report(cells, precision=None, recall=None, f_score=None)


def evaluate_dataset(gts: Mapping[str, Sequence], preds: Mapping[str, Sequence],
                     size_tags: Mapping[str, int] | None = None, iou_min: float = 0.5) -> EvalReport:
    """Score a detection+recognition dataset against ground truth.

    Parameters
    ----------
    gts, preds : mapping of image name -> list of annotations
        Annotations need ``bbox`` and ``text`` attributes; prediction texts
        may be ``None`` for detection-only runs.
    size_tags : mapping of image name -> text size, optional
        Used as the size axis of the breakdown table.

    Detection counts are micro-averaged over all boxes.  Recognition is
    scored on matched pairs; unmatched ground-truth words count as incorrect
    with edit distance equal to their length.
    """
    if set(gts) != set(preds):
        missing = sorted(set(gts) ^ set(preds))
        raise ValueError(f"image names differ between datasets: {missing[:5]}")
    cells: dict = {}
    n_pred = n_gt = n_match = 0
    for name in sorted(gts):
        gt_words, pred_words = list(gts[name]), list(preds[name])
        matches, *_ = match_detections([p.bbox for p in pred_words], [g.bbox for g in gt_words], iou_min)
        n_pred += len(pred_words)
        n_gt += len(gt_words)
        n_match += len(matches)
        by_gt = {j: i for i, j in matches}
        size = None if size_tags is None else size_tags.get(name)
        for j, g in enumerate(gt_words):
            pred_text = pred_words[by_gt[j]].text if j in by_gt else None
            if j in by_gt and pred_text is None:
                pred_text = ""
            _accumulate(cells, size, g.text, pred_text)
    precision = n_match / n_pred if n_pred else 1.0
    recall = n_match / n_gt if n_gt else 1.0
    return _recognition_report(cells, precision=precision, recall=recall,
                               f_score=f_measure(precision, recall),
                               detections=n_pred, ground_truths=n_gt, matched=n_match)


def f_identity_holds(report: EvalReport) -> bool:
    if report.precision is None:
        return report.f_score is None
    return report.f_score == f_measure(report.precision, report.recall)


def merge_cells(reports: Iterable[EvalReport]) -> dict:
    cells: dict = {}
    for r in reports:
        for key, c in r.breakdowns.items():
            acc = cells.setdefault(key, Cell())
            acc.words += c.words
            acc.correct += c.correct
            acc.edit_distance += c.edit_distance
    return cells
