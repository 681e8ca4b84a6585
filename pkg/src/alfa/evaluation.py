"""PASCAL VOC style average precision under two entry conventions.

``map_s`` turns every detection into one entry at its argmax label;
``map`` turns it into ``K`` entries, one per foreground label.
"""

from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyClassWarning
from .fusion import Convention, FusedDetection
from .geometry import BoundingBox, iou
from .scores import predicted_label


class ApMode(str, Enum):
    ALL_POINTS = "all_points"
    ELEVEN_POINT = "eleven_point"


@dataclass(frozen=True)
class GroundTruthObject:
    image_id: str
    label: int
    box: BoundingBox
    difficult: bool = False

    def __post_init__(self):
        if self.label < 1:
            raise ValueError(f"ground-truth labels start at 1, got {self.label}")


@dataclass
class GroundTruthSet:
    num_classes: int
    objects: list[GroundTruthObject]
    image_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        seen = dict.fromkeys(self.image_ids)
        for g in self.objects:
            seen.setdefault(g.image_id)
        self.image_ids = list(seen)

    def for_images(self, image_ids: Iterable[str]) -> GroundTruthSet:
        keep = list(image_ids)
        wanted = set(keep)
        return GroundTruthSet(self.num_classes, [g for g in self.objects if g.image_id in wanted], keep)


@dataclass(frozen=True)
class EvalEntry:
    image_id: str
    label: int
    confidence: float
    box: BoundingBox

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence!r} outside [0, 1]")


@dataclass
class ClassMatches:
    """Outcome of matching one class: TP flags in descending-confidence order."""

    tp: np.ndarray
    confidences: np.ndarray
    n_positive: int


@dataclass
class ApResult:
    per_class_ap: dict[int, float]
    map: float
    n_positive: dict[int, int] = field(default_factory=dict)
    precision_recall_points: dict[int, list[tuple[float, float]]] = field(default_factory=dict)

    @property
    def evaluated_classes(self) -> list[int]:
        return sorted(k for k, n in self.n_positive.items() if n > 0)


Detections = Mapping[str, Sequence[FusedDetection]]


def to_entries_map_s(dets: Detections) -> list[EvalEntry]:
    out = []
    for image_id, image_dets in dets.items():
        for d in image_dets:
            label, conf = predicted_label(d.scores)
            if d.active_labels is not None and label not in d.active_labels:
                continue
            out.append(EvalEntry(image_id, label, conf, d.box))
    return out


def to_entries_map(dets: Detections) -> list[EvalEntry]:
    out = []
    for image_id, image_dets in dets.items():
        for d in image_dets:
            for label, conf in enumerate(d.scores.values[1:], start=1):
                if d.active_labels is not None and label not in d.active_labels:
                    continue
                out.append(EvalEntry(image_id, label, conf, d.box))
    return out


def to_entries(dets: Detections, convention: Convention | str) -> list[EvalEntry]:
    if Convention(convention) is Convention.MAP_S:
        return to_entries_map_s(dets)
    return to_entries_map(dets)


def count_positives(gts: Iterable[GroundTruthObject]) -> dict[int, int]:
    counts: dict[int, int] = defaultdict(int)
    for g in gts:
        counts[g.label] += 0 if g.difficult else 1
    return dict(counts)


def match_and_score(
    entries: Sequence[EvalEntry],
    gts: Sequence[GroundTruthObject],
    iou_min: float = 0.5,
) -> dict[int, ClassMatches]:
    """Greedy VOC matching of entries to ground truth, per class.

    Entries are visited in descending confidence (stable for ties). Each
    one takes the unmatched non-difficult object of its class and image
    with the highest IoU ``>= iou_min`` and counts as a TP; otherwise it is
    ignored if it overlaps a difficult object that much, and is an FP if not.
    """
    by_key: dict[tuple[str, int], list[GroundTruthObject]] = defaultdict(list)
    for g in gts:
        by_key[(g.image_id, g.label)].append(g)
    npos = count_positives(gts)

    by_class: dict[int, list[EvalEntry]] = defaultdict(list)
    for e in entries:
        by_class[e.label].append(e)

    result = {}
    for label in sorted(set(npos) | set(by_class)):
        class_entries = by_class.get(label, [])
        conf = np.array([e.confidence for e in class_entries], dtype=float)
        order = np.argsort(-conf, kind="stable")
        matched: set[tuple[str, int]] = set()
        flags, kept_conf = [], []
        for idx in order:
            e = class_entries[idx]
            candidates = by_key.get((e.image_id, label), ())
            best, best_iou, hits_difficult = None, iou_min, False
            for j, g in enumerate(candidates):
                ov = iou(e.box, g.box)
                if ov < iou_min:
                    continue
                if g.difficult:
                    hits_difficult = True
                elif (e.image_id, j) not in matched and (best is None or ov > best_iou):
                    best, best_iou = j, ov
            if best is not None:
                matched.add((e.image_id, best))
                flags.append(True)
            elif hits_difficult:
                continue
            else:
                flags.append(False)
            kept_conf.append(e.confidence)
        result[label] = ClassMatches(
            np.array(flags, dtype=bool), np.array(kept_conf, dtype=float), npos.get(label, 0)
        )
    return result


def precision_recall(tp: np.ndarray, n_positive: int) -> tuple[np.ndarray, np.ndarray]:
    tp = np.asarray(tp, dtype=bool)
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / n_positive if n_positive else np.zeros(len(tp))
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1)
    return recall, precision


def average_precision(tp, n_positive: int, mode: ApMode | str = ApMode.ALL_POINTS) -> float:
    """AP from confidence-ordered TP flags.

    ``all_points`` integrates the monotone precision envelope over recall;
    ``eleven_point`` averages the envelope at recall 0, 0.1, ..., 1.
    """
    mode = ApMode(mode)
    if n_positive <= 0 or len(tp) == 0:
        return 0.0
    recall, precision = precision_recall(tp, n_positive)
    if mode is ApMode.ELEVEN_POINT:
        total = 0.0
        for t in (i / 10 for i in range(11)):
            reached = precision[recall >= t]
            total += reached.max() if reached.size else 0.0
        return float(total / 11.0)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _num_classes(dets: Detections, gts: Sequence[GroundTruthObject]) -> int:
    k = max((g.label for g in gts), default=0)
    for image_dets in dets.values():
        for d in image_dets:
            return max(k, d.scores.num_classes)
    return k


def mean_average_precision(
    dets: Detections,
    gts: Sequence[GroundTruthObject],
    convention: Convention | str = Convention.MAP_S,
    mode: ApMode | str = ApMode.ALL_POINTS,
    num_classes: int | None = None,
    iou_min: float = 0.5,
) -> ApResult:
    """Mean of per-class AP over the classes that have ground truth."""
    k = num_classes if num_classes is not None else _num_classes(dets, gts)
    matches = match_and_score(to_entries(dets, convention), gts, iou_min)
    per_class, npos, curves = {}, {}, {}
    for label in range(1, k + 1):
        m = matches.get(label)
        if m is None:
            per_class[label], npos[label], curves[label] = 0.0, 0, []
            continue
        per_class[label] = average_precision(m.tp, m.n_positive, mode)
        npos[label] = m.n_positive
        r, p = precision_recall(m.tp, m.n_positive)
        curves[label] = list(zip(r.tolist(), p.tolist()))
    present = [per_class[c] for c in per_class if npos[c] > 0]
    value = float(np.mean(present)) if present else 0.0
    return ApResult(per_class, value, npos, curves)


def weighted_fold_ap(counts: Sequence[int], fold_aps: Sequence[float]) -> float:
    """Combine one class's fold APs, weighting each fold by its object count."""
    total = sum(counts)
    if total <= 0:
        raise ValueError("class has no objects in any fold")
    return float(sum((n / total) * ap for n, ap in zip(counts, fold_aps)))


def crossval_map(
    per_fold: Sequence[tuple[Detections, Sequence[GroundTruthObject]]],
    convention: Convention | str = Convention.MAP_S,
    mode: ApMode | str = ApMode.ALL_POINTS,
    num_classes: int | None = None,
    iou_min: float = 0.5,
) -> ApResult:
    """Per-class AP as the object-count-weighted mean of the fold APs.

    A fold's weight for class ``k`` is its share of all class-``k``
    objects; classes without objects in any fold are excluded.
    """
    if num_classes is None:
        num_classes = max((_num_classes(d, g) for d, g in per_fold), default=0)
    fold_results = [
        mean_average_precision(d, g, convention, mode, num_classes, iou_min) for d, g in per_fold
    ]
    per_class, npos = {}, {}
    for label in range(1, num_classes + 1):
        counts = [r.n_positive.get(label, 0) for r in fold_results]
        total = sum(counts)
        npos[label] = total
        if total == 0:
            warnings.warn(f"class {label} has no ground truth in any fold", EmptyClassWarning, stacklevel=2)
            per_class[label] = 0.0
            continue
        per_class[label] = weighted_fold_ap(counts, [r.per_class_ap[label] for r in fold_results])
    present = [per_class[c] for c in per_class if npos[c] > 0]
    value = float(np.mean(present)) if present else 0.0
    return ApResult(per_class, value, npos)


def format_results_table(rows: Mapping[str, Mapping[str, float]], columns=("map_s", "map")) -> str:
    """Plain-text table: one row per method, one column per convention (percent)."""
    headers = {"map_s": "mAP-s (%)", "map": "mAP (%)"}
    name_w = max([len("Method")] + [len(n) for n in rows])
    col_w = [max(len(headers.get(c, c)), 8) for c in columns]
    line = "Method".ljust(name_w) + "".join(" | " + headers.get(c, c).rjust(w) for c, w in zip(columns, col_w))
    out = [line, "-" * len(line)]
    for name, vals in rows.items():
        cells = []
        for c, w in zip(columns, col_w):
            v = vals.get(c)
            cells.append(" | " + ("-" if v is None else f"{100 * v:.2f}").rjust(w))
        out.append(name.ljust(name_w) + "".join(cells))
    return "\n".join(out)
