"""Greedy NMS used as a multi-detector fusion baseline.

Unlike ALFA this only selects among the input detections and never
synthesizes a new box.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ._nms import nms_keep, per_class_nms
from .clustering import Prediction
from .fusion import Convention, FusedDetection, threshold_filter
from .geometry import BoundingBox, boxes_to_array, iou_matrix

Detection = tuple[BoundingBox, int, float]


def greedy_nms(dets: Sequence[Detection], iou_thresh: float = 0.5) -> list[Detection]:
    """Suppress detections overlapping a more confident one of the same label.

    ``dets`` holds ``(box, label, confidence)`` triples. A detection is
    dropped when its IoU with an already kept same-label detection is
    strictly greater than ``iou_thresh``. Output is in descending confidence.
    """
    if not dets:
        return []
    boxes = boxes_to_array([d[0] for d in dets])
    labels = np.array([d[1] for d in dets])
    conf = np.array([d[2] for d in dets], dtype=float)
    return [dets[i] for i in nms_keep(boxes, labels, conf, iou_thresh)]


def nms_fuse(
    per_detector: Sequence[Sequence[Prediction]],
    theta: float,
    iou_thresh: float = 0.5,
    convention: Convention | str = Convention.MAP_S,
) -> list[FusedDetection]:
    """Pool all detectors' predictions and run greedy NMS over the pool.

    Under ``map_s`` each prediction competes at its argmax label. Under
    ``map`` every prediction is expanded into one entry per class and
    suppression runs separately per class on class confidences; the
    survivors are reported through ``FusedDetection.active_labels``.
    """
    convention = Convention(convention)
    pool = [p for dets in per_detector for p in threshold_filter(dets, theta)]
    if not pool:
        return []
    boxes = boxes_to_array([p.box for p in pool])
    scores = np.array([p.scores.values for p in pool], dtype=float)
    fg = scores[:, 1:]
    labels = np.argmax(fg, axis=1)
    top = fg[np.arange(len(fg)), labels]

    if convention is Convention.MAP_S:
        keep = nms_keep(boxes, labels, top, iou_thresh)
        return [FusedDetection(pool[i].box, pool[i].scores) for i in keep]

    active = per_class_nms(boxes, fg, iou_thresh, iou_matrix(boxes))
    alive = np.flatnonzero(active.any(axis=1))
    out = []
    for i in alive[np.argsort(-top[alive], kind="stable")]:
        mask = None if active[i].all() else frozenset(int(k) + 1 for k in np.flatnonzero(active[i]))
        out.append(FusedDetection(pool[i].box, pool[i].scores, mask))
    return out
