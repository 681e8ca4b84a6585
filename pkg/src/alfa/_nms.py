"""Array kernels for greedy non-maximum suppression.

Suppression uses a strict ``IoU > threshold`` test. Candidates are visited
in descending confidence with ties kept in input order.
"""

from __future__ import annotations

import numpy as np

from .geometry import iou_matrix


def nms_keep(
    boxes: np.ndarray,
    labels: np.ndarray,
    confidences: np.ndarray,
    iou_thresh: float,
    overlap: np.ndarray | None = None,
) -> np.ndarray:
    """Indices kept by label-aware greedy NMS, in descending confidence."""
    n = len(boxes)
    if n == 0:
        return np.zeros(0, dtype=int)
    labels = np.asarray(labels)
    order = np.argsort(-np.asarray(confidences, dtype=float), kind="stable")
    if overlap is not None:
        return _greedy(order, labels, overlap, iou_thresh)
    # labels never suppress each other, so only same-label overlaps are needed
    rank = np.empty(n, dtype=int)
    rank[order] = np.arange(n)
    kept = []
    for label in np.unique(labels):
        members = order[labels[order] == label]
        local = _greedy(np.arange(len(members)), None, iou_matrix(boxes[members]), iou_thresh)
        kept.append(members[local])
    kept = np.concatenate(kept)
    return kept[np.argsort(rank[kept])]


def _greedy(order, labels, overlap, iou_thresh):
    suppressed = np.zeros(len(overlap), dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        hit = overlap[i] > iou_thresh
        suppressed |= hit if labels is None else hit & (labels == labels[i])
    return np.asarray(keep, dtype=int)


def per_class_nms(
    boxes: np.ndarray,
    class_confidences: np.ndarray,
    iou_thresh: float,
    overlap: np.ndarray | None = None,
) -> np.ndarray:
    """Independent greedy NMS for every class column.

    ``class_confidences`` is ``(n, K)``. Returns an ``(n, K)`` mask of the
    (detection, class) entries that survive; all classes advance together.
    """
    n, k = class_confidences.shape
    active = np.zeros((n, k), dtype=bool)
    if n == 0:
        return active
    if overlap is None:
        overlap = iou_matrix(boxes)
    order = np.argsort(-class_confidences, axis=0, kind="stable")
    suppressed = np.zeros((n, k), dtype=bool)
    cols = np.arange(k)
    for r in range(n):
        cand = order[r]
        ok = ~suppressed[cand, cols]
        if not ok.any():
            continue
        kc, kk = cand[ok], cols[ok]
        active[kc, kk] = True
        suppressed[:, kk] |= overlap[kc].T > iou_thresh
    return active
