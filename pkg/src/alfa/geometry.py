"""Axis-aligned bounding boxes in continuous pixel coordinates.

Coordinates are continuous reals with exclusive bottom-right corners; no
"+1" inclusive-pixel convention is applied anywhere. Inputs that use
inclusive integer pixels are converted at ingestion (see :mod:`alfa.io`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBox


@dataclass(frozen=True)
class BoundingBox:
    x_tl: float
    y_tl: float
    x_br: float
    y_br: float

    def __post_init__(self):
        coords = (self.x_tl, self.y_tl, self.x_br, self.y_br)
        if not all(math.isfinite(c) for c in coords):
            raise DegenerateBox(f"non-finite coordinates {coords}")
        if self.x_tl < 0 or self.y_tl < 0:
            raise DegenerateBox(f"negative top-left corner {coords}")
        if not (self.x_tl < self.x_br and self.y_tl < self.y_br):
            raise DegenerateBox(f"empty box {coords}")

    @classmethod
    def from_array(cls, a) -> BoundingBox:
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_tl, self.y_tl, self.x_br, self.y_br)

    @property
    def width(self) -> float:
        return self.x_br - self.x_tl

    @property
    def height(self) -> float:
        return self.y_br - self.y_tl


def area(b: BoundingBox) -> float:
    return (b.x_br - b.x_tl) * (b.y_br - b.y_tl)


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x_br, b.x_br) - max(a.x_tl, b.x_tl)
    h = min(a.y_br, b.y_br) - max(a.y_tl, b.y_tl)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in ``[0, 1]``."""
    if a == b:
        return 1.0
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def boxes_to_array(boxes) -> np.ndarray:
    """Stack boxes into an ``(n, 4)`` float array."""
    if len(boxes) == 0:
        return np.zeros((0, 4))
    return np.array([b.as_tuple() for b in boxes], dtype=float)


def iou_matrix(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Pairwise IoU between rows of two ``(n, 4)`` / ``(m, 4)`` arrays.

    Boxes are assumed valid (positive area). When ``b`` is omitted the
    matrix of ``a`` against itself is returned, with an exact unit diagonal.
    """
    same = b is None
    if same:
        b = a
    ax1, ay1, ax2, ay2 = (np.ascontiguousarray(a[:, i]) for i in range(4))
    bx1, by1, bx2, by2 = (np.ascontiguousarray(b[:, i]) for i in range(4))
    inter = np.minimum.outer(ax2, bx2)
    inter -= np.maximum.outer(ax1, bx1)
    np.maximum(inter, 0.0, out=inter)
    iy = np.minimum.outer(ay2, by2)
    iy -= np.maximum.outer(ay1, by1)
    np.maximum(iy, 0.0, out=iy)
    inter *= iy
    union = np.add.outer((ax2 - ax1) * (ay2 - ay1), (bx2 - bx1) * (by2 - by1))
    union -= inter
    out = np.divide(inter, union, out=inter)
    if same:
        np.fill_diagonal(out, 1.0)
    return out
