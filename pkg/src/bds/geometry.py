"""Axis-aligned box arithmetic and thresholded one-to-one matching.

Boxes are continuous ``(x, y, w, h)`` rectangles in absolute pixels covering
``[x, x + w] x [y, y + h]``. Boxes that only share an edge do not intersect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import InvalidBox


@dataclass(frozen=True, slots=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        values = (self.x, self.y, self.w, self.h)
        for value in values:
            kind = type(value)
            if kind is not int and kind is not float and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise InvalidBox(f"box coordinates must be numbers, got {values!r}")
        if not all(map(math.isfinite, values)):
            raise InvalidBox(f"box coordinates must be finite, got {values!r}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidBox(f"box must have positive width and height, got w={self.w} h={self.h}")

    @classmethod
    def from_xywh(cls, values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise InvalidBox(f"bbox needs 4 values [x, y, w, h], got {len(values)}")
        return cls(*values)

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True, slots=True)
class MatchPair:
    detection_index: int
    ground_truth_index: int
    iou: float


def area(box: BoundingBox) -> float:
    return box.w * box.h


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    # Conditional expressions instead of min/max: this sits in the innermost matching loop.
    ax2, bx2 = a.x + a.w, b.x + b.w
    iw = (ax2 if ax2 < bx2 else bx2) - (a.x if a.x > b.x else b.x)
    if iw <= 0:
        return 0.0
    ay2, by2 = a.y + a.h, b.y + b.h
    ih = (ay2 if ay2 < by2 else by2) - (a.y if a.y > b.y else b.y)
    if ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in ``[0, 1]``."""
    if (a.x, a.y, a.w, a.h) == (b.x, b.y, b.w, b.h):
        return 1.0
    inter = intersection_area(a, b)
    if inter == 0:
        return 0.0
    ratio = inter / (a.w * a.h + b.w * b.h - inter)
    return ratio if ratio < 1.0 else 1.0


def match_detections(
    detections: Sequence[BoundingBox],
    scores: Sequence[float],
    ground_truth: Sequence[BoundingBox],
    rho: float,
) -> list[MatchPair]:
    """Greedy one-to-one matching of detections to ground truth.

    Detections are visited by descending score (ties keep list order). Each
    one claims the still-unmatched ground-truth box with the highest IoU that
    is at least ``rho`` (ties go to the lower ground-truth index). Pairs are
    returned in visiting order.
    """
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if len(detections) != len(scores):
        raise ValueError("detections and scores differ in length")
    if not detections or not ground_truth:
        return []

    order = sorted(range(len(detections)), key=lambda i: (-scores[i], i))
    taken = [False] * len(ground_truth)
    pairs = []
    for i in order:
        best_j, best_iou = -1, -1.0
        for j, gt in enumerate(ground_truth):
            if taken[j]:
                continue
            v = iou(detections[i], gt)
            if v >= rho and v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0:
            taken[best_j] = True
            pairs.append(MatchPair(i, best_j, best_iou))
    return pairs
