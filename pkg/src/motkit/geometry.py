"""Axis-aligned boxes shared by the tracker, the metrics and the file IO."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BBox:
    """Top-left anchored box in pixels; width and height must be positive."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"BBox needs positive size, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def side(self) -> float:
        """Geometric-mean side length, the scale reference for patch crops."""
        return math.sqrt(self.w * self.h)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def mean_box(a: BBox, b: BBox) -> BBox:
    """Coordinate-wise average of two boxes."""
    return BBox((a.x + b.x) / 2.0, (a.y + b.y) / 2.0,
                (a.w + b.w) / 2.0, (a.h + b.h) / 2.0)


def clip_box(b: BBox, width: float, height: float) -> BBox | None:
    """Clip to [0, width) × [0, height); None when nothing remains."""
    x1, y1 = max(b.x, 0.0), max(b.y, 0.0)
    x2, y2 = min(b.x2, float(width)), min(b.y2, float(height))
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        return None
    return BBox(x1, y1, x2 - x1, y2 - y1)


def fully_outside(b: BBox, width: float, height: float) -> bool:
    return clip_box(b, width, height) is None
