"""Overlay rendering: boxes and identity numbers burned into frames."""

from __future__ import annotations

import colorsys
from typing import Sequence

import numpy as np

from .mot_io import DetectionRow

# 3x5 digit glyphs, row-major bits
_DIGITS = {
    "0": ("111", "101", "101", "101", "111"),
    "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"),
    "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"),
    "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"),
    "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"),
    "9": ("111", "101", "111", "001", "111"),
}


def id_color(identity: int) -> tuple[float, float, float]:
    hue = (identity * 0.6180339887498949) % 1.0
    return colorsys.hsv_to_rgb(hue, 0.95, 1.0)


def _draw_digit(image: np.ndarray, ch: str, x: int, y: int, color, scale: int = 2) -> None:
    glyph = _DIGITS.get(ch)
    if glyph is None:
        return
    h, w = image.shape[:2]
    for r, bits in enumerate(glyph):
        for c, bit in enumerate(bits):
            if bit != "1":
                continue
            y0, x0 = y + r * scale, x + c * scale
            y1, x1 = min(y0 + scale, h), min(x0 + scale, w)
            if 0 <= y0 < h and 0 <= x0 < w:
                image[y0:y1, x0:x1] = color


def draw_overlay(image: np.ndarray, rows: Sequence[DetectionRow],
                 thickness: int = 2) -> np.ndarray:
    """Return a copy of the frame with one colored rectangle and identity
    number per row."""
    out = image.copy()
    h, w = out.shape[:2]
    for row in rows:
        color = id_color(row.id)
        b = row.bbox
        x0, y0 = max(int(round(b.x)), 0), max(int(round(b.y)), 0)
        x1, y1 = min(int(round(b.x2)), w - 1), min(int(round(b.y2)), h - 1)
        if x1 <= x0 or y1 <= y0:
            continue
        t = thickness
        out[y0:min(y0 + t, h), x0:x1 + 1] = color
        out[max(y1 - t + 1, 0):y1 + 1, x0:x1 + 1] = color
        out[y0:y1 + 1, x0:min(x0 + t, w)] = color
        out[y0:y1 + 1, max(x1 - t + 1, 0):x1 + 1] = color
        tx = x0
        for ch in str(row.id):
            _draw_digit(out, ch, tx, max(y0 - 12, 0), color)
            tx += 8
    return out
