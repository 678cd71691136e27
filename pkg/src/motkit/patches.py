"""Square patch extraction shared by training and tracking.

All crops are defined by one scale per target: the exemplar patch covers
``context * sqrt(w*h)`` image pixels, and every instance patch covers the
proportionally larger region so exemplar and instance pixels line up after
resizing. Out-of-image samples are filled with the image mean.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import BBox
from .network import NetworkConfig


def context_factor(cfg: NetworkConfig, search_scale: float) -> float:
    """Exemplar crop side as a multiple of sqrt(w*h), consistent with a
    tracking search region of ``search_scale`` target sizes."""
    return search_scale * cfg.exemplar_size / cfg.instance_size_track


def crop_and_resize(image: np.ndarray, center: tuple[float, float],
                    side: float, out_size: int) -> np.ndarray:
    """Bilinearly resample a square region (possibly beyond the border) to
    out_size², padding with the per-channel image mean."""
    h, w, _ = image.shape
    cx, cy = center
    step = side / out_size
    xs = cx - side / 2.0 + (np.arange(out_size) + 0.5) * step
    ys = cy - side / 2.0 + (np.arange(out_size) + 0.5) * step
    pad = int(max(0.0, math.ceil(max(-xs[0], -ys[0], xs[-1] - (w - 1), ys[-1] - (h - 1), 0.0)))) + 1
    mean = image.mean(axis=(0, 1))
    padded = np.empty((h + 2 * pad, w + 2 * pad, 3), dtype=np.float64)
    padded[:] = mean
    padded[pad:pad + h, pad:pad + w] = image
    xs = xs + pad
    ys = ys + pad
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    tx = xs - x0
    ty = ys - y0
    out = ((1 - ty)[:, None, None] * ((1 - tx)[None, :, None] * padded[np.ix_(y0, x0)]
                                      + tx[None, :, None] * padded[np.ix_(y0, x0 + 1)])
           + ty[:, None, None] * ((1 - tx)[None, :, None] * padded[np.ix_(y0 + 1, x0)]
                                  + tx[None, :, None] * padded[np.ix_(y0 + 1, x0 + 1)]))
    return out


def exemplar_patch(image: np.ndarray, center: tuple[float, float], box_side: float,
                   cfg: NetworkConfig, search_scale: float) -> np.ndarray:
    side = context_factor(cfg, search_scale) * box_side
    return crop_and_resize(image, center, side, cfg.exemplar_size)


def instance_patch(image: np.ndarray, center: tuple[float, float], box_side: float,
                   cfg: NetworkConfig, search_scale: float, out_size: int) -> np.ndarray:
    """Instance crop whose pixel scale matches the exemplar crop of the same
    target; ``out_size`` selects the training or tracking resolution."""
    side = context_factor(cfg, search_scale) * box_side * out_size / cfg.exemplar_size
    return crop_and_resize(image, center, side, out_size)


def search_region_side(box: BBox, cfg: NetworkConfig, search_scale: float) -> float:
    """Image-pixel side of the tracking search region for a target box."""
    return context_factor(cfg, search_scale) * box.side * cfg.instance_size_track / cfg.exemplar_size
