"""Deterministic scatter rasterizer for the 2-D sample figures.

A fixed 800x800 canvas, shared square axis range padded 5% around the data,
no anti-aliasing and no metadata, so identical inputs produce byte-identical
PNG files. Real samples are drawn steel blue, generated samples orange, with
generated on top.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

SIZE = 800
REAL_COLOR = (46, 90, 160)
GENERATED_COLOR = (230, 120, 30)
BACKGROUND = (255, 255, 255)
DOT_RADIUS = 2


def _stamp(img: np.ndarray, pts: np.ndarray, lo: float, hi: float, color) -> None:
    if pts.size == 0:
        return
    span = hi - lo
    px = np.clip(((pts[:, 0] - lo) / span * (SIZE - 1)).round().astype(int), 0, SIZE - 1)
    py = np.clip(((hi - pts[:, 1]) / span * (SIZE - 1)).round().astype(int), 0, SIZE - 1)
    r = DOT_RADIUS
    for x, y in zip(px, py):
        img[max(0, y - r): y + r + 1, max(0, x - r): x + r + 1] = color


def render_scatter(real: np.ndarray, generated: np.ndarray) -> np.ndarray:
    """Rasterize the two point sets to an (800, 800, 3) uint8 array."""
    real = np.asarray(real, dtype=np.float64).reshape(-1, 2)
    generated = np.asarray(generated, dtype=np.float64).reshape(-1, 2)
    pts = np.concatenate([real, generated], axis=0)
    if pts.size == 0:
        raise ValueError("nothing to plot")
    lo, hi = float(pts.min()), float(pts.max())
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    img = np.empty((SIZE, SIZE, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    _stamp(img, real, lo, hi, REAL_COLOR)
    _stamp(img, generated, lo, hi, GENERATED_COLOR)
    return img


def save_scatter_png(path, real: np.ndarray, generated: np.ndarray) -> None:
    Image.fromarray(render_scatter(real, generated)).save(path, format="PNG")
