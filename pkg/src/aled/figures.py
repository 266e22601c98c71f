"""Raster figures: color-mapped depth, event images and thresholded change maps."""
from __future__ import annotations

import numpy as np
from matplotlib import colormaps
from matplotlib.image import imsave

from .evaluation import DepthChangeClass, classify_change, event_pixels
from .types import DepthPair, EventWindow

# legend colors: < -tau, within [-tau, tau], > +tau
CHANGE_COLORS = {
    DepthChangeClass.CLOSER: (0x00, 0x00, 0x04),
    DepthChangeClass.SAME: (0xBC, 0x37, 0x54),
    DepthChangeClass.FARTHER: (0xFC, 0xFF, 0xA4),
}
BACKGROUND = (0xFF, 0xFF, 0xFF)


def depth_image(depth: np.ndarray, vmin: float = 0.0, vmax: float = 200.0, cmap: str = "magma") -> np.ndarray:
    """RGB uint8 rendering of a depth map over the fixed range [vmin, vmax]."""
    scaled = np.clip((np.asarray(depth, dtype=np.float64) - vmin) / (vmax - vmin), 0.0, 1.0)
    return (colormaps[cmap](scaled)[..., :3] * 255).round().astype(np.uint8)


def event_image(window: EventWindow, height: int, width: int) -> np.ndarray:
    """Net polarity per pixel: positive red, negative blue, white elsewhere."""
    acc = np.zeros((height, width))
    np.add.at(acc, (window.y, window.x), window.p.astype(np.float64))
    img = np.full((height, width, 3), 255, dtype=np.uint8)
    img[acc > 0] = (220, 40, 40)
    img[acc < 0] = (40, 40, 220)
    return img


def change_overlay(pred: DepthPair, window: EventWindow, tau: float = 1.0) -> np.ndarray:
    """Event pixels colored by their predicted depth-change class."""
    h, w = pred.d_bf.shape
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    rows, cols = event_pixels(window, w)
    classes = classify_change(pred.d_af[rows, cols].astype(np.float64) - pred.d_bf[rows, cols], tau)
    for cls, color in CHANGE_COLORS.items():
        sel = classes == cls
        img[rows[sel], cols[sel]] = color
    return img


def save_image(path, rgb: np.ndarray):
    imsave(path, rgb, format="png", metadata={"Software": None})
