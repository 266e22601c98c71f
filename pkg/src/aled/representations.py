"""Network input representations: discretized event volumes and projected LiDAR depth."""
from __future__ import annotations

import numpy as np

from .types import CameraModel, EventVolume, EventWindow, PointCloud, SparseDepthImage


def normalized_timestamps(window: EventWindow, bins: int) -> np.ndarray:
    """Per-event continuous bin coordinate in ``[0, bins - 1]``.

    The window bounds are the time reference, so empty or single-event
    windows are well defined. A zero-length window maps every event to 0.
    """
    t = window.t.astype(np.float64)
    span = float(window.t_end - window.t_start)
    if span == 0.0:
        return np.zeros_like(t)
    return (bins - 1) * (t - float(window.t_start)) / span


def build_event_volume(window: EventWindow, bins: int, height: int, width: int) -> EventVolume:
    """Bilinear temporal deposition of events into ``2 * bins`` channels.

    Channels ``[0, bins)`` hold negative events, ``[bins, 2 * bins)`` positive.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    vol = np.zeros((2 * bins, height, width), dtype=np.float64)
    if len(window) == 0:
        return EventVolume(vol, bins)
    ts = normalized_timestamps(window, bins)
    x, y = window.x, window.y
    if x.min() < 0 or x.max() >= width or y.min() < 0 or y.max() >= height:
        raise ValueError("event coordinates outside the sensor")
    offset = np.where(window.p > 0, bins, 0)
    for b in range(bins):
        w = np.maximum(0.0, 1.0 - np.abs(b - ts))
        hit = w > 0
        np.add.at(vol, (offset[hit] + b, y[hit], x[hit]), w[hit])
    return EventVolume(vol, bins)


def project_lidar(cloud: PointCloud, model: CameraModel) -> SparseDepthImage:
    """Pinhole projection keeping the nearest return per pixel; empty pixels are 0."""
    h, w = model.height, model.width
    img = np.full((h, w), np.inf)
    if len(cloud):
        pc = model.lidar_to_camera(cloud.points)
        X, Y, Z = pc[:, 0], pc[:, 1], pc[:, 2]
        front = (Z > 0) & (Z <= model.max_range)
        X, Y, Z = X[front], Y[front], Z[front]
        u = np.floor(model.fx * X / Z + model.cx + 0.5).astype(np.int64)
        v = np.floor(model.fy * Y / Z + model.cy + 0.5).astype(np.int64)
        inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        np.minimum.at(img, (v[inside], u[inside]), Z[inside])
    img[np.isinf(img)] = 0.0
    return SparseDepthImage(img)


def normalize_depth(depth, max_range: float):
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    return depth / max_range


def denormalize_depth(depth, max_range: float):
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    out = depth * max_range
    if hasattr(out, "clamp"):
        return out.clamp(0.0, max_range)
    return np.clip(out, 0.0, max_range)


def lidar_input(sparse: SparseDepthImage, max_range: float) -> np.ndarray:
    """(1, H, W) float32 normalized depth image for the LiDAR branch."""
    return normalize_depth(sparse.data, max_range).astype(np.float32)[None]


def hflip_volume(vol: EventVolume) -> EventVolume:
    return EventVolume(np.ascontiguousarray(vol.data[:, :, ::-1]), vol.bins)
