"""Input checks used by the estimator wrappers and the CLI."""
from __future__ import annotations

import numpy as np

from .types import CameraModel, EventWindow, PointCloud, SequenceRecord, validate_sequence


def check_window(window, height=None, width=None) -> EventWindow:
    if not isinstance(window, EventWindow):
        raise TypeError(f"expected EventWindow, got {type(window).__name__}")
    if len(window) and height is not None and width is not None:
        if window.x.min() < 0 or window.x.max() >= width or window.y.min() < 0 or window.y.max() >= height:
            raise ValueError(f"events fall outside the {height}x{width} sensor")
    return window


def check_cloud(cloud) -> PointCloud:
    if isinstance(cloud, PointCloud):
        return cloud
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"point array must have shape (N, 3), got {pts.shape}")
    return PointCloud(pts, 0)


def check_sparse(img, shape=None) -> np.ndarray:
    data = np.asarray(getattr(img, "data", img), dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"sparse depth image must be 2-D, got shape {data.shape}")
    if shape is not None and data.shape != tuple(shape):
        raise ValueError(f"sparse depth image shape {data.shape} != {tuple(shape)}")
    if np.any(data < 0) or not np.all(np.isfinite(data)):
        raise ValueError("sparse depth image must hold finite non-negative depths")
    return data


def check_divisible(height: int, width: int, factor: int = 8):
    if height % factor or width % factor:
        raise ValueError(f"{height}x{width} is not divisible by {factor}")


def check_sequences(X):
    """Normalize training/prediction input to a list of ``(records, camera)`` pairs."""
    if isinstance(X, tuple) and len(X) == 2 and isinstance(X[1], CameraModel):
        X = [X]
    out = []
    for item in X:
        records, camera = item
        if not isinstance(camera, CameraModel):
            raise TypeError("each sequence must be a (records, CameraModel) pair")
        records = list(records)
        if not records or not all(isinstance(r, SequenceRecord) for r in records):
            raise ValueError("each sequence must hold at least one SequenceRecord")
        problems = validate_sequence(records, camera)
        if problems:
            raise ValueError("invalid sequence: " + "; ".join(problems[:5]))
        check_divisible(camera.height, camera.width)
        out.append((records, camera))
    if not out:
        raise ValueError("no sequences given")
    return out
