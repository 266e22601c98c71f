"""Domain types shared across the package.

Events are stored column-wise (numpy arrays) rather than as lists of
objects; :class:`Event` exists for single-record access and construction.
All containers are frozen and treat their arrays as read-only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

EVENT_DTYPE = np.dtype(
    [("x", "<u2"), ("y", "<u2"), ("t", "<i8"), ("p", "i1"), ("pad", "u1")]
)
assert EVENT_DTYPE.itemsize == 14


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class EventWindow:
    """Events falling in the closed interval ``[t_start, t_end]`` (microseconds)."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    t_start: int
    t_end: int

    def __post_init__(self):
        object.__setattr__(self, "x", _readonly(self.x, np.int64))
        object.__setattr__(self, "y", _readonly(self.y, np.int64))
        object.__setattr__(self, "t", _readonly(self.t, np.int64))
        object.__setattr__(self, "p", _readonly(self.p, np.int8))
        object.__setattr__(self, "t_start", int(self.t_start))
        object.__setattr__(self, "t_end", int(self.t_end))
        n = len(self.x)
        if not (len(self.y) == len(self.t) == len(self.p) == n):
            raise ValueError("event columns must have equal length")
        if self.t_start > self.t_end:
            raise ValueError(f"t_start {self.t_start} > t_end {self.t_end}")

    @classmethod
    def empty(cls, t_start: int, t_end: int) -> "EventWindow":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z.astype(np.int8), t_start, t_end)

    @classmethod
    def from_events(cls, events, t_start: int, t_end: int) -> "EventWindow":
        events = list(events)
        if not events:
            return cls.empty(t_start, t_end)
        x, y, t, p = zip(*events)
        return cls(x, y, t, p, t_start, t_end)

    @classmethod
    def from_records(cls, rec: np.ndarray, t_start: int, t_end: int) -> "EventWindow":
        return cls(rec["x"], rec["y"], rec["t"], rec["p"], t_start, t_end)

    def to_records(self) -> np.ndarray:
        rec = np.zeros(len(self), dtype=EVENT_DTYPE)
        rec["x"], rec["y"], rec["t"], rec["p"] = self.x, self.y, self.t, self.p
        return rec

    def __len__(self) -> int:
        return len(self.x)

    def __iter__(self):
        for i in range(len(self)):
            yield Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def split(self, t_split: int) -> tuple["EventWindow", "EventWindow"]:
        """Split at ``t_split``; events at exactly ``t_split`` go to the left half."""
        if not self.t_start <= t_split <= self.t_end:
            raise ValueError("split time outside window")
        left = self.t <= t_split
        right = ~left
        return (
            EventWindow(self.x[left], self.y[left], self.t[left], self.p[left], self.t_start, t_split),
            EventWindow(self.x[right], self.y[right], self.t[right], self.p[right], t_split, self.t_end),
        )

    @staticmethod
    def merge(first: "EventWindow", second: "EventWindow") -> "EventWindow":
        return EventWindow(
            np.concatenate([first.x, second.x]),
            np.concatenate([first.y, second.y]),
            np.concatenate([first.t, second.t]),
            np.concatenate([first.p, second.p]),
            min(first.t_start, second.t_start),
            max(first.t_end, second.t_end),
        )


@dataclass(frozen=True)
class EventVolume:
    data: np.ndarray  # (2B, H, W); negative polarity bins first
    bins: int

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 2 * self.bins:
            raise ValueError(f"volume shape {self.data.shape} inconsistent with B={self.bins}")


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3) LiDAR frame, meters
    t: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _readonly(pts, np.float64))
        object.__setattr__(self, "t", int(self.t))

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    max_range: float = 200.0

    def __post_init__(self):
        R = _readonly(self.rotation, np.float64).reshape(3, 3)
        tr = _readonly(self.translation, np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", tr)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or not np.isclose(np.linalg.det(R), 1.0, atol=1e-9):
            raise ValueError("rotation must be orthonormal with determinant +1")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def lidar_to_camera(self, points: np.ndarray) -> np.ndarray:
        # explicit left-to-right sums rather than a BLAS matmul, so the result
        # does not depend on the summation order chosen by the backend
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        R, t = self.rotation, self.translation
        return np.stack([R[i, 0] * p[:, 0] + R[i, 1] * p[:, 1] + R[i, 2] * p[:, 2] + t[i] for i in range(3)], axis=1)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "max_range": self.max_range,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(
            fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
            width=int(d["width"]), height=int(d["height"]),
            rotation=np.array(d["rotation"], dtype=np.float64),
            translation=np.array(d["translation"], dtype=np.float64),
            max_range=float(d["max_range"]),
        )


@dataclass(frozen=True)
class SparseDepthImage:
    data: np.ndarray  # (H, W) meters, 0 = no measurement

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class DepthPair:
    d_bf: np.ndarray
    d_af: np.ndarray

    def stack(self) -> np.ndarray:
        return np.stack([self.d_bf, self.d_af])


@dataclass(frozen=True)
class DenseDepthGT:
    data: np.ndarray  # (H, W) meters; invalid pixels hold 0
    mask: np.ndarray  # (H, W) bool
    t: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        mask = np.asarray(self.mask, dtype=bool)
        if data.shape != mask.shape:
            raise ValueError("depth and mask shapes differ")
        data = np.where(mask, data, np.float32(0.0)).astype(np.float32)
        object.__setattr__(self, "data", _readonly(data, np.float32))
        object.__setattr__(self, "mask", _readonly(mask, bool))
        object.__setattr__(self, "t", int(self.t))

    @classmethod
    def full(cls, data, t: int) -> "DenseDepthGT":
        data = np.asarray(data, dtype=np.float32)
        return cls(data, np.ones(data.shape, dtype=bool), t)

    @classmethod
    def from_nan(cls, data, t: int) -> "DenseDepthGT":
        data = np.asarray(data, dtype=np.float32)
        mask = ~np.isnan(data)
        return cls(np.nan_to_num(data, nan=0.0), mask, t)

    def to_nan(self) -> np.ndarray:
        return np.where(self.mask, self.data, np.float32(np.nan)).astype(np.float32)


@dataclass(frozen=True)
class SequenceRecord:
    window: EventWindow
    lidar: Optional[PointCloud]
    gt_begin: DenseDepthGT
    gt_end: DenseDepthGT


def validate_sequence(records, model: CameraModel) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    for i, rec in enumerate(records):
        w = rec.window
        oob = (w.x < 0) | (w.x >= model.width) | (w.y < 0) | (w.y >= model.height)
        if oob.any():
            problems.append(f"record {i}: {int(oob.sum())} event(s) out of bounds")
        if len(w) and np.any(np.diff(w.t) < 0):
            problems.append(f"record {i}: event timestamps not monotonic")
        outside = (w.t < w.t_start) | (w.t > w.t_end)
        if outside.any():
            problems.append(f"record {i}: {int(outside.sum())} event(s) outside [t_start, t_end]")
        if len(w) and not np.all(np.isin(w.p, (-1, 1))):
            problems.append(f"record {i}: polarity not in {{-1, +1}}")
        if rec.gt_begin.t != w.t_start:
            problems.append(f"record {i}: gt_begin.t {rec.gt_begin.t} != t_start {w.t_start}")
        if rec.gt_end.t != w.t_end:
            problems.append(f"record {i}: gt_end.t {rec.gt_end.t} != t_end {w.t_end}")
        for name, gt in (("gt_begin", rec.gt_begin), ("gt_end", rec.gt_end)):
            if gt.data.shape != model.shape:
                problems.append(f"record {i}: {name} shape {gt.data.shape} != {model.shape}")
    return problems
