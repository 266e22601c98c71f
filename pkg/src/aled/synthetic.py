"""Procedural scenes rendered into aligned events, LiDAR scans and exact depth.

Scenes are built from textured rectangles and axis-aligned boxes, so every
ray intersection is analytic. The world frame is the camera frame at t=0
(x right, y down, z forward). The LiDAR frame is x forward, y left, z up.

Event model: linear intensity is rendered at fine substeps; a pixel emits an
event each time its log intensity (floored at 1e-3) moves a full contrast
threshold away from the level of its last event. Crossing times are linearly
interpolated inside the substep.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .io import write_sequence
from .types import CameraModel, DenseDepthGT, EventWindow, PointCloud, SequenceRecord

LOG_FLOOR = 1e-3
# LiDAR (x fwd, y left, z up) -> camera (x right, y down, z fwd)
LIDAR_TO_CAMERA = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


@dataclass
class Texture:
    frequency: float = 2.0
    contrast: float = 0.5
    axes: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))
    phases: tuple = (0.0, 0.0)

    def __call__(self, p: np.ndarray) -> np.ndarray:
        a = np.asarray(self.axes, dtype=np.float64)
        s1 = np.sin(self.frequency * (p @ a[0]) + self.phases[0])
        s2 = np.sin(self.frequency * (p @ a[1]) + self.phases[1])
        return 1.0 + self.contrast * s1 * s2


@dataclass
class Plane:
    """Rectangle through ``center`` with unit ``normal``; ``up`` fixes its in-plane axes."""

    center: tuple
    normal: tuple
    up: tuple = (0.0, -1.0, 0.0)
    half_extent: tuple = (1.0, 1.0)
    albedo: float = 0.5
    texture: Texture = field(default_factory=Texture)

    def _frame(self):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        e1 = np.cross(np.asarray(self.up, dtype=np.float64), n)
        if np.linalg.norm(e1) < 1e-9:
            e1 = np.cross((1.0, 0.0, 0.0), n)
        e1 /= np.linalg.norm(e1)
        return n, e1, np.cross(n, e1)

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Ray parameter of the hit for rays ``o + s d`` (inf where missed)."""
        n, e1, e2 = self._frame()
        c = np.asarray(self.center, dtype=np.float64)
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((c - o) @ n) / denom
        s = np.where(np.abs(denom) > 1e-12, s, np.inf)
        s = np.where(s > 1e-9, s, np.inf)
        p = o + np.where(np.isfinite(s), s, 0.0)[:, None] * d
        rel = p - c
        inside = (np.abs(rel @ e1) <= self.half_extent[0]) & (np.abs(rel @ e2) <= self.half_extent[1])
        return np.where(inside, s, np.inf)


@dataclass
class Box:
    center: tuple
    half_size: tuple
    albedo: float = 0.5
    texture: Texture = field(default_factory=Texture)

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=np.float64)
        hs = np.asarray(self.half_size, dtype=np.float64)
        lo, hi = c - hs, c + hs
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (lo - o) * inv
            t2 = (hi - o) * inv
        # zero direction component: inside the slab -> unbounded, outside -> miss
        zero = d == 0
        in_slab = (o >= lo) & (o <= hi)
        tmin = np.where(zero, np.where(in_slab, -np.inf, np.inf), np.minimum(t1, t2))
        tmax = np.where(zero, np.where(in_slab, np.inf, -np.inf), np.maximum(t1, t2))
        near = tmin.max(axis=1)
        far = tmax.min(axis=1)
        hit = (near <= far) & (near > 1e-9)
        return np.where(hit, near, np.inf)


@dataclass
class Segment:
    """Constant velocity (m/s) and yaw rate (rad/s) held for ``duration`` seconds.

    The velocity is given in the camera frame at the start of the segment.
    """

    duration: float
    velocity: tuple = (0.0, 0.0, 0.0)
    yaw_rate: float = 0.0


@dataclass
class LidarSpec:
    channels: int = 8
    vertical_fov: tuple = (-15.0, 5.0)  # degrees, bottom to top
    azimuths: int = 720
    rate: float = 10.0  # Hz
    offset: tuple = (0.0, -0.1, 0.0)  # LiDAR origin in the camera frame, meters


@dataclass
class SceneSpec:
    seed: int = 0
    width: int = 128
    height: int = 96
    fx: float = 100.0
    fy: float = 100.0
    cx: float = 63.5
    cy: float = 47.5
    max_range: float = 200.0
    planes: list = field(default_factory=list)
    boxes: list = field(default_factory=list)
    trajectory: list = field(default_factory=lambda: [Segment(1.0)])
    lidar: LidarSpec = field(default_factory=LidarSpec)
    threshold: float = 0.2
    gt_rate: float = 20.0  # Hz
    duration: float = 1.0  # seconds
    substeps: int = 8
    sky_intensity: float = 0.6
    noise_rate: float = 0.0  # background events per pixel per second

    def __post_init__(self):
        self.planes = [p if isinstance(p, Plane) else _plane_from(p) for p in self.planes]
        self.boxes = [b if isinstance(b, Box) else _box_from(b) for b in self.boxes]
        self.trajectory = [s if isinstance(s, Segment) else Segment(**s) for s in self.trajectory]
        if not isinstance(self.lidar, LidarSpec):
            self.lidar = LidarSpec(**self.lidar)

    def validate(self):
        if self.gt_rate <= 0 or self.lidar.rate <= 0:
            raise ValueError("sensor rates must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.substeps < 8:
            raise ValueError("at least 8 render substeps per window are required")
        if self.threshold <= 0:
            raise ValueError("event threshold must be positive")
        if self.width % 8 or self.height % 8:
            raise ValueError("resolution must be divisible by 8")
        if sum(s.duration for s in self.trajectory) < self.duration - 1e-9:
            raise ValueError("trajectory shorter than the sequence duration")
        for p in self.planes:
            if p.center[2] <= 0:
                raise ValueError("plane centers must lie in front of the camera at t=0")
        for b in self.boxes:
            if b.center[2] - b.half_size[2] <= 0:
                raise ValueError("boxes must lie in front of the camera at t=0")

    @property
    def camera(self) -> CameraModel:
        return CameraModel(
            self.fx, self.fy, self.cx, self.cy, self.width, self.height,
            rotation=LIDAR_TO_CAMERA, translation=np.asarray(self.lidar.offset),
            max_range=self.max_range,
        )

    def to_dict(self) -> dict:
        return _tuples_to_lists(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        return cls.from_dict(json.loads(text))

    @classmethod
    def random(cls, seed: int = 0, **overrides) -> "SceneSpec":
        """Street-like scene: textured ground and walls, boxes, forward motion."""
        rng = np.random.default_rng(seed)

        def tex():
            a = rng.normal(size=(2, 3))
            a /= np.linalg.norm(a, axis=1, keepdims=True)
            return Texture(
                frequency=float(rng.uniform(1.5, 4.0)),
                contrast=float(rng.uniform(0.4, 0.8)),
                axes=tuple(map(tuple, a.tolist())),
                phases=tuple(rng.uniform(0, 2 * np.pi, 2).tolist()),
            )

        planes = [
            Plane((0.0, 1.5, 30.0), (0.0, -1.0, 0.0), up=(0.0, 0.0, 1.0), half_extent=(8.0, 40.0),
                  albedo=0.35, texture=tex()),
            Plane((-6.0, -1.0, 30.0), (1.0, 0.0, 0.0), half_extent=(40.0, 4.0),
                  albedo=float(rng.uniform(0.3, 0.8)), texture=tex()),
            Plane((6.0, -1.0, 30.0), (-1.0, 0.0, 0.0), half_extent=(40.0, 4.0),
                  albedo=float(rng.uniform(0.3, 0.8)), texture=tex()),
        ]
        boxes = []
        for _ in range(int(rng.integers(2, 5))):
            x = float(rng.uniform(-4.0, 4.0))
            z = float(rng.uniform(8.0, 35.0))
            half = (float(rng.uniform(0.4, 1.2)), float(rng.uniform(0.5, 1.5)), float(rng.uniform(0.4, 1.2)))
            boxes.append(Box((x, 1.5 - half[1], z), half, albedo=float(rng.uniform(0.2, 0.9)), texture=tex()))
        vel = (float(rng.uniform(-0.5, 0.5)), 0.0, float(rng.uniform(3.0, 6.0)))
        trajectory = [Segment(0.5, vel, float(rng.uniform(-0.1, 0.1))),
                      Segment(0.5, vel, float(rng.uniform(-0.1, 0.1)))]
        kwargs = dict(seed=seed, planes=planes, boxes=boxes, trajectory=trajectory)
        kwargs.update(overrides)
        return cls(**kwargs)


def _plane_from(d):
    d = dict(d)
    d["texture"] = Texture(**d.get("texture", {}))
    return Plane(**d)


def _box_from(d):
    d = dict(d)
    d["texture"] = Texture(**d.get("texture", {}))
    return Box(**d)


def _tuples_to_lists(obj):
    if isinstance(obj, dict):
        return {k: _tuples_to_lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tuples_to_lists(v) for v in obj]
    return obj


def _yaw(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    # rotation about the camera y (down) axis
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def camera_pose(scene: SceneSpec, t: float):
    """Rotation (camera -> world) and camera center at time ``t`` seconds."""
    pos = np.zeros(3)
    yaw = 0.0
    remaining = t
    for seg in scene.trajectory:
        dt = min(remaining, seg.duration)
        # velocity is expressed in the camera frame at the start of the segment
        pos = pos + _yaw(yaw) @ np.asarray(seg.velocity, dtype=np.float64) * dt
        yaw += seg.yaw_rate * dt
        remaining -= dt
        if remaining <= 0:
            break
    return _yaw(yaw), pos


def _pixel_rays(scene: SceneSpec):
    v, u = np.mgrid[0:scene.height, 0:scene.width]
    d = np.stack([(u - scene.cx) / scene.fx, (v - scene.cy) / scene.fy, np.ones(u.shape)], axis=-1)
    return d.reshape(-1, 3)


def _cast(scene: SceneSpec, o: np.ndarray, d: np.ndarray):
    """Nearest hit parameter and primitive index (-1 for none)."""
    best = np.full(len(d), np.inf)
    which = np.full(len(d), -1)
    for k, prim in enumerate(list(scene.planes) + list(scene.boxes)):
        s = prim.intersect(o, d)
        closer = s < best
        best[closer] = s[closer]
        which[closer] = k
    return best, which


def _us_to_s(t_us) -> float:
    return float(t_us) * 1e-6


def render_depth(scene: SceneSpec, t_us: int) -> DenseDepthGT:
    """Camera-frame Z depth per pixel; background and far hits read ``max_range``."""
    R, c = camera_pose(scene, _us_to_s(t_us))
    d = _pixel_rays(scene) @ R.T
    s, _ = _cast(scene, c, d)
    depth = np.minimum(s, scene.max_range).reshape(scene.height, scene.width)
    return DenseDepthGT.full(depth.astype(np.float32), t_us)


def render_intensity(scene: SceneSpec, t_us: float) -> np.ndarray:
    R, c = camera_pose(scene, _us_to_s(t_us))
    d = _pixel_rays(scene) @ R.T
    s, which = _cast(scene, c, d)
    out = np.full(len(d), scene.sky_intensity)
    prims = list(scene.planes) + list(scene.boxes)
    for k, prim in enumerate(prims):
        sel = which == k
        if sel.any():
            p = c + s[sel, None] * d[sel]
            out[sel] = prim.albedo * prim.texture(p)
    return out.reshape(scene.height, scene.width)


def log_intensity(img: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(img, LOG_FLOOR))


class EventSimulator:
    """Stateful contrast-threshold event generator.

    Each pixel keeps the integer level index of its last event; the
    reference log intensity is ``base + level * threshold``.
    """

    def __init__(self, scene: SceneSpec, t0_us: int, rng: Optional[np.random.Generator] = None):
        self.scene = scene
        self.t = int(t0_us)
        self.base = log_intensity(render_intensity(scene, t0_us))
        self.level = np.zeros_like(self.base, dtype=np.int64)
        self.last = self.base.copy()
        self.rng = rng

    def advance(self, t1_us: int) -> EventWindow:
        t0 = self.t
        if t1_us <= t0:
            raise ValueError("event rendering needs t0 < t1")
        theta = self.scene.threshold
        steps = np.linspace(t0, t1_us, self.scene.substeps + 1)
        xs, ys, ts, ps = [], [], [], []
        for ta, tb in zip(steps[:-1], steps[1:]):
            cur = log_intensity(render_intensity(self.scene, tb))
            prev = self.last
            ref_level = self.level
            # target level: the furthest full threshold crossed
            diff = (cur - self.base) / theta
            up = np.floor(diff).astype(np.int64)
            down = np.ceil(diff).astype(np.int64)
            new_level = np.where(up > ref_level, up, np.where(down < ref_level, down, ref_level))
            n = np.abs(new_level - ref_level)
            rows, cols = np.nonzero(n)
            if len(rows):
                counts = n[rows, cols]
                r = np.repeat(rows, counts)
                c = np.repeat(cols, counts)
                starts = np.repeat(np.cumsum(counts) - counts, counts)
                k = np.arange(counts.sum()) - starts + 1
                sign = np.sign(new_level[r, c] - ref_level[r, c])
                lvl = self.base[r, c] + (ref_level[r, c] + sign * k) * theta
                frac = np.clip((lvl - prev[r, c]) / (cur[r, c] - prev[r, c]), 0.0, 1.0)
                ts.append(np.floor(ta + frac * (tb - ta)).astype(np.int64))
                xs.append(c)
                ys.append(r)
                ps.append(sign)
            self.level = new_level
            self.last = cur
        if self.scene.noise_rate > 0 and self.rng is not None:
            lam = self.scene.noise_rate * _us_to_s(t1_us - t0) * self.scene.width * self.scene.height
            k = int(self.rng.poisson(lam))
            xs.append(self.rng.integers(0, self.scene.width, k))
            ys.append(self.rng.integers(0, self.scene.height, k))
            ts.append(self.rng.integers(t0, t1_us + 1, k))
            ps.append(2 * self.rng.integers(0, 2, k) - 1)
        self.t = int(t1_us)

        def cat(parts):
            return np.concatenate(parts).astype(np.int64) if parts else np.zeros(0, dtype=np.int64)

        x, y = cat(xs), cat(ys)
        t = np.clip(cat(ts), t0, t1_us)
        p = cat(ps).astype(np.int8)
        order = np.lexsort((x, y, t))
        return EventWindow(x[order], y[order], t[order], p[order], t0, t1_us)


def render_events(scene: SceneSpec, t0_us: int, t1_us: int, rng=None) -> EventWindow:
    """Events between ``t0_us`` and ``t1_us`` with references initialized at ``t0_us``."""
    return EventSimulator(scene, t0_us, rng).advance(t1_us)


def lidar_directions(spec: LidarSpec) -> np.ndarray:
    """Unit ray directions in the LiDAR frame, ring-major."""
    el = np.deg2rad(np.linspace(spec.vertical_fov[0], spec.vertical_fov[1], spec.channels))
    az = np.linspace(-np.pi, np.pi, spec.azimuths, endpoint=False)
    E, A = np.meshgrid(el, az, indexing="ij")
    return np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)


def render_lidar(scene: SceneSpec, t_us: int) -> PointCloud:
    """One scan in the LiDAR frame; returns beyond ``max_range`` are dropped."""
    R, c = camera_pose(scene, _us_to_s(t_us))
    dirs = lidar_directions(scene.lidar)
    origin = c + R @ np.asarray(scene.lidar.offset, dtype=np.float64)
    world = dirs @ (R @ LIDAR_TO_CAMERA).T
    s, _ = _cast(scene, origin, world)
    keep = s <= scene.max_range
    return PointCloud(s[keep, None] * dirs[keep], t_us)


def window_bounds(scene: SceneSpec) -> list[tuple[int, int]]:
    n = int(round(scene.duration * scene.gt_rate))
    edges = [int(round(i * 1e6 / scene.gt_rate)) for i in range(n + 1)]
    return list(zip(edges[:-1], edges[1:]))


def lidar_times(scene: SceneSpec) -> list[int]:
    n = int(np.floor(scene.duration * scene.lidar.rate + 1e-9))
    return [int(round(i * 1e6 / scene.lidar.rate)) for i in range(n + 1)]


def generate_sequence(scene: SceneSpec, out_dir=None, bins: int = 5) -> list[SequenceRecord]:
    """Render a full sequence; optionally write it (plus ``scene.json``) to ``out_dir``."""
    scene.validate()
    seeds = np.random.SeedSequence(scene.seed).spawn(1)
    rng = np.random.default_rng(seeds[0])
    windows = window_bounds(scene)
    scans = lidar_times(scene)
    sim = EventSimulator(scene, windows[0][0], rng)
    records = []
    gt_prev = render_depth(scene, windows[0][0])
    for t0, t1 in windows:
        window = sim.advance(t1)
        scan_t = [t for t in scans if t0 <= t < t1]
        lidar = render_lidar(scene, scan_t[0]) if scan_t else None
        gt_end = render_depth(scene, t1)
        records.append(SequenceRecord(window, lidar, gt_prev, gt_end))
        gt_prev = gt_end
    if out_dir is not None:
        out = write_sequence(out_dir, records, scene.camera, bins=bins,
                             extra_meta={"gt_rate": scene.gt_rate, "lidar_rate": scene.lidar.rate})
        (Path(out) / "scene.json").write_text(scene.to_json())
    return records
