"""On-disk sequence layout.

::

    <seq>/meta.json            resolution, bins, max_range, window bounds, record count
    <seq>/calib.json           CameraModel fields
    <seq>/events.bin           packed little-endian (x u16, y u16, t i64, p i8, pad u8)
    <seq>/lidar/<i>.bin        float32 little-endian X,Y,Z triples
    <seq>/depth/<i>_begin.bin  float32 row-major H x W, NaN = invalid
    <seq>/depth/<i>_end.bin

Events of all records are concatenated in ``events.bin``; ``meta.json``
carries the per-record offset and count so windows with shared boundary
timestamps split unambiguously.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .types import (
    EVENT_DTYPE,
    CameraModel,
    DenseDepthGT,
    EventWindow,
    PointCloud,
    SequenceRecord,
)

FORMAT_TAG = "aled-sequence/1"


class DatasetError(Exception):
    """A sequence directory is missing files or holds malformed data."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = Path(path)


def encode_events(window: EventWindow) -> bytes:
    return window.to_records().tobytes()


def decode_events(buf: bytes, t_start: int, t_end: int) -> EventWindow:
    if len(buf) % EVENT_DTYPE.itemsize:
        raise ValueError(f"event buffer length {len(buf)} is not a multiple of 14")
    rec = np.frombuffer(buf, dtype=EVENT_DTYPE)
    return EventWindow.from_records(rec, t_start, t_end)


def encode_cloud(cloud: PointCloud) -> bytes:
    return np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()


def decode_cloud(buf: bytes, t: int) -> PointCloud:
    if len(buf) % 12:
        raise ValueError(f"point buffer length {len(buf)} is not a multiple of 12")
    return PointCloud(np.frombuffer(buf, dtype="<f4").reshape(-1, 3).astype(np.float64), t)


def encode_depth(gt: DenseDepthGT) -> bytes:
    return np.ascontiguousarray(gt.to_nan(), dtype="<f4").tobytes()


def decode_depth(buf: bytes, shape, t: int) -> DenseDepthGT:
    h, w = shape
    if len(buf) != 4 * h * w:
        raise ValueError(f"depth buffer holds {len(buf)} bytes, expected {4 * h * w}")
    return DenseDepthGT.from_nan(np.frombuffer(buf, dtype="<f4").reshape(h, w), t)


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_sequence(out_dir, records, model: CameraModel, bins: int = 5, extra_meta=None) -> Path:
    """Write ``records`` to ``out_dir``. The parent of ``out_dir`` must exist."""
    out = Path(out_dir)
    if not out.parent.exists():
        raise FileNotFoundError(f"parent directory {out.parent} does not exist")
    (out / "lidar").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)

    offsets, counts, windows, lidar = [], [], [], []
    chunks = []
    offset = 0
    for i, rec in enumerate(records):
        chunks.append(encode_events(rec.window))
        offsets.append(offset)
        counts.append(len(rec.window))
        offset += len(rec.window)
        windows.append([rec.window.t_start, rec.window.t_end])
        if rec.lidar is not None:
            (out / "lidar" / f"{i}.bin").write_bytes(encode_cloud(rec.lidar))
            lidar.append(rec.lidar.t)
        else:
            lidar.append(None)
        (out / "depth" / f"{i}_begin.bin").write_bytes(encode_depth(rec.gt_begin))
        (out / "depth" / f"{i}_end.bin").write_bytes(encode_depth(rec.gt_end))
    (out / "events.bin").write_bytes(b"".join(chunks))

    meta = {
        "format": FORMAT_TAG,
        "width": model.width,
        "height": model.height,
        "bins": bins,
        "max_range": model.max_range,
        "records": len(windows),
        "windows": windows,
        "event_offsets": offsets,
        "event_counts": counts,
        "lidar_timestamps": lidar,
    }
    if extra_meta:
        meta.update(extra_meta)
    _dump_json(meta, out / "meta.json")
    _dump_json(model.to_dict(), out / "calib.json")
    return out


def _read(path: Path) -> bytes:
    if not path.exists():
        raise DatasetError(path, "missing file")
    return path.read_bytes()


def read_meta(seq_dir) -> dict:
    path = Path(seq_dir) / "meta.json"
    try:
        meta = json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise DatasetError(path, f"invalid JSON ({exc})") from exc
    if meta.get("format") != FORMAT_TAG:
        raise DatasetError(path, f"unsupported format tag {meta.get('format')!r}")
    return meta


def read_camera(seq_dir) -> CameraModel:
    path = Path(seq_dir) / "calib.json"
    try:
        return CameraModel.from_dict(json.loads(_read(path)))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise DatasetError(path, f"invalid calibration ({exc})") from exc


def read_sequence(seq_dir):
    """Load a sequence directory. Returns ``(records, camera, meta)``."""
    seq = Path(seq_dir)
    meta = read_meta(seq)
    cam = read_camera(seq)
    shape = (meta["height"], meta["width"])
    ev_path = seq / "events.bin"
    raw = _read(ev_path)
    if len(raw) % EVENT_DTYPE.itemsize:
        raise DatasetError(ev_path, "length is not a multiple of the 14-byte record size")
    all_events = np.frombuffer(raw, dtype=EVENT_DTYPE)
    if sum(meta["event_counts"]) != len(all_events):
        raise DatasetError(ev_path, "event count disagrees with meta.json")

    records = []
    for i in range(meta["records"]):
        t0, t1 = meta["windows"][i]
        off, cnt = meta["event_offsets"][i], meta["event_counts"][i]
        window = EventWindow.from_records(all_events[off:off + cnt], t0, t1)
        lidar = None
        if meta["lidar_timestamps"][i] is not None:
            path = seq / "lidar" / f"{i}.bin"
            try:
                lidar = decode_cloud(_read(path), meta["lidar_timestamps"][i])
            except ValueError as exc:
                raise DatasetError(path, str(exc)) from exc
        gts = []
        for tag, t in (("begin", t0), ("end", t1)):
            path = seq / "depth" / f"{i}_{tag}.bin"
            try:
                gts.append(decode_depth(_read(path), shape, t))
            except ValueError as exc:
                raise DatasetError(path, str(exc)) from exc
        records.append(SequenceRecord(window, lidar, gts[0], gts[1]))
    return records, cam, meta


def list_sequences(root) -> list[Path]:
    """Sequence directories under ``root`` (``root`` itself if it is one)."""
    root = Path(root)
    if (root / "meta.json").exists():
        return [root]
    return sorted(p.parent for p in root.glob("*/meta.json"))
