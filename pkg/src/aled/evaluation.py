"""Dense, per-event and depth-change metrics plus the nearest-neighbor baseline.

All depths here are in meters.
"""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .types import DenseDepthGT, DepthPair, EventWindow, SparseDepthImage

DEFAULT_CUTOFFS = (10.0, 20.0, 30.0, 100.0, 200.0)


class DepthChangeClass(enum.IntEnum):
    SAME = 0
    FARTHER = 1
    CLOSER = 2


def classify_change(delta, tau: float = 1.0) -> np.ndarray:
    """Three-way classification of ``d_af - d_bf``; SAME is the closed band [-tau, tau]."""
    delta = np.asarray(delta, dtype=np.float64)
    out = np.full(delta.shape, DepthChangeClass.SAME, dtype=np.int8)
    out[delta > tau] = DepthChangeClass.FARTHER
    out[delta < -tau] = DepthChangeClass.CLOSER
    return out


def _abs_rel(pred, gt, sel):
    err = np.abs(pred[sel].astype(np.float64) - gt[sel].astype(np.float64))
    return err.sum(), (err / gt[sel].astype(np.float64)).sum(), int(sel.sum())


def dense_errors(pred: DepthPair, gt_begin: DenseDepthGT, gt_end: DenseDepthGT,
                 cutoffs=DEFAULT_CUTOFFS):
    """Per cutoff ``(cutoff, mae_bf, rel_bf, mae_af, rel_af)``; ``None`` where no pixel qualifies."""
    acc = DenseAccumulator(cutoffs)
    acc.add(pred, gt_begin, gt_end)
    return acc.table()


@dataclass
class DenseAccumulator:
    """Pixel-weighted running sums so several frames can be pooled."""

    cutoffs: tuple = DEFAULT_CUTOFFS
    sums: dict = field(default_factory=lambda: defaultdict(float))

    def add(self, pred: DepthPair, gt_begin: DenseDepthGT, gt_end: DenseDepthGT):
        for tag, p, gt in (("bf", pred.d_bf, gt_begin), ("af", pred.d_af, gt_end)):
            if p.shape != gt.data.shape:
                raise ValueError(f"prediction shape {p.shape} != GT shape {gt.data.shape}")
            base = gt.mask & (gt.data > 0)
            for c in self.cutoffs:
                a, r, n = _abs_rel(p, gt.data, base & (gt.data <= c))
                self.sums[(tag, c, "abs")] += a
                self.sums[(tag, c, "rel")] += r
                self.sums[(tag, c, "n")] += n

    def _mean(self, tag, c, kind):
        n = self.sums[(tag, c, "n")]
        return self.sums[(tag, c, kind)] / n if n else None

    def table(self):
        return [
            (c, self._mean("bf", c, "abs"), self._mean("bf", c, "rel"),
             self._mean("af", c, "abs"), self._mean("af", c, "rel"))
            for c in self.cutoffs
        ]


def _nonzero_pixels(sparse: SparseDepthImage):
    data = np.asarray(sparse.data)
    rows, cols = np.nonzero(data)  # row-major order
    if len(rows) == 0:
        raise ValueError("sparse depth image has no measurement")
    return rows, cols, data[rows, cols]


def nn_associate(window: EventWindow, sparse: SparseDepthImage, index: Optional["GridIndex"] = None,
                 chunk: int = 4096) -> np.ndarray:
    """Depth of the closest LiDAR pixel for every event.

    Ties in Euclidean pixel distance go to the smallest row-major pixel
    index. Exhaustive by default; pass a :class:`GridIndex` built on the
    same image for bucketed lookups with identical results.
    """
    if index is not None:
        return index.query(window.x, window.y)
    rows, cols, vals = _nonzero_pixels(sparse)
    out = np.empty(len(window), dtype=np.float64)
    for s in range(0, len(window), chunk):
        ex = window.x[s:s + chunk, None]
        ey = window.y[s:s + chunk, None]
        d2 = (ex - cols[None]) ** 2 + (ey - rows[None]) ** 2
        out[s:s + chunk] = vals[np.argmin(d2, axis=1)]
    return out


class GridIndex:
    """Bucket grid over the nonzero pixels of a sparse depth image."""

    def __init__(self, sparse: SparseDepthImage, cell: int = 8):
        rows, cols, vals = _nonzero_pixels(sparse)
        self.cell = cell
        self.height, self.width = np.asarray(sparse.data).shape
        self.gh = -(-self.height // cell)
        self.gw = -(-self.width // cell)
        self.buckets = defaultdict(list)
        for k, (r, c) in enumerate(zip(rows, cols)):
            self.buckets[(r // cell, c // cell)].append(k)
        self.rows, self.cols, self.vals = rows, cols, vals
        self.flat = rows.astype(np.int64) * self.width + cols

    def _nearest(self, x: int, y: int) -> int:
        cx, cy = x // self.cell, y // self.cell
        best = None  # (d2, row-major index, k)
        max_ring = max(self.gh, self.gw)
        for r in range(max_ring + 1):
            if best is not None:
                bound = (r - 1) * self.cell + 1
                if best[0] < bound * bound:
                    break
            for gy in range(cy - r, cy + r + 1):
                for gx in range(cx - r, cx + r + 1):
                    if max(abs(gy - cy), abs(gx - cx)) != r:
                        continue
                    for k in self.buckets.get((gy, gx), ()):
                        d2 = (int(self.cols[k]) - x) ** 2 + (int(self.rows[k]) - y) ** 2
                        cand = (d2, int(self.flat[k]), k)
                        if best is None or cand < best:
                            best = cand
        return best[2]

    def query(self, xs, ys) -> np.ndarray:
        return np.array([self.vals[self._nearest(int(x), int(y))] for x, y in zip(xs, ys)],
                        dtype=np.float64)


def lidar_row_band(sparse: SparseDepthImage) -> tuple[int, int]:
    rows = np.nonzero(np.any(np.asarray(sparse.data) != 0, axis=1))[0]
    if len(rows) == 0:
        raise ValueError("sparse depth image has no measurement")
    return int(rows[0]), int(rows[-1])


def sparse_event_errors(window: EventWindow, depths, gt_begin: DenseDepthGT, gt_end: DenseDepthGT,
                        band=None, cutoff: Optional[float] = None):
    """Mean absolute per-event depth error against the begin and end GT.

    ``depths`` is either one depth per event (nearest-neighbor baseline,
    compared against both GT maps) or an (N, 2) array of before/after
    depths. Returns ``(mae_bf, mae_af)`` with ``None`` for empty selections.
    """
    sums = sparse_event_sums(window, depths, gt_begin, gt_end, band, cutoff)
    return tuple(s / n if n else None for s, n in zip(sums[0::2], sums[1::2]))


def sparse_event_sums(window, depths, gt_begin, gt_end, band=None, cutoff=None):
    depths = np.asarray(depths, dtype=np.float64)
    if depths.ndim == 1:
        depths = np.stack([depths, depths], axis=1)
    if len(depths) != len(window):
        raise ValueError("one depth (pair) per event is required")
    sel = np.ones(len(window), dtype=bool)
    if band is not None:
        sel &= (window.y >= band[0]) & (window.y <= band[1])
    out = []
    for ch, gt in ((0, gt_begin), (1, gt_end)):
        g = gt.data[window.y, window.x].astype(np.float64)
        ok = sel & gt.mask[window.y, window.x]
        if cutoff is not None:
            ok &= g <= cutoff
        out += [np.abs(depths[ok, ch] - g[ok]).sum(), int(ok.sum())]
    return tuple(out)


def sample_events(pred: DepthPair, window: EventWindow) -> np.ndarray:
    """Before/after predicted depths at each event pixel, shape (N, 2)."""
    return np.stack([pred.d_bf[window.y, window.x], pred.d_af[window.y, window.x]], axis=1)


def event_pixels(window: EventWindow, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Unique (row, col) pixels that saw at least one event."""
    flat = np.unique(window.y.astype(np.int64) * width + window.x)
    return flat // width, flat % width


def depth_change_sums(pred: DepthPair, gt_begin, gt_end, window, tau=1.0, cutoff=None):
    """``(sum |change error|, correctly classified, pixel count)`` over event pixels."""
    rows, cols = event_pixels(window, gt_begin.data.shape[1])
    ok = gt_begin.mask[rows, cols] & gt_end.mask[rows, cols]
    if cutoff is not None:
        ok &= (gt_begin.data[rows, cols] <= cutoff) & (gt_end.data[rows, cols] <= cutoff)
    rows, cols = rows[ok], cols[ok]
    pd = pred.d_af[rows, cols].astype(np.float64) - pred.d_bf[rows, cols].astype(np.float64)
    gd = gt_end.data[rows, cols].astype(np.float64) - gt_begin.data[rows, cols].astype(np.float64)
    correct = classify_change(pd, tau) == classify_change(gd, tau)
    return np.abs(pd - gd).sum(), int(correct.sum()), len(rows)


def depth_change_metrics(pred: DepthPair, gt_begin: DenseDepthGT, gt_end: DenseDepthGT,
                         window: EventWindow, tau: float = 1.0):
    """``(mae_change, accuracy)`` over deduplicated event pixels; ``(None, None)`` if none."""
    err, correct, n = depth_change_sums(pred, gt_begin, gt_end, window, tau)
    if n == 0:
        return None, None
    return err / n, correct / n


HEADER = ("cutoff", "dense_bf_mae", "dense_bf_rel", "dense_af_mae", "dense_af_rel",
          "sparse_bf_nn", "sparse_bf_aled", "sparse_af_nn", "sparse_af_aled",
          "change_mae", "change_acc")


class SequenceEvaluator:
    """Pools every metric over the records of one or more sequences.

    ``add`` takes a record, the sparse LiDAR image used by the nearest-neighbor
    baseline (``None`` when no scan has arrived yet) and the network
    prediction (``None`` in baseline-only mode).
    """

    def __init__(self, cutoffs=DEFAULT_CUTOFFS, tau: float = 1.0):
        self.cutoffs = tuple(cutoffs)
        self.tau = tau
        self.dense = DenseAccumulator(self.cutoffs)
        self.sums = defaultdict(float)

    def add(self, record, sparse: Optional[SparseDepthImage], pred: Optional[DepthPair]):
        win, gb, ge = record.window, record.gt_begin, record.gt_end
        if pred is not None:
            self.dense.add(pred, gb, ge)
        band = None
        nn = None
        if sparse is not None and np.any(sparse.data) and len(win):
            band = lidar_row_band(sparse)
            nn = nn_associate(win, sparse)
        for c in self.cutoffs:
            if nn is not None:
                s = sparse_event_sums(win, nn, gb, ge, band, c)
                self._acc(("nn", c), s)
                if pred is not None:
                    self._acc(("aled", c), sparse_event_sums(win, sample_events(pred, win), gb, ge, band, c))
            if pred is not None and len(win):
                err, correct, n = depth_change_sums(pred, gb, ge, win, self.tau, c)
                self.sums[("chg", c, 0)] += err
                self.sums[("chg", c, 1)] += correct
                self.sums[("chg", c, 2)] += n

    def _acc(self, key, sums):
        for i, v in enumerate(sums):
            self.sums[key + (i,)] += v

    def _ratio(self, key, num, den):
        n = self.sums[key + (den,)]
        return self.sums[key + (num,)] / n if n else None

    def table(self):
        rows = []
        for (c, mb, rb, ma, ra) in self.dense.table():
            rows.append((
                c, mb, rb, ma, ra,
                self._ratio(("nn", c), 0, 1), self._ratio(("aled", c), 0, 1),
                self._ratio(("nn", c), 2, 3), self._ratio(("aled", c), 2, 3),
                self._ratio(("chg", c), 0, 2), self._ratio(("chg", c), 1, 2),
            ))
        return rows


def format_table(rows, header=HEADER) -> str:
    """Tab-separated table; absent entries print as ``-``."""
    def fmt(v):
        return "-" if v is None else f"{v:.6g}"
    lines = ["\t".join(header)]
    lines += ["\t".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"
