import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aled.evaluation import (
    DEFAULT_CUTOFFS,
    DepthChangeClass,
    GridIndex,
    SequenceEvaluator,
    classify_change,
    dense_errors,
    depth_change_metrics,
    format_table,
    lidar_row_band,
    nn_associate,
    sparse_event_errors,
)
from aled.types import DenseDepthGT, DepthPair, EventWindow, SequenceRecord, SparseDepthImage


def brute_force_nn(window, sparse):
    data = np.asarray(sparse.data)
    out = []
    for x, y, _, _ in window:
        best = None
        for r in range(data.shape[0]):
            for c in range(data.shape[1]):
                if data[r, c] != 0:
                    cand = ((c - x) ** 2 + (r - y) ** 2, r * data.shape[1] + c, data[r, c])
                    if best is None or cand[:2] < best[:2]:
                        best = cand
        out.append(best[2])
    return np.array(out)


def gt(values, t=0):
    return DenseDepthGT.full(np.asarray(values, dtype=np.float64), t)


def window_at(xs, ys):
    n = len(xs)
    return EventWindow(xs, ys, np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64), 0, 1)


def random_sparse(rng, h, w, density):
    data = np.where(rng.random((h, w)) < density, rng.integers(1, 50, (h, w)).astype(np.float64), 0.0)
    if not data.any():
        data[rng.integers(h), rng.integers(w)] = 3.0
    return SparseDepthImage(data)


def test_dense_errors_example():
    g = gt([[5.0, 15.0]])
    p = DepthPair(np.array([[6.0, 18.0]]), np.array([[6.0, 18.0]]))
    rows = {r[0]: r for r in dense_errors(p, g, g, cutoffs=(10, 20, 2))}
    assert rows[10][1:] == pytest.approx((1.0, 0.2, 1.0, 0.2))
    assert rows[20][1:] == pytest.approx((2.0, 0.2, 2.0, 0.2))
    assert rows[2][1:] == (None, None, None, None)
    assert DEFAULT_CUTOFFS == (10.0, 20.0, 30.0, 100.0, 200.0)


def test_dense_errors_skip_invalid_pixels():
    g = DenseDepthGT(np.array([[5.0, 15.0]]), np.array([[True, False]]), 0)
    p = DepthPair(np.array([[6.0, 100.0]]), np.array([[5.0, 100.0]]))
    (row,) = dense_errors(p, g, g, cutoffs=(200,))
    assert row[1:] == pytest.approx((1.0, 0.2, 0.0, 0.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_adding_a_perfect_pixel_never_increases_mae(seed):
    rng = np.random.default_rng(seed)
    g = rng.uniform(1, 50, (1, 6))
    p = g + rng.normal(size=(1, 6))
    mask = np.array([[True] * 5 + [False]])
    before = dense_errors(DepthPair(p, p), DenseDepthGT(g, mask, 0), DenseDepthGT(g, mask, 0), (200,))[0][1]
    p2 = p.copy()
    p2[0, 5] = g[0, 5]
    after = dense_errors(DepthPair(p2, p2), gt(g), gt(g), (200,))[0][1]
    assert after <= before + 1e-12


def test_nn_examples():
    data = np.zeros((32, 32))
    data[10, 10], data[20, 20] = 5.0, 8.0
    sparse = SparseDepthImage(data)
    got = nn_associate(window_at([11, 20, 15, 16], [11, 20, 15, 16]), sparse)
    # (15,15) is equidistant; (16,16) is closer to (20,20)
    np.testing.assert_array_equal(got, [5.0, 8.0, 5.0, 8.0])


def test_nn_rejects_empty_image():
    with pytest.raises(ValueError):
        nn_associate(window_at([1], [1]), SparseDepthImage(np.zeros((4, 4))))
    with pytest.raises(ValueError):
        GridIndex(SparseDepthImage(np.zeros((4, 4))))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 24), st.integers(1, 24),
       st.sampled_from([0.005, 0.05, 0.3]), st.integers(1, 9))
def test_grid_index_matches_brute_force(seed, h, w, density, cell):
    rng = np.random.default_rng(seed)
    sparse = random_sparse(rng, h, w, density)
    win = window_at(rng.integers(0, w, 20), rng.integers(0, h, 20))
    expected = brute_force_nn(win, sparse)
    np.testing.assert_array_equal(nn_associate(win, sparse), expected)
    np.testing.assert_array_equal(nn_associate(win, sparse, GridIndex(sparse, cell)), expected)


def test_row_band():
    data = np.zeros((40, 8))
    data[5, 1] = data[30, 2] = 1.0
    assert lidar_row_band(SparseDepthImage(data)) == (5, 30)
    data = np.zeros((40, 8))
    data[12, 0] = 1.0
    assert lidar_row_band(SparseDepthImage(data)) == (12, 12)
    assert lidar_row_band(SparseDepthImage(np.ones((6, 1)))) == (0, 5)
    with pytest.raises(ValueError):
        lidar_row_band(SparseDepthImage(np.zeros((3, 3))))


def test_sparse_event_errors_example():
    gb, ge = gt(np.full((4, 4), 5.0)), gt(np.full((4, 4), 6.0))
    win = window_at([1], [2])
    assert sparse_event_errors(win, [7.0], gb, ge) == (2.0, 1.0)
    assert sparse_event_errors(win, [[5.0, 6.0]], gb, ge) == (0.0, 0.0)


def test_sparse_event_errors_band_excludes_events():
    gb, ge = gt(np.full((10, 4), 5.0)), gt(np.full((10, 4), 6.0))
    win = window_at([1, 1], [2, 9])
    assert sparse_event_errors(win, [7.0, 100.0], gb, ge, band=(0, 5)) == (2.0, 1.0)
    assert sparse_event_errors(win, [7.0, 100.0], gb, ge, band=(6, 6)) == (None, None)


def test_change_classes_closed_band():
    d = np.array([-1.5, -1.0, 0.0, 1.0, 1.0 + 1e-9])
    assert list(classify_change(d)) == [DepthChangeClass.CLOSER, DepthChangeClass.SAME, DepthChangeClass.SAME,
                                        DepthChangeClass.SAME, DepthChangeClass.FARTHER]


def test_change_metrics_examples():
    gb, ge = gt([[10.0, 10.0]]), gt([[10.2, 10.0]])
    pred = DepthPair(np.array([[3.0, 0.0]]), np.array([[3.5, 0.0]]))
    mae, acc = depth_change_metrics(pred, gb, ge, window_at([0], [0]))
    assert mae == pytest.approx(0.3) and acc == 1.0
    # predicted +1.0 exactly stays SAME, matching a GT SAME
    pred = DepthPair(np.array([[3.0, 0.0]]), np.array([[4.0, 0.0]]))
    assert depth_change_metrics(pred, gb, ge, window_at([0], [0]))[1] == 1.0
    assert depth_change_metrics(pred, gb, ge, EventWindow.empty(0, 1)) == (None, None)


def test_change_metrics_deduplicate_pixels():
    gb, ge = gt([[10.0, 10.0]]), gt([[20.0, 10.0]])
    pred = DepthPair(np.array([[0.0, 0.0]]), np.array([[0.0, 0.0]]))
    # pixel 0 is wrong (SAME vs FARTHER), pixel 1 right; repeats must not reweight
    _, acc = depth_change_metrics(pred, gb, ge, window_at([0, 0, 0, 1], [0, 0, 0, 0]))
    assert acc == 0.5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_metrics_invariant_under_horizontal_flip(seed):
    rng = np.random.default_rng(seed)
    h, w = 6, 9
    gb = rng.uniform(1, 40, (h, w))
    ge = gb + rng.normal(scale=2, size=(h, w))
    pb = gb + rng.normal(size=(h, w))
    pa = ge + rng.normal(size=(h, w))
    xs, ys = rng.integers(0, w, 15), rng.integers(0, h, 15)
    # NN ties within a row break the other way after flipping; constant rows make them harmless
    sparse = random_sparse(rng, h, w, 0.1)
    sparse = SparseDepthImage(np.where(sparse.data != 0, np.arange(1.0, h + 1)[:, None], 0.0))

    def run(flip):
        f = (lambda a: a[:, ::-1].copy()) if flip else (lambda a: a)
        x = (w - 1 - xs) if flip else xs
        ev = SequenceEvaluator(cutoffs=(20, 200))
        rec = SequenceRecord(window_at(x, ys), None, gt(f(gb)), gt(f(ge), 1))
        ev.add(rec, SparseDepthImage(f(sparse.data)), DepthPair(f(pb), f(pa)))
        return ev.table()

    a, b = run(False), run(True)
    for ra, rb in zip(a, b):
        for va, vb in zip(ra, rb):
            assert (va is None and vb is None) or va == pytest.approx(vb, rel=1e-12, abs=1e-12)


def test_oracle_predictions_score_perfectly(small_sequence):
    scene, recs = small_sequence
    ev = SequenceEvaluator()
    for r in recs:
        ev.add(r, None, DepthPair(r.gt_begin.data, r.gt_end.data))
    for row in ev.table():
        c, mb, rb, ma, ra, _, _, _, _, chg, acc = row
        if mb is not None:
            assert mb == rb == ma == ra == 0
        if acc is not None:
            assert chg == 0 and acc == 1.0


def test_format_table():
    text = format_table([(10.0, 1.0, None)], header=("a", "b", "c"))
    assert text == "a\tb\tc\n10\t1\t-\n"
