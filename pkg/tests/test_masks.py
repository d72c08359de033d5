from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import brute_argmax_merge, dense_iou, pixel_mask, rect_mask
from psgkit.errors import PSGError
from psgkit.masks import (
    Canvas,
    LabeledSoftMask,
    SegmentMask,
    bbox_iou,
    box_mask,
    mask_intersection,
    mask_iou,
    mask_union,
    pixelwise_argmax_merge,
    rle_decode,
    rle_encode,
    tightest_bbox,
)

C22 = Canvas(2, 2)
CHECKER = np.array([[0, 1], [1, 0]], dtype=bool)

bitmaps = st.tuples(st.integers(1, 12), st.integers(1, 12)).flatmap(
    lambda shape: arrays(np.bool_, shape)
)


def test_encode_examples():
    assert rle_encode(np.zeros((2, 2), bool)).runs == (4,)
    assert rle_encode(np.ones((2, 2), bool)).runs == (0, 4)
    assert rle_encode(CHECKER).runs == (1, 2, 1)


def test_decode_examples():
    assert not rle_decode(SegmentMask(C22, [4])).any()
    assert rle_decode(SegmentMask(C22, [0, 4])).all()
    np.testing.assert_array_equal(rle_decode(SegmentMask(C22, [1, 2, 1])), CHECKER)


@pytest.mark.parametrize("runs", [[3], [2, 3], [0, 5]])
def test_length_mismatch(runs):
    with pytest.raises(PSGError) as err:
        SegmentMask(C22, runs)
    assert err.value.code == "length-mismatch"


@pytest.mark.parametrize("runs", [[1, 0, 3], [4, 0], [-1, 5]])
def test_bad_runs(runs):
    with pytest.raises(PSGError) as err:
        SegmentMask(C22, runs)
    assert err.value.code == "bad-runs"


def test_canvas_must_be_positive():
    with pytest.raises(PSGError):
        Canvas(0, 3)


@given(bitmaps)
def test_round_trip_bitmap(bits):
    np.testing.assert_array_equal(rle_decode(rle_encode(bits)), bits)


@given(bitmaps)
def test_round_trip_runs(bits):
    mask = rle_encode(bits)
    assert rle_encode(rle_decode(mask)) == mask
    assert mask.area == int(bits.sum())


def test_iou_examples():
    c = Canvas(8, 8)
    a = rect_mask(c, 2, 2, 4, 4)
    assert mask_iou(a, a) == 1.0
    assert mask_iou(a, rect_mask(c, 5, 5, 7, 7)) == 0.0
    assert mask_iou(a, rect_mask(c, 2, 2, 4, 3)) == 0.5


def test_iou_of_empty_masks_is_zero():
    empty = SegmentMask.empty(C22)
    assert mask_iou(empty, empty) == 0.0


def test_iou_canvas_mismatch():
    with pytest.raises(PSGError) as err:
        mask_iou(SegmentMask.empty(C22), SegmentMask.empty(Canvas(2, 3)))
    assert err.value.code == "canvas-mismatch"


@settings(max_examples=200)
@given(st.integers(1, 16), st.integers(1, 16), st.data())
def test_iou_matches_dense(h, w, data):
    a = data.draw(arrays(np.bool_, (h, w)))
    b = data.draw(arrays(np.bool_, (h, w)))
    ma, mb = rle_encode(a), rle_encode(b)
    inter = int((a & b).sum())
    union = int((a | b).sum())
    expected = Fraction(inter, union) if union else Fraction(0)
    assert mask_iou(ma, mb) == float(expected)
    assert mask_iou(ma, mb) == mask_iou(mb, ma)
    np.testing.assert_array_equal(rle_decode(mask_union(ma, mb)), a | b)
    np.testing.assert_array_equal(rle_decode(mask_intersection(ma, mb)), a & b)


def test_bbox_examples():
    c = Canvas(10, 10)
    assert tightest_bbox(pixel_mask(c, [(3, 5)])) == (3, 5, 4, 6)
    assert tightest_bbox(SegmentMask(c, [0, 100])) == (0, 0, 10, 10)
    assert tightest_bbox(pixel_mask(c, [(1, 1), (4, 2)])) == (1, 1, 5, 3)


def test_bbox_of_row_wrapping_run():
    # a single run from the end of row 0 into row 1
    c = Canvas(3, 4)
    assert tightest_bbox(SegmentMask(c, [3, 2, 7])) == (0, 0, 4, 2)


def test_bbox_empty():
    with pytest.raises(PSGError) as err:
        tightest_bbox(SegmentMask.empty(C22))
    assert err.value.code == "empty-mask"


@given(bitmaps)
def test_bbox_matches_dense(bits):
    if not bits.any():
        return
    ys, xs = np.nonzero(bits)
    expected = (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
    assert tightest_bbox(rle_encode(bits)) == tuple(int(v) for v in expected)


def test_bbox_iou_examples():
    assert bbox_iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert bbox_iou((0, 0, 2, 2), (2, 0, 4, 2)) == 0.0
    assert bbox_iou((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(1 / 3, abs=1e-15)


def test_bbox_iou_degenerate():
    with pytest.raises(PSGError) as err:
        bbox_iou((0, 0, 0, 2), (0, 0, 1, 1))
    assert err.value.code == "degenerate-box"


def test_union_examples():
    c = Canvas(4, 4)
    a = rect_mask(c, 0, 0, 2, 3)
    assert mask_union(a, a) == a
    assert mask_union(a, SegmentMask.empty(c)) == a
    two = mask_union(pixel_mask(c, [(0, 0)]), pixel_mask(c, [(3, 3)]))
    assert two.area == 2
    np.testing.assert_array_equal(np.argwhere(rle_decode(two)), [[0, 0], [3, 3]])


def test_union_merges_adjacent_runs():
    c = Canvas(1, 6)
    u = mask_union(pixel_mask(c, [(1, 0)]), pixel_mask(c, [(2, 0)]))
    assert u.runs == (1, 2, 3)


def test_box_mask_clips():
    c = Canvas(4, 5)
    np.testing.assert_array_equal(rle_decode(box_mask(c, (1, 1, 3, 3))), rle_decode(rect_mask(c, 1, 1, 3, 3)))
    assert box_mask(c, (3, 3, 2, 2)).is_empty()
    assert box_mask(c, (-2, -2, 10, 10)) == SegmentMask(c, [0, 20])
    assert box_mask(c, (0, 1, 5, 3)).runs == (5, 10, 5)


def test_merge_single_mask():
    c = Canvas(3, 3)
    m = rect_mask(c, 0, 0, 2, 2)
    out = pixelwise_argmax_merge([LabeledSoftMask(m, 7)])
    np.testing.assert_array_equal(out, np.where(rle_decode(m), 7, -1))


def test_merge_disjoint_masks():
    c = Canvas(3, 3)
    a, b = rect_mask(c, 0, 0, 1, 3), rect_mask(c, 2, 0, 3, 3)
    out = pixelwise_argmax_merge([LabeledSoftMask(a, 1), LabeledSoftMask(b, 2)])
    assert (out[:, 0] == 1).all() and (out[:, 2] == 2).all() and (out[:, 1] == -1).all()


def test_merge_overlap_takes_higher_score():
    a = np.zeros((2, 3))
    b = np.zeros((2, 3))
    a[:, :2] = 0.9
    b[:, 1:] = 0.6
    out = pixelwise_argmax_merge([LabeledSoftMask(b, 2), LabeledSoftMask(a, 1)])
    np.testing.assert_array_equal(out, [[1, 1, 2], [1, 1, 2]])


def test_merge_ties_by_priority_then_index():
    ones = np.ones((1, 1))
    assert pixelwise_argmax_merge([LabeledSoftMask(ones, 1, 0.1), LabeledSoftMask(ones, 2, 0.5)])[0, 0] == 2
    assert pixelwise_argmax_merge([LabeledSoftMask(ones, 1), LabeledSoftMask(ones, 2)])[0, 0] == 1


def test_merge_errors():
    with pytest.raises(PSGError) as err:
        pixelwise_argmax_merge([LabeledSoftMask(np.ones((2, 2)), 1), LabeledSoftMask(np.ones((2, 3)), 2)])
    assert err.value.code == "canvas-mismatch"
    with pytest.raises(PSGError) as err:
        LabeledSoftMask(np.full((2, 2), 1.5), 1)
    assert err.value.code == "score-range"
    assert (pixelwise_argmax_merge([], canvas=Canvas(2, 2)) == -1).all()


@settings(max_examples=60)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 4), st.data())
def test_merge_matches_brute_force(h, w, n, data):
    levels = st.sampled_from([0.0, 0.25, 0.5, 1.0])
    maps = [data.draw(arrays(np.float64, (h, w), elements=levels)) for _ in range(n)]
    priorities = [data.draw(st.sampled_from([0.0, 1.0])) for _ in range(n)]
    labels = list(range(10, 10 + n))
    parts = [LabeledSoftMask(m, l, p) for m, l, p in zip(maps, labels, priorities)]
    out = pixelwise_argmax_merge(parts)
    np.testing.assert_array_equal(out, brute_argmax_merge(maps, labels, priorities))
    # per-label masks of the merged map are disjoint by construction
    per_label = [rle_encode(out == l) for l in labels]
    assert sum(m.area for m in per_label) == int((out != -1).sum())


def test_dense_iou_helper_agrees_on_example():
    a = np.zeros((8, 8), bool)
    a[2:4, 2:4] = True
    b = np.zeros((8, 8), bool)
    b[2:3, 2:4] = True
    assert dense_iou(a, b) == 0.5
