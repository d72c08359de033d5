"""Run-length mask algebra.

Masks are stored as run lists over the row-major flattened ``H x W`` grid,
alternating zero-runs and one-runs and always starting with a zero-run
(which may have length 0). All set operations work directly on the runs,
so cost scales with the number of runs rather than the number of pixels.

Boxes are ``(x0, y0, x1, y1)`` with ``x1``/``y1`` exclusive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import PSGError

Box = Tuple[int, int, int, int]

__all__ = [
    "Box",
    "Canvas",
    "SegmentMask",
    "LabeledSoftMask",
    "rle_encode",
    "rle_decode",
    "mask_iou",
    "mask_intersection",
    "mask_union",
    "tightest_bbox",
    "bbox_iou",
    "box_mask",
    "pixelwise_argmax_merge",
    "VOID",
]

VOID = -1


@dataclass(frozen=True)
class Canvas:
    height: int
    width: int

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise PSGError("bad-canvas", f"{self.height}x{self.width}")

    @property
    def size(self) -> int:
        return self.height * self.width

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)


class SegmentMask:
    """Immutable run-length encoded binary mask."""

    __slots__ = ("_canvas", "_runs", "_starts", "_ends", "_area", "_hash")

    def __init__(self, canvas: Canvas, runs: Sequence[int]):
        runs = tuple(int(r) for r in runs)
        if not runs:
            raise PSGError("length-mismatch", "empty run list")
        if any(r < 0 for r in runs):
            raise PSGError("bad-runs", "negative run length")
        if any(r == 0 for r in runs[1:]):
            raise PSGError("bad-runs", "zero-length run after the leading zero-run")
        if sum(runs) != canvas.size:
            raise PSGError(
                "length-mismatch",
                f"runs sum to {sum(runs)}, canvas has {canvas.size} pixels",
            )
        self._canvas = canvas
        self._runs = runs
        bounds = np.concatenate(([0], np.cumsum(runs, dtype=np.int64)))
        self._starts = bounds[1:-1:2]
        self._ends = bounds[2::2]
        self._area = int(sum(runs[1::2]))
        self._hash = None

    @property
    def canvas(self) -> Canvas:
        return self._canvas

    @property
    def runs(self) -> Tuple[int, ...]:
        return self._runs

    @property
    def area(self) -> int:
        return self._area

    @property
    def intervals(self) -> Tuple[np.ndarray, np.ndarray]:
        """Half-open ``[start, end)`` flat-index intervals of foreground."""
        return self._starts, self._ends

    def is_empty(self) -> bool:
        return self._area == 0

    @classmethod
    def empty(cls, canvas: Canvas) -> "SegmentMask":
        return cls(canvas, [canvas.size])

    def __eq__(self, other):
        if not isinstance(other, SegmentMask):
            return NotImplemented
        return self._canvas == other._canvas and self._runs == other._runs

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self._canvas, self._runs))
        return self._hash

    def __repr__(self):
        shown = self._runs if len(self._runs) <= 8 else self._runs[:8] + ("...",)
        return f"SegmentMask({self._canvas.height}x{self._canvas.width}, runs={list(shown)})"


def _check_same_canvas(a: SegmentMask, b: SegmentMask):
    if a.canvas != b.canvas:
        raise PSGError("canvas-mismatch", f"{a.canvas} vs {b.canvas}")


def _from_intervals(canvas: Canvas, starts, ends) -> SegmentMask:
    """Build a mask from sorted, non-overlapping intervals (adjacency allowed)."""
    runs = []
    cursor = 0
    pending_start = None
    pending_end = None
    for s, e in zip(starts, ends):
        s, e = int(s), int(e)
        if e <= s:
            continue
        if pending_end is not None and s == pending_end:
            pending_end = e
            continue
        if pending_end is not None:
            runs.extend((pending_start - cursor, pending_end - pending_start))
            cursor = pending_end
        pending_start, pending_end = s, e
    if pending_end is not None:
        runs.extend((pending_start - cursor, pending_end - pending_start))
        cursor = pending_end
    if cursor < canvas.size or not runs:
        runs.append(canvas.size - cursor)
    return SegmentMask(canvas, runs)


def _sweep(a: SegmentMask, b: SegmentMask):
    """Coverage count (0, 1 or 2) of the elementary segments between boundaries."""
    a_s, a_e = a.intervals
    b_s, b_e = b.intervals
    pos = np.concatenate((a_s, a_e, b_s, b_e))
    delta = np.concatenate(
        (
            np.ones(len(a_s), np.int64),
            -np.ones(len(a_e), np.int64),
            np.ones(len(b_s), np.int64),
            -np.ones(len(b_e), np.int64),
        )
    )
    order = np.argsort(pos, kind="stable")
    pos = pos[order]
    cover = np.cumsum(delta[order])[:-1]
    return pos[:-1], pos[1:], cover


def rle_encode(bits: np.ndarray) -> SegmentMask:
    """Encode a 2-D boolean array as a :class:`SegmentMask`."""
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise PSGError("bad-bitmap", f"expected a 2-D array, got shape {bits.shape}")
    canvas = Canvas(*bits.shape)
    flat = bits.astype(bool, copy=False).ravel()
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return SegmentMask(canvas, runs)


def rle_decode(mask: SegmentMask) -> np.ndarray:
    """Decode to a boolean ``(H, W)`` array."""
    values = (np.arange(len(mask.runs)) % 2).astype(bool)
    flat = np.repeat(values, mask.runs)
    if flat.size != mask.canvas.size:
        raise PSGError("length-mismatch")
    return flat.reshape(mask.canvas.shape)


def mask_intersection(a: SegmentMask, b: SegmentMask) -> SegmentMask:
    _check_same_canvas(a, b)
    lo, hi, cover = _sweep(a, b)
    keep = cover == 2
    return _from_intervals(a.canvas, lo[keep], hi[keep])


def mask_union(a: SegmentMask, b: SegmentMask) -> SegmentMask:
    """Per-pixel OR of two masks on the same canvas."""
    _check_same_canvas(a, b)
    lo, hi, cover = _sweep(a, b)
    keep = cover >= 1
    return _from_intervals(a.canvas, lo[keep], hi[keep])


def intersection_area(a: SegmentMask, b: SegmentMask) -> int:
    _check_same_canvas(a, b)
    if a.area == 0 or b.area == 0:
        return 0
    lo, hi, cover = _sweep(a, b)
    return int((hi - lo)[cover == 2].sum())


def mask_iou(a: SegmentMask, b: SegmentMask) -> float:
    """Intersection over union; two empty masks give 0."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union


def tightest_bbox(mask: SegmentMask) -> Box:
    if mask.is_empty():
        raise PSGError("empty-mask", "cannot box an empty mask")
    width = mask.canvas.width
    starts, ends = mask.intervals
    last = ends - 1
    row_s = starts // width
    row_e = last // width
    y0 = int(row_s.min())
    y1 = int(row_e.max()) + 1
    # an interval that wraps a row boundary touches both column 0 and W-1
    if np.any(row_s != row_e):
        return (0, y0, width, y1)
    x0 = int((starts % width).min())
    x1 = int((last % width).max()) + 1
    return (x0, y0, x1, y1)


def _check_box(box: Box):
    x0, y0, x1, y1 = box
    if not (x0 < x1 and y0 < y1):
        raise PSGError("degenerate-box", f"{tuple(box)}")


def box_area(box: Box):
    _check_box(box)
    return (box[2] - box[0]) * (box[3] - box[1])


def bbox_iou(a: Box, b: Box) -> float:
    area_a = box_area(a)
    area_b = box_area(b)
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def box_mask(canvas: Canvas, box: Box) -> SegmentMask:
    """Rectangle mask; the box is clipped to the canvas and may end up empty."""
    x0, y0, x1, y1 = (int(v) for v in box)
    x0, x1 = max(x0, 0), min(x1, canvas.width)
    y0, y1 = max(y0, 0), min(y1, canvas.height)
    if x0 >= x1 or y0 >= y1:
        return SegmentMask.empty(canvas)
    rows = np.arange(y0, y1, dtype=np.int64) * canvas.width
    return _from_intervals(canvas, rows + x0, rows + x1)


def _soft_scores(mask, canvas: Optional[Canvas] = None) -> np.ndarray:
    if isinstance(mask, SegmentMask):
        return rle_decode(mask).astype(np.float64)
    scores = np.asarray(mask, dtype=np.float64)
    if scores.ndim != 2:
        raise PSGError("bad-bitmap", f"expected a 2-D score map, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)) or scores.min(initial=0.0) < 0 or scores.max(initial=0.0) > 1:
        raise PSGError("score-range", "soft mask scores must lie in [0, 1]")
    return scores


@dataclass(frozen=True, eq=False)
class LabeledSoftMask:
    """A per-pixel score map in [0, 1] carrying a class label and priority.

    ``mask`` may be a :class:`SegmentMask` (treated as 0/1 scores) or a
    2-D float array.
    """

    mask: Union[SegmentMask, np.ndarray]
    label: int
    priority: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mask", _soft_scores(self.mask))

    @property
    def shape(self):
        return self.mask.shape


def pixelwise_argmax_merge(
    parts: Sequence[LabeledSoftMask], canvas: Optional[Canvas] = None, void: int = VOID
) -> np.ndarray:
    """Merge possibly overlapping soft masks into one ``(H, W)`` label map.

    Each pixel takes the label of the part scoring highest there. Equal
    scores go to the higher ``priority``, then to the earlier part. Pixels
    where every part scores 0 get ``void``.
    """
    parts = list(parts)
    if canvas is None:
        if not parts:
            raise PSGError("canvas-mismatch", "no parts and no canvas given")
        shape = parts[0].shape
    else:
        shape = canvas.shape
    for i, part in enumerate(parts):
        if part.shape != shape:
            raise PSGError("canvas-mismatch", f"part {i} has shape {part.shape}, expected {shape}")
    out = np.full(shape, void, dtype=np.int64)
    if not parts:
        return out

    # visit parts in preference order so argmax picks the preferred one on ties
    order = sorted(range(len(parts)), key=lambda i: (-parts[i].priority, i))
    stack = np.stack([parts[i].mask for i in order])
    best = stack.max(axis=0)
    winner = np.argmax(stack == best, axis=0)
    labels = np.array([parts[i].label for i in order], dtype=np.int64)
    covered = best > 0
    out[covered] = labels[winner[covered]]
    return out
