"""Triplet Hungarian matching for set-prediction of scene graph triplets.

Scores follow a similarity convention: larger is better and the matcher
maximizes. The class term is the predicted probability of the true class and
the mask term is the soft Dice coefficient, mirroring the cross-entropy and
Dice losses used once a matching is fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import PSGError
from .masks import SegmentMask, _soft_scores, rle_decode

__all__ = [
    "SoftTriplet",
    "GroundTruthTriplet",
    "Assignment",
    "TermWeights",
    "class_match_score",
    "segment_match_score",
    "triplet_match_components",
    "triplet_match_score",
    "triplet_score_matrix",
    "optimal_assignment",
    "match_triplets",
    "total_loss",
]

_PROB_EPS = 1e-12


def _as_distribution(dist, name="dist") -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 1 or dist.size == 0:
        raise PSGError("bad-distribution", f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(dist)) or dist.min() < 0 or abs(dist.sum() - 1.0) > 1e-6:
        raise PSGError("bad-distribution", f"{name} must be non-negative and sum to 1")
    return dist


@dataclass(frozen=True, eq=False)
class SoftTriplet:
    """One triplet query's outputs.

    Each class distribution has one extra trailing slot meaning "no
    triplet". Masks are per-pixel scores in [0, 1].
    """

    subject_dist: np.ndarray
    predicate_dist: np.ndarray
    object_dist: np.ndarray
    subject_mask: np.ndarray
    object_mask: np.ndarray

    def __post_init__(self):
        for name in ("subject_dist", "predicate_dist", "object_dist"):
            object.__setattr__(self, name, _as_distribution(getattr(self, name), name))
        for name in ("subject_mask", "object_mask"):
            object.__setattr__(self, name, _soft_scores(getattr(self, name)))
        if self.subject_mask.shape != self.object_mask.shape:
            raise PSGError("canvas-mismatch", "subject and object masks differ in shape")

    @property
    def no_triplet(self) -> Tuple[int, int, int]:
        """Index of the "no triplet" slot in each head."""
        return (
            self.subject_dist.size - 1,
            self.predicate_dist.size - 1,
            self.object_dist.size - 1,
        )


@dataclass(frozen=True)
class GroundTruthTriplet:
    subject_label: int
    predicate_label: int
    object_label: int
    subject_mask: SegmentMask
    object_mask: SegmentMask


@dataclass(frozen=True)
class Assignment:
    """Injective partial map ``prediction index -> ground-truth index``."""

    pairs: Tuple[Tuple[int, int], ...]
    total_score: float

    def as_dict(self) -> Dict[int, int]:
        return dict(self.pairs)

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class TermWeights:
    """Multipliers for the five per-triplet terms; all 1 by default."""

    subject_class: float = 1.0
    predicate_class: float = 1.0
    object_class: float = 1.0
    subject_mask: float = 1.0
    object_mask: float = 1.0


DEFAULT_WEIGHTS = TermWeights()


def class_match_score(dist, gt_label: int) -> float:
    """Probability mass the prediction puts on the true class."""
    dist = _as_distribution(dist)
    if not 0 <= gt_label < dist.size:
        raise PSGError("label-out-of-range", f"label {gt_label} for {dist.size} classes")
    return float(dist[gt_label])


def _dice(pred: np.ndarray, gt: np.ndarray) -> float:
    denom = pred.sum() + gt.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.dot(pred.ravel(), gt.ravel()) / denom)


def segment_match_score(soft_mask, gt: SegmentMask) -> float:
    """Soft Dice coefficient ``2 sum(p*g) / (sum(p) + sum(g))``; 0/0 gives 1."""
    pred = _soft_scores(soft_mask)
    if pred.shape != gt.canvas.shape:
        raise PSGError("canvas-mismatch", f"{pred.shape} vs {gt.canvas.shape}")
    return _dice(pred, rle_decode(gt).astype(np.float64))


def triplet_match_components(pred: SoftTriplet, gt: GroundTruthTriplet) -> Tuple[float, ...]:
    """``(subject_class, predicate_class, object_class, subject_mask, object_mask)``."""
    return (
        class_match_score(pred.subject_dist, gt.subject_label),
        class_match_score(pred.predicate_dist, gt.predicate_label),
        class_match_score(pred.object_dist, gt.object_label),
        segment_match_score(pred.subject_mask, gt.subject_mask),
        segment_match_score(pred.object_mask, gt.object_mask),
    )


def _weight_vector(weights: Optional[TermWeights]) -> np.ndarray:
    w = weights or DEFAULT_WEIGHTS
    return np.array(
        [w.subject_class, w.predicate_class, w.object_class, w.subject_mask, w.object_mask]
    )


def triplet_match_score(
    pred: SoftTriplet, gt: GroundTruthTriplet, weights: Optional[TermWeights] = None
) -> float:
    parts = np.array(triplet_match_components(pred, gt))
    return float(parts @ _weight_vector(weights))


def _dice_matrix(pred_masks: np.ndarray, gt_masks: np.ndarray) -> np.ndarray:
    inter = pred_masks @ gt_masks.T
    denom = pred_masks.sum(axis=1)[:, None] + gt_masks.sum(axis=1)[None, :]
    out = np.ones_like(inter)
    nz = denom > 0
    out[nz] = 2.0 * inter[nz] / denom[nz]
    return out


def triplet_score_matrix(
    preds: Sequence[SoftTriplet],
    gts: Sequence[GroundTruthTriplet],
    weights: Optional[TermWeights] = None,
) -> np.ndarray:
    """``len(preds) x len(gts)`` matrix of :func:`triplet_match_score` values."""
    if not preds or not gts:
        return np.zeros((len(preds), len(gts)))
    shape = preds[0].subject_mask.shape
    for i, p in enumerate(preds):
        if p.subject_mask.shape != shape:
            raise PSGError("canvas-mismatch", f"prediction {i}")
    for j, g in enumerate(gts):
        if g.subject_mask.canvas.shape != shape or g.object_mask.canvas.shape != shape:
            raise PSGError("canvas-mismatch", f"ground truth {j}")
    w = _weight_vector(weights)
    out = np.zeros((len(preds), len(gts)))
    for k, (dist_of, label_of) in enumerate(
        (
            (lambda p: p.subject_dist, lambda g: g.subject_label),
            (lambda p: p.predicate_dist, lambda g: g.predicate_label),
            (lambda p: p.object_dist, lambda g: g.object_label),
        )
    ):
        for i, p in enumerate(preds):
            dist = dist_of(p)
            for j, g in enumerate(gts):
                label = label_of(g)
                if not 0 <= label < dist.size:
                    raise PSGError("label-out-of-range", f"label {label} for {dist.size} classes")
                out[i, j] += w[k] * dist[label]
    for k, attr in ((3, "subject_mask"), (4, "object_mask")):
        pm = np.stack([getattr(p, attr).ravel() for p in preds])
        gm = np.stack([rle_decode(getattr(g, attr)).ravel().astype(np.float64) for g in gts])
        out += w[k] * _dice_matrix(pm, gm)
    return out


def _hungarian(cost: np.ndarray):
    """Minimum-cost assignment of every row (rows <= cols).

    Shortest augmenting path with potentials. Returns ``(col_of_row, u, v)``
    where ``u``/``v`` are optimal duals: ``u[i] + v[j] <= cost[i, j]`` with
    equality on assigned pairs, and ``v[j] == 0`` for unassigned columns.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # 1-based row owning column j, 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free[1:], minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            col_of_row[owner[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _solve(cost: np.ndarray):
    """Min-cost matching of ``min(rows, cols)`` pairs on any rectangle.

    Returns ``(pairs, value, row_dual, col_dual)`` with pairs as
    ``(row, col)`` in the original orientation.
    """
    n, m = cost.shape
    if n == 0 or m == 0:
        return [], 0.0, np.zeros(n), np.zeros(m)
    if n <= m:
        cols, u, v = _hungarian(cost)
        pairs = [(i, int(cols[i])) for i in range(n)]
        row_dual, col_dual = u, v
    else:
        rows, u, v = _hungarian(cost.T)
        pairs = sorted((int(rows[j]), j) for j in range(m))
        row_dual, col_dual = v, u
    value = float(sum(cost[i, j] for i, j in pairs))
    return pairs, value, row_dual, col_dual


def optimal_assignment(score_matrix, maximize: bool = True) -> Assignment:
    """Globally optimal one-to-one matching of ``min(N_pred, N_gt)`` pairs.

    Rows are predictions, columns ground truths. Among equally good
    matchings the lexicographically smallest sorted pair list is returned,
    so results do not depend on solver internals.
    """
    scores = np.asarray(score_matrix, dtype=np.float64)
    if scores.ndim != 2:
        if scores.size == 0:
            scores = scores.reshape(0, 0)
        else:
            raise PSGError("bad-matrix", f"expected a 2-D matrix, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise PSGError("non-finite", "score matrix contains NaN or infinity")
    n_pred, n_gt = scores.shape
    if n_pred == 0 or n_gt == 0:
        return Assignment((), 0.0)
    cost = -scores if maximize else scores

    pairs, best, row_dual, col_dual = _solve(cost)
    scale = max(1.0, float(np.abs(cost).max())) * (min(n_pred, n_gt) + 1)
    value_tol = 1e-9 * scale
    dual_tol = 1e-6 * scale
    current: Dict[int, Optional[int]] = {p: None for p in range(n_pred)}
    current.update(dict(pairs))

    fixed: Dict[int, Optional[int]] = {}
    free_gts = list(range(n_gt))
    for p in range(n_pred):
        preds_after = n_pred - p - 1
        options: List[Optional[int]] = list(free_gts)
        if n_pred > n_gt and preds_after >= len(free_gts):
            options.append(None)
        choice = None
        chosen = False
        for g in options:
            if current[p] == g:
                chosen, choice = True, g
                break
            # complementary slackness: only tight edges / zero-dual leftovers
            # can appear in any optimal matching
            if g is None:
                if row_dual[p] < -dual_tol:
                    continue
            elif cost[p, g] - row_dual[p] - col_dual[g] > dual_tol:
                continue
            trial = dict(fixed)
            trial[p] = g
            witness = _solve_fixed(cost, trial)
            if witness[1] <= best + value_tol:
                current = witness[0]
                chosen, choice = True, g
                break
        if not chosen:  # pragma: no cover - the current optimum is always an option
            raise AssertionError("tie-break refinement lost the optimum")
        fixed[p] = choice
        if choice is not None:
            free_gts.remove(choice)

    out = tuple((p, g) for p, g in sorted(fixed.items()) if g is not None)
    total = float(sum(scores[p, g] for p, g in out))
    return Assignment(out, total)


def _solve_fixed(cost: np.ndarray, fixed: Dict[int, Optional[int]]):
    """Best completion of a partial assignment; returns ``(full map, cost)``."""
    n_pred, n_gt = cost.shape
    taken = {g for g in fixed.values() if g is not None}
    rows = [p for p in range(n_pred) if p not in fixed]
    cols = [g for g in range(n_gt) if g not in taken]
    value = sum(cost[p, g] for p, g in fixed.items() if g is not None)
    result: Dict[int, Optional[int]] = dict(fixed)
    for p in rows:
        result[p] = None
    if rows and cols:
        sub_pairs, sub_value, _, _ = _solve(cost[np.ix_(rows, cols)])
        for i, j in sub_pairs:
            result[rows[i]] = cols[j]
        value += sub_value
    return result, float(value)


def match_triplets(
    preds: Sequence[SoftTriplet],
    gts: Sequence[GroundTruthTriplet],
    weights: Optional[TermWeights] = None,
) -> Assignment:
    """Optimal prediction-to-ground-truth matching by triplet match score."""
    return optimal_assignment(triplet_score_matrix(preds, gts, weights), maximize=True)


def _cross_entropy(dist: np.ndarray, label: int) -> float:
    return -math.log(max(float(dist[label]), _PROB_EPS))


def total_loss(
    preds: Sequence[SoftTriplet],
    gts: Sequence[GroundTruthTriplet],
    assignment: Assignment,
    weights: Optional[TermWeights] = None,
) -> float:
    """Summed training loss under a fixed matching.

    Matched predictions pay cross-entropy on the three labels plus
    ``1 - Dice`` on both masks. Unmatched predictions pay cross-entropy
    towards the "no triplet" slot of each head and no mask terms.
    Probabilities are floored at 1e-12 so the loss stays finite.
    """
    w = weights or DEFAULT_WEIGHTS
    seen_p, seen_g = set(), set()
    for p, g in assignment.pairs:
        if not (0 <= p < len(preds) and 0 <= g < len(gts)) or p in seen_p or g in seen_g:
            raise PSGError("invalid-assignment", f"pair ({p}, {g})")
        seen_p.add(p)
        seen_g.add(g)

    loss = 0.0
    for p, g in assignment.pairs:
        pred, gt = preds[p], gts[g]
        for dist in (pred.subject_dist, pred.predicate_dist, pred.object_dist):
            if dist.size < 2:
                raise PSGError("bad-distribution", "heads need a class slot plus no-triplet")
        if not gt.subject_label < pred.subject_dist.size - 1:
            raise PSGError("label-out-of-range", f"subject label {gt.subject_label}")
        if not gt.predicate_label < pred.predicate_dist.size - 1:
            raise PSGError("label-out-of-range", f"predicate label {gt.predicate_label}")
        if not gt.object_label < pred.object_dist.size - 1:
            raise PSGError("label-out-of-range", f"object label {gt.object_label}")
        loss += w.subject_class * _cross_entropy(pred.subject_dist, gt.subject_label)
        loss += w.predicate_class * _cross_entropy(pred.predicate_dist, gt.predicate_label)
        loss += w.object_class * _cross_entropy(pred.object_dist, gt.object_label)
        loss += w.subject_mask * (1.0 - segment_match_score(pred.subject_mask, gt.subject_mask))
        loss += w.object_mask * (1.0 - segment_match_score(pred.object_mask, gt.object_mask))
    for p, pred in enumerate(preds):
        if p in seen_p:
            continue
        s, r, o = pred.no_triplet
        loss += w.subject_class * _cross_entropy(pred.subject_dist, s)
        loss += w.predicate_class * _cross_entropy(pred.predicate_dist, r)
        loss += w.object_class * _cross_entropy(pred.object_dist, o)
    return max(loss, 0.0)
