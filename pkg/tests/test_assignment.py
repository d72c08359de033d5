import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import rect_mask
from psgkit.assignment import (
    Assignment,
    GroundTruthTriplet,
    SoftTriplet,
    TermWeights,
    class_match_score,
    match_triplets,
    optimal_assignment,
    segment_match_score,
    total_loss,
    triplet_match_components,
    triplet_match_score,
    triplet_score_matrix,
)
from psgkit.errors import PSGError
from psgkit.masks import Canvas, rle_decode

C = Canvas(6, 6)
N_OBJ, N_PRED = 4, 3


def brute_force(scores, maximize=True):
    """Best total and lexicographically smallest optimal pair list, by enumeration."""
    scores = np.asarray(scores, dtype=float)
    n, m = scores.shape
    sign = 1 if maximize else -1
    best = None
    if n <= m:
        candidates = (tuple((i, perm[i]) for i in range(n)) for perm in itertools.permutations(range(m), n))
    else:
        candidates = (
            tuple(sorted((perm[j], j) for j in range(m))) for perm in itertools.permutations(range(n), m)
        )
    for pairs in candidates:
        total = sum(scores[i, j] for i, j in pairs)
        key = (-sign * total, pairs)
        if best is None or key < best:
            best = key
    return sign * -best[0], best[1]


def one_hot(k, size):
    v = np.zeros(size)
    v[k] = 1.0
    return v


def soft_from_gt(gt, n_obj=N_OBJ, n_pred=N_PRED):
    return SoftTriplet(
        one_hot(gt.subject_label, n_obj + 1),
        one_hot(gt.predicate_label, n_pred + 1),
        one_hot(gt.object_label, n_obj + 1),
        rle_decode(gt.subject_mask).astype(float),
        rle_decode(gt.object_mask).astype(float),
    )


def gt_triplets():
    return [
        GroundTruthTriplet(0, 1, 2, rect_mask(C, 0, 0, 2, 2), rect_mask(C, 2, 0, 4, 2)),
        GroundTruthTriplet(1, 0, 3, rect_mask(C, 0, 2, 3, 4), rect_mask(C, 3, 2, 6, 4)),
        GroundTruthTriplet(2, 2, 0, rect_mask(C, 0, 4, 6, 5), rect_mask(C, 0, 5, 6, 6)),
        GroundTruthTriplet(3, 1, 1, rect_mask(C, 4, 0, 6, 2), rect_mask(C, 0, 0, 1, 6)),
    ]


def no_triplet_pred():
    return SoftTriplet(one_hot(N_OBJ, N_OBJ + 1), one_hot(N_PRED, N_PRED + 1), one_hot(N_OBJ, N_OBJ + 1),
                       np.zeros(C.shape), np.zeros(C.shape))


# -- component scores -------------------------------------------------------


def test_class_match_examples():
    assert class_match_score(one_hot(2, 5), 2) == 1.0
    assert class_match_score(np.full(4, 0.25), 3) == 0.25
    assert class_match_score([0.7, 0.2, 0.1], 1) == 0.2


def test_class_match_errors():
    with pytest.raises(PSGError) as err:
        class_match_score([0.5, 0.5], 2)
    assert err.value.code == "label-out-of-range"
    with pytest.raises(PSGError):
        class_match_score([0.5, 0.6], 0)


def test_segment_match_examples():
    gt = rect_mask(C, 1, 1, 4, 3)
    dense = rle_decode(gt).astype(float)
    assert segment_match_score(dense, gt) == 1.0
    assert segment_match_score(rle_decode(rect_mask(C, 4, 4, 6, 6)).astype(float), gt) == 0.0
    assert segment_match_score(0.5 * dense, gt) == pytest.approx(2 / 3, abs=1e-12)


def test_segment_match_zero_over_zero_is_one():
    from psgkit.masks import SegmentMask

    assert segment_match_score(np.zeros(C.shape), SegmentMask.empty(C)) == 1.0


def test_segment_match_canvas_mismatch():
    with pytest.raises(PSGError) as err:
        segment_match_score(np.zeros((2, 2)), rect_mask(C, 0, 0, 1, 1))
    assert err.value.code == "canvas-mismatch"


def test_triplet_score_perfect_and_wrong():
    gt = gt_triplets()[0]
    assert triplet_match_score(soft_from_gt(gt), gt) == 5.0
    wrong = SoftTriplet(one_hot(3, 5), one_hot(0, 4), one_hot(0, 5),
                        rle_decode(rect_mask(C, 4, 4, 6, 6)).astype(float),
                        rle_decode(rect_mask(C, 0, 4, 2, 6)).astype(float))
    assert triplet_match_score(wrong, gt) == 0.0


def test_triplet_score_sums_components():
    gt = GroundTruthTriplet(0, 0, 0, rect_mask(C, 0, 0, 2, 2), rect_mask(C, 4, 4, 6, 6))
    # Dice 2*1/(4+4) = 0.25 for a 2x2 prediction sharing one pixel with a 2x2 gt
    pred = SoftTriplet(
        [0.5, 0.5, 0.0],
        [0.5, 0.25, 0.25],
        [1.0, 0.0, 0.0],
        rle_decode(rect_mask(C, 1, 1, 3, 3)).astype(float),
        rle_decode(rect_mask(C, 3, 3, 5, 5)).astype(float),
    )
    assert triplet_match_components(pred, gt) == (0.5, 0.5, 1.0, 0.25, 0.25)
    assert triplet_match_score(pred, gt) == 2.5
    weighted = TermWeights(subject_class=2.0, object_mask=0.0)
    assert triplet_match_score(pred, gt, weighted) == pytest.approx(2.75)


def test_score_matrix_matches_pairwise():
    rng = np.random.default_rng(1)
    gts = gt_triplets()
    preds = []
    for _ in range(5):
        preds.append(SoftTriplet(rng.dirichlet(np.ones(N_OBJ + 1)), rng.dirichlet(np.ones(N_PRED + 1)),
                                 rng.dirichlet(np.ones(N_OBJ + 1)), rng.random(C.shape), rng.random(C.shape)))
    matrix = triplet_score_matrix(preds, gts)
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            assert matrix[i, j] == pytest.approx(triplet_match_score(p, g), abs=1e-12)


@given(st.floats(0, 1), st.floats(0, 1))
def test_score_monotone_in_true_class_mass(a, b):
    lo, hi = sorted((a, b))
    gt = gt_triplets()[0]
    base = soft_from_gt(gt)

    def with_mass(m):
        dist = np.zeros(N_PRED + 1)
        dist[gt.predicate_label] = m
        dist[N_PRED] = 1 - m
        return SoftTriplet(base.subject_dist, dist, base.object_dist, base.subject_mask, base.object_mask)

    s_lo, s_hi = triplet_match_score(with_mass(lo), gt), triplet_match_score(with_mass(hi), gt)
    assert s_lo <= s_hi
    assert 0.0 <= s_lo <= 5.0 + 1e-12


# -- optimal assignment -----------------------------------------------------


def test_assignment_examples():
    a = optimal_assignment([[0.3]])
    assert a.pairs == ((0, 0),) and a.total_score == 0.3
    a = optimal_assignment([[0.9, 0.1], [0.2, 0.8]])
    assert a.pairs == ((0, 0), (1, 1))
    assert a.total_score == pytest.approx(1.7)


def test_assignment_minimize():
    a = optimal_assignment([[0.9, 0.1], [0.2, 0.8]], maximize=False)
    assert a.pairs == ((0, 1), (1, 0))
    assert a.total_score == pytest.approx(0.3)


def test_assignment_empty_and_errors():
    assert optimal_assignment(np.zeros((0, 3))).pairs == ()
    assert optimal_assignment(np.zeros((2, 0))).pairs == ()
    with pytest.raises(PSGError) as err:
        optimal_assignment([[1.0, np.nan]])
    assert err.value.code == "non-finite"
    with pytest.raises(PSGError):
        optimal_assignment([[np.inf]])


def test_assignment_ties_are_lexicographic():
    assert optimal_assignment(np.zeros((3, 3))).pairs == ((0, 0), (1, 1), (2, 2))
    assert optimal_assignment(np.zeros((3, 2))).pairs == ((0, 0), (1, 1))
    assert optimal_assignment(np.zeros((2, 4))).pairs == ((0, 0), (1, 1))
    # both assignments total 1; the smaller pair list wins
    assert optimal_assignment([[0, 1], [0, 1]]).pairs == ((0, 0), (1, 1))
    assert optimal_assignment([[1, 1], [0, 1]]).pairs == ((0, 0), (1, 1))
    assert optimal_assignment([[1, 1], [1, 0]]).pairs == ((0, 1), (1, 0))


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_assignment_matches_enumeration_with_ties(n, m, data):
    scores = np.array(data.draw(st.lists(st.lists(st.integers(-2, 2), min_size=m, max_size=m),
                                         min_size=n, max_size=n)), dtype=float)
    maximize = data.draw(st.booleans())
    a = optimal_assignment(scores, maximize=maximize)
    total, pairs = brute_force(scores, maximize)
    assert a.total_score == total
    assert a.pairs == pairs
    assert len(a.pairs) == min(n, m)


@pytest.mark.parametrize("shape", [(9, 4), (4, 9), (8, 8)])
def test_assignment_rectangular_is_optimal(shape):
    rng = np.random.default_rng(7)
    scores = rng.random(shape)
    a = optimal_assignment(scores)
    total, pairs = brute_force(scores)
    assert abs(a.total_score - total) <= 1e-9
    assert a.pairs == pairs


# -- triplet matching and loss ---------------------------------------------


def test_match_recovers_shuffle():
    gts = gt_triplets()
    perm = [2, 0, 3, 1]
    preds = [soft_from_gt(gts[perm[i]]) for i in range(4)]
    a = match_triplets(preds, gts)
    assert a.pairs == tuple((i, perm[i]) for i in range(4))
    assert a.total_score == 20.0


def test_match_without_gts():
    assert match_triplets([soft_from_gt(gt_triplets()[0])], []).pairs == ()


def test_match_one_pred_two_gts():
    gts = gt_triplets()[:2]
    a = match_triplets([soft_from_gt(gts[1])], gts)
    assert a.pairs == ((0, 1),)


def test_match_invariant_under_gt_permutation():
    rng = np.random.default_rng(11)
    gts = gt_triplets()
    preds = [SoftTriplet(rng.dirichlet(np.ones(N_OBJ + 1)), rng.dirichlet(np.ones(N_PRED + 1)),
                         rng.dirichlet(np.ones(N_OBJ + 1)), rng.random(C.shape), rng.random(C.shape))
             for _ in range(6)]
    base = {(p, id(gts[g])) for p, g in match_triplets(preds, gts).pairs}
    for _ in range(5):
        order = rng.permutation(len(gts))
        shuffled = [gts[k] for k in order]
        got = {(p, id(shuffled[g])) for p, g in match_triplets(preds, shuffled).pairs}
        assert got == base


def test_loss_perfect_is_zero():
    gts = gt_triplets()
    preds = [soft_from_gt(g) for g in gts]
    a = match_triplets(preds, gts)
    assert total_loss(preds, gts, a) == 0.0


def test_loss_uniform_predicate():
    gt = gt_triplets()[0]
    perfect = soft_from_gt(gt)
    uniform = SoftTriplet(perfect.subject_dist, np.full(3, 1 / 3), perfect.object_dist,
                          perfect.subject_mask, perfect.object_mask)
    gt2 = GroundTruthTriplet(gt.subject_label, 1, gt.object_label, gt.subject_mask, gt.object_mask)
    loss = total_loss([uniform], [gt2], Assignment(((0, 0),), 0.0))
    assert abs(loss - math.log(3)) <= 1e-9


def test_loss_unmatched_no_triplet_is_zero():
    gts = gt_triplets()[:1]
    preds = [soft_from_gt(gts[0]), no_triplet_pred()]
    a = match_triplets(preds, gts)
    assert a.pairs == ((0, 0),)
    assert total_loss(preds, gts, a) == 0.0


def test_loss_unmatched_pays_for_mass_off_no_triplet():
    pred = soft_from_gt(gt_triplets()[0])
    assert total_loss([pred], [], Assignment((), 0.0)) > 0


def test_loss_rejects_invalid_assignment():
    gts = gt_triplets()[:2]
    preds = [soft_from_gt(g) for g in gts]
    for pairs in (((0, 0), (1, 0)), ((0, 0), (0, 1)), ((0, 5),)):
        with pytest.raises(PSGError) as err:
            total_loss(preds, gts, Assignment(pairs, 0.0))
        assert err.value.code == "invalid-assignment"


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 2**32 - 1))
def test_loss_nonnegative_and_zero_characterization(n_pred, n_gt, seed):
    rng = np.random.default_rng(seed)
    gts = gt_triplets()[:n_gt]
    preds = []
    for i in range(n_pred):
        if rng.random() < 0.5 and i < n_gt:
            preds.append(soft_from_gt(gts[i]))
        elif rng.random() < 0.5:
            preds.append(no_triplet_pred())
        else:
            preds.append(SoftTriplet(rng.dirichlet(np.ones(N_OBJ + 1)), rng.dirichlet(np.ones(N_PRED + 1)),
                                     rng.dirichlet(np.ones(N_OBJ + 1)), rng.random(C.shape), rng.random(C.shape)))
    a = match_triplets(preds, gts)
    loss = total_loss(preds, gts, a)
    assert loss >= 0
    matched = a.as_dict()
    perfect = all(
        triplet_match_score(preds[p], gts[g]) == 5.0 for p, g in matched.items()
    ) and all(
        preds[p].subject_dist[-1] == 1 and preds[p].predicate_dist[-1] == 1 and preds[p].object_dist[-1] == 1
        for p in range(n_pred) if p not in matched
    )
    assert (loss == 0) == perfect
