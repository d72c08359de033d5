"""Triplet recall evaluation (R@K, mR@K) and panoptic quality.

A predicted triplet recalls a ground-truth triplet when subject label,
predicate and object label all agree and both predicted masks overlap their
ground-truth masks with IoU strictly above the threshold. In ``predcls``
mode groundings are ground-truth instance indices instead of masks, and the
IoU test reduces to index equality because ground-truth masks are disjoint.

Within an image the top-K predictions are scanned in rank order and each
consumes the first still-unrecalled ground-truth triplet it matches.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

from .errors import PSGError
from .masks import SegmentMask, mask_iou
from .model import PanopticSceneGraph, RelationTriplet

__all__ = [
    "Entity",
    "ScoredTriplet",
    "EvalConfig",
    "EvalReport",
    "PQReport",
    "triplet_matches",
    "recall_at_k",
    "evaluate",
    "panoptic_quality",
    "corpus_panoptic_quality",
]

MODES = ("sgdet", "predcls")

Grounding = Union[SegmentMask, int]


class Entity(NamedTuple):
    label: int
    grounding: Grounding


@dataclass(frozen=True)
class ScoredTriplet:
    subject: Entity
    predicate: int
    object: Entity
    score: float


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "sgdet"
    k_values: Tuple[int, ...] = (20, 50, 100)
    iou_threshold: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise PSGError("bad-config", f"mode must be one of {MODES}, got {self.mode!r}")
        ks = tuple(int(k) for k in self.k_values)
        if not ks or ks[0] < 1 or any(b <= a for a, b in zip(ks, ks[1:])):
            raise PSGError("bad-config", f"k_values must be strictly increasing positive: {ks}")
        object.__setattr__(self, "k_values", ks)
        if not 0 < self.iou_threshold <= 1:
            raise PSGError("bad-config", f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")


def _check_grounding(g: Grounding, cfg: EvalConfig):
    if cfg.mode == "sgdet":
        if not isinstance(g, SegmentMask):
            raise PSGError("grounding-mode-mismatch", "sgdet predictions need mask groundings")
    elif isinstance(g, SegmentMask) or isinstance(g, bool) or not isinstance(g, int):
        raise PSGError("grounding-mode-mismatch", "predcls predictions need gt-index groundings")


class _Matcher:
    """Per-image match test with an IoU cache keyed on mask identity."""

    def __init__(self, graph: PanopticSceneGraph, cfg: EvalConfig):
        self.graph = graph
        self.cfg = cfg
        self._iou: Dict[Tuple[int, int], float] = {}
        self._keep: List[SegmentMask] = []

    def grounded(self, g: Grounding, gt_instance: int) -> bool:
        if self.cfg.mode == "predcls":
            return g == gt_instance
        key = (id(g), gt_instance)
        iou = self._iou.get(key)
        if iou is None:
            gt_mask = self.graph.instances[gt_instance].mask
            if g.canvas != gt_mask.canvas:
                raise PSGError("canvas-mismatch", f"{g.canvas} vs {gt_mask.canvas}")
            iou = mask_iou(g, gt_mask)
            self._iou[key] = iou
            self._keep.append(g)
        return iou > self.cfg.iou_threshold

    def matches(self, pred: ScoredTriplet, rel: RelationTriplet) -> bool:
        graph = self.graph
        if pred.predicate != rel.predicate:
            return False
        if pred.subject.label != graph.subject_label(rel) or pred.object.label != graph.object_label(rel):
            return False
        return self.grounded(pred.subject.grounding, rel.subject) and self.grounded(
            pred.object.grounding, rel.object
        )


def triplet_matches(
    pred: ScoredTriplet, gt: RelationTriplet, graph: PanopticSceneGraph, cfg: EvalConfig
) -> bool:
    """Whether ``pred`` recalls the ground-truth relation ``gt`` of ``graph``."""
    _check_grounding(pred.subject.grounding, cfg)
    _check_grounding(pred.object.grounding, cfg)
    return _Matcher(graph, cfg).matches(pred, gt)


def _check_ranked(preds: Sequence[ScoredTriplet], cfg: EvalConfig):
    prev = None
    for i, p in enumerate(preds):
        score = float(p.score)
        if score != score or score in (float("inf"), float("-inf")):
            raise PSGError("non-finite", f"prediction {i} has score {p.score}")
        if prev is not None and score > prev:
            raise PSGError("unsorted-predictions", f"prediction {i} outranks its predecessor")
        prev = score
        _check_grounding(p.subject.grounding, cfg)
        _check_grounding(p.object.grounding, cfg)


def _consumption_ranks(
    preds: Sequence[ScoredTriplet], graph: PanopticSceneGraph, cfg: EvalConfig, limit: int
) -> List[Optional[int]]:
    """Rank of the prediction that recalled each gt relation, or None.

    The greedy scan over the top-K is a prefix of the scan over any larger
    K, so one pass serves every K: hits@K = count(rank < K).
    """
    _check_ranked(preds, cfg)
    matcher = _Matcher(graph, cfg)
    ranks: List[Optional[int]] = [None] * len(graph.relations)
    open_gts = list(range(len(graph.relations)))
    for rank, pred in enumerate(preds[:limit]):
        if not open_gts:
            break
        for pos, g in enumerate(open_gts):
            if matcher.matches(pred, graph.relations[g]):
                ranks[g] = rank
                del open_gts[pos]
                break
    return ranks


def recall_at_k(
    preds: Sequence[ScoredTriplet], gt: PanopticSceneGraph, k: int, cfg: EvalConfig
) -> Tuple[int, int]:
    """``(hits, total)`` for one image's ranked predictions."""
    if k < 1:
        raise PSGError("bad-config", f"K must be positive, got {k}")
    ranks = _consumption_ranks(preds, gt, cfg, k)
    return sum(r is not None for r in ranks), len(gt.relations)


@dataclass
class EvalReport:
    mode: str
    k_values: Tuple[int, ...]
    iou_threshold: float
    image_count: int
    gt_counts: Dict[int, int]
    hits: Dict[int, Dict[int, int]]
    recall: Dict[int, float]
    mean_recall: Dict[int, float]
    per_predicate_recall: Dict[int, Dict[int, float]]
    pq: Optional["PQReport"] = None


def _image_ids(gt_dataset: Sequence[PanopticSceneGraph]) -> Dict[str, PanopticSceneGraph]:
    by_id: Dict[str, PanopticSceneGraph] = {}
    for graph in gt_dataset:
        if graph.image_id in by_id:
            raise PSGError("duplicate-image", graph.image_id)
        by_id[graph.image_id] = graph
    return by_id


def _aligned(by_id: Mapping[str, object], other: Mapping[str, object]) -> List[str]:
    missing = sorted(set(by_id) - set(other))
    if missing:
        raise PSGError("missing-image", f"no predictions for {', '.join(missing[:5])}")
    extra = sorted(set(other) - set(by_id))
    if extra:
        raise PSGError("unknown-image", f"predictions for unknown images {', '.join(extra[:5])}")
    return sorted(by_id)


def _map_ordered(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def evaluate(
    gt_dataset: Sequence[PanopticSceneGraph],
    predictions: Mapping[str, Sequence[ScoredTriplet]],
    cfg: EvalConfig = EvalConfig(),
    workers: int = 1,
) -> EvalReport:
    """Corpus R@K and mR@K.

    Per-predicate recall pools hits and ground truths over the whole corpus;
    mR@K averages it over predicates that have at least one ground truth.
    Images are reduced in sorted image-id order, so results do not depend
    on ``workers``.
    """
    by_id = _image_ids(gt_dataset)
    ids = _aligned(by_id, predictions)
    limit = cfg.k_values[-1]

    def per_image(image_id):
        graph = by_id[image_id]
        ranks = _consumption_ranks(list(predictions[image_id]), graph, cfg, limit)
        return [(rel.predicate, r) for rel, r in zip(graph.relations, ranks)]

    results = _map_ordered(per_image, ids, workers)

    gt_counts: Dict[int, int] = {}
    hits = {k: {} for k in cfg.k_values}
    for rows in results:
        for predicate, rank in rows:
            gt_counts[predicate] = gt_counts.get(predicate, 0) + 1
            for k in cfg.k_values:
                row = hits[k]
                row[predicate] = row.get(predicate, 0) + (rank is not None and rank < k)
    gt_counts = dict(sorted(gt_counts.items()))
    total = sum(gt_counts.values())
    recall, mean_recall, per_pred = {}, {}, {}
    for k in cfg.k_values:
        row = {p: hits[k].get(p, 0) for p in gt_counts}
        hits[k] = row
        recall[k] = sum(row.values()) / total if total else 0.0
        per_pred[k] = {p: row[p] / gt_counts[p] for p in gt_counts}
        mean_recall[k] = sum(per_pred[k].values()) / len(per_pred[k]) if per_pred[k] else 0.0
    return EvalReport(
        mode=cfg.mode,
        k_values=cfg.k_values,
        iou_threshold=cfg.iou_threshold,
        image_count=len(ids),
        gt_counts=gt_counts,
        hits=hits,
        recall=recall,
        mean_recall=mean_recall,
        per_predicate_recall=per_pred,
    )


@dataclass
class PQReport:
    """Panoptic quality per class and averaged over classes seen in gt or pred."""

    per_class: Dict[int, Tuple[float, float, float]]
    counts: Dict[int, Tuple[int, int, int]]
    pq: float
    sq: float
    rq: float


@dataclass
class _PQStat:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    iou: float = 0.0


def _pq_accumulate(gt: PanopticSceneGraph, pred: PanopticSceneGraph, stats: Dict[int, _PQStat],
                   threshold: float = 0.5):
    if gt.canvas != pred.canvas:
        raise PSGError("canvas-mismatch", f"{gt.canvas} vs {pred.canvas}")
    candidates = []
    for i, g in enumerate(gt.instances):
        for j, p in enumerate(pred.instances):
            if g.class_id != p.class_id:
                continue
            iou = mask_iou(g.mask, p.mask)
            if iou > threshold:
                candidates.append((-iou, i, j))
    # unique anyway for disjoint segments; sorting keeps overlapping input sane
    candidates.sort()
    used_g, used_p = set(), set()
    for neg_iou, i, j in candidates:
        if i in used_g or j in used_p:
            continue
        used_g.add(i)
        used_p.add(j)
        s = stats.setdefault(gt.instances[i].class_id, _PQStat())
        s.tp += 1
        s.iou += -neg_iou
    for i, g in enumerate(gt.instances):
        if i not in used_g:
            stats.setdefault(g.class_id, _PQStat()).fn += 1
    for j, p in enumerate(pred.instances):
        if j not in used_p:
            stats.setdefault(p.class_id, _PQStat()).fp += 1


def _pq_report(stats: Dict[int, _PQStat]) -> PQReport:
    per_class, counts = {}, {}
    for c in sorted(stats):
        s = stats[c]
        denom = s.tp + 0.5 * s.fp + 0.5 * s.fn
        if denom == 0:
            continue
        sq = s.iou / s.tp if s.tp else 0.0
        rq = s.tp / denom
        per_class[c] = (s.iou / denom, sq, rq)
        counts[c] = (s.tp, s.fp, s.fn)
    n = len(per_class)

    def mean(k):
        return sum(v[k] for v in per_class.values()) / n if n else 0.0

    return PQReport(per_class=per_class, counts=counts, pq=mean(0), sq=mean(1), rq=mean(2))


def panoptic_quality(gt: PanopticSceneGraph, pred: PanopticSceneGraph) -> PQReport:
    """PQ, SQ and RQ of one predicted segmentation against its ground truth."""
    stats: Dict[int, _PQStat] = {}
    _pq_accumulate(gt, pred, stats)
    return _pq_report(stats)


def corpus_panoptic_quality(
    gt_dataset: Sequence[PanopticSceneGraph],
    pred_dataset: Sequence[PanopticSceneGraph],
    workers: int = 1,
) -> PQReport:
    """PQ with TP/FP/FN and IoU sums pooled per class over all images."""
    gts = _image_ids(gt_dataset)
    preds = _image_ids(pred_dataset)
    ids = _aligned(gts, preds)

    def per_image(image_id):
        stats: Dict[int, _PQStat] = {}
        _pq_accumulate(gts[image_id], preds[image_id], stats)
        return stats

    total: Dict[int, _PQStat] = {}
    for stats in _map_ordered(per_image, ids, workers):
        for c, s in stats.items():
            t = total.setdefault(c, _PQStat())
            t.tp += s.tp
            t.fp += s.fp
            t.fn += s.fn
            t.iou += s.iou
    return _pq_report(total)
