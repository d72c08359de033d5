"""Shared builders and dense brute-force oracles for the test suite."""

import numpy as np

from psgkit.masks import Canvas, rle_encode
from psgkit.model import ObjectInstance, PanopticSceneGraph, RelationTriplet


def bitmap_mask(bits):
    return rle_encode(np.asarray(bits, dtype=bool))


def rect_mask(canvas, x0, y0, x1, y1):
    bits = np.zeros(canvas.shape, dtype=bool)
    bits[y0:y1, x0:x1] = True
    return rle_encode(bits)


def pixel_mask(canvas, pixels):
    bits = np.zeros(canvas.shape, dtype=bool)
    for x, y in pixels:
        bits[y, x] = True
    return rle_encode(bits)


def make_graph(canvas, segments, relations=(), image_id="img"):
    """``segments`` is a list of ``(class_id, mask)``; relations ``(s, o, p)``."""
    instances = tuple(ObjectInstance(c, m) for c, m in segments)
    return PanopticSceneGraph(canvas, instances, tuple(RelationTriplet(*r) for r in relations), image_id)


def random_partition_graph(rng, height, width, n_segments, n_classes, image_id="img"):
    """Disjoint random segments: each pixel gets a segment id or background."""
    canvas = Canvas(height, width)
    labels = rng.integers(-1, n_segments, size=(height, width))
    segments = []
    for s in range(n_segments):
        bits = labels == s
        if bits.any():
            segments.append((int(rng.integers(0, n_classes)), rle_encode(bits)))
    return make_graph(canvas, segments, (), image_id)


def dense_iou(a_bits, b_bits):
    inter = int(np.logical_and(a_bits, b_bits).sum())
    union = int(np.logical_or(a_bits, b_bits).sum())
    return 0.0 if union == 0 else inter / union


def brute_argmax_merge(score_maps, labels, priorities, void=-1):
    h, w = score_maps[0].shape
    out = np.full((h, w), void, dtype=np.int64)
    for y in range(h):
        for x in range(w):
            best = None
            for i, scores in enumerate(score_maps):
                v = scores[y, x]
                if v <= 0:
                    continue
                key = (v, priorities[i], -i)
                if best is None or key > best[0]:
                    best = (key, labels[i])
            if best is not None:
                out[y, x] = best[1]
    return out


def brute_recall(gt_graphs, predictions, mode, k_values, threshold=0.5):
    """Dense evaluator: decodes every mask and checks every (pred, gt) pair.

    Returns ``(recall, mean_recall, hits)``; recalls are exact Fractions keyed
    by K and ``hits[k][predicate]`` counts recalled gt triplets.
    """
    from fractions import Fraction

    from psgkit.masks import rle_decode

    hits = {k: {} for k in k_values}
    counts = {}
    for graph in gt_graphs:
        preds = predictions[graph.image_id]
        dense_gt = [rle_decode(inst.mask) for inst in graph.instances]
        for rel in graph.relations:
            counts[rel.predicate] = counts.get(rel.predicate, 0) + 1
        for k in k_values:
            used = set()
            for pred in preds[:k]:
                for g, rel in enumerate(graph.relations):
                    if g in used:
                        continue
                    ok = (
                        pred.predicate == rel.predicate
                        and pred.subject.label == graph.instances[rel.subject].class_id
                        and pred.object.label == graph.instances[rel.object].class_id
                    )
                    if ok and mode == "sgdet":
                        ok = (
                            dense_iou(rle_decode(pred.subject.grounding), dense_gt[rel.subject]) > threshold
                            and dense_iou(rle_decode(pred.object.grounding), dense_gt[rel.object]) > threshold
                        )
                    elif ok:
                        ok = pred.subject.grounding == rel.subject and pred.object.grounding == rel.object
                    if ok:
                        used.add(g)
                        break
            for g in used:
                p = graph.relations[g].predicate
                hits[k][p] = hits[k].get(p, 0) + 1
    total = sum(counts.values())
    recall = {k: (Fraction(sum(hits[k].values()), total) if total else Fraction(0)) for k in k_values}
    mean = {
        k: (sum(Fraction(hits[k].get(p, 0), c) for p, c in counts.items()) / len(counts) if counts else Fraction(0))
        for k in k_values
    }
    full_hits = {k: {p: hits[k].get(p, 0) for p in sorted(counts)} for k in k_values}
    return recall, mean, full_hits


def assert_report_matches(report, oracle, tol=1e-12):
    recall, mean, hits = oracle
    assert report.hits == hits
    for k in recall:
        assert abs(report.recall[k] - float(recall[k])) <= tol
        assert abs(report.mean_recall[k] - float(mean[k])) <= tol


def brute_pq(gt_graphs, pred_graphs):
    """Dense PQ: per-class TP/FP/FN with IoU > 0.5, averaged over seen classes."""
    from psgkit.masks import rle_decode

    stats = {}
    preds = {g.image_id: g for g in pred_graphs}
    for gt in gt_graphs:
        pred = preds[gt.image_id]
        gd = [rle_decode(i.mask) for i in gt.instances]
        pd = [rle_decode(i.mask) for i in pred.instances]
        matched_g, matched_p = set(), set()
        for i, gi in enumerate(gt.instances):
            for j, pj in enumerate(pred.instances):
                if gi.class_id == pj.class_id:
                    iou = dense_iou(gd[i], pd[j])
                    if iou > 0.5:
                        s = stats.setdefault(gi.class_id, [0, 0, 0, 0.0])
                        s[0] += 1
                        s[3] += iou
                        matched_g.add(i)
                        matched_p.add(j)
        for i, gi in enumerate(gt.instances):
            if i not in matched_g:
                stats.setdefault(gi.class_id, [0, 0, 0, 0.0])[2] += 1
        for j, pj in enumerate(pred.instances):
            if j not in matched_p:
                stats.setdefault(pj.class_id, [0, 0, 0, 0.0])[1] += 1
    per_class = {}
    for c, (tp, fp, fn, iou) in stats.items():
        denom = tp + fp / 2 + fn / 2
        per_class[c] = (iou / denom, iou / tp if tp else 0.0, tp / denom)
    n = len(per_class)
    return tuple(sum(v[i] for v in per_class.values()) / n for i in range(3)), per_class
