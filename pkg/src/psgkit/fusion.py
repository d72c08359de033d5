"""Fuse box-grounded scene graphs onto panoptic segmentations.

Segments and box objects are paired greedily by box IoU, accepting a pair
only when the category names are close in word-embedding space; relations
whose both endpoints found a segment are then rewritten onto segments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import PSGError
from .masks import Box, bbox_iou
from .model import ClassVocabulary, PanopticSceneGraph, RelationTriplet

__all__ = [
    "EmbeddingTable",
    "BoxObject",
    "FusionConfig",
    "InstanceMatch",
    "DroppedRelation",
    "category_similarity",
    "greedy_match_table",
    "greedy_instance_match",
    "segment_boxes",
    "transfer_relations",
    "fuse_graph",
]

_TOKEN_SPLIT = re.compile(r"[\s_\-]+")


class EmbeddingTable:
    """Token -> vector lookup with bag-of-words averaging for multi-word names."""

    def __init__(self, vectors: Mapping[str, Sequence[float]]):
        self._vectors: Dict[str, np.ndarray] = {}
        dim = None
        for token, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.ndim != 1 or (dim is not None and arr.size != dim):
                raise PSGError("dim-mismatch", f"embedding for {token!r}")
            if not np.all(np.isfinite(arr)):
                raise PSGError("non-finite", f"embedding for {token!r}")
            if not np.any(arr):
                raise PSGError("zero-vector", f"embedding for {token!r}")
            dim = arr.size
            self._vectors[token] = arr
        self.dim = dim or 0

    def __contains__(self, token):
        return token in self._vectors

    def __len__(self):
        return len(self._vectors)

    def tokens(self, name: str) -> List[str]:
        return [t for t in _TOKEN_SPLIT.split(name.strip()) if t]

    def embed(self, name: str) -> np.ndarray:
        """Vector for ``name``; the whole name wins over its tokens if present."""
        if name in self._vectors:
            return self._vectors[name]
        tokens = self.tokens(name)
        missing = [t for t in tokens if t not in self._vectors]
        if not tokens or missing:
            raise PSGError("unknown-token", f"{name!r}: {missing or 'no tokens'}")
        vec = np.mean([self._vectors[t] for t in tokens], axis=0)
        if not np.any(vec):
            raise PSGError("zero-vector", f"embedding of {name!r} averages to zero")
        return vec


class BoxObject(NamedTuple):
    name: str
    box: Box


@dataclass(frozen=True)
class FusionConfig:
    similarity_threshold: float = 0.5

    def __post_init__(self):
        t = float(self.similarity_threshold)
        if not np.isfinite(t):
            raise PSGError("bad-config", "similarity threshold must be finite")


class InstanceMatch(NamedTuple):
    seg_index: int
    box_index: int
    iou: float
    similarity: float


class DroppedRelation(NamedTuple):
    index: int
    reason: str


def category_similarity(a: str, b: str, table: EmbeddingTable, cfg: Optional[FusionConfig] = None) -> float:
    """Cosine similarity of the two names' embeddings."""
    u, v = table.embed(a), table.embed(b)
    if np.array_equal(u, v):
        # exact, so identical names pass any threshold up to 1
        return 1.0
    return float(np.clip(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)), -1.0, 1.0))


def greedy_match_table(iou: np.ndarray, similarity: np.ndarray, threshold: float) -> List[InstanceMatch]:
    """Greedy matching over precomputed IoU and similarity tables.

    Pairs are visited by decreasing IoU (ties: lower seg index, then lower
    box index). A pair whose endpoints are both still free is matched when
    its similarity reaches ``threshold``; otherwise only that pair is
    discarded. Pairs with IoU 0 are never considered.
    """
    iou = np.asarray(iou, dtype=np.float64)
    similarity = np.asarray(similarity, dtype=np.float64)
    if iou.shape != similarity.shape or iou.ndim != 2:
        raise PSGError("dim-mismatch", f"iou {iou.shape} vs similarity {similarity.shape}")
    seg_idx, box_idx = np.nonzero(iou > 0)
    order = np.lexsort((box_idx, seg_idx, -iou[seg_idx, box_idx]))
    used_seg, used_box = set(), set()
    out = []
    for k in order:
        i, j = int(seg_idx[k]), int(box_idx[k])
        if i in used_seg or j in used_box:
            continue
        if similarity[i, j] >= threshold:
            used_seg.add(i)
            used_box.add(j)
            out.append(InstanceMatch(i, j, float(iou[i, j]), float(similarity[i, j])))
    return out


def greedy_instance_match(
    seg_objects: Sequence[BoxObject],
    box_objects: Sequence[BoxObject],
    table: EmbeddingTable,
    cfg: FusionConfig = FusionConfig(),
) -> List[InstanceMatch]:
    """Match segmentation-side objects (given by their tight boxes) to box objects."""
    iou = np.zeros((len(seg_objects), len(box_objects)))
    sim = np.zeros_like(iou)
    cache: Dict[Tuple[str, str], float] = {}
    for i, s in enumerate(seg_objects):
        for j, b in enumerate(box_objects):
            iou[i, j] = bbox_iou(s.box, b.box)
            if iou[i, j] > 0:
                key = (s.name, b.name)
                if key not in cache:
                    cache[key] = category_similarity(s.name, b.name, table, cfg)
                sim[i, j] = cache[key]
    return greedy_match_table(iou, sim, cfg.similarity_threshold)


def segment_boxes(graph: PanopticSceneGraph, vocab: ClassVocabulary) -> List[BoxObject]:
    """Segments as named boxes (tightest box of each mask)."""
    return [BoxObject(vocab.object_name(inst.class_id), inst.tight_box) for inst in graph.instances]


def transfer_relations(
    box_relations: Sequence[Tuple[int, str, int]],
    matches: Sequence[InstanceMatch],
) -> Tuple[List[Tuple[int, str, int]], List[DroppedRelation]]:
    """Rewrite ``(subject box, predicate, object box)`` relations onto segments.

    Returns the transferred ``(subject seg, predicate, object seg)`` triplets
    in source order and the dropped relations with a reason:
    ``unmatched-subject``, ``unmatched-object``, ``unmatched-both``,
    ``self-relation`` or ``duplicate``.
    """
    seg_of = {}
    for m in matches:
        if m.box_index in seg_of or m.seg_index in seg_of.values():
            raise PSGError("invalid-matching", "matches must be one-to-one")
        seg_of[m.box_index] = m.seg_index
    kept, dropped = [], []
    seen = set()
    for r, (s_box, predicate, o_box) in enumerate(box_relations):
        s_ok, o_ok = s_box in seg_of, o_box in seg_of
        if not (s_ok and o_ok):
            reason = "unmatched-both" if not (s_ok or o_ok) else (
                "unmatched-subject" if not s_ok else "unmatched-object")
            dropped.append(DroppedRelation(r, reason))
            continue
        triplet = (seg_of[s_box], predicate, seg_of[o_box])
        if triplet[0] == triplet[2]:
            dropped.append(DroppedRelation(r, "self-relation"))
        elif triplet in seen:
            dropped.append(DroppedRelation(r, "duplicate"))
        else:
            seen.add(triplet)
            kept.append(triplet)
    return kept, dropped


def fuse_graph(
    seg_graph: PanopticSceneGraph,
    vocab: ClassVocabulary,
    box_objects: Sequence[BoxObject],
    box_relations: Sequence[Tuple[int, str, int]],
    table: EmbeddingTable,
    cfg: FusionConfig = FusionConfig(),
    predicate_map: Optional[Mapping[str, str]] = None,
):
    """Attach transferred relations to ``seg_graph``.

    Raw predicate names are mapped through ``predicate_map`` (identity when
    absent) onto the vocabulary; relations whose predicate is not in the
    vocabulary are dropped as ``unmapped-predicate``. Relations already in
    ``seg_graph`` are kept first.

    Returns ``(fused graph, matches, dropped relations)``.
    """
    matches = greedy_instance_match(segment_boxes(seg_graph, vocab), box_objects, table, cfg)
    moved, dropped = transfer_relations(box_relations, matches)
    # recover source positions of the transferred relations for diagnostics
    dropped_idx = {d.index for d in dropped}
    sources = [r for r in range(len(box_relations)) if r not in dropped_idx]
    relations = list(seg_graph.relations)
    existing = set(relations)
    for src, (s, predicate, o) in zip(sources, moved):
        name = predicate_map.get(predicate, predicate) if predicate_map else predicate
        if name not in vocab.predicate_classes:
            dropped.append(DroppedRelation(src, "unmapped-predicate"))
            continue
        rel = RelationTriplet(s, o, vocab.predicate_index(name))
        if rel in existing:
            dropped.append(DroppedRelation(src, "duplicate"))
            continue
        existing.add(rel)
        relations.append(rel)
    dropped.sort()
    fused = PanopticSceneGraph(seg_graph.canvas, seg_graph.instances, tuple(relations), seg_graph.image_id)
    return fused, matches, dropped
