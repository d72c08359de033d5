"""Deterministic synthetic scenes with controlled prediction noise.

Each image's canvas is cut into axis-aligned rectangles by recursive
splitting, so masks are disjoint and cover the canvas. Relations join
distinct ordered instance pairs. Predictions copy the ground-truth
triplets, then independently drop each one (``drop_prob``), swap its
predicate for a different one (``relabel_prob``) and shrink both boxes by
``erosion`` pixels per side.

Image ``i`` draws from its own PCG64 stream seeded with
``splitmix64((seed + i * 0x9E3779B97F4A7C15) mod 2**64)``, so images can be
generated in any order or in parallel with identical results.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Tuple

import numpy as np

from .errors import PSGError
from .evaluation import MODES, Entity, ScoredTriplet
from .masks import Box, Canvas, box_mask
from .model import ClassVocabulary, ObjectInstance, PanopticSceneGraph, RelationTriplet

__all__ = ["FixtureSpec", "Fixture", "generate_fixture", "splitmix64", "image_seed", "split_canvas"]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def image_seed(seed: int, index: int) -> int:
    return splitmix64((seed + index * _GOLDEN) & _MASK64)


@dataclass(frozen=True)
class FixtureSpec:
    seed: int = 0
    image_count: int = 10
    height: int = 32
    width: int = 32
    instances_per_image: int = 6
    relations_per_image: int = 4
    num_object_classes: int = 8
    num_thing_classes: int = 5
    num_predicates: int = 6
    drop_prob: float = 0.0
    relabel_prob: float = 0.0
    erosion: int = 0
    mode: str = "sgdet"

    def __post_init__(self):
        for name in ("drop_prob", "relabel_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise PSGError("bad-fixture", f"{name} must lie in [0, 1], got {p}")
        if self.image_count < 0 or self.erosion < 0 or self.relations_per_image < 0:
            raise PSGError("bad-fixture", "counts must be non-negative")
        if self.instances_per_image < 1:
            raise PSGError("bad-fixture", "need at least one instance per image")
        if self.relations_per_image and self.instances_per_image < 2:
            raise PSGError("bad-fixture", "relations need at least two instances per image")
        n = self.instances_per_image
        if self.relations_per_image > n * (n - 1):
            raise PSGError("infeasible-fixture", f"{self.relations_per_image} relations over {n} instances")
        if self.num_object_classes < 1 or self.num_predicates < 1:
            raise PSGError("bad-fixture", "vocabularies must be non-empty")
        if self.relabel_prob > 0 and self.num_predicates < 2:
            raise PSGError("bad-fixture", "relabelling needs at least two predicates")
        if self.mode not in MODES:
            raise PSGError("bad-fixture", f"mode must be one of {MODES}")
        if n > self.height * self.width:
            raise PSGError("infeasible-fixture", f"{n} instances do not fit a {self.height}x{self.width} canvas")
        Canvas(self.height, self.width)


class Fixture(NamedTuple):
    vocab: ClassVocabulary
    gt: List[PanopticSceneGraph]
    predictions: Dict[str, List[ScoredTriplet]]


def split_canvas(rng: np.random.Generator, height: int, width: int, count: int) -> List[Box]:
    """Cut the canvas into ``count`` disjoint rectangles covering it.

    Repeatedly splits the largest splittable rectangle (earliest on ties)
    across its longer side at a uniform interior position.
    """
    rects: List[Box] = [(0, 0, width, height)]
    while len(rects) < count:
        best, best_area = -1, 0
        for k, (x0, y0, x1, y1) in enumerate(rects):
            area = (x1 - x0) * (y1 - y0)
            if area > best_area and area > 1:
                best, best_area = k, area
        if best < 0:
            raise PSGError("infeasible-fixture", f"cannot cut {count} rectangles")
        x0, y0, x1, y1 = rects[best]
        w, h = x1 - x0, y1 - y0
        if w >= h:
            cut = x0 + int(rng.integers(1, w))
            parts = [(x0, y0, cut, y1), (cut, y0, x1, y1)]
        else:
            cut = y0 + int(rng.integers(1, h))
            parts = [(x0, y0, x1, cut), (x0, cut, x1, y1)]
        rects[best:best + 1] = parts
    return rects


def _erode(box: Box, e: int) -> Box:
    x0, y0, x1, y1 = box
    return (x0 + e, y0 + e, x1 - e, y1 - e)


def _make_image(spec: FixtureSpec, index: int) -> Tuple[PanopticSceneGraph, List[ScoredTriplet]]:
    rng = np.random.Generator(np.random.PCG64(image_seed(spec.seed, index)))
    canvas = Canvas(spec.height, spec.width)
    n = spec.instances_per_image
    rects = split_canvas(rng, spec.height, spec.width, n)
    classes = rng.integers(0, spec.num_object_classes, size=n)
    instances = tuple(ObjectInstance(int(c), box_mask(canvas, r)) for c, r in zip(classes, rects))

    k = spec.relations_per_image
    relations = []
    if k:
        flat = rng.choice(n * (n - 1), size=k, replace=False)
        predicates = rng.integers(0, spec.num_predicates, size=k)
        for idx, p in zip(flat, predicates):
            s, o = divmod(int(idx), n - 1)
            o += o >= s
            relations.append(RelationTriplet(s, o, int(p)))
    image_id = f"img{index:06d}"
    graph = PanopticSceneGraph(canvas, instances, tuple(relations), image_id)

    # every noise draw happens regardless of outcome so streams stay aligned
    drop = rng.random(k) < spec.drop_prob
    relabel = rng.random(k) < spec.relabel_prob
    shift = rng.integers(1, max(spec.num_predicates, 2), size=k)
    scores = rng.random(k)
    eroded = [box_mask(canvas, _erode(r, spec.erosion)) for r in rects]

    preds = []
    for r, rel in enumerate(relations):
        if drop[r]:
            continue
        predicate = rel.predicate
        if relabel[r]:
            predicate = (predicate + int(shift[r])) % spec.num_predicates
        if spec.mode == "sgdet":
            s_ground, o_ground = eroded[rel.subject], eroded[rel.object]
        else:
            s_ground, o_ground = rel.subject, rel.object
        preds.append(
            ScoredTriplet(
                Entity(int(classes[rel.subject]), s_ground),
                predicate,
                Entity(int(classes[rel.object]), o_ground),
                float(scores[r]),
            )
        )
    preds.sort(key=lambda t: -t.score)
    return graph, preds


def generate_fixture(spec: FixtureSpec, workers: int = 1) -> Fixture:
    """Ground-truth corpus plus noisy ranked predictions for ``spec``."""
    vocab = ClassVocabulary.synthetic(spec.num_object_classes, spec.num_thing_classes, spec.num_predicates)
    indices = range(spec.image_count)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            images = list(pool.map(lambda i: _make_image(spec, i), indices))
    else:
        images = [_make_image(spec, i) for i in indices]
    gt = [g for g, _ in images]
    predictions = {g.image_id: p for g, p in images}
    return Fixture(vocab, gt, predictions)
