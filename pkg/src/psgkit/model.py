"""Panoptic scene graph data model, vocabularies, validation and corpus stats."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from .errors import PSGError
from .masks import Box, Canvas, SegmentMask, intersection_area, tightest_bbox

__all__ = [
    "ClassVocabulary",
    "ObjectInstance",
    "RelationTriplet",
    "PanopticSceneGraph",
    "Violation",
    "StatsReport",
    "validate_graph",
    "compute_stats",
]


@dataclass(frozen=True)
class ClassVocabulary:
    """Object classes as ``(name, is_thing)`` pairs plus predicate names."""

    object_classes: Tuple[Tuple[str, bool], ...]
    predicate_classes: Tuple[str, ...]

    def __post_init__(self):
        objects = tuple((str(name), bool(thing)) for name, thing in self.object_classes)
        predicates = tuple(str(p) for p in self.predicate_classes)
        object.__setattr__(self, "object_classes", objects)
        object.__setattr__(self, "predicate_classes", predicates)
        names = [name for name, _ in objects]
        if len(set(names)) != len(names):
            raise PSGError("duplicate-name", "object class names must be unique")
        if len(set(predicates)) != len(predicates):
            raise PSGError("duplicate-name", "predicate names must be unique")

    @property
    def num_objects(self) -> int:
        return len(self.object_classes)

    @property
    def num_predicates(self) -> int:
        return len(self.predicate_classes)

    @property
    def num_things(self) -> int:
        return sum(1 for _, thing in self.object_classes if thing)

    def is_thing(self, class_id: int) -> bool:
        return self.object_classes[class_id][1]

    def object_name(self, class_id: int) -> str:
        return self.object_classes[class_id][0]

    def predicate_index(self, name: str) -> int:
        try:
            return self.predicate_classes.index(name)
        except ValueError:
            raise PSGError("unknown-predicate", name) from None

    def to_dict(self) -> dict:
        return {
            "objects": [{"name": n, "isthing": t} for n, t in self.object_classes],
            "predicates": list(self.predicate_classes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClassVocabulary":
        return cls(
            tuple((o["name"], o["isthing"]) for o in data["objects"]),
            tuple(data["predicates"]),
        )

    @classmethod
    def default(cls) -> "ClassVocabulary":
        """The bundled PSG vocabulary: 80 thing + 53 stuff classes, 56 predicates."""
        text = resources.files("psgkit").joinpath("data/psg_vocabulary.json").read_text()
        return cls.from_dict(json.loads(text))

    @classmethod
    def synthetic(cls, num_objects: int, num_things: int, num_predicates: int) -> "ClassVocabulary":
        """Tiny placeholder vocabulary: the first ``num_things`` classes are things."""
        if not 0 <= num_things <= num_objects:
            raise PSGError("bad-vocabulary", "num_things must lie in [0, num_objects]")
        return cls(
            tuple((f"obj{i}", i < num_things) for i in range(num_objects)),
            tuple(f"pred{i}" for i in range(num_predicates)),
        )


@dataclass(frozen=True)
class ObjectInstance:
    class_id: int
    mask: SegmentMask

    @cached_property
    def tight_box(self) -> Box:
        return tightest_bbox(self.mask)


class RelationTriplet(NamedTuple):
    subject: int
    object: int
    predicate: int


@dataclass(frozen=True)
class PanopticSceneGraph:
    canvas: Canvas
    instances: Tuple[ObjectInstance, ...] = ()
    relations: Tuple[RelationTriplet, ...] = ()
    image_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(
            self, "relations", tuple(RelationTriplet(*map(int, r)) for r in self.relations)
        )

    def subject_label(self, rel: RelationTriplet) -> int:
        return self.instances[rel.subject].class_id

    def object_label(self, rel: RelationTriplet) -> int:
        return self.instances[rel.object].class_id


class Violation(NamedTuple):
    code: str
    where: str
    indices: Tuple[int, ...]
    message: str = ""

    def __str__(self):
        idx = ",".join(map(str, self.indices))
        return f"{self.code}\t{self.where}\t{idx}\t{self.message}"


def _overlapping_pairs(instances: Sequence[ObjectInstance]) -> List[Tuple[int, int]]:
    starts, ends, owners = [], [], []
    for i, inst in enumerate(instances):
        s, e = inst.mask.intervals
        starts.append(s)
        ends.append(e)
        owners.append(np.full(len(s), i))
    if not starts:
        return []
    starts = np.concatenate(starts)
    ends = np.concatenate(ends)
    order = np.argsort(starts, kind="stable")
    s_sorted, e_sorted = starts[order], ends[order]
    # fast path: sorted intervals never start before an earlier one ended
    if len(s_sorted) < 2 or np.all(s_sorted[1:] >= np.maximum.accumulate(e_sorted)[:-1]):
        return []
    pairs = []
    for i in range(len(instances)):
        for j in range(i + 1, len(instances)):
            if intersection_area(instances[i].mask, instances[j].mask) > 0:
                pairs.append((i, j))
    return pairs


def validate_graph(graph: PanopticSceneGraph, vocab: ClassVocabulary) -> List[Violation]:
    """List every broken invariant of ``graph``; an empty list means valid."""
    out = []
    n = len(graph.instances)
    comparable = []
    for i, inst in enumerate(graph.instances):
        where = f"instances[{i}]"
        if not 0 <= inst.class_id < vocab.num_objects:
            out.append(Violation("index-out-of-range", where, (i,), f"class_id {inst.class_id}"))
        if inst.mask.canvas != graph.canvas:
            out.append(Violation("canvas-mismatch", where, (i,), f"mask canvas {inst.mask.canvas}"))
            continue
        if inst.mask.is_empty():
            out.append(Violation("empty-mask", where, (i,)))
        comparable.append(i)

    for a, b in _overlapping_pairs([graph.instances[i] for i in comparable]):
        i, j = comparable[a], comparable[b]
        out.append(Violation("masks-overlap", f"instances[{i}],instances[{j}]", (i, j)))

    seen = {}
    for r, rel in enumerate(graph.relations):
        where = f"relations[{r}]"
        bad = False
        for name, value, limit in (
            ("subject", rel.subject, n),
            ("object", rel.object, n),
            ("predicate", rel.predicate, vocab.num_predicates),
        ):
            if not 0 <= value < limit:
                out.append(Violation("index-out-of-range", where, (r,), f"{name} {value}"))
                bad = True
        if rel.subject == rel.object:
            out.append(Violation("self-relation", where, (r,)))
            bad = True
        if bad:
            continue
        if rel in seen:
            out.append(
                Violation("duplicate-relation", f"relations[{seen[rel]}],{where}", (seen[rel], r))
            )
        else:
            seen[rel] = r
    return out


@dataclass(frozen=True)
class StatsReport:
    image_count: int
    instance_count: int
    relation_count: int
    mean_instances: float
    mean_relations: float
    thing_thing: float
    stuff_stuff: float
    thing_stuff: float
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "image_count": self.image_count,
            "instance_count": self.instance_count,
            "relation_count": self.relation_count,
            "mean_instances_per_image": self.mean_instances,
            "mean_relations_per_image": self.mean_relations,
            "fraction_thing_thing": self.thing_thing,
            "fraction_stuff_stuff": self.stuff_stuff,
            "fraction_thing_stuff": self.thing_stuff,
        }


def compute_stats(dataset: Sequence[PanopticSceneGraph], vocab: ClassVocabulary) -> StatsReport:
    """Per-image means and the thing/stuff mix of relation endpoints.

    A relation between a thing and a stuff class counts as thing-stuff in
    either direction.
    """
    if len(dataset) == 0:
        raise PSGError("empty-corpus")
    n_inst = n_rel = 0
    kinds = {"thing-thing": 0, "stuff-stuff": 0, "thing-stuff": 0}
    for graph in dataset:
        n_inst += len(graph.instances)
        n_rel += len(graph.relations)
        for rel in graph.relations:
            s = vocab.is_thing(graph.subject_label(rel))
            o = vocab.is_thing(graph.object_label(rel))
            if s and o:
                kinds["thing-thing"] += 1
            elif not s and not o:
                kinds["stuff-stuff"] += 1
            else:
                kinds["thing-stuff"] += 1
    images = len(dataset)

    def frac(k):
        return kinds[k] / n_rel if n_rel else 0.0

    return StatsReport(
        image_count=images,
        instance_count=n_inst,
        relation_count=n_rel,
        mean_instances=n_inst / images,
        mean_relations=n_rel / images,
        thing_thing=frac("thing-thing"),
        stuff_stuff=frac("stuff-stuff"),
        thing_stuff=frac("thing-stuff"),
        counts=dict(kinds),
    )
