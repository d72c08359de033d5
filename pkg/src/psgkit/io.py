"""Canonical file formats.

Datasets, prediction sets and box graphs are JSON Lines: a header object on
the first line (format tag, version, declared ``image_count``), then one
image per line. Writers emit sorted keys, compact separators, shortest
round-trip floats and a trailing newline, so equal inputs give equal bytes.

Masks are stored as explicit run lists over the row-major flattened grid,
zero-run first (the leading zero-run may be 0)::

    {"format": "psg-dataset", "version": 1, "image_count": 1, "vocabulary": {...}}
    {"image_id": "a", "height": 2, "width": 2,
     "segments": [{"class_id": 0, "rle": [1, 2, 1]}],
     "relations": [[0, 1, 3]]}

Relations are ``[subject_index, object_index, predicate_id]``. Prediction
groundings are ``{"label": L, "rle": [...]}`` in sgdet mode and
``{"label": L, "gt_index": i}`` in predcls mode.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .errors import ParseError, PSGError
from .evaluation import MODES, Entity, EvalReport, PQReport, ScoredTriplet
from .fusion import BoxObject, EmbeddingTable
from .masks import Canvas, SegmentMask
from .model import ClassVocabulary, ObjectInstance, PanopticSceneGraph, RelationTriplet, StatsReport

__all__ = [
    "Dataset",
    "PredictionSet",
    "BoxGraph",
    "parse_dataset",
    "write_dataset",
    "parse_predictions",
    "write_predictions",
    "parse_box_graphs",
    "write_box_graphs",
    "load_embeddings",
    "load_matrix",
    "write_matrix",
    "report_to_dict",
    "pq_to_dict",
    "dumps_canonical",
]

FORMAT_VERSION = 1


@dataclass
class Dataset:
    vocab: ClassVocabulary
    images: List[PanopticSceneGraph]
    meta: Dict[str, Any] = field(default_factory=dict)


@dataclass
class PredictionSet:
    mode: str
    predictions: Dict[str, List[ScoredTriplet]]


@dataclass
class BoxGraph:
    image_id: str
    objects: List[BoxObject]
    relations: List[Tuple[int, int, str]]


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _write_lines(path, header: dict, lines: Sequence[dict]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(header) + "\n")
        for line in lines:
            fh.write(dumps_canonical(line) + "\n")


# -- parsing helpers --------------------------------------------------------


def _get(obj, key, path, line):
    if not isinstance(obj, dict):
        raise ParseError(path, "expected an object", line)
    if key not in obj:
        raise ParseError(f"{path}.{key}", "missing", line)
    return obj[key]


def _int(value, path, line, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(path, f"expected an integer, got {value!r}", line)
    if minimum is not None and value < minimum:
        raise ParseError(path, f"must be >= {minimum}, got {value}", line)
    return value


def _str(value, path, line) -> str:
    if not isinstance(value, str):
        raise ParseError(path, f"expected a string, got {value!r}", line)
    return value


def _list(value, path, line) -> list:
    if not isinstance(value, list):
        raise ParseError(path, "expected an array", line)
    return value


def _number(value, path, line) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(path, f"expected a number, got {value!r}", line)
    return float(value)


def _rle(value, canvas: Canvas, path, line) -> SegmentMask:
    runs = _list(value, path, line)
    for k, r in enumerate(runs):
        _int(r, f"{path}[{k}]", line, minimum=0)
    try:
        return SegmentMask(canvas, runs)
    except PSGError as e:
        raise ParseError(path, e.message or e.code, line) from None


def _read_lines(path, fmt: str):
    """Header plus ``(line number, element path, raw text)`` for each image line."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(str(path), f"cannot read file: {e.strerror}") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("header", "empty file", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError("header", f"invalid JSON ({e.msg})", 1) from None
    got = _get(header, "format", "header", 1)
    if got != fmt:
        raise ParseError("header.format", f"expected {fmt!r}, got {got!r}", 1)
    version = _int(_get(header, "version", "header", 1), "header.version", 1)
    if version != FORMAT_VERSION:
        raise ParseError("header.version", f"unsupported version {version}", 1)
    declared = _int(_get(header, "image_count", "header", 1), "header.image_count", 1, minimum=0)
    body = [(n + 2, f"images[{n}]", raw) for n, raw in enumerate(lines[1:])]
    if len(body) < declared:
        raise ParseError(
            f"images[{len(body)}]",
            f"file truncated: header declares {declared} images, found {len(body)}",
            len(body) + 2,
        )
    if len(body) > declared:
        raise ParseError(f"images[{declared}]", f"header declares only {declared} images", declared + 2)
    return header, body


def _load_line(raw, path, line):
    if not raw.strip():
        raise ParseError(path, "blank line", line)
    try:
        return json.loads(raw)
    except json.JSONDecodeError as e:
        raise ParseError(path, f"invalid JSON ({e.msg} at column {e.colno})", line) from None


def _parse_all(body, fn, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            items = list(pool.map(lambda b: fn(*b), body))
    else:
        items = [fn(*b) for b in body]
    seen = {}
    for (line, path, _), item in zip(body, items):
        image_id = item.image_id if hasattr(item, "image_id") else item[0]
        if image_id in seen:
            raise ParseError(f"{path}.image_id", f"duplicate image_id {image_id!r}", line)
        seen[image_id] = line
    return items


def _canvas(obj, path, line) -> Canvas:
    h = _int(_get(obj, "height", path, line), f"{path}.height", line, minimum=1)
    w = _int(_get(obj, "width", path, line), f"{path}.width", line, minimum=1)
    return Canvas(h, w)


# -- datasets ---------------------------------------------------------------


def _parse_vocab(obj, line) -> ClassVocabulary:
    path = "header.vocabulary"
    objects = _list(_get(obj, "objects", path, line), f"{path}.objects", line)
    classes = []
    for k, o in enumerate(objects):
        p = f"{path}.objects[{k}]"
        name = _str(_get(o, "name", p, line), f"{p}.name", line)
        thing = _get(o, "isthing", p, line)
        if not isinstance(thing, bool):
            raise ParseError(f"{p}.isthing", "expected true or false", line)
        classes.append((name, thing))
    preds = _list(_get(obj, "predicates", path, line), f"{path}.predicates", line)
    names = [_str(p, f"{path}.predicates[{k}]", line) for k, p in enumerate(preds)]
    try:
        return ClassVocabulary(tuple(classes), tuple(names))
    except PSGError as e:
        raise ParseError(path, e.message or e.code, line) from None


def _parse_image(line, path, raw) -> PanopticSceneGraph:
    obj = _load_line(raw, path, line)
    image_id = _str(_get(obj, "image_id", path, line), f"{path}.image_id", line)
    canvas = _canvas(obj, path, line)
    instances = []
    for k, seg in enumerate(_list(_get(obj, "segments", path, line), f"{path}.segments", line)):
        p = f"{path}.segments[{k}]"
        class_id = _int(_get(seg, "class_id", p, line), f"{p}.class_id", line)
        instances.append(ObjectInstance(class_id, _rle(_get(seg, "rle", p, line), canvas, f"{p}.rle", line)))
    relations = []
    for k, rel in enumerate(_list(_get(obj, "relations", path, line), f"{path}.relations", line)):
        p = f"{path}.relations[{k}]"
        rel = _list(rel, p, line)
        if len(rel) != 3:
            raise ParseError(p, "expected [subject, object, predicate]", line)
        relations.append(RelationTriplet(*(_int(v, f"{p}[{i}]", line) for i, v in enumerate(rel))))
    return PanopticSceneGraph(canvas, tuple(instances), tuple(relations), image_id)


def parse_dataset(path, workers: int = 1) -> Dataset:
    """Read a dataset file. Parsing does not validate graph invariants."""
    header, body = _read_lines(path, "psg-dataset")
    vocab = _parse_vocab(_get(header, "vocabulary", "header", 1), 1)
    meta = header.get("meta", {})
    if not isinstance(meta, dict):
        raise ParseError("header.meta", "expected an object", 1)
    images = _parse_all(body, _parse_image, workers)
    return Dataset(vocab, images, meta)


def _image_to_dict(g: PanopticSceneGraph) -> dict:
    return {
        "image_id": g.image_id,
        "height": g.canvas.height,
        "width": g.canvas.width,
        "segments": [{"class_id": i.class_id, "rle": list(i.mask.runs)} for i in g.instances],
        "relations": [list(r) for r in g.relations],
    }


def write_dataset(dataset: Dataset, path):
    header = {
        "format": "psg-dataset",
        "version": FORMAT_VERSION,
        "image_count": len(dataset.images),
        "vocabulary": dataset.vocab.to_dict(),
    }
    if dataset.meta:
        header["meta"] = dataset.meta
    _write_lines(path, header, [_image_to_dict(g) for g in dataset.images])


# -- predictions ------------------------------------------------------------


def _parse_entity(obj, canvas, mode, path, line) -> Entity:
    label = _int(_get(obj, "label", path, line), f"{path}.label", line)
    if mode == "sgdet":
        if "gt_index" in obj:
            raise ParseError(f"{path}.gt_index", "sgdet groundings must be masks", line)
        return Entity(label, _rle(_get(obj, "rle", path, line), canvas, f"{path}.rle", line))
    if "rle" in obj:
        raise ParseError(f"{path}.rle", "predcls groundings must be gt indices", line)
    return Entity(label, _int(_get(obj, "gt_index", path, line), f"{path}.gt_index", line, minimum=0))


def _parse_prediction_image(mode):
    def parse(line, path, raw):
        obj = _load_line(raw, path, line)
        image_id = _str(_get(obj, "image_id", path, line), f"{path}.image_id", line)
        canvas = _canvas(obj, path, line)
        triplets = []
        prev = None
        for k, t in enumerate(_list(_get(obj, "triplets", path, line), f"{path}.triplets", line)):
            p = f"{path}.triplets[{k}]"
            score = _number(_get(t, "score", p, line), f"{p}.score", line)
            if prev is not None and score > prev:
                raise ParseError(f"{p}.score", "triplets must be ranked by descending score", line)
            prev = score
            triplets.append(
                ScoredTriplet(
                    _parse_entity(_get(t, "subject", p, line), canvas, mode, f"{p}.subject", line),
                    _int(_get(t, "predicate", p, line), f"{p}.predicate", line),
                    _parse_entity(_get(t, "object", p, line), canvas, mode, f"{p}.object", line),
                    score,
                )
            )
        return image_id, triplets

    return parse


def parse_predictions(path, workers: int = 1) -> PredictionSet:
    header, body = _read_lines(path, "psg-predictions")
    mode = _get(header, "mode", "header", 1)
    if mode not in MODES:
        raise ParseError("header.mode", f"expected one of {MODES}, got {mode!r}", 1)
    items = _parse_all(body, _parse_prediction_image(mode), workers)
    return PredictionSet(mode, dict(items))


def _entity_to_dict(e: Entity) -> dict:
    if isinstance(e.grounding, SegmentMask):
        return {"label": e.label, "rle": list(e.grounding.runs)}
    return {"label": e.label, "gt_index": int(e.grounding)}


def write_predictions(preds: PredictionSet, path, canvases: Mapping[str, Canvas]):
    """Write ranked predictions; ``canvases`` gives each image's size."""
    if preds.mode not in MODES:
        raise PSGError("bad-config", f"mode {preds.mode!r}")
    lines = []
    for image_id in sorted(preds.predictions):
        canvas = canvases[image_id]
        lines.append(
            {
                "image_id": image_id,
                "height": canvas.height,
                "width": canvas.width,
                "triplets": [
                    {
                        "subject": _entity_to_dict(t.subject),
                        "predicate": int(t.predicate),
                        "object": _entity_to_dict(t.object),
                        "score": float(t.score),
                    }
                    for t in preds.predictions[image_id]
                ],
            }
        )
    header = {"format": "psg-predictions", "version": FORMAT_VERSION, "mode": preds.mode, "image_count": len(lines)}
    _write_lines(path, header, lines)


# -- box graphs -------------------------------------------------------------


def _parse_box_graph(line, path, raw) -> BoxGraph:
    obj = _load_line(raw, path, line)
    image_id = _str(_get(obj, "image_id", path, line), f"{path}.image_id", line)
    objects = []
    for k, o in enumerate(_list(_get(obj, "objects", path, line), f"{path}.objects", line)):
        p = f"{path}.objects[{k}]"
        name = _str(_get(o, "name", p, line), f"{p}.name", line)
        box = _list(_get(o, "box", p, line), f"{p}.box", line)
        if len(box) != 4:
            raise ParseError(f"{p}.box", "expected [x0, y0, x1, y1]", line)
        box = tuple(_int(v, f"{p}.box[{i}]", line) for i, v in enumerate(box))
        if not (box[0] < box[2] and box[1] < box[3]):
            raise ParseError(f"{p}.box", f"degenerate box {list(box)}", line)
        objects.append(BoxObject(name, box))
    relations = []
    for k, r in enumerate(_list(_get(obj, "relations", path, line), f"{path}.relations", line)):
        p = f"{path}.relations[{k}]"
        r = _list(r, p, line)
        if len(r) != 3:
            raise ParseError(p, "expected [subject, object, predicate name]", line)
        s = _int(r[0], f"{p}[0]", line, minimum=0)
        o = _int(r[1], f"{p}[1]", line, minimum=0)
        if s >= len(objects) or o >= len(objects):
            raise ParseError(p, "object index out of range", line)
        relations.append((s, o, _str(r[2], f"{p}[2]", line)))
    return BoxGraph(image_id, objects, relations)


def parse_box_graphs(path, workers: int = 1) -> List[BoxGraph]:
    _, body = _read_lines(path, "psg-boxgraph")
    return _parse_all(body, _parse_box_graph, workers)


def write_box_graphs(graphs: Sequence[BoxGraph], path):
    header = {"format": "psg-boxgraph", "version": FORMAT_VERSION, "image_count": len(graphs)}
    lines = [
        {
            "image_id": g.image_id,
            "objects": [{"name": o.name, "box": list(o.box)} for o in g.objects],
            "relations": [[s, o, p] for s, o, p in g.relations],
        }
        for g in graphs
    ]
    _write_lines(path, header, lines)


# -- embeddings and matrices -----------------------------------------------


def load_embeddings(path) -> EmbeddingTable:
    """Tab-separated text: a token, then its float components, one row per line."""
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            raw = raw.rstrip("\n")
            if not raw.strip() or raw.startswith("#"):
                continue
            token, *values = raw.split("\t")
            if not values:
                raise ParseError(f"embeddings[{token!r}]", "no vector components", n)
            try:
                vectors[token] = [float(v) for v in values]
            except ValueError:
                raise ParseError(f"embeddings[{token!r}]", "non-numeric component", n) from None
    try:
        return EmbeddingTable(vectors)
    except PSGError as e:
        raise ParseError("embeddings", e.message or e.code) from None


def load_matrix(path) -> np.ndarray:
    """Whitespace-separated rows of floats; ``#`` starts a comment line."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            if not raw.strip() or raw.lstrip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in raw.split()])
            except ValueError:
                raise ParseError(f"rows[{len(rows)}]", "non-numeric entry", n) from None
            if len(rows[-1]) != len(rows[0]):
                raise ParseError(f"rows[{len(rows) - 1}]", "ragged row", n)
    if not rows:
        raise ParseError("rows", "no data")
    return np.array(rows, dtype=np.float64)


def write_matrix(matrix, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in np.atleast_2d(np.asarray(matrix, dtype=np.float64)):
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")


# -- reports ----------------------------------------------------------------


def pq_to_dict(report: PQReport, vocab: Optional[ClassVocabulary] = None) -> dict:
    classes = []
    for c, (pq, sq, rq) in report.per_class.items():
        tp, fp, fn = report.counts[c]
        row = {"class_id": c, "pq": pq, "sq": sq, "rq": rq, "tp": tp, "fp": fp, "fn": fn}
        if vocab is not None and 0 <= c < vocab.num_objects:
            row["name"] = vocab.object_name(c)
        classes.append(row)
    return {"pq": report.pq, "sq": report.sq, "rq": report.rq, "classes": classes}


def report_to_dict(report: EvalReport, vocab: Optional[ClassVocabulary] = None) -> dict:
    rows = [
        {"k": k, "R": report.recall[k], "mR": report.mean_recall[k], "hits": sum(report.hits[k].values())}
        for k in report.k_values
    ]
    per_pred = []
    for p, count in report.gt_counts.items():
        row = {
            "predicate_id": p,
            "gt_count": count,
            "recall": {str(k): report.per_predicate_recall[k][p] for k in report.k_values},
        }
        if vocab is not None and 0 <= p < vocab.num_predicates:
            row["name"] = vocab.predicate_classes[p]
        per_pred.append(row)
    out = {
        "config": {
            "mode": report.mode,
            "k_values": list(report.k_values),
            "iou_threshold": report.iou_threshold,
            "tool": "psgkit",
            "version": __version__,
        },
        "image_count": report.image_count,
        "gt_triplets": sum(report.gt_counts.values()),
        "rows": rows,
        "per_predicate": per_pred,
    }
    if report.pq is not None:
        out["pq"] = pq_to_dict(report.pq, vocab)
    return out


def stats_to_dict(stats: StatsReport) -> dict:
    return stats.to_dict()
