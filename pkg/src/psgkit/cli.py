"""Command-line interface.

Exit status: 0 on success, 1 when validation or evaluation finds a problem
with the data, 2 on usage or parse errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from .errors import ParseError, PSGError
from .evaluation import EvalConfig, corpus_panoptic_quality, evaluate
from .fixtures import FixtureSpec, generate_fixture
from .fusion import FusionConfig, fuse_graph
from .io import (
    Dataset,
    PredictionSet,
    load_embeddings,
    load_matrix,
    parse_box_graphs,
    parse_dataset,
    parse_predictions,
    pq_to_dict,
    report_to_dict,
    write_dataset,
    write_predictions,
)
from .model import compute_stats, validate_graph
from .query import RoleProjection, match_queries

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


def _k_list(text: str):
    try:
        ks = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not ks:
        raise argparse.ArgumentTypeError("empty K list")
    return ks


def _write_json(obj, path):
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _validate_all(dataset: Dataset, threads: int):
    def one(graph):
        return graph.image_id, validate_graph(graph, dataset.vocab)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, dataset.images))
    return [one(g) for g in dataset.images]


def cmd_validate(args) -> int:
    dataset = parse_dataset(args.dataset, workers=args.threads)
    total = 0
    for image_id, violations in _validate_all(dataset, args.threads):
        for v in violations:
            print(f"{image_id}\t{v}")
        total += len(violations)
    print(f"{len(dataset.images)} images, {total} violations")
    return EXIT_INVALID if total else EXIT_OK


def cmd_stats(args) -> int:
    dataset = parse_dataset(args.dataset, workers=args.threads)
    stats = compute_stats(dataset.images, dataset.vocab)
    if args.json:
        _write_json(stats.to_dict(), "-")
    else:
        print(f"images                {stats.image_count}")
        print(f"instances per image   {stats.mean_instances:.4f}")
        print(f"relations per image   {stats.mean_relations:.4f}")
        print(f"thing-thing           {stats.thing_thing:.4f}")
        print(f"stuff-stuff           {stats.stuff_stuff:.4f}")
        print(f"thing-stuff           {stats.thing_stuff:.4f}")
    return EXIT_OK


def _gt_violations(dataset: Dataset, threads: int) -> int:
    bad = 0
    for image_id, violations in _validate_all(dataset, threads):
        for v in violations:
            print(f"invalid ground truth: {image_id}\t{v}", file=sys.stderr)
        bad += len(violations)
    return bad


def cmd_eval(args) -> int:
    gt = parse_dataset(args.gt, workers=args.threads)
    preds = parse_predictions(args.pred, workers=args.threads)
    mode = args.mode or preds.mode
    if mode != preds.mode:
        print(f"error: mode-mismatch: --mode {mode} but prediction file is {preds.mode}", file=sys.stderr)
        return EXIT_INVALID
    if _gt_violations(gt, args.threads):
        return EXIT_INVALID
    cfg = EvalConfig(mode=mode, k_values=args.k, iou_threshold=args.iou_thr)
    report = evaluate(gt.images, preds.predictions, cfg, workers=args.threads)
    if args.pq_pred:
        seg = parse_dataset(args.pq_pred, workers=args.threads)
        report.pq = corpus_panoptic_quality(gt.images, seg.images, workers=args.threads)
    doc = report_to_dict(report, gt.vocab)
    if args.out:
        _write_json(doc, args.out)
    print(f"mode {cfg.mode}  iou>{cfg.iou_threshold}  images {report.image_count}  gt triplets {doc['gt_triplets']}")
    for row in doc["rows"]:
        print(f"R@{row['k']}\t{row['R']:.6f}\tmR@{row['k']}\t{row['mR']:.6f}")
    if report.pq is not None:
        print(f"PQ\t{report.pq.pq:.6f}\tSQ\t{report.pq.sq:.6f}\tRQ\t{report.pq.rq:.6f}")
    return EXIT_OK


def cmd_pq(args) -> int:
    gt = parse_dataset(args.gt, workers=args.threads)
    pred = parse_dataset(args.pred, workers=args.threads)
    report = corpus_panoptic_quality(gt.images, pred.images, workers=args.threads)
    if args.out:
        _write_json(pq_to_dict(report, gt.vocab), args.out)
    print(f"PQ\t{report.pq:.6f}\tSQ\t{report.sq:.6f}\tRQ\t{report.rq:.6f}\tclasses\t{len(report.per_class)}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    seg = parse_dataset(args.seg, workers=args.threads)
    graphs = {g.image_id: g for g in parse_box_graphs(args.graph, workers=args.threads)}
    table = load_embeddings(args.embeddings)
    predicate_map = None
    if args.predicate_map:
        with open(args.predicate_map, encoding="utf-8") as fh:
            predicate_map = json.load(fh)
        if not isinstance(predicate_map, dict) or not all(isinstance(v, str) for v in predicate_map.values()):
            raise ParseError("predicate_map", "expected an object mapping names to names")
    seg_ids = {g.image_id for g in seg.images}
    unknown = sorted(set(graphs) - seg_ids)
    if unknown:
        print(f"error: unknown-image: box graphs for {', '.join(unknown[:5])}", file=sys.stderr)
        return EXIT_INVALID
    cfg = FusionConfig(similarity_threshold=args.sim_thr)
    fused, n_match, n_moved, reasons = [], 0, 0, {}
    for graph in seg.images:
        box = graphs.get(graph.image_id)
        if box is None:
            fused.append(graph)
            continue
        before = len(graph.relations)
        rels = [(s, p, o) for s, o, p in box.relations]
        out, matches, dropped = fuse_graph(graph, seg.vocab, box.objects, rels, table, cfg, predicate_map)
        fused.append(out)
        n_match += len(matches)
        n_moved += len(out.relations) - before
        for d in dropped:
            reasons[d.reason] = reasons.get(d.reason, 0) + 1
    meta = dict(seg.meta)
    meta["fusion"] = {"similarity_threshold": cfg.similarity_threshold, "tool": "psgkit", "version": __version__}
    write_dataset(Dataset(seg.vocab, fused, meta), args.out)
    print(f"images {len(fused)}  matched instances {n_match}  transferred relations {n_moved}")
    for reason in sorted(reasons):
        print(f"dropped {reason}\t{reasons[reason]}")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    spec = FixtureSpec(
        seed=args.seed,
        image_count=args.images,
        height=args.height,
        width=args.width,
        instances_per_image=args.instances,
        relations_per_image=args.relations,
        num_object_classes=args.objects,
        num_thing_classes=args.things,
        num_predicates=args.predicates,
        drop_prob=args.drop,
        relabel_prob=args.relabel,
        erosion=args.erode,
        mode=args.mode,
    )
    fixture = generate_fixture(spec, workers=args.threads)
    write_dataset(Dataset(fixture.vocab, fixture.gt, {"fixture": {"seed": spec.seed}}), args.out_gt)
    canvases = {g.image_id: g.canvas for g in fixture.gt}
    write_predictions(PredictionSet(spec.mode, fixture.predictions), args.out_pred, canvases)
    n_rel = sum(len(g.relations) for g in fixture.gt)
    n_pred = sum(len(p) for p in fixture.predictions.values())
    print(f"images {len(fixture.gt)}  gt triplets {n_rel}  predicted triplets {n_pred}")
    return EXIT_OK


def _projection(path, dim) -> Optional[RoleProjection]:
    if not path:
        return None
    m = load_matrix(path)
    if m.shape != (dim + 1, dim):
        raise ParseError(path, f"projection must have {dim + 1} rows of {dim} values (matrix, then bias)")
    return RoleProjection(m[:dim], m[dim])


def cmd_query_match(args) -> int:
    rel = load_matrix(args.relations)
    obj = load_matrix(args.objects)
    predicates = load_matrix(args.predicates).ravel()
    if not np.all(predicates == np.round(predicates)):
        raise ParseError(args.predicates, "predicate ids must be integers")
    dim = rel.shape[1]
    triplets = match_queries(
        rel,
        obj,
        [int(p) for p in predicates],
        _projection(args.subject_proj, dim),
        _projection(args.object_proj, dim),
    )
    for s, p, o in triplets:
        print(f"{s}\t{p}\t{o}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psgkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"psgkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def threads(p):
        p.add_argument("--threads", type=int, default=1, help="worker threads (output does not depend on it)")

    p = sub.add_parser("validate", help="check every image's invariants")
    p.add_argument("dataset")
    threads(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("dataset")
    p.add_argument("--json", action="store_true")
    threads(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="triplet R@K / mR@K")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--mode", choices=("sgdet", "predcls"))
    p.add_argument("--k", type=_k_list, default=(20, 50, 100))
    p.add_argument("--iou-thr", type=float, default=0.5)
    p.add_argument("--out")
    p.add_argument("--pq-pred", help="predicted segmentation dataset for an attached PQ block")
    threads(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pq", help="corpus panoptic quality")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out")
    threads(p)
    p.set_defaults(func=cmd_pq)

    p = sub.add_parser("fuse", help="transfer box-graph relations onto segmentations")
    p.add_argument("--seg", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--sim-thr", type=float, default=0.5)
    p.add_argument("--predicate-map")
    p.add_argument("--out", required=True)
    threads(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("fixtures", help="generate a synthetic corpus and noisy predictions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=10)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--instances", type=int, default=6)
    p.add_argument("--relations", type=int, default=4)
    p.add_argument("--objects", type=int, default=8)
    p.add_argument("--things", type=int, default=5)
    p.add_argument("--predicates", type=int, default=6)
    p.add_argument("--drop", type=float, default=0.0)
    p.add_argument("--relabel", type=float, default=0.0)
    p.add_argument("--erode", type=int, default=0)
    p.add_argument("--mode", choices=("sgdet", "predcls"), default="sgdet")
    p.add_argument("--out-gt", required=True)
    p.add_argument("--out-pred", required=True)
    threads(p)
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("query-match", help="select subjects/objects for relation queries")
    p.add_argument("--relations", required=True, help="matrix file, one relation query per row")
    p.add_argument("--objects", required=True, help="matrix file, one object query per row")
    p.add_argument("--predicates", required=True, help="one predicate id per row")
    p.add_argument("--subject-proj")
    p.add_argument("--object-proj")
    p.set_defaults(func=cmd_query_match)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, "threads", 1) < 1:
        parser.print_usage(sys.stderr)
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PSGError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
