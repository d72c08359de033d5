"""Panoptic scene graph toolkit: data model, evaluation, matching and fusion."""

__version__ = "0.1.0"

from .errors import ParseError, PSGError
from .masks import (
    Canvas,
    LabeledSoftMask,
    SegmentMask,
    bbox_iou,
    mask_iou,
    mask_union,
    pixelwise_argmax_merge,
    rle_decode,
    rle_encode,
    tightest_bbox,
)
from .model import (
    ClassVocabulary,
    ObjectInstance,
    PanopticSceneGraph,
    RelationTriplet,
    StatsReport,
    compute_stats,
    validate_graph,
)
from .assignment import (
    Assignment,
    GroundTruthTriplet,
    SoftTriplet,
    TermWeights,
    match_triplets,
    optimal_assignment,
    total_loss,
    triplet_match_score,
)
from .query import RoleProjection, compose_triplets, cosine, select_role
from .evaluation import (
    Entity,
    EvalConfig,
    EvalReport,
    ScoredTriplet,
    corpus_panoptic_quality,
    evaluate,
    panoptic_quality,
    recall_at_k,
    triplet_matches,
)
from .fusion import (
    BoxObject,
    EmbeddingTable,
    FusionConfig,
    category_similarity,
    greedy_instance_match,
    transfer_relations,
)
from .fixtures import FixtureSpec, generate_fixture

__all__ = [
    "__version__",
    "ParseError",
    "PSGError",
    "Canvas",
    "LabeledSoftMask",
    "SegmentMask",
    "bbox_iou",
    "mask_iou",
    "mask_union",
    "pixelwise_argmax_merge",
    "rle_decode",
    "rle_encode",
    "tightest_bbox",
    "ClassVocabulary",
    "ObjectInstance",
    "PanopticSceneGraph",
    "RelationTriplet",
    "StatsReport",
    "compute_stats",
    "validate_graph",
    "Assignment",
    "GroundTruthTriplet",
    "SoftTriplet",
    "TermWeights",
    "match_triplets",
    "optimal_assignment",
    "total_loss",
    "triplet_match_score",
    "RoleProjection",
    "compose_triplets",
    "cosine",
    "select_role",
    "Entity",
    "EvalConfig",
    "EvalReport",
    "ScoredTriplet",
    "corpus_panoptic_quality",
    "evaluate",
    "panoptic_quality",
    "recall_at_k",
    "triplet_matches",
    "BoxObject",
    "EmbeddingTable",
    "FusionConfig",
    "category_similarity",
    "greedy_instance_match",
    "transfer_relations",
    "FixtureSpec",
    "generate_fixture",
]
