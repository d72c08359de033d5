"""Relation-prompted subject/object selection over query embeddings.

Each relation query picks the object query whose role-projected embedding
is most cosine-similar to it; subject and object selection use separate
projections, and the selections are zipped into triplets by position.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import PSGError

__all__ = ["RoleProjection", "cosine", "cosine_table", "select_role", "compose_triplets", "match_queries"]


def _as_matrix(rows, name) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise PSGError("dim-mismatch", f"{name} must be a list of equal-length vectors")
    if not np.all(np.isfinite(arr)):
        raise PSGError("non-finite", f"{name} contains NaN or infinity")
    return arr


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise PSGError("dim-mismatch", f"{u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise PSGError("zero-vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class RoleProjection:
    """Affine map ``x -> matrix @ x + bias`` giving an object query a role view."""

    matrix: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or b.shape != (m.shape[0],):
            raise PSGError("dim-mismatch", f"matrix {m.shape}, bias {b.shape}")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(b))):
            raise PSGError("non-finite", "projection has NaN or infinity")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "bias", b)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "RoleProjection":
        return cls(np.eye(dim), np.zeros(dim))

    def __call__(self, vectors) -> np.ndarray:
        x = np.asarray(vectors, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise PSGError("dim-mismatch", f"vectors of dim {x.shape[-1]}, projection dim {self.dim}")
        return x @ self.matrix.T + self.bias


def cosine_table(relation_queries, object_queries, proj: Optional[RoleProjection] = None) -> np.ndarray:
    """``[i, j]`` = cosine between relation query i and projected object query j."""
    rel = _as_matrix(relation_queries, "relation_queries")
    obj = _as_matrix(object_queries, "object_queries")
    if rel.shape[1] != obj.shape[1]:
        raise PSGError("dim-mismatch", f"relation dim {rel.shape[1]}, object dim {obj.shape[1]}")
    if proj is not None:
        obj = proj(obj)
    rel_norm = np.linalg.norm(rel, axis=1)
    obj_norm = np.linalg.norm(obj, axis=1)
    if np.any(rel_norm == 0) or np.any(obj_norm == 0):
        raise PSGError("zero-vector", "a relation or projected object query is zero")
    return (rel / rel_norm[:, None]) @ (obj / obj_norm[:, None]).T


def select_role(relation_queries, object_queries, proj: Optional[RoleProjection] = None) -> List[int]:
    """For each relation query, the index of the best-aligned object query.

    Ties go to the lowest object index. Several relation queries may select
    the same object.
    """
    obj = _as_matrix(object_queries, "object_queries")
    if obj.shape[0] == 0:
        raise PSGError("no-objects", "at least one object query is required")
    rel = np.asarray(relation_queries, dtype=np.float64)
    if rel.size == 0:
        return []
    table = cosine_table(rel, obj, proj)
    return [int(j) for j in np.argmax(table, axis=1)]


def compose_triplets(
    subject_idx: Sequence[int], predicate_ids: Sequence[int], object_idx: Sequence[int]
) -> List[Tuple[int, int, int]]:
    """Zip index-aligned selections into ``(subject, predicate, object)`` triplets."""
    if not len(subject_idx) == len(predicate_ids) == len(object_idx):
        raise PSGError(
            "length-mismatch",
            f"{len(subject_idx)} subjects, {len(predicate_ids)} predicates, {len(object_idx)} objects",
        )
    return [(int(s), int(p), int(o)) for s, p, o in zip(subject_idx, predicate_ids, object_idx)]


def match_queries(
    relation_queries,
    object_queries,
    predicate_ids: Sequence[int],
    subject_proj: Optional[RoleProjection] = None,
    object_proj: Optional[RoleProjection] = None,
) -> List[Tuple[int, int, int]]:
    """Run both selectors and compose the triplets."""
    subjects = select_role(relation_queries, object_queries, subject_proj)
    objects = select_role(relation_queries, object_queries, object_proj)
    return compose_triplets(subjects, predicate_ids, objects)
