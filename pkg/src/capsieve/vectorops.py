"""Exact cosine-similarity kernels and brute-force nearest-neighbor scans.

Scores are accumulated in float64 regardless of input dtype. All batch
operations compute each row's score with the same accumulation as the
scalar `cosine`, so a score never depends on which other rows share the
matrix: sharded scans are bitwise identical to serial ones, and a full-sort
oracle over per-pair `cosine` calls reproduces `argmax_class` exactly.

No approximate index is provided by design; exact scans keep every
downstream statistic reproducible and testable.
"""

from __future__ import annotations

import numpy as np

from .corpus import EmbeddingMatrix
from .errors import MissingKeyError, ValidationError


def _as_f64_rows(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    return np.ascontiguousarray(arr)


def _row_dots(rows: np.ndarray, vec: np.ndarray) -> np.ndarray:
    # einsum with a fixed contraction order; each output element depends
    # only on its own row, unlike BLAS matvec whose kernel can vary with
    # the matrix shape.
    return np.einsum("ij,j->i", rows, vec)


def _row_norms(rows: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", rows, rows))


def cosine(a, b) -> float:
    """Cosine similarity of two vectors, accumulated in float64.

    Raises ValidationError on dimension mismatch or an all-zero input.
    """
    av = _as_f64_rows(a)
    bv = np.ascontiguousarray(np.asarray(b, dtype=np.float64).ravel())
    if av.shape[1] != bv.shape[0]:
        raise ValidationError(f"dimension mismatch: {av.shape[1]} vs {bv.shape[0]}")
    na = _row_norms(av)[0]
    nb = _row_norms(bv[np.newaxis, :])[0]
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine undefined for all-zero vector")
    return float(_row_dots(av, bv)[0] / (na * nb))


def batch_cosine(query, matrix: EmbeddingMatrix) -> np.ndarray:
    """Cosine of `query` against every row; element i equals
    cosine(query, matrix.rows[i]) bitwise."""
    q = np.ascontiguousarray(np.asarray(query, dtype=np.float64).ravel())
    if q.shape[0] != matrix.dim:
        raise ValidationError(f"dimension mismatch: query {q.shape[0]} vs matrix {matrix.dim}")
    qn = _row_norms(q[np.newaxis, :])[0]
    if qn == 0.0:
        raise ValidationError("cosine undefined for all-zero query")
    rows = _as_f64_rows(matrix.rows)
    return _row_dots(rows, q) / (_row_norms(rows) * qn)


def argmax_class(query, matrix: EmbeddingMatrix, k: int) -> list[tuple[str, float]]:
    """Top-k (id, score) by cosine against `query`, ties broken by id
    ascending."""
    if matrix.count == 0:
        raise ValidationError("empty matrix")
    if not 1 <= k <= matrix.count:
        raise ValidationError(f"k={k} out of range 1..{matrix.count}")
    scores = batch_cosine(query, matrix)
    ids = np.asarray(matrix.ids)
    order = np.lexsort((ids, -scores))
    return [(str(ids[i]), float(scores[i])) for i in order[:k]]


def nearest_neighbor(query, matrix: EmbeddingMatrix) -> tuple[str, float]:
    """The single best (id, score); equivalent to argmax_class(..., 1)[0]."""
    if matrix.count == 0:
        raise ValidationError("empty matrix")
    return argmax_class(query, matrix, 1)[0]


def require_embedding(matrix: EmbeddingMatrix, rid: str, kind: str) -> np.ndarray:
    """Fetch a row or raise MissingKeyError naming the id and its role."""
    try:
        return matrix.rows[matrix.index[rid]]
    except KeyError:
        raise MissingKeyError(f"missing {kind} embedding for id {rid!r}") from None
