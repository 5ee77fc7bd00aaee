from __future__ import annotations

import numpy as np
import pytest

from capsieve.corpus import EmbeddingMatrix
from capsieve.errors import ValidationError
from capsieve.vectorops import argmax_class, batch_cosine, cosine, nearest_neighbor


def matrix(rows, ids):
    return EmbeddingMatrix(rows=np.asarray(rows, dtype=np.float32), ids=ids)


def full_sort_oracle(query, m, k):
    """Independent ranking: per-pair cosine, full sort by (-score, id)."""
    pairs = [(m.ids[i], cosine(query, m.rows[i])) for i in range(m.count)]
    pairs.sort(key=lambda p: (-p[1], p[0]))
    return pairs[:k]


def test_cosine_identity(rng):
    v = rng.standard_normal(16).astype(np.float32)
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-9)


def test_cosine_orthogonal():
    assert cosine([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_cosine_hand_value():
    # dot = 1, |a| = sqrt(2), |b| = 1  ->  1/sqrt(2)
    assert cosine([1.0, 1.0], [1.0, 0.0]) == pytest.approx(0.70710678, abs=1e-7)


def test_cosine_errors():
    with pytest.raises(ValidationError, match="mismatch"):
        cosine([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValidationError, match="zero"):
        cosine([0.0, 0.0], [1.0, 0.0])


def test_cosine_symmetry_bitwise(rng):
    for _ in range(100):
        a = rng.standard_normal(33).astype(np.float32)
        b = rng.standard_normal(33).astype(np.float32)
        assert cosine(a, b) == cosine(b, a)


def test_cosine_range(rng):
    for _ in range(200):
        a = rng.standard_normal(8).astype(np.float32) * 100
        b = rng.standard_normal(8).astype(np.float32) * 0.01
        assert -1.0 - 1e-6 <= cosine(a, b) <= 1.0 + 1e-6


def test_batch_matches_scalar_bitwise(rng):
    m = matrix(rng.standard_normal((50, 12)).astype(np.float32), [f"r{i:02d}" for i in range(50)])
    q = rng.standard_normal(12).astype(np.float32)
    scores = batch_cosine(q, m)
    for i in range(m.count):
        assert scores[i] == cosine(q, m.rows[i])


def test_shard_invariance_bitwise(rng):
    rows = rng.standard_normal((40, 7)).astype(np.float32)
    m = matrix(rows, [f"r{i:02d}" for i in range(40)])
    q = rng.standard_normal(7).astype(np.float32)
    full = batch_cosine(q, m)
    for lo, hi in [(0, 13), (13, 29), (29, 40)]:
        shard = matrix(rows[lo:hi], [f"r{i:02d}" for i in range(lo, hi)])
        assert (batch_cosine(q, shard) == full[lo:hi]).all()


def test_argmax_rank1_is_query_row(rng):
    rows = rng.standard_normal((6, 5)).astype(np.float32)
    m = matrix(rows, [f"r{i}" for i in range(6)])
    top = argmax_class(rows[3], m, 1)
    assert top[0][0] == "r3"
    assert top[0][1] == pytest.approx(1.0, abs=1e-9)


def test_argmax_tie_broken_by_id():
    # two identical rows: exactly equal scores, smaller id must come first
    m = matrix([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], ["zz", "aa", "mm"])
    top = argmax_class([2.0, 0.0], m, 2)
    assert [t[0] for t in top] == ["aa", "zz"]


def test_argmax_matches_full_sort_oracle(rng):
    for _ in range(50):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(2, 9))
        m = matrix(rng.standard_normal((n, d)).astype(np.float32), [f"r{i}" for i in range(n)])
        q = rng.standard_normal(d).astype(np.float32)
        k = int(rng.integers(1, n + 1))
        assert argmax_class(q, m, k) == full_sort_oracle(q, m, k)


def test_argmax_k_bounds(rng):
    m = matrix(rng.standard_normal((3, 4)).astype(np.float32), ["a", "b", "c"])
    q = np.ones(4, dtype=np.float32)
    with pytest.raises(ValidationError):
        argmax_class(q, m, 0)
    with pytest.raises(ValidationError):
        argmax_class(q, m, 4)


def test_scale_invariance_exact_for_power_of_two(rng):
    m = matrix(rng.standard_normal((10, 6)).astype(np.float32), [f"r{i}" for i in range(10)])
    q = rng.standard_normal(6).astype(np.float32)
    base = argmax_class(q, m, 10)
    for c in (2.0, 0.5, 4.0):
        assert argmax_class(q * c, m, 10) == base


def test_scale_invariance_ranking_for_general_scale(rng):
    m = matrix(rng.standard_normal((10, 6)).astype(np.float32), [f"r{i}" for i in range(10)])
    q = rng.standard_normal(6).astype(np.float32)
    base_ids = [t[0] for t in argmax_class(q, m, 10)]
    for c in (3.7, 0.013, 812.0):
        scaled = argmax_class((q.astype(np.float64) * c).astype(np.float32), m, 10)
        assert [t[0] for t in scaled] == base_ids


def test_nearest_neighbor_single_row():
    m = matrix([[0.5, 0.5]], ["only"])
    rid, score = nearest_neighbor([1.0, 1.0], m)
    assert rid == "only"
    assert score == pytest.approx(1.0, abs=1e-9)


def test_nearest_neighbor_orthogonal_but_one():
    m = matrix([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.1, 0.0]], ["u", "v", "w"])
    rid, _ = nearest_neighbor([1.0, 0.0, 0.0], m)
    assert rid == "w"


def test_nearest_neighbor_equals_argmax(rng):
    for _ in range(100):
        n = int(rng.integers(1, 12))
        m = matrix(rng.standard_normal((n, 4)).astype(np.float32), [f"r{i}" for i in range(n)])
        q = rng.standard_normal(4).astype(np.float32)
        assert nearest_neighbor(q, m) == argmax_class(q, m, 1)[0]


def test_empty_matrix_rejected():
    m = EmbeddingMatrix(rows=np.empty((0, 3), dtype=np.float32), ids=[])
    with pytest.raises(ValidationError, match="empty"):
        nearest_neighbor([1.0, 0.0, 0.0], m)
