"""Top-K ranking metrics: Recall@K and NDCG@K with binary relevance."""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError


def recall_at_k(topk, truth, k: int) -> float:
    """|topk ∩ truth| / |truth|; with a single relevant item this is hit-or-miss."""
    truth = set(truth)
    if not truth:
        raise DataError("empty truth set")
    if len(topk) != k:
        raise DataError(f"ranking has {len(topk)} entries, expected {k}")
    return len(set(topk) & truth) / len(truth)


def ndcg_at_k(topk, truth, k: int) -> float:
    """DCG over hit positions (1-based, log2 discount) normalized by the
    ideal DCG of min(k, |truth|) top-ranked hits."""
    truth = set(truth)
    if not truth:
        raise DataError("empty truth set")
    if len(topk) != k:
        raise DataError(f"ranking has {len(topk)} entries, expected {k}")
    dcg = sum(1.0 / math.log2(rank + 1)
              for rank, idx in enumerate(topk, start=1) if idx in truth)
    idcg = sum(1.0 / math.log2(rank + 1)
               for rank in range(1, min(k, len(truth)) + 1))
    return dcg / idcg


def rank_topk(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, descending, ties to the smaller index."""
    if k > scores.shape[-1]:
        raise DataError(f"k={k} exceeds candidate count {scores.shape[-1]}")
    order = np.argsort(-scores, kind="stable")
    return order[:k]
