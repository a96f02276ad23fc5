"""Top-k ranking metrics with binary relevance.

Ranked lists are assumed duplicate-free; ranks are 1-based.
"""
from __future__ import annotations

import math


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError("k must be >= 1")


def recall_at_k(recommended, relevant, k: int) -> float:
    _check_k(k)
    relevant = set(relevant)
    if not relevant:
        return 0.0
    return len(relevant.intersection(list(recommended)[:k])) / len(relevant)


def map_at_k(recommended, relevant, k: int) -> float:
    """Average precision at k, normalized by min(|relevant|, k)."""
    _check_k(k)
    relevant = set(relevant)
    if not relevant:
        return 0.0
    hits = 0
    total = 0.0
    for i, a in enumerate(list(recommended)[:k], start=1):
        if a in relevant:
            hits += 1
            total += hits / i
    return total / min(len(relevant), k)


def ndcg_at_k(recommended, relevant, k: int) -> float:
    _check_k(k)
    relevant = set(relevant)
    dcg = sum(1.0 / math.log2(i + 1)
              for i, a in enumerate(list(recommended)[:k], start=1) if a in relevant)
    idcg = sum(1.0 / math.log2(i + 1) for i in range(1, min(len(relevant), k) + 1))
    return dcg / idcg if idcg > 0 else 0.0


def reciprocal_rank(recommended, relevant) -> float:
    relevant = set(relevant)
    for i, a in enumerate(recommended, start=1):
        if a in relevant:
            return 1.0 / i
    return 0.0


def mrr(recommended_lists, relevant_sets) -> float:
    recommended_lists = list(recommended_lists)
    relevant_sets = list(relevant_sets)
    if len(recommended_lists) != len(relevant_sets):
        raise ValueError("recommended_lists and relevant_sets must be aligned")
    if not recommended_lists:
        return 0.0
    return sum(reciprocal_rank(r, s) for r, s in zip(recommended_lists, relevant_sets)) \
        / len(recommended_lists)
