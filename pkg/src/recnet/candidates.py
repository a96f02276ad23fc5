"""User representations and ANN candidate generation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .annindex import AnnIndex
from .embstore import EmbeddingStore, normalize_rows

MODES = ("mean", "max", "merge")


class ColdUserError(ValueError):
    """The user has no embedded history to build a representation from."""


def user_vector(article_vectors, mode: str = "mean") -> np.ndarray:
    """Element-wise mean or max of the vectors, rescaled to unit length."""
    x = np.asarray(article_vectors, dtype=np.float64)
    if x.size == 0:
        raise ColdUserError("cannot aggregate an empty history")
    x = np.atleast_2d(x)
    if mode == "mean":
        v = x.mean(axis=0)
    elif mode == "max":
        v = x.max(axis=0)
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}; expected 'mean' or 'max'")
    return normalize_rows(v)


@dataclass
class UserRepresentation:
    mode: str
    vectors: np.ndarray  # one row for mean/max, one row per history article for merge

    @classmethod
    def from_vectors(cls, article_vectors, mode: str = "mean") -> "UserRepresentation":
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
        x = np.atleast_2d(np.asarray(article_vectors, dtype=np.float64))
        if x.size == 0:
            raise ColdUserError("cannot represent a user with an empty history")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite article vector in user history")
        if mode == "merge":
            return cls(mode, x)
        return cls(mode, user_vector(x, mode)[None, :])

    @classmethod
    def from_history(cls, store: EmbeddingStore, article_ids, mode: str = "mean"):
        ids = list(article_ids)
        if not ids:
            raise ColdUserError("cannot represent a user with an empty history")
        return cls.from_vectors(store.take(ids), mode)


@dataclass
class CandidateSet:
    items: list[tuple[int, float]]
    excluded: frozenset[int] = field(default_factory=frozenset)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def ids(self) -> list[int]:
        return [a for a, _ in self.items]


def generate_candidates(user: UserRepresentation, index: AnnIndex, n: int,
                        exclude=()) -> CandidateSet:
    """Up to ``n`` nearest articles, never returning anything in ``exclude``.

    merge mode queries once per history vector and keeps each article's best
    similarity across queries.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    excluded = frozenset(int(a) for a in exclude)
    if user.mode == "merge":
        best: dict[int, float] = {}
        fetch = min(n + len(excluded), len(index)) if index.built else n
        for q in user.vectors:
            for a, s in index.search(q, fetch):
                if a not in excluded and s > best.get(a, -np.inf):
                    best[a] = s
        items = sorted(best.items(), key=lambda t: (-t[1], t[0]))[:n]
    else:
        hits = index.search(user.vectors[0], n + len(excluded))
        items = [(a, s) for a, s in hits if a not in excluded][:n]
    return CandidateSet(items, excluded)
