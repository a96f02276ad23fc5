"""Offline evaluation: one seeded window of ten distinct articles per user,
the first five as profile and the last five as targets."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .annindex import AnnIndex
from .baselines import AlsModel, Bm25Index, als_recommend, bm25_recommend
from .candidates import UserRepresentation, generate_candidates
from .corpus import EditHistory
from .embstore import EmbeddingStore
from .metrics import map_at_k, ndcg_at_k, recall_at_k
from .ranker import HISTORY_LEN, RankingModel, rank_candidates

log = logging.getLogger(__name__)

WINDOW = 10
PROFILE = 5


@dataclass(frozen=True)
class EvalWindow:
    user_id: int
    profile: tuple[int, ...]
    targets: tuple[int, ...]


def make_eval_windows(histories: list[EditHistory], seed: int = 0,
                      size: int = WINDOW) -> list[EvalWindow]:
    """One window of ``size`` consecutive distinct articles per user, at a
    seeded random offset; users with fewer distinct articles are skipped."""
    rng = np.random.default_rng(seed)
    half = size // 2
    windows, skipped = [], 0
    for h in sorted(histories, key=lambda h: h.user_id):
        arts = h.distinct_articles()
        if len(arts) < size:
            skipped += 1
            continue
        start = int(rng.integers(0, len(arts) - size + 1))
        w = arts[start:start + size]
        windows.append(EvalWindow(h.user_id, tuple(w[:half]), tuple(w[half:])))
    if skipped:
        log.info("evaluation windows: skipped %d users with fewer than %d distinct articles",
                 skipped, size)
    return windows


def fit_history(profile, length: int = HISTORY_LEN) -> list[int]:
    """Most recent ``length`` articles, padded by repeating the latest one."""
    p = [int(a) for a in profile]
    if not p:
        raise ValueError("empty profile")
    p = p[-length:]
    return p + [p[-1]] * (length - len(p))


# -- recommenders ----------------------------------------------------------

class Recommender(Protocol):
    def recommend(self, user_id: int, profile, n: int) -> list[int]: ...


@dataclass
class WikiRecNetRecommender:
    """ANN candidates from aggregated profile vectors, optionally re-ranked."""
    store: EmbeddingStore
    index: AnnIndex
    mode: str = "mean"
    ranker: RankingModel | None = None
    ranker_store: EmbeddingStore | None = None
    pool: int | None = None

    def recommend(self, user_id, profile, n):
        profile = [int(a) for a in profile]
        known = [a for a in profile if a in self.store]
        user = UserRepresentation.from_history(self.store, known, self.mode)
        size = n if self.ranker is None else max(n, self.pool or n)
        cands = generate_candidates(user, self.index, size, exclude=profile)
        if self.ranker is None:
            return cands.ids[:n]
        rstore = self.ranker_store or self.store
        hist = fit_history([a for a in profile if a in rstore])
        ids = [a for a in cands.ids if a in rstore]
        return [a for a, _ in rank_candidates(self.ranker, hist, ids, rstore)][:n]


@dataclass
class Bm25Recommender:
    index: Bm25Index

    def recommend(self, user_id, profile, n):
        return [a for a, _ in bm25_recommend(self.index, profile, n, exclude=profile)]


@dataclass
class AlsRecommender:
    model: AlsModel

    def recommend(self, user_id, profile, n):
        return [a for a, _ in als_recommend(self.model, user_id, n, exclude=profile)]


@dataclass
class RandomRecommender:
    items: np.ndarray
    seed: int = 0

    def recommend(self, user_id, profile, n):
        rng = np.random.default_rng([self.seed, int(user_id)])
        excluded = {int(a) for a in profile}
        pool = np.array([a for a in self.items.tolist() if a not in excluded], dtype=np.uint64)
        pick = rng.choice(len(pool), size=min(n, len(pool)), replace=False)
        return [int(a) for a in pool[pick]]


def random_recall_expectation(n_items: int, n: int, profile_size: int = PROFILE) -> float:
    """Expected Recall@n of uniform sampling from items outside the profile."""
    return min(1.0, n / (n_items - profile_size))


# -- evaluation ------------------------------------------------------------

@dataclass
class EvalRow:
    model: str
    aggregate: str
    rank: str
    metrics: dict[str, float]
    windows: int
    skipped: int


@dataclass
class EvalReport:
    ks: tuple[int, ...] = (50, 100)
    rows: list[EvalRow] = field(default_factory=list)

    def columns(self) -> list[str]:
        return [f"{m}@{k}" for k in self.ks for m in ("MAP", "nDCG", "Recall")]

    def to_tsv(self) -> str:
        head = ["Model", "Aggregate", "Rank", *self.columns(), "Windows", "Skipped"]
        lines = ["\t".join(head)]
        for r in self.rows:
            vals = [f"{r.metrics[c]:.4f}" for c in self.columns()]
            lines.append("\t".join([r.model, r.aggregate, r.rank, *vals, str(r.windows),
                                    str(r.skipped)]))
        return "\n".join(lines) + "\n"


def evaluate(recommender: Recommender, windows: list[EvalWindow], ks=(50, 100),
             model: str = "", aggregate: str = "-", rank: str = "-") -> EvalRow:
    """Mean MAP/nDCG/Recall at each k over the windows. A window whose
    recommender call raises is skipped and counted."""
    ks = tuple(sorted(ks))
    n = max(ks)
    sums = {f"{m}@{k}": 0.0 for k in ks for m in ("MAP", "nDCG", "Recall")}
    done = skipped = 0
    for w in windows:
        try:
            recs = recommender.recommend(w.user_id, list(w.profile), n)
        except (KeyError, ValueError) as e:
            log.debug("window for user %d skipped: %s", w.user_id, e)
            skipped += 1
            continue
        profile = set(w.profile)
        recs = [int(a) for a in recs if int(a) not in profile]
        targets = set(w.targets)
        for k in ks:
            sums[f"MAP@{k}"] += map_at_k(recs, targets, k)
            sums[f"nDCG@{k}"] += ndcg_at_k(recs, targets, k)
            sums[f"Recall@{k}"] += recall_at_k(recs, targets, k)
        done += 1
    metrics = {c: (v / done if done else 0.0) for c, v in sums.items()}
    if skipped:
        log.warning("%s: %d of %d windows skipped", model or "recommender", skipped, len(windows))
    return EvalRow(model, aggregate, rank, metrics, done, skipped)
