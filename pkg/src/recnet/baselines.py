"""Reference recommenders: BM25 content filtering and implicit-feedback ALS."""
from __future__ import annotations

import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

log = logging.getLogger(__name__)


class ColdStartError(KeyError):
    """The user has no training interactions."""


def _top_k(ids: np.ndarray, scores: np.ndarray, k: int, exclude) -> list[tuple[int, float]]:
    excluded = {int(a) for a in exclude}
    order = np.lexsort((ids, -scores))
    out = []
    for i in order:
        a = int(ids[i])
        if a in excluded:
            continue
        out.append((a, float(scores[i])))
        if len(out) == k:
            break
    return out


# -- BM25 ------------------------------------------------------------------

@dataclass
class Bm25Index:
    doc_ids: np.ndarray             # uint64, sorted
    terms: list[str]
    tf: sparse.csr_matrix           # docs x terms raw term frequencies
    doc_len: np.ndarray
    k1: float = 1.2
    b: float = 0.75
    term_index: dict[str, int] = field(init=False, repr=False)
    doc_index: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.term_index = {t: i for i, t in enumerate(self.terms)}
        self.doc_index = {int(d): i for i, d in enumerate(self.doc_ids.tolist())}
        self.df = np.diff(self.tf.tocsc().indptr)
        self.idf = np.log1p((self.num_docs - self.df + 0.5) / (self.df + 0.5))
        self.avgdl = float(self.doc_len.mean()) if self.num_docs else 0.0
        self._weights = self._term_weights()

    @property
    def num_docs(self) -> int:
        return len(self.doc_ids)

    def postings(self, term: str) -> list[tuple[int, int]]:
        """(doc id, term frequency) pairs sorted by doc id."""
        t = self.term_index.get(term)
        if t is None:
            return []
        col = self.tf.getcol(t).tocoo()
        order = np.argsort(col.row)
        return [(int(self.doc_ids[r]), int(v)) for r, v in zip(col.row[order], col.data[order])]

    def _term_weights(self) -> sparse.csr_matrix:
        tf = self.tf.tocoo()
        denom_norm = self.k1 * (1 - self.b + self.b * self.doc_len / max(self.avgdl, 1e-12))
        data = self.idf[tf.col] * tf.data * (self.k1 + 1) / (tf.data + denom_norm[tf.row])
        return sparse.csr_matrix((data, (tf.row, tf.col)), shape=tf.shape)

    def query_vector(self, tokens) -> np.ndarray:
        q = np.zeros(len(self.terms))
        for t, c in Counter(tokens).items():
            i = self.term_index.get(t)
            if i is not None:
                q[i] += c
        return q

    def score(self, query_counts: np.ndarray) -> np.ndarray:
        """BM25 score of every document; each query term counts once per occurrence."""
        return self._weights @ query_counts


def bm25_build(docs, k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    """``docs`` is a sequence of (doc id, token list)."""
    docs = sorted(((int(d), list(toks)) for d, toks in docs), key=lambda x: x[0])
    if not docs:
        raise ValueError("cannot build BM25 over an empty corpus")
    ids = [d for d, _ in docs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate document ids")
    vocab: dict[str, int] = {}
    rows, cols, vals = [], [], []
    for r, (_, toks) in enumerate(docs):
        for t, c in Counter(toks).items():
            rows.append(r)
            cols.append(vocab.setdefault(t, len(vocab)))
            vals.append(c)
    tf = sparse.csr_matrix((np.array(vals, dtype=np.float64), (rows, cols)),
                           shape=(len(docs), len(vocab)))
    tf.sort_indices()
    doc_len = np.array([len(toks) for _, toks in docs], dtype=np.float64)
    return Bm25Index(np.array(ids, dtype=np.uint64), list(vocab), tf, doc_len, k1, b)


def bm25_recommend(index: Bm25Index, user_docs, k: int, exclude=()) -> list[tuple[int, float]]:
    """Rank documents against the concatenated tokens of ``user_docs``."""
    user_docs = [int(d) for d in user_docs]
    if not user_docs:
        raise ValueError("BM25 query needs at least one user document")
    rows = [index.doc_index[d] for d in user_docs if d in index.doc_index]
    q = np.asarray(index.tf[rows].sum(axis=0)).ravel() if rows else np.zeros(len(index.terms))
    return _top_k(index.doc_ids, index.score(q), k, exclude)


# -- ALS -------------------------------------------------------------------

@dataclass
class AlsConfig:
    factors: int = 64
    regularization: float = 0.01
    alpha: float = 40.0
    iterations: int = 15
    binary: bool = True
    seed: int = 0


@dataclass
class AlsModel:
    user_ids: np.ndarray
    item_ids: np.ndarray
    U: np.ndarray
    M: np.ndarray
    regularization: float
    alpha: float
    objective_trace: list[float] = field(default_factory=list)
    max_residual: float = 0.0

    def __post_init__(self):
        self.user_index = {int(u): i for i, u in enumerate(self.user_ids.tolist())}

    @property
    def factors(self) -> int:
        return self.U.shape[1]


def _interaction_matrix(interactions, binary: bool):
    users = np.array([int(u) for u, _, _ in interactions], dtype=np.uint64)
    items = np.array([int(i) for _, i, _ in interactions], dtype=np.uint64)
    counts = np.array([float(c) for _, _, c in interactions])
    if np.any(counts < 0):
        raise ValueError("interaction counts must be non-negative")
    uid, urow = np.unique(users, return_inverse=True)
    iid, icol = np.unique(items, return_inverse=True)
    r = sparse.csr_matrix((counts, (urow, icol)), shape=(len(uid), len(iid)))
    r.sum_duplicates()
    r.eliminate_zeros()
    if binary:
        r.data[:] = 1.0
    return uid, iid, r


def als_objective(r: sparse.csr_matrix, U: np.ndarray, M: np.ndarray, alpha: float,
                  lam: float) -> float:
    """sum_ui c_ui (p_ui - u.m)^2 + lam (|U|^2 + |M|^2), c = 1 + alpha r, p = [r > 0]."""
    coo = r.tocoo()
    pred = np.einsum("ij,ij->i", U[coo.row], M[coo.col])
    c = 1 + alpha * coo.data
    all_sq = float(np.sum((U.T @ U) * (M.T @ M)))
    observed = float(np.sum(c * (1 - pred) ** 2 - pred ** 2))
    return all_sq + observed + lam * (float(np.sum(U * U)) + float(np.sum(M * M)))


def _solve_side(r: sparse.csr_matrix, fixed: np.ndarray, alpha: float, lam: float,
                out: np.ndarray) -> float:
    """Exact least-squares update of every row of ``out`` given ``fixed``.
    Returns the largest relative normal-equation residual."""
    f = fixed.shape[1]
    gram = fixed.T @ fixed
    eye = lam * np.eye(f)
    worst = 0.0
    for u in range(r.shape[0]):
        lo, hi = r.indptr[u], r.indptr[u + 1]
        cols = r.indices[lo:hi]
        c = 1 + alpha * r.data[lo:hi]
        Y = fixed[cols]
        A = gram + (Y.T * (c - 1)) @ Y + eye
        rhs = Y.T @ c
        try:
            x = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            x = np.linalg.lstsq(A, rhs, rcond=None)[0]
        out[u] = x
        scale = max(np.linalg.norm(rhs), np.linalg.norm(A, 1) * np.linalg.norm(x), 1e-300)
        worst = max(worst, float(np.linalg.norm(A @ x - rhs) / scale))
    return worst


def als_train(interactions, config: AlsConfig | None = None, **overrides) -> AlsModel:
    """Alternating exact solves for user and item factors.

    ``interactions`` holds (user id, item id, count) triples.
    """
    cfg = config or AlsConfig()
    if overrides:
        cfg = AlsConfig(**{**cfg.__dict__, **overrides})
    interactions = list(interactions)
    if not interactions:
        raise ValueError("ALS needs at least one interaction")
    uid, iid, r = _interaction_matrix(interactions, cfg.binary)
    if cfg.factors >= min(r.shape):
        warnings.warn(f"{cfg.factors} factors for a {r.shape[0]}x{r.shape[1]} matrix; "
                      "the factorization is under-determined", RuntimeWarning, stacklevel=2)
    rng = np.random.default_rng(cfg.seed)
    U = rng.normal(scale=0.01, size=(r.shape[0], cfg.factors))
    M = rng.normal(scale=0.01, size=(r.shape[1], cfg.factors))
    rt = r.T.tocsr()
    lam, alpha = cfg.regularization, cfg.alpha
    trace = [als_objective(r, U, M, alpha, lam)]
    worst = 0.0
    for it in range(cfg.iterations):
        worst = max(worst, _solve_side(r, M, alpha, lam, U))
        trace.append(als_objective(r, U, M, alpha, lam))
        worst = max(worst, _solve_side(rt, U, alpha, lam, M))
        trace.append(als_objective(r, U, M, alpha, lam))
        log.info("als iteration %d/%d: objective %.6g", it + 1, cfg.iterations, trace[-1])
    return AlsModel(uid, iid, U, M, lam, alpha, trace, worst)


def als_recommend(model: AlsModel, user, k: int, exclude=()) -> list[tuple[int, float]]:
    u = model.user_index.get(int(user))
    if u is None:
        raise ColdStartError(f"user {int(user)} has no ALS training interactions (cold start)")
    return _top_k(model.item_ids, model.M @ model.U[u], k, exclude)
