"""PV-DBOW paragraph vectors trained with negative sampling.

Each document vector is trained to predict the document's (sub-sampled)
tokens against ``negatives`` noise words drawn from the unigram distribution
raised to 0.75. Only document vectors are exported.
"""
from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .embstore import EmbeddingStore

log = logging.getLogger(__name__)

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercased maximal runs of Unicode letters and digits."""
    return [t.lower() for t in _TOKEN.findall(text)]


@dataclass
class Vocabulary:
    tokens: list[str]
    counts: np.ndarray
    total_token_count: int
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode(self, tokens: list[str]) -> np.ndarray:
        idx = self.index
        return np.fromiter((idx[t] for t in tokens if t in idx), dtype=np.int32)

    def noise_distribution(self, power: float = 0.75) -> np.ndarray:
        w = self.counts.astype(np.float64) ** power
        return w / w.sum()


def build_vocab(corpus, min_count: int = 5) -> Vocabulary:
    """``corpus`` is an iterable of token lists. Tokens are indexed by
    descending frequency, ties in lexicographic order."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counter: Counter[str] = Counter()
    for tokens in corpus:
        counter.update(tokens)
    kept = sorted(((t, c) for t, c in counter.items() if c >= min_count),
                  key=lambda tc: (-tc[1], tc[0]))
    return Vocabulary([t for t, _ in kept], np.array([c for _, c in kept], dtype=np.int64),
                      sum(counter.values()))


@dataclass
class Doc2VecConfig:
    dim: int = 300
    window: int = 8
    negatives: int = 5
    epochs: int = 10
    initial_lr: float = 0.025
    min_lr: float = 1e-4
    min_count: int = 5
    subsample_threshold: float = 1e-4
    seed: int = 0


@dataclass
class PvDbowResult:
    store: EmbeddingStore
    vocab: Vocabulary
    epoch_losses: list[float]


def pair_loss_and_grad(doc_vec, word_vec, noise_vecs):
    """Negative-sampling loss for one (document, word) pair and its gradients.

    loss = -log s(d.w) - sum_n log s(-d.n). Returns
    (loss, d_doc, d_word, d_noise) in float64.
    """
    d = np.asarray(doc_vec, dtype=np.float64)
    w = np.asarray(word_vec, dtype=np.float64)
    noise = np.atleast_2d(np.asarray(noise_vecs, dtype=np.float64))
    pos = d @ w
    neg = noise @ d
    loss = np.logaddexp(0.0, -pos) + np.logaddexp(0.0, neg).sum()
    gpos = -_sigmoid(-pos)           # d loss / d pos
    gneg = _sigmoid(neg)             # d loss / d neg_i
    d_doc = gpos * w + gneg @ noise
    d_word = gpos * d
    d_noise = np.outer(gneg, d)
    return float(loss), d_doc, d_word, d_noise


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def draw_negatives(noise_cdf: np.ndarray, shape, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws of vocabulary indices from the noise distribution."""
    idx = np.searchsorted(noise_cdf, rng.random(shape), side="right")
    return np.ascontiguousarray(np.minimum(idx, len(noise_cdf) - 1), dtype=np.int32)


def keep_probabilities(vocab: Vocabulary, threshold: float) -> np.ndarray:
    """Frequent-word down-sampling (word2vec rule), clipped to 1."""
    if threshold <= 0:
        return np.ones(len(vocab))
    freq = vocab.counts / max(vocab.total_token_count, 1)
    ratio = threshold / freq
    return np.minimum(1.0, np.sqrt(ratio) + ratio)


def train_pvdbow(corpus: list[tuple[int, str]], config: Doc2VecConfig | None = None,
                 **overrides) -> PvDbowResult:
    """Train document vectors for ``corpus`` (pairs of article id and text)."""
    cfg = config or Doc2VecConfig()
    if overrides:
        cfg = Doc2VecConfig(**{**cfg.__dict__, **overrides})
    if not corpus:
        raise ValueError("empty corpus")
    if cfg.dim < 1:
        raise ValueError("dim must be >= 1")
    ids = [a for a, _ in corpus]
    token_lists = [tokenize(t) for _, t in corpus]
    vocab = build_vocab(token_lists, cfg.min_count)
    encoded = [vocab.encode(toks) for toks in token_lists]
    n_oov = sum(1 for e in encoded if len(e) == 0)
    if n_oov:
        log.warning("%d documents have no in-vocabulary tokens; their vectors stay at "
                    "initialization", n_oov)

    rng = np.random.default_rng(cfg.seed)
    doc_vecs = ((rng.random((len(corpus), cfg.dim)) - 0.5) / cfg.dim).astype(np.float32)
    out_vecs = np.zeros((max(len(vocab), 1), cfg.dim), dtype=np.float32)
    if len(vocab) == 0 or cfg.epochs == 0:
        return PvDbowResult(EmbeddingStore(ids, doc_vecs), vocab, [])

    cum_noise = np.cumsum(vocab.noise_distribution())
    cum_noise[-1] = 1.0
    keep_p = keep_probabilities(vocab, cfg.subsample_threshold)
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(corpus))
        docs_parts, words_parts = [], []
        for d in order:
            words = encoded[d]
            if len(words) == 0:
                continue
            words = words[rng.random(len(words)) < keep_p[words]]
            docs_parts.append(np.full(len(words), d, dtype=np.int32))
            words_parts.append(words)
        if not words_parts:
            losses.append(0.0)
            continue
        pair_docs = np.ascontiguousarray(np.concatenate(docs_parts), dtype=np.int32)
        pair_words = np.ascontiguousarray(np.concatenate(words_parts), dtype=np.int32)
        n_pairs = len(pair_docs)
        negs = draw_negatives(cum_noise, (n_pairs, cfg.negatives), rng)
        progress = (epoch + np.arange(n_pairs) / n_pairs) / cfg.epochs
        lrs = (cfg.initial_lr - (cfg.initial_lr - cfg.min_lr) * progress).astype(np.float32)
        total = _core.pvdbow_epoch(doc_vecs, out_vecs, pair_docs, pair_words, negs, lrs)
        losses.append(total / n_pairs)
        log.info("pv-dbow epoch %d/%d: %d pairs, mean pair loss %.5f", epoch + 1, cfg.epochs,
                 n_pairs, losses[-1])
    if not np.all(np.isfinite(doc_vecs)):
        raise FloatingPointError("non-finite document vectors; lower initial_lr")
    return PvDbowResult(EmbeddingStore(ids, doc_vecs), vocab, losses)


def cosine_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x, axis=1, keepdims=True)
    x = x / np.where(n > 0, n, 1.0)
    return x @ x.T


def mean_topic_cosines(vectors: np.ndarray, labels) -> tuple[float, float]:
    """Mean cosine within and across labels (diagonal excluded)."""
    labels = np.asarray(labels)
    c = cosine_matrix(vectors)
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)
    return float(c[same & off].mean()), float(c[~same].mean())

