"""Synthetic dataset generator.

Articles are split into ``blocks`` topics, each split into subtopics of about
``subtopic_size`` articles. Links follow a hierarchical stochastic block
model (``p_in`` within a subtopic, ``p_topic`` within a topic, ``p_out``
across topics). Texts mix subtopic, topic and background vocabularies.
Each user has a home topic and subtopic; every edited article lies in the
home topic with probability ``affinity``.

The raw files also contain redirect pages and category pages so that
ingestion has something to clean.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import EditHistory, write_corpus, write_edge_list, write_edit_history

EPOCH_2015 = 1420070400
_ONSETS = ["b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"]
_VOWELS = ["a", "e", "i", "o", "u"]


@dataclass
class SynthConfig:
    nodes: int = 3000
    blocks: int = 3
    subtopic_size: int = 100
    p_in: float = 0.2
    p_topic: float = 0.01
    p_out: float = 0.001
    reciprocal: float = 0.3
    users: int = 500
    train_users: int = 500
    affinity: float = 0.8
    subtopic_affinity: float = 0.6
    min_edits: int = 10
    max_edits: int = 30
    doc_length: int = 120
    redirect_fraction: float = 0.02
    category_count: int = 5
    seed: int = 0


@dataclass
class SynthData:
    article_ids: np.ndarray
    topic: np.ndarray
    subtopic: np.ndarray
    edges: list[tuple[int, int]]
    redirects: list[tuple[int, int]]
    categories: list[int]
    corpus: list[tuple[int, str]]
    train_histories: list[EditHistory]
    eval_histories: list[EditHistory]


def _words(rng: np.random.Generator, count: int, prefix: str, taken: set[str]) -> list[str]:
    out = []
    while len(out) < count:
        n_syl = int(rng.integers(2, 4))
        w = prefix + "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(n_syl))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def _zipf(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


def generate(cfg: SynthConfig) -> SynthData:
    if cfg.blocks < 1 or cfg.nodes < cfg.blocks:
        raise ValueError("need at least one article per block")
    rng = np.random.default_rng(cfg.seed)
    n = cfg.nodes
    ids = np.sort(rng.choice(np.arange(1, 20 * n + 1000), size=n, replace=False)).astype(np.uint64)
    topic = np.arange(n) * cfg.blocks // n
    subtopic = np.zeros(n, dtype=np.int64)
    n_sub = []
    for t in range(cfg.blocks):
        members = np.flatnonzero(topic == t)
        k = max(1, round(len(members) / cfg.subtopic_size))
        subtopic[members] = np.arange(len(members)) * k // len(members)
        n_sub.append(k)
    perm = rng.permutation(n)
    topic, subtopic = topic[perm], subtopic[perm]

    # links: each unordered pair at most once, direction random, sometimes reciprocal
    edges: list[tuple[int, int]] = []
    chunk = max(1, 2_000_000 // n)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        same_t = topic[lo:hi, None] == topic[None, :]
        same_s = same_t & (subtopic[lo:hi, None] == subtopic[None, :])
        p = np.where(same_s, cfg.p_in, np.where(same_t, cfg.p_topic, cfg.p_out))
        hit = rng.random((hi - lo, n)) < p
        hit &= np.arange(lo, hi)[:, None] < np.arange(n)[None, :]
        a, b = np.nonzero(hit)
        a += lo
        flip = rng.random(len(a)) < 0.5
        both = rng.random(len(a)) < cfg.reciprocal
        for x, y, f, r in zip(a.tolist(), b.tolist(), flip.tolist(), both.tolist()):
            s, d = (y, x) if f else (x, y)
            edges.append((int(ids[s]), int(ids[d])))
            if r:
                edges.append((int(ids[d]), int(ids[s])))

    # redirect pages: some links point at a redirect (occasionally a chain of two)
    next_id = int(ids.max()) + 1
    redirects: list[tuple[int, int]] = []
    n_red = int(round(cfg.redirect_fraction * n))
    targets = rng.choice(n, size=min(n_red, n), replace=False)
    redirect_of: dict[int, int] = {}
    for t in targets.tolist():
        dest = int(ids[t])
        src = next_id
        next_id += 1
        redirects.append((src, dest))
        if rng.random() < 0.25:
            redirects.append((next_id, src))
            src = next_id
            next_id += 1
        redirect_of[dest] = src
    edges = [(s, redirect_of[d]) if d in redirect_of and rng.random() < 0.5 else (s, d)
             for s, d in edges]

    # category pages linked from many articles
    categories = []
    for _ in range(cfg.category_count):
        c = next_id
        next_id += 1
        categories.append(c)
        members = rng.choice(n, size=max(1, n // 20), replace=False)
        edges.extend((int(ids[m]), c) for m in members.tolist())

    # texts
    taken: set[str] = set()
    background = _words(rng, 300, "", taken)
    topic_words = [_words(rng, 150, "", taken) for _ in range(cfg.blocks)]
    sub_words = [[_words(rng, 60, "", taken) for _ in range(n_sub[t])] for t in range(cfg.blocks)]
    corpus = []
    for i in range(n):
        t, s = int(topic[i]), int(subtopic[i])
        length = max(10, int(rng.poisson(cfg.doc_length)))
        parts = rng.multinomial(length, [0.3, 0.35, 0.35])
        words = []
        for vocab, count in zip((background, topic_words[t], sub_words[t][s]), parts.tolist()):
            picks = rng.choice(len(vocab), size=count, p=_zipf(len(vocab)))
            words.extend(vocab[j] for j in picks.tolist())
        rng.shuffle(words)
        corpus.append((int(ids[i]), " ".join(words).capitalize() + "."))

    by_topic = [np.flatnonzero(topic == t) for t in range(cfg.blocks)]
    by_sub = {(t, s): np.flatnonzero((topic == t) & (subtopic == s))
              for t in range(cfg.blocks) for s in range(n_sub[t])}

    def make_users(count: int, first_uid: int) -> list[EditHistory]:
        out = []
        for u in range(count):
            t = int(rng.integers(cfg.blocks))
            s = int(rng.integers(n_sub[t]))
            length = int(rng.integers(cfg.min_edits, cfg.max_edits + 1))
            chosen: list[int] = []
            seen: set[int] = set()
            while len(chosen) < min(length, n):
                if rng.random() < cfg.affinity or cfg.blocks == 1:
                    pool = by_sub[(t, s)] if rng.random() < cfg.subtopic_affinity else by_topic[t]
                else:
                    other = [b for b in range(cfg.blocks) if b != t]
                    pool = by_topic[other[int(rng.integers(len(other)))]]
                a = int(ids[pool[int(rng.integers(len(pool)))]])
                if a not in seen:
                    seen.add(a)
                    chosen.append(a)
            ts = EPOCH_2015 + int(rng.integers(0, 4 * 365 * 86400))
            events = []
            for a in chosen:
                ts += int(rng.integers(60, 86400))
                events.append((a, ts))
                if rng.random() < 0.2:      # repeat edit
                    ts += int(rng.integers(60, 3600))
                    events.append((a, ts))
            if rng.random() < 0.1:          # stale edit before the cutoff
                events.insert(0, (chosen[0], EPOCH_2015 - int(rng.integers(1, 10**7))))
            out.append(EditHistory(first_uid + u, events))
        return out

    train = make_users(cfg.train_users, 1)
    evals = make_users(cfg.users, 1 + cfg.train_users)
    # a few users too sparse to keep
    train.extend(EditHistory(1 + cfg.train_users + cfg.users + i,
                             [(int(ids[int(rng.integers(n))]), EPOCH_2015 + 1000 * (j + 1))
                              for j in range(3)]) for i in range(3))
    return SynthData(ids, topic, subtopic, edges, redirects, categories, corpus, train, evals)


def write_dataset(data: SynthData, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.tsv" for name in
             ("edges", "redirects", "categories", "corpus", "history_train", "history_eval",
              "topics")}
    write_edge_list(paths["edges"], data.edges)
    write_edge_list(paths["redirects"], data.redirects)
    paths["categories"].write_text("".join(f"{c}\n" for c in data.categories), encoding="utf-8")
    write_corpus(paths["corpus"], data.corpus)
    write_edit_history(paths["history_train"], data.train_histories)
    write_edit_history(paths["history_eval"], data.eval_histories)
    paths["topics"].write_text(
        "".join(f"{a}\t{t}\t{s}\n" for a, t, s in
                zip(data.article_ids.tolist(), data.topic.tolist(), data.subtopic.tolist())),
        encoding="utf-8")
    return paths
