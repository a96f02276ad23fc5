"""Pure-Python versions of the compiled inner loops.

Same algorithms, same tie rules, same in-place contracts as ``_ckernels``.
Used when the extension is not built or ``RECNET_PURE_PYTHON`` is set.
"""
from __future__ import annotations

import heapq
import math

import numpy as np


def _log_sigmoid_neg(f: float) -> float:
    if f > 0:
        return math.log1p(math.exp(-f))
    return -f + math.log1p(math.exp(f))


def pvdbow_epoch(doc_vecs, out_vecs, pair_docs, pair_words, negs, lrs) -> float:
    total = 0.0
    n_neg = negs.shape[1]
    for p in range(len(pair_docs)):
        v = doc_vecs[pair_docs[p]]
        v64 = v.astype(np.float64)
        word = int(pair_words[p])
        lr = float(lrs[p])
        grad = np.zeros(v.shape[0])
        for t in range(n_neg + 1):
            if t == 0:
                target, label = word, 1.0
            else:
                target = int(negs[p, t - 1])
                if target == word:
                    continue
                label = 0.0
            u = out_vecs[target]
            u64 = u.astype(np.float64)
            f = float(v64 @ u64)
            total += _log_sigmoid_neg(f) if label == 1.0 else _log_sigmoid_neg(-f)
            g = (label - 1.0 / (1.0 + math.exp(-f))) * lr
            grad += g * u64
            u += (g * v64).astype(np.float32)
        v += grad.astype(np.float32)
    return total


class _Graph:
    def __init__(self, vecs, links0, counts0, up_offset, links_up, counts_up):
        self.vecs = vecs
        self.vecs64 = vecs.astype(np.float64)
        self.links0 = links0
        self.counts0 = counts0
        self.up_offset = up_offset
        self.links_up = links_up
        self.counts_up = counts_up
        self.M = links_up.shape[1]
        self.M0 = links0.shape[1]

    def links(self, i: int, level: int) -> np.ndarray:
        if level == 0:
            return self.links0[i, : self.counts0[i]]
        row = self.up_offset[i] + level - 1
        return self.links_up[row, : self.counts_up[row]]

    def set_links(self, i: int, level: int, new) -> None:
        if level == 0:
            self.links0[i, : len(new)] = new
            self.counts0[i] = len(new)
        else:
            row = self.up_offset[i] + level - 1
            self.links_up[row, : len(new)] = new
            self.counts_up[row] = len(new)

    def sim(self, q64: np.ndarray, i: int) -> float:
        return float(q64 @ self.vecs64[i])


def _greedy(g: _Graph, q64, cur: int, cur_sim: float, level: int):
    changed = True
    while changed:
        changed = False
        for e in g.links(cur, level).tolist():
            s = g.sim(q64, e)
            if s > cur_sim:
                cur_sim = s
                cur = e
                changed = True
    return cur, cur_sim


def _search_layer(g: _Graph, q64, ep: list[tuple[float, int]], ef: int, level: int):
    """Returns the result set ordered best first as (sim, idx) pairs."""
    visited = set()
    cand: list[tuple[float, int]] = []  # (-sim, idx): best on top
    top: list[tuple[float, int]] = []  # (sim, -idx): worst on top
    for s, i in ep:
        visited.add(i)
        heapq.heappush(cand, (-s, i))
        heapq.heappush(top, (s, -i))
        if len(top) > ef:
            heapq.heappop(top)
    while cand:
        neg_cs, c = heapq.heappop(cand)
        if -neg_cs < top[0][0]:
            break
        for e in g.links(c, level).tolist():
            if e in visited:
                continue
            visited.add(e)
            s = g.sim(q64, e)
            if len(top) < ef or s > top[0][0]:
                heapq.heappush(cand, (-s, e))
                heapq.heappush(top, (s, -e))
                if len(top) > ef:
                    heapq.heappop(top)
    return [(s, -ni) for s, ni in sorted(top, key=lambda t: (-t[0], -t[1]))]


def _select(g: _Graph, cands: list[tuple[float, int]], m: int) -> list[int]:
    if len(cands) <= m:
        return [i for _, i in cands]
    out: list[int] = []
    for s, c in cands:
        good = True
        for o in out:
            if float(g.vecs64[c] @ g.vecs64[o]) > s:
                good = False
                break
        if good:
            out.append(c)
            if len(out) >= m:
                break
    return out


def hnsw_build(vecs, levels, links0, counts0, up_offset, links_up, counts_up,
               ef_construction: int) -> int:
    n = vecs.shape[0]
    if n == 0:
        return -1
    g = _Graph(vecs, links0, counts0, up_offset, links_up, counts_up)
    entry = 0
    max_level = int(levels[0])
    for i in range(1, n):
        q64 = g.vecs64[i]
        lvl = int(levels[i])
        cur = entry
        cur_sim = g.sim(q64, cur)
        for lc in range(max_level, lvl, -1):
            cur, cur_sim = _greedy(g, q64, cur, cur_sim, lc)
        ep = [(cur_sim, cur)]
        for lc in range(min(lvl, max_level), -1, -1):
            w = _search_layer(g, q64, ep, ef_construction, lc)
            sel = _select(g, w, g.M)
            g.set_links(i, lc, sel)
            cap = g.M0 if lc == 0 else g.M
            for e in sel:
                existing = g.links(e, lc)
                if len(existing) < cap:
                    g.set_links(e, lc, existing.tolist() + [i])
                    continue
                base = g.vecs64[e]
                pool = [(float(base @ g.vecs64[i]), i)]
                pool += [(float(base @ g.vecs64[x]), x) for x in existing.tolist()]
                pool.sort(key=lambda t: (-t[0], t[1]))
                g.set_links(e, lc, _select(g, pool, cap))
            ep = w
        if lvl > max_level:
            max_level = lvl
            entry = i
    return entry


def hnsw_search(vecs, levels, links0, counts0, up_offset, links_up, counts_up,
                entry: int, query, k: int, ef: int):
    ef = max(ef, k)
    g = _Graph(vecs, links0, counts0, up_offset, links_up, counts_up)
    q64 = np.asarray(query, dtype=np.float64)
    cur = entry
    cur_sim = g.sim(q64, cur)
    for lc in range(int(levels[entry]), 0, -1):
        cur, cur_sim = _greedy(g, q64, cur, cur_sim, lc)
    w = _search_layer(g, q64, [(cur_sim, cur)], ef, 0)[:k]
    idx = np.array([i for _, i in w], dtype=np.int32)
    sims = np.array([s for s, _ in w], dtype=np.float64)
    return idx, sims


def hamming_distances(codes, query):
    return np.bitwise_count(codes ^ query).sum(axis=1, dtype=np.int32)
