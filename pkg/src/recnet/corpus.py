"""Ingestion and cleaning of the article graph, article texts and edit histories.

Flat-file inputs (all UTF-8, tab separated, one record per line):

* edges      ``src<TAB>dst``
* redirects  ``source<TAB>destination``
* categories ``article_id``
* history    ``user_id<TAB>article_id<TAB>timestamp``
* corpus     ``article_id<TAB>escaped_text`` (``\\t``, ``\\n`` and ``\\\\`` escapes)

The cleaned graph persists as ``GRF1``: magic, u64 node count, u64 edge
count, sorted node ids, then the sorted (src, dst) pairs, all little-endian.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from os import PathLike

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .binio import BinReader, BinWriter

log = logging.getLogger(__name__)

GRAPH_MAGIC = b"GRF1"


class ParseError(ValueError):
    """Malformed input line; ``line`` is 1-based."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class RedirectCycleError(ValueError):
    def __init__(self, cycle: list[int]):
        super().__init__("redirect cycle: " + " -> ".join(str(c) for c in cycle + cycle[:1]))
        self.cycle = cycle


class CorpusError(ValueError):
    pass


class ArticleGraph:
    """Directed link graph without self-loops or duplicate edges.

    ``nodes`` is a sorted uint64 array; edges are sorted (src, dst) pairs.
    """

    def __init__(self, nodes=(), src=(), dst=()):
        src = np.asarray(src, dtype=np.uint64)
        dst = np.asarray(dst, dtype=np.uint64)
        keep = src != dst
        pairs = np.unique(np.stack([src[keep], dst[keep]], axis=1), axis=0) if keep.any() \
            else np.empty((0, 2), dtype=np.uint64)
        self.nodes = np.unique(np.concatenate([np.asarray(nodes, dtype=np.uint64), src, dst]))
        self.src = np.ascontiguousarray(pairs[:, 0])
        self.dst = np.ascontiguousarray(pairs[:, 1])
        for a in (self.nodes, self.src, self.dst):
            a.flags.writeable = False

    @classmethod
    def from_edges(cls, edges, nodes=()) -> "ArticleGraph":
        edges = list(edges)
        src = [int(a) for a, _ in edges]
        dst = [int(b) for _, b in edges]
        return cls(list(nodes), src, dst)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.src.tolist(), self.dst.tolist()))

    def __contains__(self, node) -> bool:
        return int(node) in self.index

    @cached_property
    def index(self) -> dict[int, int]:
        """Article id -> position in ``nodes``."""
        return {int(n): i for i, n in enumerate(self.nodes.tolist())}

    def positions(self, ids) -> np.ndarray:
        return np.fromiter((self.index[int(i)] for i in ids), dtype=np.int64)

    @cached_property
    def _edge_pos(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.searchsorted(self.nodes, self.src).astype(np.int64),
                np.searchsorted(self.nodes, self.dst).astype(np.int64))

    @cached_property
    def out_csr(self) -> sparse.csr_matrix:
        s, d = self._edge_pos
        n = self.num_nodes
        return sparse.csr_matrix((np.ones(len(s), dtype=np.int8), (s, d)), shape=(n, n))

    @cached_property
    def undirected_csr(self) -> sparse.csr_matrix:
        """Symmetric 0/1 adjacency over node positions (reciprocal links merged)."""
        a = self.out_csr
        u = ((a + a.T) > 0).astype(np.int8).tocsr()
        u.sort_indices()
        return u

    def out_neighbors(self, node) -> list[int]:
        i = self.index[int(node)]
        a = self.out_csr
        return self.nodes[a.indices[a.indptr[i]:a.indptr[i + 1]]].tolist()

    def neighbors(self, node) -> list[int]:
        """Neighbors in the undirected view."""
        i = self.index[int(node)]
        u = self.undirected_csr
        return self.nodes[u.indices[u.indptr[i]:u.indptr[i + 1]]].tolist()

    def __eq__(self, other) -> bool:
        if not isinstance(other, ArticleGraph):
            return NotImplemented
        return (np.array_equal(self.nodes, other.nodes) and np.array_equal(self.src, other.src)
                and np.array_equal(self.dst, other.dst))

    def __repr__(self) -> str:
        return f"ArticleGraph(nodes={self.num_nodes}, edges={self.num_edges})"

    def write(self, path: str | PathLike) -> None:
        with open(path, "wb") as fh:
            w = BinWriter(fh)
            w.magic(GRAPH_MAGIC)
            w.pack("QQ", self.num_nodes, self.num_edges)
            w.array(self.nodes, "<u8")
            w.array(self.src, "<u8")
            w.array(self.dst, "<u8")

    @classmethod
    def read(cls, path: str | PathLike) -> "ArticleGraph":
        with open(path, "rb") as fh:
            r = BinReader(fh, str(path))
            r.expect_magic(GRAPH_MAGIC)
            n, m = r.unpack("QQ")
            nodes = r.array("<u8", n)
            src = r.array("<u8", m)
            dst = r.array("<u8", m)
            r.expect_eof()
        return cls(nodes, src, dst)


RedirectMap = dict[int, int]


@dataclass(frozen=True)
class GraphStats:
    vertex_count: int
    edge_count: int
    undirected_edge_count: int
    mean_degree: float
    median_degree: float
    pseudo_diameter: int

    def as_tsv(self) -> str:
        rows = [
            ("vertices", self.vertex_count),
            ("edges", self.edge_count),
            ("undirected_edges", self.undirected_edge_count),
            ("mean_degree_undirected", f"{self.mean_degree:.4f}"),
            ("median_degree_undirected", f"{self.median_degree:g}"),
            ("pseudo_diameter", self.pseudo_diameter),
        ]
        return "".join(f"{k}\t{v}\n" for k, v in rows)


@dataclass
class EditHistory:
    user_id: int
    events: list[tuple[int, int]] = field(default_factory=list)

    def distinct_articles(self) -> list[int]:
        """Articles in order of first edit."""
        seen: dict[int, None] = {}
        for article, _ in self.events:
            seen.setdefault(article, None)
        return list(seen)


# ---------------------------------------------------------------------------
# readers
# ---------------------------------------------------------------------------

def _parse_uint(token: str) -> int:
    if not token.isdigit() or not token.isascii():
        raise ValueError(f"not an unsigned decimal integer: {token!r}")
    value = int(token)
    if value >= 1 << 64:
        raise ValueError(f"id out of u64 range: {token}")
    return value


def _records(path, ncols: int):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != ncols:
                raise ParseError(path, lineno, f"expected {ncols} tab-separated fields, got {len(parts)}")
            try:
                yield lineno, [_parse_uint(p) for p in parts]
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None


def load_edge_list(path: str | PathLike) -> ArticleGraph:
    src, dst = [], []
    for _, (a, b) in _records(path, 2):
        src.append(a)
        dst.append(b)
    return ArticleGraph((), np.array(src, dtype=np.uint64), np.array(dst, dtype=np.uint64))


def load_redirects(path: str | PathLike) -> RedirectMap:
    out: RedirectMap = {}
    for lineno, (a, b) in _records(path, 2):
        if a in out and out[a] != b:
            raise ParseError(path, lineno, f"redirect source {a} listed twice")
        out[a] = b
    return out


def load_id_set(path: str | PathLike) -> set[int]:
    return {ids[0] for _, ids in _records(path, 1)}


def validate_redirects(r: RedirectMap) -> dict[int, int]:
    """Map every redirect source to its final destination; raise on cycles."""
    final: dict[int, int] = {}
    for start in r:
        if start in final:
            continue
        chain = [start]
        on_chain = {start}
        cur = r[start]
        while cur in r and cur not in final:
            if cur in on_chain:
                raise RedirectCycleError(chain[chain.index(cur):])
            chain.append(cur)
            on_chain.add(cur)
            cur = r[cur]
        dest = final.get(cur, cur)
        for node in chain:
            final[node] = dest
    return final


def resolve_redirects(g: ArticleGraph, r: RedirectMap) -> ArticleGraph:
    final = validate_redirects(r)
    if not final:
        return g
    sources = np.fromiter(final, dtype=np.uint64)
    keep = ~np.isin(g.src, sources)
    src = g.src[keep]
    dst = g.dst[keep].copy()
    hits = np.isin(dst, sources)
    if hits.any():
        dst[hits] = [final[int(d)] for d in dst[hits].tolist()]
    nodes = g.nodes[~np.isin(g.nodes, sources)]
    return ArticleGraph(nodes, src, dst)


def filter_category_nodes(g: ArticleGraph, category_ids) -> ArticleGraph:
    drop = np.fromiter((int(c) for c in category_ids), dtype=np.uint64)
    if len(drop) == 0:
        return g
    keep = ~(np.isin(g.src, drop) | np.isin(g.dst, drop))
    return ArticleGraph(g.nodes[~np.isin(g.nodes, drop)], g.src[keep], g.dst[keep])


def graph_stats(g: ArticleGraph) -> GraphStats:
    """Degree statistics over the undirected view plus a double-sweep
    BFS lower bound on the diameter, started from the highest-degree node."""
    n = g.num_nodes
    if n == 0:
        return GraphStats(0, 0, 0, 0.0, 0.0, 0)
    u = g.undirected_csr
    deg = np.diff(u.indptr)
    und_edges = int(deg.sum()) // 2
    start = int(np.argmax(deg))
    far, _ = _farthest(u, start)
    _, ecc = _farthest(u, far)
    return GraphStats(n, g.num_edges, und_edges, float(deg.sum()) / n,
                      float(np.median(deg)), ecc)


def _farthest(u: sparse.csr_matrix, source: int) -> tuple[int, int]:
    dist = csgraph.shortest_path(u, unweighted=True, directed=False, indices=source)
    dist[~np.isfinite(dist)] = -1
    ecc = int(dist.max())
    return int(np.flatnonzero(dist == ecc)[0]), ecc


def load_edit_history(path: str | PathLike, min_distinct_articles: int = 5,
                      cutoff_timestamp: int = 0) -> list[EditHistory]:
    per_user: dict[int, list[tuple[int, int]]] = {}
    for _, (user, article, ts) in _records(path, 3):
        if ts < cutoff_timestamp:
            continue
        per_user.setdefault(user, []).append((article, ts))
    out = []
    for user in sorted(per_user):
        events = sorted(per_user[user], key=lambda e: e[1])
        h = EditHistory(user, events)
        if len(h.distinct_articles()) >= min_distinct_articles:
            out.append(h)
    log.info("loaded %d users (%d before distinct-article filter)", len(out), len(per_user))
    return out


def write_edit_history(path: str | PathLike, histories: list[EditHistory]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h in histories:
            for article, ts in h.events:
                fh.write(f"{h.user_id}\t{article}\t{ts}\n")


_ESCAPES = {"t": "\t", "n": "\n", "\\": "\\"}


def unescape_text(s: str) -> str:
    if "\\" not in s:
        return s
    out = []
    i = 0
    while i < len(s):
        ch = s[i]
        if ch == "\\":
            if i + 1 >= len(s) or s[i + 1] not in _ESCAPES:
                raise CorpusError(f"invalid escape at offset {i}")
            out.append(_ESCAPES[s[i + 1]])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def escape_text(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def load_corpus(path: str | PathLike) -> list[tuple[int, str]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    out: list[tuple[int, str]] = []
    seen: set[int] = set()
    for lineno, line in enumerate(raw.split(b"\n"), 1):
        if not line:
            continue
        try:
            text_line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: invalid UTF-8 ({exc.reason})") from None
        key, sep, body = text_line.partition("\t")
        if not sep:
            raise ParseError(path, lineno, "expected article_id<TAB>text")
        try:
            article = _parse_uint(key)
            text = unescape_text(body)
        except (ValueError, CorpusError) as exc:
            raise ParseError(path, lineno, str(exc)) from None
        if article in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate article id {article}")
        seen.add(article)
        out.append((article, text))
    return out


def write_corpus(path: str | PathLike, docs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for article, text in docs:
            fh.write(f"{article}\t{escape_text(text)}\n")


def write_edge_list(path: str | PathLike, edges) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in edges:
            fh.write(f"{a}\t{b}\n")
