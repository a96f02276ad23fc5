"""Exact and approximate k-nearest-neighbor indexes over an EmbeddingStore.

All kinds rank by inner product on unit-normalized vectors (cosine
similarity). Results are ordered by descending similarity with ties broken
by ascending article id.

Persistence: ``b"ANN1"``, u8 kind tag, u16 format version, then a shared
header (u32 dim, u64 count, ids, float32 vectors) and a kind-specific payload.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from os import PathLike

import numpy as np

from . import _core
from .binio import BinReader, BinWriter, FormatError
from .embstore import EmbeddingStore, normalize_rows
from .errors import DimensionError

MAGIC = b"ANN1"
FORMAT_VERSION = 1
KINDS = ("exact", "hnsw", "ivf", "lsh")
_TAGS = {"exact": 0, "hnsw": 1, "ivf": 2, "lsh": 3}


class IndexNotBuiltError(RuntimeError):
    pass


class AnnIndex:
    kind = ""

    def __init__(self):
        self.ids: np.ndarray | None = None
        self.vectors: np.ndarray | None = None

    @property
    def built(self) -> bool:
        return self.vectors is not None

    @property
    def dim(self) -> int:
        self._check_built()
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return 0 if self.ids is None else len(self.ids)

    def _check_built(self) -> None:
        if not self.built:
            raise IndexNotBuiltError(f"{self.kind} index has not been built")

    def build(self, store: EmbeddingStore) -> "AnnIndex":
        if len(store) == 0:
            raise ValueError("cannot build an index over an empty store")
        ids = np.array(store.ids, dtype=np.uint64)
        vectors = np.ascontiguousarray(normalize_rows(store.vectors), dtype=np.float32)
        self._build(vectors)
        self.ids = ids
        self.vectors = vectors
        return self

    def _build(self, vectors: np.ndarray) -> None:
        pass

    def search(self, query, k: int) -> list[tuple[int, float]]:
        """Top-``k`` (article id, similarity) pairs for ``query``."""
        self._check_built()
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(query, dtype=np.float32).ravel()
        if q.shape[0] != self.dim:
            raise DimensionError(f"query dimension {q.shape[0]} != index dimension {self.dim}")
        q = np.ascontiguousarray(normalize_rows(q), dtype=np.float32)
        rows, sims = self._search(q, k)
        return _rank(self.ids, rows, sims, k)

    def _search(self, q: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    # persistence -----------------------------------------------------
    def _write_payload(self, w: BinWriter) -> None:
        pass

    def _read_payload(self, r: BinReader) -> None:
        pass


def _rank(ids: np.ndarray, rows: np.ndarray, sims: np.ndarray, k: int) -> list[tuple[int, float]]:
    rows = np.asarray(rows, dtype=np.int64)
    sims = np.asarray(sims, dtype=np.float64)
    cand_ids = ids[rows]
    order = np.lexsort((cand_ids, -sims))[:k]
    return [(int(cand_ids[i]), float(sims[i])) for i in order]


def _top_rows(scores: np.ndarray, k: int) -> np.ndarray:
    """Rows holding the k largest scores, keeping every row tied at the cut."""
    if k >= len(scores):
        return np.arange(len(scores))
    part = np.argpartition(-scores, k - 1)[:k]
    cut = scores[part].min()
    return np.flatnonzero(scores >= cut)


class ExactIndex(AnnIndex):
    """Flat scan over every stored vector."""

    kind = "exact"

    def _search(self, q, k):
        sims = self.vectors @ q
        rows = _top_rows(sims, k)
        return rows, sims[rows]


class HnswIndex(AnnIndex):
    """Layered proximity graph (insertion in store order, seeded levels)."""

    kind = "hnsw"

    def __init__(self, M: int = 16, ef_construction: int = 200, ef_search: int = 64,
                 seed: int = 0, max_level: int = 16):
        super().__init__()
        if M < 2:
            raise ValueError("M must be >= 2")
        self.M = M
        self.M0 = 2 * M
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self.seed = seed
        self.max_level = max_level

    def _draw_levels(self, n: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        u = rng.random(n)
        levels = np.floor(-np.log1p(-u) / math.log(self.M)).astype(np.int32)
        return np.minimum(levels, self.max_level)

    def _allocate(self, levels: np.ndarray) -> None:
        n = len(levels)
        self.levels = np.ascontiguousarray(levels, dtype=np.int32)
        self.links0 = np.full((n, self.M0), -1, dtype=np.int32)
        self.counts0 = np.zeros(n, dtype=np.int32)
        starts = np.concatenate([[0], np.cumsum(levels, dtype=np.int64)[:-1]])
        self.up_offset = np.where(levels > 0, starts, -1).astype(np.int64)
        total_up = int(levels.sum())
        self.links_up = np.full((total_up, self.M), -1, dtype=np.int32)
        self.counts_up = np.zeros(total_up, dtype=np.int32)

    def _build(self, vectors):
        self._allocate(self._draw_levels(len(vectors)))
        self.entry = int(_core.hnsw_build(vectors, self.levels, self.links0, self.counts0,
                                          self.up_offset, self.links_up, self.counts_up,
                                          self.ef_construction))

    def _search(self, q, k):
        return _core.hnsw_search(self.vectors, self.levels, self.links0, self.counts0,
                                 self.up_offset, self.links_up, self.counts_up, self.entry,
                                 q, k, self.ef_search)

    def _write_payload(self, w):
        w.pack("IIIIQi", self.M, self.M0, self.ef_construction, self.ef_search, self.seed,
               self.entry)
        w.pack("I", self.max_level)
        w.array(self.levels, "<i4")
        w.array(self.counts0, "<i4")
        w.array(self.links0, "<i4")
        w.pack("Q", len(self.counts_up))
        w.array(self.up_offset, "<i8")
        w.array(self.counts_up, "<i4")
        w.array(self.links_up, "<i4")

    def _read_payload(self, r):
        n = len(self.ids)
        self.M, self.M0, self.ef_construction, self.ef_search, self.seed, self.entry = r.unpack(
            "IIIIQi")
        self.max_level = r.unpack("I")
        self.levels = r.array("<i4", n)
        self.counts0 = r.array("<i4", n)
        self.links0 = r.array("<i4", n * self.M0, (n, self.M0))
        total_up = r.unpack("Q")
        self.up_offset = r.array("<i8", n)
        self.counts_up = r.array("<i4", total_up)
        self.links_up = r.array("<i4", total_up * self.M, (total_up, self.M))


class IvfIndex(AnnIndex):
    """Coarse k-means quantizer with inverted lists and exact re-scoring."""

    kind = "ivf"

    def __init__(self, nlist: int | None = None, nprobe: int = 8, kmeans_iters: int = 20,
                 seed: int = 0):
        super().__init__()
        self.nlist = nlist
        self.nprobe = nprobe
        self.kmeans_iters = kmeans_iters
        self.seed = seed

    def _build(self, vectors):
        n = len(vectors)
        nlist = self.nlist if self.nlist is not None else math.ceil(math.sqrt(n))
        if nlist > n:
            raise ValueError(f"nlist={nlist} exceeds the {n} stored vectors; use a smaller nlist")
        if nlist < 1:
            raise ValueError("nlist must be >= 1")
        self.nlist = nlist
        self.centroids, assign = spherical_kmeans(vectors, nlist, self.kmeans_iters, self.seed)
        order = np.argsort(assign, kind="stable")
        self.members = order.astype(np.int64)
        self.offsets = np.concatenate(
            [[0], np.cumsum(np.bincount(assign, minlength=nlist))]).astype(np.int64)

    def _search(self, q, k):
        csims = self.centroids @ q
        nprobe = min(self.nprobe, self.nlist)
        probe = np.lexsort((np.arange(self.nlist), -csims))[:nprobe]
        rows = np.concatenate([self.members[self.offsets[c]:self.offsets[c + 1]] for c in probe])
        sims = self.vectors[rows] @ q
        keep = _top_rows(sims, k)
        return rows[keep], sims[keep]

    def _write_payload(self, w):
        w.pack("IIIQ", self.nlist, self.nprobe, self.kmeans_iters, self.seed)
        w.array(self.centroids, "<f4")
        w.array(self.offsets, "<i8")
        w.array(self.members, "<i8")

    def _read_payload(self, r):
        self.nlist, self.nprobe, self.kmeans_iters, self.seed = r.unpack("IIIQ")
        dim = self.vectors.shape[1]
        self.centroids = r.array("<f4", self.nlist * dim, (self.nlist, dim))
        self.offsets = r.array("<i8", self.nlist + 1)
        self.members = r.array("<i8", len(self.ids))


class LshIndex(AnnIndex):
    """Random-hyperplane bit signatures; Hamming shortlist, exact re-ranking."""

    kind = "lsh"

    def __init__(self, n_bits: int = 256, rerank_factor: int = 10, seed: int = 0):
        super().__init__()
        if n_bits < 1:
            raise ValueError("n_bits must be >= 1")
        self.n_bits = n_bits
        self.rerank_factor = rerank_factor
        self.seed = seed

    def _encode(self, x: np.ndarray) -> np.ndarray:
        bits = (np.atleast_2d(x) @ self.planes.T) > 0
        words = -(-self.n_bits // 64)
        padded = np.zeros((bits.shape[0], words * 64), dtype=bool)
        padded[:, : self.n_bits] = bits
        packed = np.packbits(padded, axis=1, bitorder="little")
        return np.ascontiguousarray(packed.view("<u8").astype(np.uint64))

    def _build(self, vectors):
        rng = np.random.default_rng(self.seed)
        self.planes = rng.standard_normal((self.n_bits, vectors.shape[1])).astype(np.float32)
        self.codes = self._encode(vectors)

    def _search(self, q, k):
        dist = _core.hamming_distances(self.codes, self._encode(q)[0])
        m = min(len(dist), self.rerank_factor * k)
        if m < len(dist):
            part = np.argpartition(dist, m - 1)[:m]
            cut = dist[part].max()
            below = np.flatnonzero(dist < cut)
            tied = np.flatnonzero(dist == cut)[: m - len(below)]
            rows = np.concatenate([below, tied])
        else:
            rows = np.arange(len(dist))
        sims = self.vectors[rows] @ q
        keep = _top_rows(sims, k)
        return rows[keep], sims[keep]

    def _write_payload(self, w):
        w.pack("IIQ", self.n_bits, self.rerank_factor, self.seed)
        w.array(self.planes, "<f4")
        w.array(self.codes, "<u8")

    def _read_payload(self, r):
        self.n_bits, self.rerank_factor, self.seed = r.unpack("IIQ")
        dim = self.vectors.shape[1]
        words = -(-self.n_bits // 64)
        self.planes = r.array("<f4", self.n_bits * dim, (self.n_bits, dim))
        self.codes = r.array("<u8", len(self.ids) * words, (len(self.ids), words))


_CLASSES = {"exact": ExactIndex, "hnsw": HnswIndex, "ivf": IvfIndex, "lsh": LshIndex}


def spherical_kmeans(x: np.ndarray, k: int, iters: int, seed: int):
    """Seeded k-means on unit vectors with cosine assignment.

    Returns (unit centroids, assignment). Empty clusters keep their previous
    centroid.
    """
    rng = np.random.default_rng(seed)
    centroids = x[np.sort(rng.choice(len(x), size=k, replace=False))].copy()
    assign = _assign(x, centroids)
    for _ in range(iters):
        sums = np.zeros_like(centroids, dtype=np.float64)
        np.add.at(sums, assign, x)
        counts = np.bincount(assign, minlength=k)
        nonempty = counts > 0
        centroids[nonempty] = normalize_rows(sums[nonempty]).astype(np.float32)
        new_assign = _assign(x, centroids)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return np.ascontiguousarray(centroids, dtype=np.float32), assign


def _assign(x: np.ndarray, centroids: np.ndarray, chunk: int = 8192) -> np.ndarray:
    out = np.empty(len(x), dtype=np.int64)
    for s in range(0, len(x), chunk):
        out[s:s + chunk] = np.argmax(x[s:s + chunk] @ centroids.T, axis=1)
    return out


def build_index(store: EmbeddingStore, kind: str = "exact", **params) -> AnnIndex:
    """Build an index of the given kind over ``store``."""
    try:
        cls = _CLASSES[kind]
    except KeyError:
        raise ValueError(f"unknown index kind {kind!r}; expected one of {KINDS}") from None
    return cls(**params).build(store)


def search(index: AnnIndex, query, k: int) -> list[tuple[int, float]]:
    return index.search(query, k)


def save_index(index: AnnIndex, path: str | PathLike) -> None:
    index._check_built()
    with open(path, "wb") as fh:
        w = BinWriter(fh)
        w.magic(MAGIC)
        w.pack("BH", _TAGS[index.kind], FORMAT_VERSION)
        w.pack("IQ", index.dim, len(index.ids))
        w.array(index.ids, "<u8")
        w.array(index.vectors, "<f4")
        index._write_payload(w)


def load_index(path: str | PathLike) -> AnnIndex:
    with open(path, "rb") as fh:
        r = BinReader(fh, str(path))
        r.expect_magic(MAGIC)
        tag, version = r.unpack("BH")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported index format version {version}")
        kinds = {v: k for k, v in _TAGS.items()}
        if tag not in kinds:
            raise FormatError(f"{path}: unknown index kind tag {tag}")
        index = _CLASSES[kinds[tag]].__new__(_CLASSES[kinds[tag]])
        AnnIndex.__init__(index)
        dim, n = r.unpack("IQ")
        ids = r.array("<u8", n)
        vectors = r.array("<f4", n * dim, (n, dim))
        index.ids = ids
        index.vectors = np.ascontiguousarray(vectors)
        index._read_payload(r)
        r.expect_eof()
    return index


@dataclass
class BenchReport:
    kind: str
    setup_seconds: float
    seconds_per_request: float
    recall_at_k: float
    mrr: float


def benchmark(store: EmbeddingStore, queries, kinds=KINDS, k: int = 10,
              params: dict[str, dict] | None = None) -> list[BenchReport]:
    """Setup time, per-query latency, and recall/MRR against exact search.

    Recall@k is the mean fraction of the exact top-k retrieved; MRR is the
    mean reciprocal rank of the exact top-1 inside each result (0 if absent).
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float32))
    if len(queries) == 0:
        raise ValueError("benchmark needs at least one query")
    params = params or {}
    exact = build_index(store, "exact")
    truth = [[i for i, _ in exact.search(q, k)] for q in queries]
    reports = []
    for kind in kinds:
        t0 = time.perf_counter()
        index = build_index(store, kind, **params.get(kind, {}))
        setup = time.perf_counter() - t0
        results = []
        t0 = time.perf_counter()
        for q in queries:
            results.append(index.search(q, k))
        per_query = (time.perf_counter() - t0) / len(queries)
        recall, rr = 0.0, 0.0
        for got, want in zip(results, truth):
            got_ids = [i for i, _ in got]
            recall += len(set(got_ids) & set(want)) / len(want)
            if want[0] in got_ids:
                rr += 1.0 / (got_ids.index(want[0]) + 1)
        reports.append(BenchReport(kind, setup, per_query, recall / len(queries),
                                   rr / len(queries)))
    return reports


def format_report(reports: list[BenchReport]) -> str:
    lines = ["Algorithm\tSetup\tSecs./req.\tRecall\tMRR"]
    for r in reports:
        lines.append(f"{r.kind}\t{r.setup_seconds:.4f}\t{r.seconds_per_request:.6f}\t"
                     f"{r.recall_at_k:.4f}\t{r.mrr:.4f}")
    return "\n".join(lines) + "\n"
