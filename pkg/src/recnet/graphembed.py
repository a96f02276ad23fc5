"""Two-layer GraphSAGE encoder (mean aggregator, self-concatenation).

Layer l maps h_v to ``act(W_l @ [h_v ; mean(h_u for sampled u)])``; layer 1
uses ReLU, layer 2 is linear and its rows are L2-normalized. Training is
unsupervised link prediction with a max-margin loss against sampled
non-neighbors, optimized with Adam.

Neighbor sampling draws from a fixed-capacity per-node table
(:class:`SampledAdjacency`). Which k entries a node gets is decided by
hashing (seed, stream, node id, neighbor id) and keeping the k smallest
keys, so every node has its own reproducible stream regardless of batch
composition or order.

Checkpoint ``GSM1``: magic, u32 (in, hidden, out, k, max_neighbors), then
W1 (hidden x 2*in) and W2 (out x 2*hidden) as row-major float32.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from os import PathLike

import numpy as np
from scipy import sparse

from .binio import BinReader, BinWriter, FormatError
from .corpus import ArticleGraph
from .embstore import EmbeddingStore
from .errors import DimensionError
from .optim import Adam

log = logging.getLogger(__name__)

MAGIC = b"GSM1"
_INFERENCE_STREAM = 1 << 40
_U64_MAX = np.uint64(0xFFFFFFFFFFFFFFFF)

GraphEmbeddings = EmbeddingStore


# -- hashing ---------------------------------------------------------------

def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(0xBF58476D1CE4E5B9)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _keys(seed: int, stream: int, node_ids: np.ndarray, nbr_ids: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        base = _mix(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
                    ^ _mix(np.array([stream], dtype=np.uint64)))
        h = _mix(base ^ node_ids.astype(np.uint64))
        return _mix(h[:, None] ^ nbr_ids.astype(np.uint64))


# -- sampled adjacency -----------------------------------------------------

@dataclass
class SampledAdjacency:
    """Per-node neighbor table over graph positions, padded with -1."""
    nodes: np.ndarray
    table: np.ndarray
    counts: np.ndarray
    seed: int
    max_neighbors: int
    index: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {int(n): i for i, n in enumerate(self.nodes.tolist())}

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node) -> bool:
        return int(node) in self.index

    def position(self, node) -> int:
        try:
            return self.index[int(node)]
        except KeyError:
            raise KeyError(f"node {int(node)} is not in the sampled adjacency") from None

    def neighbors(self, node) -> list[int]:
        i = self.position(node)
        return self.nodes[self.table[i, :self.counts[i]]].tolist()


def build_sampled_adjacency(g: ArticleGraph, max_neighbors: int = 128, seed: int = 0,
                            directed: bool = False) -> SampledAdjacency:
    """Keep every neighbor of low-degree nodes and a uniform subsample of
    ``max_neighbors`` (without replacement) for the rest. Uses the undirected
    view unless ``directed``."""
    if max_neighbors < 1:
        raise ValueError("max_neighbors must be >= 1")
    a = g.out_csr if directed else g.undirected_csr
    n = g.num_nodes
    deg = np.diff(a.indptr)
    table = np.full((n, max_neighbors), -1, dtype=np.int64)
    counts = np.minimum(deg, max_neighbors).astype(np.int32)
    rng = np.random.default_rng(seed)
    for i in range(n):
        nb = a.indices[a.indptr[i]:a.indptr[i + 1]]
        if len(nb) > max_neighbors:
            nb = np.sort(rng.choice(nb, size=max_neighbors, replace=False))
        table[i, :len(nb)] = nb
    return SampledAdjacency(g.nodes.copy(), table, counts, seed, max_neighbors)


def _sample_positions(adj: SampledAdjacency, pos: np.ndarray, k: int, seed: int,
                      stream: int) -> tuple[np.ndarray, np.ndarray]:
    """Sampled neighbors of each row of ``pos`` as (row index, neighbor position)."""
    rows = adj.table[pos]
    if adj.max_neighbors > k:
        rows = rows.copy()
        big = np.nonzero(adj.counts[pos] > k)[0]
        if len(big):
            sub = rows[big]
            nbr_ids = adj.nodes[np.maximum(sub, 0)]
            keys = _keys(seed, stream, adj.nodes[pos[big]], nbr_ids)
            keys[sub < 0] = _U64_MAX
            pick = np.argpartition(keys, k - 1, axis=1)[:, :k]
            chosen = np.full_like(sub, -1)
            chosen[:, :k] = np.take_along_axis(sub, pick, axis=1)
            rows[big] = chosen
    r, c = np.nonzero(rows >= 0)
    return r, rows[r, c]


def sample_neighbors(adj: SampledAdjacency, node, k: int = 25,
                     rng: np.random.Generator | None = None) -> list[int]:
    """Uniform sample of at most ``k`` stored neighbors, without replacement."""
    rng = rng if rng is not None else np.random.default_rng()
    stored = adj.neighbors(node)
    if len(stored) <= k:
        return stored
    return [stored[i] for i in rng.choice(len(stored), size=k, replace=False)]


# -- model -----------------------------------------------------------------

@dataclass
class GraphSageModel:
    W1: np.ndarray
    W2: np.ndarray
    k: int = 25
    max_neighbors: int = 128
    margin: float = 0.5
    negatives_per_edge: int = 5
    loss_history: list[float] = field(default_factory=list)

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1] // 2

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]

    @property
    def final_loss(self) -> float | None:
        return self.loss_history[-1] if self.loss_history else None

    def astype(self, dtype) -> "GraphSageModel":
        return GraphSageModel(self.W1.astype(dtype), self.W2.astype(dtype), self.k,
                              self.max_neighbors, self.margin, self.negatives_per_edge,
                              list(self.loss_history))

    def save(self, path: str | PathLike) -> None:
        with open(path, "wb") as fh:
            w = BinWriter(fh)
            w.magic(MAGIC)
            w.pack("5I", self.in_dim, self.hidden_dim, self.out_dim, self.k, self.max_neighbors)
            w.array(self.W1, "<f4")
            w.array(self.W2, "<f4")

    @classmethod
    def load(cls, path: str | PathLike) -> "GraphSageModel":
        with open(path, "rb") as fh:
            r = BinReader(fh, str(path))
            r.expect_magic(MAGIC)
            d_in, hidden, out, k, max_nb = r.unpack("5I")
            if min(d_in, hidden, out, k, max_nb) == 0:
                raise FormatError(f"{path}: zero dimension in model header")
            W1 = r.array("<f4", hidden * 2 * d_in, (hidden, 2 * d_in))
            W2 = r.array("<f4", out * 2 * hidden, (out, 2 * hidden))
            r.expect_eof()
        if not (np.all(np.isfinite(W1)) and np.all(np.isfinite(W2))):
            raise FormatError(f"{path}: non-finite weights")
        return cls(W1.astype(np.float32), W2.astype(np.float32), k, max_nb)


def init_model(in_dim: int, hidden_dim: int = 512, out_dim: int = 512, seed: int = 0,
               dtype=np.float32, **meta) -> GraphSageModel:
    """Glorot-uniform weights."""
    rng = np.random.default_rng(seed)

    def glorot(rows, cols):
        lim = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-lim, lim, size=(rows, cols)).astype(dtype)

    return GraphSageModel(glorot(hidden_dim, 2 * in_dim), glorot(out_dim, 2 * hidden_dim), **meta)


@dataclass
class _Plan:
    targets: np.ndarray   # positions of output nodes (unique)
    b1: np.ndarray        # positions needing a layer-1 representation (sorted)
    b0: np.ndarray        # positions needing input features (sorted)
    self1: np.ndarray     # index of each b1 node within b0
    a1: sparse.csr_matrix  # |b1| x |b0| neighbor-mean operator
    self2: np.ndarray     # index of each target within b1
    a2: sparse.csr_matrix  # |targets| x |b1|


def _mean_operator(r, c_local, n_rows, n_cols) -> sparse.csr_matrix:
    cnt = np.bincount(r, minlength=n_rows)
    data = 1.0 / cnt[r]
    return sparse.csr_matrix((data, (r, c_local)), shape=(n_rows, n_cols))


def _plan(adj: SampledAdjacency, targets: np.ndarray, k: int, seed: int, stream: int) -> _Plan:
    r2, c2 = _sample_positions(adj, targets, k, seed, 2 * stream + 1)
    b1 = np.unique(np.concatenate([targets, c2]))
    r1, c1 = _sample_positions(adj, b1, k, seed, 2 * stream)
    b0 = np.unique(np.concatenate([b1, c1]))
    a1 = _mean_operator(r1, np.searchsorted(b0, c1), len(b1), len(b0))
    a2 = _mean_operator(r2, np.searchsorted(b1, c2), len(targets), len(b1))
    return _Plan(targets, b1, b0, np.searchsorted(b0, b1), a1, np.searchsorted(b1, targets), a2)


def _forward(model: GraphSageModel, x0: np.ndarray, p: _Plan, normalize: bool = True):
    """Returns (output, cache). ``x0`` holds features for ``p.b0``."""
    dt = model.W1.dtype
    x0 = x0.astype(dt, copy=False)
    h1_in = np.hstack([x0[p.self1], (p.a1 @ x0).astype(dt, copy=False)])
    a1 = h1_in @ model.W1.T
    h1 = np.maximum(a1, 0)
    h2_in = np.hstack([h1[p.self2], (p.a2 @ h1).astype(dt, copy=False)])
    y = h2_in @ model.W2.T
    if not normalize:
        return y, (h1_in, a1, h2_in, y, None)
    norm = np.maximum(np.linalg.norm(y, axis=1, keepdims=True), 1e-12)
    z = y / norm
    return z, (h1_in, a1, h2_in, z, norm)


def _backward(model: GraphSageModel, p: _Plan, cache, dz: np.ndarray):
    h1_in, a1, h2_in, z, norm = cache
    if norm is not None:
        dy = (dz - z * np.sum(z * dz, axis=1, keepdims=True)) / norm
    else:
        dy = dz
    dW2 = dy.T @ h2_in
    dh2 = dy @ model.W2
    hid = model.hidden_dim
    dh1 = (p.a2.T @ dh2[:, hid:]).astype(dz.dtype, copy=False)
    dh1[p.self2] += dh2[:, :hid]
    da1 = dh1 * (a1 > 0)
    dW1 = da1.T @ h1_in
    return dW1, dW2


def _gather(features: EmbeddingStore, ids: np.ndarray, in_dim: int | None = None) -> np.ndarray:
    if in_dim is not None and features.dim != in_dim:
        raise DimensionError(f"features have dimension {features.dim}, model expects {in_dim}")
    try:
        return features.take(ids)
    except KeyError as e:
        raise KeyError(f"missing feature vector: {e.args[0]}") from None


def forward(model: GraphSageModel, nodes, features: EmbeddingStore, adj: SampledAdjacency,
            seed: int = 0, step: int = _INFERENCE_STREAM, normalize: bool = True) -> np.ndarray:
    """Embeddings for ``nodes`` (ids), one row per entry in the given order."""
    ids = np.asarray(list(nodes), dtype=np.uint64)
    if len(ids) == 0:
        return np.zeros((0, model.out_dim), dtype=model.W2.dtype)
    pos = np.fromiter((adj.position(i) for i in ids), dtype=np.int64, count=len(ids))
    targets, inv = np.unique(pos, return_inverse=True)
    p = _plan(adj, targets, model.k, seed, step)
    x0 = _gather(features, adj.nodes[p.b0], model.in_dim)
    out, _ = _forward(model, x0, p, normalize)
    return out[inv]


# -- loss ------------------------------------------------------------------

def max_margin_loss(z_u, z_pos, z_negs, margin: float = 0.5) -> float:
    """Mean over negatives of max(0, z_u.z_neg - z_u.z_pos + margin)."""
    z_negs = np.asarray(z_negs, dtype=np.float64)
    if z_negs.size == 0:
        raise ValueError("max_margin_loss needs at least one negative")
    if margin <= 0:
        raise ValueError("margin must be positive")
    z_u = np.asarray(z_u, dtype=np.float64)
    z_negs = np.atleast_2d(z_negs)
    pos = z_u @ np.asarray(z_pos, dtype=np.float64)
    return float(np.maximum(0.0, z_negs @ z_u - pos + margin).mean())


def _edge_codes(g: ArticleGraph) -> np.ndarray:
    s, d = g._edge_pos
    return np.sort(s * g.num_nodes + d)


def _negatives_pos(g: ArticleGraph, u_pos: np.ndarray, count: int, rng: np.random.Generator,
                   codes: np.ndarray | None = None) -> np.ndarray:
    n = g.num_nodes
    codes = _edge_codes(g) if codes is None else codes
    outdeg = np.diff(g.out_csr.indptr)
    if np.any(outdeg[u_pos] >= n - 1):
        bad = int(g.nodes[u_pos[np.argmax(outdeg[u_pos] >= n - 1)]])
        raise ValueError(f"node {bad} links to every other node; no negatives available")
    out = rng.integers(0, n, size=(len(u_pos), count))
    uu = np.broadcast_to(u_pos[:, None], out.shape)
    todo = np.ones(out.shape, dtype=bool)
    while True:
        c = uu[todo] * n + out[todo]
        hit = np.searchsorted(codes, c)
        hit = np.minimum(hit, max(len(codes) - 1, 0))
        rej = (out[todo] == uu[todo])
        if len(codes):
            rej |= codes[hit] == c
        idx = np.flatnonzero(todo)
        todo[:] = False
        todo.flat[idx[rej]] = True
        if not todo.any():
            return out
        out[todo] = rng.integers(0, n, size=int(todo.sum()))


def negative_sample(g: ArticleGraph, u, count: int, rng: np.random.Generator) -> list[int]:
    """``count`` draws (with replacement) uniform over nodes that are neither
    ``u`` nor an out-neighbor of ``u``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    u_pos = np.array([g.index[int(u)]], dtype=np.int64)
    return g.nodes[_negatives_pos(g, u_pos, count, rng)[0]].tolist()


def batch_loss_and_grad(model: GraphSageModel, x: np.ndarray, adj: SampledAdjacency,
                        u: np.ndarray, v: np.ndarray, negs: np.ndarray, seed: int, step: int):
    """Mean max-margin loss over edges (u, v) with negatives ``negs`` (E x Q),
    all given as positions; ``x`` holds features aligned to ``adj.nodes``.

    Returns (loss, [dW1, dW2]).
    """
    e, q = negs.shape
    flat = np.concatenate([u, v, negs.ravel()])
    targets, inv = np.unique(flat, return_inverse=True)
    p = _plan(adj, targets, model.k, seed, step)
    z, cache = _forward(model, x[p.b0], p)
    zu, zv = z[inv[:e]], z[inv[e:2 * e]]
    zn = z[inv[2 * e:]].reshape(e, q, -1)
    pos = np.sum(zu * zv, axis=1)
    neg = np.einsum("ed,eqd->eq", zu, zn)
    hinge = neg - pos[:, None] + model.margin
    loss = float(np.maximum(hinge, 0).mean())
    c = (hinge > 0).astype(z.dtype) / (e * q)
    csum = c.sum(axis=1, keepdims=True)
    d_zu = np.einsum("eq,eqd->ed", c, zn) - csum * zv
    d_zv = -csum * zu
    d_zn = (c[:, :, None] * zu[:, None, :]).reshape(e * q, -1)
    grads = np.vstack([d_zu, d_zv, d_zn])
    scatter = sparse.csr_matrix((np.ones(len(flat), dtype=z.dtype), (inv, np.arange(len(flat)))),
                                shape=(len(targets), len(flat)))
    dz = np.asarray(scatter @ grads, dtype=z.dtype)
    return loss, list(_backward(model, p, cache, dz))


# -- training --------------------------------------------------------------

@dataclass
class GraphSageConfig:
    batch_size: int = 512
    k: int = 25
    hidden_dim: int = 512
    out_dim: int = 512
    margin: float = 0.5
    negatives_per_edge: int = 5
    epochs: int = 5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    max_neighbors: int = 128
    directed: bool = False
    seed: int = 0


def _aligned_features(adj: SampledAdjacency, features: EmbeddingStore) -> np.ndarray:
    return _gather(features, adj.nodes)


def train_graphsage(g: ArticleGraph, features: EmbeddingStore,
                    config: GraphSageConfig | None = None, adj: SampledAdjacency | None = None,
                    **overrides) -> GraphSageModel:
    cfg = config or GraphSageConfig()
    if overrides:
        cfg = GraphSageConfig(**{**cfg.__dict__, **overrides})
    if g.num_edges == 0:
        raise ValueError("graph has no edges to train on")
    if cfg.margin <= 0 or cfg.negatives_per_edge < 1 or cfg.batch_size < 1 or cfg.k < 1:
        raise ValueError("margin, negatives_per_edge, batch_size and k must be positive")
    if adj is None:
        adj = build_sampled_adjacency(g, cfg.max_neighbors, cfg.seed, cfg.directed)
    x = _aligned_features(adj, features).astype(np.float32)
    model = init_model(features.dim, cfg.hidden_dim, cfg.out_dim, cfg.seed, k=cfg.k,
                       max_neighbors=adj.max_neighbors, margin=cfg.margin,
                       negatives_per_edge=cfg.negatives_per_edge)
    opt = Adam([model.W1, model.W2], cfg.lr, cfg.beta1, cfg.beta2)
    rng = np.random.default_rng([cfg.seed, 1])
    src, dst = g._edge_pos
    codes = _edge_codes(g)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(g.num_edges)
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            u, v = src[sel], dst[sel]
            negs = _negatives_pos(g, u, cfg.negatives_per_edge, rng, codes)
            loss, grads = batch_loss_and_grad(model, x, adj, u, v, negs, cfg.seed, step)
            opt.step(grads)
            total += loss * len(sel)
            step += 1
        model.loss_history.append(total / g.num_edges)
        log.info("graphsage epoch %d/%d: mean loss %.5f", epoch + 1, cfg.epochs,
                 model.loss_history[-1])
    if not (np.all(np.isfinite(model.W1)) and np.all(np.isfinite(model.W2))):
        raise FloatingPointError("non-finite GraphSAGE weights; lower the learning rate")
    return model


def embed_all(model: GraphSageModel, g: ArticleGraph, features: EmbeddingStore,
              adj: SampledAdjacency | None = None, seed: int = 0,
              chunk: int = 4096) -> GraphEmbeddings:
    """Embed every node of ``g``; works for nodes never seen in training."""
    if adj is None:
        adj = build_sampled_adjacency(g, model.max_neighbors, seed)
    out = np.empty((g.num_nodes, model.out_dim), dtype=np.float32)
    for start in range(0, g.num_nodes, chunk):
        ids = g.nodes[start:start + chunk]
        out[start:start + len(ids)] = forward(model, ids, features, adj, seed)
    return EmbeddingStore(g.nodes, out)
