"""Pointwise deep ranker.

The input is six embeddings concatenated: five history articles (sorted by
id) then the candidate. Hidden layers are Dense -> BatchNorm -> ReLU; the
output unit is a single logit ``phi`` and the score is ``sigmoid(phi)``.
Training minimizes class-weighted binary cross-entropy with Adam.

Checkpoint ``RKM1``: magic, u32 layer count L, u32 widths[L + 1] (input
first), then per layer W (out x in) and b (out), followed for each hidden
layer by BatchNorm gamma, beta, running mean and running variance; all
row-major little-endian float32.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from os import PathLike

import numpy as np

from .annindex import AnnIndex
from .binio import BinReader, BinWriter, FormatError
from .candidates import CandidateSet, user_vector
from .corpus import EditHistory
from .embstore import EmbeddingStore
from .errors import DimensionError
from .optim import Adam

log = logging.getLogger(__name__)

MAGIC = b"RKM1"
HISTORY_LEN = 5


@dataclass(frozen=True)
class RankingExample:
    user_articles: tuple[int, ...]
    candidate: int
    label: int


@dataclass
class RankingModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    gamma: list[np.ndarray]
    beta: list[np.ndarray]
    running_mean: list[np.ndarray]
    running_var: list[np.ndarray]
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9
    loss_history: list[float] = field(default_factory=list)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def embedding_dim(self) -> int:
        return self.input_dim // (HISTORY_LEN + 1)

    def trainable(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (shared with gradients)."""
        out = []
        for i in range(len(self.weights)):
            out += [self.weights[i], self.biases[i]]
            if i < len(self.gamma):
                out += [self.gamma[i], self.beta[i]]
        return out

    def save(self, path: str | PathLike) -> None:
        with open(path, "wb") as fh:
            w = BinWriter(fh)
            w.magic(MAGIC)
            w.pack("I", len(self.weights))
            w.pack(f"{len(self.widths)}I", *self.widths)
            for W, b in zip(self.weights, self.biases):
                w.array(W, "<f4")
                w.array(b, "<f4")
            for arrs in zip(self.gamma, self.beta, self.running_mean, self.running_var):
                for a in arrs:
                    w.array(a, "<f4")

    @classmethod
    def load(cls, path: str | PathLike) -> "RankingModel":
        with open(path, "rb") as fh:
            r = BinReader(fh, str(path))
            r.expect_magic(MAGIC)
            n_layers = r.unpack("I")
            if not 1 <= n_layers <= 64:
                raise FormatError(f"{path}: implausible layer count {n_layers}")
            widths = r.unpack(f"{n_layers + 1}I")
            widths = [widths] if isinstance(widths, int) else list(widths)
            if min(widths) == 0 or widths[-1] != 1:
                raise FormatError(f"{path}: bad layer widths {widths}")
            weights, biases = [], []
            for i in range(n_layers):
                weights.append(r.array("<f4", widths[i + 1] * widths[i], (widths[i + 1], widths[i])))
                biases.append(r.array("<f4", widths[i + 1]))
            bn = [[r.array("<f4", widths[i + 1]) for _ in range(4)] for i in range(n_layers - 1)]
            r.expect_eof()
        m = cls(weights, biases, [b[0] for b in bn], [b[1] for b in bn],
                [b[2] for b in bn], [b[3] for b in bn])
        if not all(np.all(np.isfinite(p)) for p in m.trainable() + m.running_mean + m.running_var):
            raise FormatError(f"{path}: non-finite parameters")
        return m


def init_ranker(embedding_dim: int, hidden=(1024, 512, 256), seed: int = 0,
                dtype=np.float32, **bn) -> RankingModel:
    """He-uniform hidden layers, Glorot-uniform output layer, zero biases."""
    rng = np.random.default_rng(seed)
    widths = [(HISTORY_LEN + 1) * embedding_dim, *hidden, 1]
    weights, biases = [], []
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        last = i == len(widths) - 2
        lim = np.sqrt(6.0 / (fan_in + fan_out)) if last else np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    hw = widths[1:-1]
    return RankingModel(weights, biases,
                        [np.ones(h, dtype=dtype) for h in hw], [np.zeros(h, dtype=dtype) for h in hw],
                        [np.zeros(h, dtype=dtype) for h in hw], [np.ones(h, dtype=dtype) for h in hw],
                        **bn)


# -- forward / backward ----------------------------------------------------

def logits(model: RankingModel, x: np.ndarray, train: bool = False,
           update_stats: bool = True):
    """Pre-sigmoid scores for a batch of inputs. Returns (phi, cache).

    ``train`` normalizes with batch statistics (and, if ``update_stats``,
    moves the running averages); otherwise running statistics are used.
    """
    x = np.asarray(x, dtype=model.weights[0].dtype)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise DimensionError(f"ranker input must have {model.input_dim} columns, got shape {x.shape}")
    cache = []
    h = x
    eps, mom = model.bn_eps, model.bn_momentum
    for i in range(len(model.gamma)):
        z = h @ model.weights[i].T + model.biases[i]
        if train:
            if len(z) < 2:
                raise ValueError("batch-norm training needs at least 2 examples per batch")
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            if update_stats:
                n = len(z)
                model.running_mean[i] *= mom
                model.running_mean[i] += (1 - mom) * mu
                model.running_var[i] *= mom
                model.running_var[i] += (1 - mom) * var * n / (n - 1)
        else:
            mu, var = model.running_mean[i], model.running_var[i]
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (z - mu) * inv_std
        a = model.gamma[i] * xhat + model.beta[i]
        cache.append((h, xhat, inv_std, a))
        h = np.maximum(a, 0)
    phi = h @ model.weights[-1].T[:, 0] + model.biases[-1][0]
    cache.append((h,))
    return phi, cache


def _backward(model: RankingModel, cache, dphi: np.ndarray) -> list[np.ndarray]:
    """Gradients in ``model.trainable()`` order (train-mode cache only)."""
    (h_last,) = cache[-1]
    grads_rev = [dphi[:, None].T @ h_last, np.array([dphi.sum()], dtype=h_last.dtype)]
    dh = np.outer(dphi, model.weights[-1][0])
    out: list[list[np.ndarray]] = []
    for i in reversed(range(len(model.gamma))):
        h_in, xhat, inv_std, a = cache[i]
        da = dh * (a > 0)
        dgamma = (da * xhat).sum(axis=0)
        dbeta = da.sum(axis=0)
        dxhat = da * model.gamma[i]
        n = len(xhat)
        dz = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        out.append([dz.T @ h_in, dz.sum(axis=0), dgamma, dbeta])
        dh = dz @ model.weights[i]
    grads = []
    for layer in reversed(out):
        grads += layer
    return grads + grads_rev


def class_weights(labels) -> tuple[float, float]:
    """(w0, w1) with w1 = N / (2 N_pos) and w0 = N / (2 N_neg)."""
    y = np.asarray(labels)
    n, n_pos = len(y), int(np.sum(y == 1))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ranker training needs both positive and negative examples")
    return n / (2 * n_neg), n / (2 * n_pos)


def weighted_bce_and_grad(model: RankingModel, x: np.ndarray, y: np.ndarray,
                          w0: float, w1: float, update_stats: bool = False):
    """Mean weighted BCE of a batch in train mode and its parameter gradients."""
    phi, cache = logits(model, x, train=True, update_stats=update_stats)
    y = np.asarray(y, dtype=phi.dtype)
    w = np.where(y > 0.5, w1, w0).astype(phi.dtype)
    loss = float(np.mean(w * (np.logaddexp(0, phi) - y * phi)))
    dphi = w * (_sigmoid(phi) - y) / len(y)
    return loss, _backward(model, cache, dphi)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def pack_input(store: EmbeddingStore, history, candidate) -> np.ndarray:
    hist = sorted(int(a) for a in history)
    if len(hist) != HISTORY_LEN:
        raise ValueError(f"ranker expects exactly {HISTORY_LEN} history articles, got {len(hist)}")
    return store.take(hist + [int(candidate)]).ravel()


def forward(model: RankingModel, user_vectors, candidate_vector, train: bool = False) -> float:
    """Relevance probability for one (history, candidate) pair; history
    vectors must already be in slot order."""
    u = np.asarray(user_vectors, dtype=np.float64)
    c = np.asarray(candidate_vector, dtype=np.float64).ravel()
    if u.shape != (HISTORY_LEN, c.shape[0]):
        raise DimensionError(f"expected {HISTORY_LEN} history vectors of dimension {c.shape[0]}")
    phi, _ = logits(model, np.concatenate([u.ravel(), c])[None, :], train=train,
                    update_stats=False)
    return float(_sigmoid(np.float64(phi[0])))


# -- data ------------------------------------------------------------------

def build_training_set(histories: list[EditHistory], embeddings: EmbeddingStore,
                       index: AnnIndex, window: int = 6, neg_per_pos: int = 20, seed: int = 0,
                       pool: int | None = None) -> list[RankingExample]:
    """Sliding groups of ``window - 1`` consecutive distinct articles with the
    next one as positive, plus ``neg_per_pos`` negatives drawn uniformly from
    the ``pool`` nearest ANN neighbors of the group's mean vector. A wide pool
    matters: drawing only from the closest few articles teaches the ranker
    that low similarity means relevance. Articles without embeddings are
    dropped from histories; users left with fewer than ``window`` are skipped.
    """
    if window != HISTORY_LEN + 1:
        raise ValueError(f"window must be {HISTORY_LEN + 1} to match the ranker input")
    pool = pool or 50 * neg_per_pos
    rng = np.random.default_rng(seed)
    examples: list[RankingExample] = []
    skipped = 0
    for h in histories:
        arts = [a for a in h.distinct_articles() if a in embeddings]
        if len(arts) < window:
            skipped += 1
            continue
        seen = set(h.distinct_articles())
        for s in range(len(arts) - window + 1):
            group = tuple(arts[s:s + HISTORY_LEN])
            pos = arts[s + HISTORY_LEN]
            examples.append(RankingExample(group, pos, 1))
            q = user_vector(embeddings.take(group), "mean")
            hits = [a for a, _ in index.search(q, pool + len(seen)) if a not in seen][:pool]
            if not hits:
                continue
            take = rng.choice(len(hits), size=min(neg_per_pos, len(hits)), replace=False)
            examples.extend(RankingExample(group, hits[i], 0) for i in np.sort(take))
    if skipped:
        log.info("ranker training set: skipped %d users with fewer than %d embedded articles",
                 skipped, window)
    return examples


def _matrix(examples: list[RankingExample], store: EmbeddingStore) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([pack_input(store, e.user_articles, e.candidate) for e in examples])
    y = np.array([e.label for e in examples], dtype=np.float32)
    return x, y


@dataclass
class RankerConfig:
    hidden: tuple[int, ...] = (1024, 512, 256)
    batch_size: int = 256
    epochs: int = 10
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9
    seed: int = 0


def train_ranker(examples: list[RankingExample], embeddings: EmbeddingStore,
                 config: RankerConfig | None = None, **overrides) -> RankingModel:
    cfg = config or RankerConfig()
    if overrides:
        cfg = RankerConfig(**{**cfg.__dict__, **overrides})
    if not examples:
        raise ValueError("no ranking examples")
    x, y = _matrix(examples, embeddings)
    w0, w1 = class_weights(y)
    model = init_ranker(embeddings.dim, tuple(cfg.hidden), cfg.seed, bn_eps=cfg.bn_eps,
                        bn_momentum=cfg.bn_momentum)
    params = model.trainable()
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2)
    rng = np.random.default_rng([cfg.seed, 2])
    n = len(y)
    bs = max(2, cfg.batch_size)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        bounds = list(range(0, n, bs)) + [n]
        if len(bounds) > 2 and bounds[-1] - bounds[-2] < 2:
            bounds.pop(-2)
        total = 0.0
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sel = order[lo:hi]
            loss, grads = weighted_bce_and_grad(model, x[sel], y[sel], w0, w1, update_stats=True)
            opt.step(grads)
            total += loss * len(sel)
        model.loss_history.append(total / n)
        log.info("ranker epoch %d/%d: weighted BCE %.5f", epoch + 1, cfg.epochs,
                 model.loss_history[-1])
    if not all(np.all(np.isfinite(p)) for p in params):
        raise FloatingPointError("non-finite ranker parameters; lower the learning rate")
    return model


def score(model: RankingModel, x: np.ndarray) -> np.ndarray:
    """Inference-mode logits for packed inputs."""
    return logits(model, x, train=False)[0]


def rank_candidates(model: RankingModel, user_history, candidates, embeddings: EmbeddingStore
                    ) -> list[tuple[int, float]]:
    """Candidates re-ordered by relevance probability (ties by ascending id)."""
    cand = candidates.ids if isinstance(candidates, CandidateSet) else \
        [a if isinstance(a, (int, np.integer)) else a[0] for a in candidates]
    if len(list(user_history)) != HISTORY_LEN:
        raise ValueError(f"ranker expects exactly {HISTORY_LEN} history articles")
    if not cand:
        return []
    hist = sorted(int(a) for a in user_history)
    hx = embeddings.take(hist).ravel()
    cx = embeddings.take(cand)
    x = np.hstack([np.broadcast_to(hx, (len(cand), hx.shape[0])), cx])
    phi = score(model, x).astype(np.float64)
    order = np.lexsort((np.asarray(cand, dtype=np.uint64), -phi))
    prob = _sigmoid(phi)
    return [(int(cand[i]), float(prob[i])) for i in order]
