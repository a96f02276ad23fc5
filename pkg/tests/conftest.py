import numpy as np
import pytest

from recnet import _core


def two_topic_corpus(n_per_topic=100, words_per_topic=30, length=40, seed=0):
    """Documents of two topics with disjoint vocabularies; returns (docs, labels)."""
    rng = np.random.default_rng(seed)
    vocab = [[f"t{t}w{i}" for i in range(words_per_topic)] for t in range(2)]
    docs, labels = [], []
    for t in range(2):
        for _ in range(n_per_topic):
            words = rng.choice(vocab[t], size=length)
            docs.append((len(docs) + 1, " ".join(words)))
            labels.append(t)
    return docs, np.array(labels)


def unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


requires_cython = pytest.mark.skipif(
    _core.BACKEND != "cython", reason="compiled kernels not built")


def sbm(n=300, blocks=3, p_in=0.2, p_out=0.005, seed=0):
    """Directed stochastic block model; returns (ArticleGraph, block labels)."""
    from recnet.corpus import ArticleGraph
    rng = np.random.default_rng(seed)
    labels = np.arange(n) * blocks // n
    p = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    adj = rng.random((n, n)) < p
    np.fill_diagonal(adj, False)
    s, d = np.nonzero(adj)
    return ArticleGraph.from_edges(zip((s + 1).tolist(), (d + 1).tolist()),
                                   nodes=range(1, n + 1)), labels


def block_features(labels, dim=16, noise=1.0, seed=0):
    """Store of block centroid plus Gaussian noise, ids 1..n."""
    from recnet.embstore import EmbeddingStore
    rng = np.random.default_rng(seed)
    centroids = rng.normal(size=(labels.max() + 1, dim))
    x = centroids[labels] + noise * rng.normal(size=(len(labels), dim))
    return EmbeddingStore(np.arange(1, len(labels) + 1), x)


def auc(pos_scores, neg_scores):
    """Mann-Whitney AUC with ties counted as one half."""
    pos = np.asarray(pos_scores)[:, None]
    neg = np.asarray(neg_scores)[None, :]
    return float(np.mean((pos > neg) + 0.5 * (pos == neg)))


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
