import numpy as np
import pytest
from scipy import stats

from recnet import _core
from recnet.embstore import EmbeddingStore
from recnet.textembed import (Doc2VecConfig, build_vocab, draw_negatives, mean_topic_cosines,
                              pair_loss_and_grad, tokenize, train_pvdbow)

from conftest import two_topic_corpus


@pytest.mark.parametrize("text,tokens", [
    ("Hello, World!", ["hello", "world"]),
    ("", []),
    ("GCN-based 2-layer", ["gcn", "based", "2", "layer"]),
    ("snake_case Ünïcode ЖУК", ["snake", "case", "ünïcode", "жук"]),
])
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def test_vocab_min_count_and_order():
    v = build_vocab([["a", "a", "b"]], min_count=2)
    assert v.tokens == ["a"]
    assert build_vocab([["a", "b"]], 1).tokens == ["a", "b"]
    v = build_vocab([["c", "b", "a", "c"]], 1)
    assert v.tokens == ["c", "a", "b"]
    assert v.total_token_count == 4
    assert list(v.index.values()) == list(range(len(v)))
    assert len(build_vocab([], 1)) == 0
    with pytest.raises(ValueError):
        build_vocab([["a"]], 0)


def test_noise_distribution_power():
    v = build_vocab([["a"] * 16 + ["b"]], 1)
    p = v.noise_distribution()
    assert p == pytest.approx(np.array([16 ** 0.75, 1.0]) / (16 ** 0.75 + 1))


def test_negative_draws_chi_square():
    v = build_vocab([["a"] * 50 + ["b"] * 20 + ["c"] * 5 + ["d"]], 1)
    p = v.noise_distribution()
    draws = draw_negatives(np.cumsum(p), 100_000, np.random.default_rng(0))
    observed = np.bincount(draws, minlength=len(p))
    _, pvalue = stats.chisquare(observed, p * len(draws))
    assert pvalue > 1e-3


def _fd_check(rng, dim=6, n_neg=3, eps=1e-4):
    d, w = rng.normal(size=dim), rng.normal(size=dim)
    noise = rng.normal(size=(n_neg, dim))
    _, gd, gw, gn = pair_loss_and_grad(d, w, noise)

    def num(f, x):
        g = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            o = x[i]
            x[i] = o + eps
            hi = f()
            x[i] = o - eps
            lo = f()
            x[i] = o
            g[i] = (hi - lo) / (2 * eps)
        return g

    loss = lambda: pair_loss_and_grad(d, w, noise)[0]  # noqa: E731
    errs = []
    for x, g in ((d, gd), (w, gw), (noise, gn)):
        n = num(loss, x)
        errs.append(np.linalg.norm(n - g) / max(np.linalg.norm(n), np.linalg.norm(g), 1e-12))
    return max(errs)


def test_pair_gradient_finite_differences(rng):
    for _ in range(25):
        assert _fd_check(rng) < 1e-4


def test_pair_loss_value():
    loss, *_ = pair_loss_and_grad([0.0, 0.0], [1.0, 1.0], [[1.0, 0.0]])
    assert loss == pytest.approx(2 * np.log(2))


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_kernel_step_is_sgd_on_pair_loss(backend, rng):
    try:
        be = _core.get_backend(backend)
    except ImportError:
        pytest.skip("compiled kernels not built")
    dim, lr = 5, 0.05
    docs = rng.normal(size=(1, dim)).astype(np.float32)
    outs = rng.normal(size=(3, dim)).astype(np.float32)
    d0, o0 = docs.astype(np.float64), outs.astype(np.float64)
    loss, gd, gw, gn = pair_loss_and_grad(d0[0], o0[0], o0[[1, 2]])
    total = be.pvdbow_epoch(docs, outs, np.array([0], np.int32), np.array([0], np.int32),
                            np.array([[1, 2]], np.int32), np.array([lr], np.float32))
    assert total == pytest.approx(loss, rel=1e-5)
    np.testing.assert_allclose(docs[0], d0[0] - lr * gd, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(outs[0], o0[0] - lr * gw, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(outs[[1, 2]], o0[[1, 2]] - lr * gn, rtol=1e-5, atol=1e-6)


def test_two_topics_separate():
    docs, labels = two_topic_corpus()
    res = train_pvdbow(docs, dim=32, min_count=1, epochs=10, subsample_threshold=0, seed=0)
    intra, inter = mean_topic_cosines(res.store.take([a for a, _ in docs]), labels)
    assert intra > inter
    assert res.epoch_losses[-1] < res.epoch_losses[0]
    assert len(res.store) == len(docs) and res.store.dim == 32
    assert np.all(np.isfinite(res.store.vectors))


def test_epochs_zero_is_initialization():
    docs, _ = two_topic_corpus(5)
    a = train_pvdbow(docs, dim=8, min_count=1, epochs=0, seed=3).store
    rng = np.random.default_rng(3)
    expect = ((rng.random((len(docs), 8)) - 0.5) / 8).astype(np.float32)
    np.testing.assert_array_equal(a.vectors, expect)
    assert np.all(np.abs(a.vectors) <= 0.5 / 8)


def test_deterministic():
    docs, _ = two_topic_corpus(20)
    cfg = Doc2VecConfig(dim=16, min_count=1, epochs=3, subsample_threshold=1e-3, seed=7)
    assert train_pvdbow(docs, cfg).store == train_pvdbow(docs, cfg).store


def test_oov_document_keeps_initialization(caplog):
    docs = [(1, "alpha beta alpha beta"), (2, "gamma"), (3, "alpha beta")]
    res = train_pvdbow(docs, dim=4, min_count=2, epochs=3, subsample_threshold=0, seed=1)
    init = train_pvdbow(docs, dim=4, min_count=2, epochs=0, seed=1).store
    np.testing.assert_array_equal(res.store.get(2), init.get(2))
    assert "no in-vocabulary tokens" in caplog.text


def test_bad_inputs():
    with pytest.raises(ValueError):
        train_pvdbow([])
    with pytest.raises(ValueError):
        train_pvdbow([(1, "a")], dim=0, min_count=1)


def test_store_roundtrip(tmp_path):
    docs, _ = two_topic_corpus(5)
    store = train_pvdbow(docs, dim=8, min_count=1, epochs=1, seed=0).store
    store.write(tmp_path / "a.emb")
    again = EmbeddingStore.read(tmp_path / "a.emb")
    assert again == store
    again.write(tmp_path / "b.emb")
    assert (tmp_path / "a.emb").read_bytes() == (tmp_path / "b.emb").read_bytes()
