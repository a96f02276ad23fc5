import math

import numpy as np
import pytest

from recnet.baselines import (AlsModel, ColdStartError, als_objective, als_recommend, als_train,
                              bm25_build, bm25_recommend)


def _bm25_oracle(docs, query, k1=1.2, b=0.75):
    """Document-at-a-time BM25 with query-term multiplicity."""
    n = len(docs)
    avgdl = sum(len(t) for _, t in docs) / n
    out = {}
    for d, toks in docs:
        s = 0.0
        for term in query:
            df = sum(1 for _, t in docs if term in t)
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            f = toks.count(term)
            s += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * len(toks) / avgdl))
        out[d] = s
    return out


def test_bm25_counts():
    idx = bm25_build([(2, ["a", "b"]), (1, ["a", "c", "c"])])
    assert idx.num_docs == 2
    assert dict(zip(idx.terms, idx.df)) == {"a": 2, "c": 1, "b": 1}
    assert idx.postings("a") == [(1, 1), (2, 1)]
    assert idx.postings("c") == [(1, 2)]
    assert idx.postings("zzz") == []
    assert np.all(idx.idf >= 0)
    with pytest.raises(ValueError):
        bm25_build([])


def test_bm25_hand_computed():
    docs = [(1, ["cat", "sat", "mat"]), (2, ["cat", "cat", "dog"]), (3, ["bird"])]
    idx = bm25_build(docs)
    s = idx.score(idx.query_vector(["cat"]))
    idf = math.log(1 + (3 - 2 + 0.5) / (2 + 0.5))
    avgdl = 7 / 3
    d1 = idf * 1 * 2.2 / (1 + 1.2 * (0.25 + 0.75 * 3 / avgdl))
    d2 = idf * 2 * 2.2 / (2 + 1.2 * (0.25 + 0.75 * 3 / avgdl))
    np.testing.assert_allclose(s, [d1, d2, 0.0])


def test_bm25_matches_brute_force():
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(25)]
    for trial in range(5):
        docs = [(i + 1, list(rng.choice(words, size=int(rng.integers(1, 30)))))
                for i in range(int(rng.integers(10, 100)))]
        idx = bm25_build(docs)
        user = [1, 2]
        query = docs[0][1] + docs[1][1]
        want = _bm25_oracle(docs, query)
        got = bm25_recommend(idx, user, len(docs))
        assert [a for a, _ in got] == sorted(want, key=lambda d: (-want[d], d))
        for a, s in got:
            assert s == pytest.approx(want[a], abs=1e-9)


def test_bm25_recommend_rules():
    docs = [(1, ["x", "y"]), (2, ["x", "y", "z"]), (3, ["p", "q"]), (4, ["r"])]
    idx = bm25_build(docs)
    assert bm25_recommend(idx, [1], 3, exclude=[1])[0][0] == 2
    assert bm25_recommend(idx, [1], 5, exclude=[1, 2, 3, 4]) == []
    with pytest.raises(ValueError):
        bm25_recommend(idx, [], 3)


def _random_interactions(users=50, items=80, density=0.1, seed=0):
    rng = np.random.default_rng(seed)
    mask = rng.random((users, items)) < density
    return [(int(u), int(i) + 1000, int(rng.integers(1, 4))) for u, i in zip(*np.nonzero(mask))]


def test_als_monotone_and_residual():
    model = als_train(_random_interactions(), factors=8, iterations=10, regularization=0.1)
    trace = model.objective_trace
    assert len(trace) == 21
    assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))
    assert model.max_residual < 1e-8
    assert np.all(np.isfinite(model.U)) and np.all(np.isfinite(model.M))


def test_als_objective_matches_dense_formula():
    inter = _random_interactions(6, 7, 0.4, seed=2)
    model = als_train(inter, factors=3, iterations=2, alpha=5.0, regularization=0.3)
    r = np.zeros((len(model.user_ids), len(model.item_ids)))
    for u, i, _ in inter:
        r[model.user_index[u], list(model.item_ids).index(i)] = 1
    c = 1 + 5.0 * r
    p = (r > 0).astype(float)
    dense = np.sum(c * (p - model.U @ model.M.T) ** 2) + 0.3 * (np.sum(model.U ** 2)
                                                              + np.sum(model.M ** 2))
    from scipy import sparse
    got = als_objective(sparse.csr_matrix(r), model.U, model.M, 5.0, 0.3)
    assert got == pytest.approx(dense, rel=1e-10)
    assert model.objective_trace[-1] == pytest.approx(dense, rel=1e-10)


def test_als_limits():
    heavy = als_train(_random_interactions(10, 12, 0.3), factors=4, alpha=0.0,
                      regularization=1e6, iterations=3)
    assert np.abs(heavy.U).max() < 1e-4 and np.abs(heavy.M).max() < 1e-4
    with pytest.warns(RuntimeWarning):
        one = als_train([(1, 2, 1)], factors=1, regularization=0.0, alpha=1.0, iterations=20)
    assert float(one.U[0] @ one.M[0]) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        als_train([])


def test_als_recommend_brute_force():
    rng = np.random.default_rng(3)
    model = AlsModel(np.arange(5, dtype=np.uint64), np.arange(10, 15, dtype=np.uint64),
                     rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), 0.1, 1.0)
    for u in range(5):
        scores = model.M @ model.U[u]
        want = sorted(range(5), key=lambda i: (-scores[i], i))
        assert [a for a, _ in als_recommend(model, u, 10)] == [10 + i for i in want]
    got = als_recommend(model, 0, 10, exclude=[10, 11])
    assert {a for a, _ in got} == {12, 13, 14}
    with pytest.raises(ColdStartError):
        als_recommend(model, 99, 3)


def test_als_deterministic():
    inter = _random_interactions(20, 30, 0.2)
    a = als_train(inter, factors=4, iterations=3, seed=1)
    b = als_train(inter, factors=4, iterations=3, seed=1)
    np.testing.assert_array_equal(a.U, b.U)
    np.testing.assert_array_equal(a.M, b.M)
