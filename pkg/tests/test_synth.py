import numpy as np
import pytest

from recnet.corpus import (ArticleGraph, filter_category_nodes, load_corpus, load_edge_list,
                           load_edit_history, load_id_set, load_redirects, resolve_redirects)
from recnet.synth import SynthConfig, generate, write_dataset


@pytest.fixture(scope="module")
def small():
    return generate(SynthConfig(nodes=300, users=80, train_users=40, seed=1))


def test_sbm_structure(small):
    g = ArticleGraph.from_edges(small.edges)
    pos = {int(a): i for i, a in enumerate(small.article_ids.tolist())}
    same = cross = 0
    for s, d in small.edges:
        if s in pos and d in pos:
            if small.topic[pos[s]] == small.topic[pos[d]]:
                same += 1
            else:
                cross += 1
    assert same > 10 * cross
    assert g.num_nodes > 300
    # 300 nodes over 3 blocks is one subtopic per block (plain SBM)
    assert set(small.subtopic.tolist()) == {0}


def test_user_topic_affinity(small):
    topic = dict(zip(small.article_ids.tolist(), small.topic.tolist()))
    shares = []
    for h in small.eval_histories:
        ts = [topic[a] for a in h.distinct_articles()]
        shares.append(np.bincount(ts).max() / len(ts))
    assert 0.7 < np.mean(shares) < 0.95


def test_written_files_load(tmp_path, small):
    paths = write_dataset(small, tmp_path)
    g = load_edge_list(paths["edges"])
    g = resolve_redirects(g, load_redirects(paths["redirects"]))
    g = filter_category_nodes(g, load_id_set(paths["categories"]))
    assert set(g.nodes.tolist()) <= set(small.article_ids.tolist())
    assert len(load_corpus(paths["corpus"])) == 300
    train = load_edit_history(paths["history_train"])
    evals = load_edit_history(paths["history_eval"])
    assert len(evals) == 80
    assert len(train) == 40          # three sparse users filtered out
    assert not {h.user_id for h in train} & {h.user_id for h in evals}


def test_deterministic(tmp_path):
    cfg = SynthConfig(nodes=150, users=10, train_users=10, seed=3)
    a = write_dataset(generate(cfg), tmp_path / "a")
    b = write_dataset(generate(cfg), tmp_path / "b")
    for k in a:
        assert a[k].read_bytes() == b[k].read_bytes()


def test_bad_config():
    with pytest.raises(ValueError):
        generate(SynthConfig(nodes=2, blocks=3))
