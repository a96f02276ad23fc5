import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csgraph

from recnet.binio import FormatError
from recnet.corpus import (ArticleGraph, CorpusError, EditHistory, ParseError, RedirectCycleError,
                           escape_text, filter_category_nodes, graph_stats, load_corpus,
                           load_edge_list, load_edit_history, load_redirects, resolve_redirects,
                           unescape_text, validate_redirects, write_corpus, write_edit_history)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_edge_list_dedups(tmp_path):
    g = load_edge_list(_write(tmp_path, "e.tsv", "1\t2\n2\t3\n1\t2\n"))
    assert g.num_nodes == 3 and g.num_edges == 2
    assert g.edges() == [(1, 2), (2, 3)]


def test_empty_edge_list(tmp_path):
    g = load_edge_list(_write(tmp_path, "e.tsv", ""))
    assert g.num_nodes == 0 and g.num_edges == 0


def test_self_loop_keeps_node(tmp_path):
    g = load_edge_list(_write(tmp_path, "e.tsv", "1\t1\n"))
    assert g.nodes.tolist() == [1] and g.num_edges == 0


@pytest.mark.parametrize("text,line", [("1\t2\nx\t3\n", 2), ("1\t2\t3\n", 1), ("1\t-2\n", 1)])
def test_edge_list_parse_error_names_line(tmp_path, text, line):
    with pytest.raises(ParseError) as ei:
        load_edge_list(_write(tmp_path, "e.tsv", text))
    assert ei.value.line == line
    assert f":{line}:" in str(ei.value)


def test_resolve_redirect_simple():
    g = ArticleGraph.from_edges([(1, 9)])
    out = resolve_redirects(g, {9: 2})
    assert out.edges() == [(1, 2)]
    assert 9 not in out


def test_resolve_redirect_dedups():
    g = ArticleGraph.from_edges([(1, 9), (1, 2)])
    assert resolve_redirects(g, {9: 2}).edges() == [(1, 2)]


def test_redirect_chain_and_cycle():
    assert validate_redirects({1: 2, 2: 3}) == {1: 3, 2: 3}
    with pytest.raises(RedirectCycleError) as ei:
        validate_redirects({7: 8, 8: 7})
    assert set(ei.value.cycle) == {7, 8}
    with pytest.raises(RedirectCycleError):
        resolve_redirects(ArticleGraph.from_edges([(1, 7)]), {7: 8, 8: 7})


def test_redirect_file_conflict(tmp_path):
    with pytest.raises(ParseError):
        load_redirects(_write(tmp_path, "r.tsv", "5\t6\n5\t7\n"))


def test_filter_categories():
    g = ArticleGraph.from_edges([(1, 3), (1, 2)])
    assert filter_category_nodes(g, {3}).edges() == [(1, 2)]
    assert filter_category_nodes(g, set()) == g
    assert filter_category_nodes(g, {1, 2, 3}).num_nodes == 0


def test_stats_path_graph():
    s = graph_stats(ArticleGraph.from_edges([(1, 2), (2, 3)]))
    assert s.mean_degree == pytest.approx(4 / 3)
    assert s.median_degree == 1
    assert s.pseudo_diameter == 2


def test_stats_degenerate():
    assert graph_stats(ArticleGraph()).pseudo_diameter == 0
    s = graph_stats(ArticleGraph(nodes=[5]))
    assert s.mean_degree == 0 and s.pseudo_diameter == 0


def test_stats_reciprocal_links_count_once():
    s = graph_stats(ArticleGraph.from_edges([(1, 2), (2, 1)]))
    assert s.undirected_edge_count == 1 and s.edge_count == 2
    assert s.mean_degree == 1.0


edge_lists = st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), max_size=80)


@settings(max_examples=60, deadline=None)
@given(edge_lists)
def test_pseudo_diameter_is_lower_bound(edges):
    g = ArticleGraph.from_edges(edges)
    s = graph_stats(g)
    if g.num_nodes == 0:
        return
    d = csgraph.shortest_path(g.undirected_csr, unweighted=True, directed=False)
    true = int(d[np.isfinite(d)].max())
    assert s.pseudo_diameter <= true


@settings(max_examples=60, deadline=None)
@given(edge_lists, st.dictionaries(st.integers(0, 30), st.integers(0, 30), max_size=6))
def test_cleaning_properties(edges, redirects):
    g = ArticleGraph.from_edges(edges)
    try:
        final = validate_redirects(redirects)
    except RedirectCycleError:
        return
    once = resolve_redirects(g, redirects)
    assert resolve_redirects(once, redirects) == once
    assert once.num_edges <= g.num_edges
    assert not set(final) & set(once.nodes.tolist())
    assert all(s != d for s, d in once.edges())
    cats = set(list(g.nodes.tolist())[:3])
    f = filter_category_nodes(g, cats)
    assert f.num_nodes <= g.num_nodes and f.num_edges <= g.num_edges


def test_graph_roundtrip(tmp_path):
    g = ArticleGraph.from_edges([(10, 2), (2, 3), (3, 10)], nodes=[99])
    g.write(tmp_path / "g.bin")
    assert ArticleGraph.read(tmp_path / "g.bin") == g


def test_graph_bad_magic(tmp_path):
    p = tmp_path / "g.bin"
    p.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(FormatError):
        ArticleGraph.read(p)


def test_history_filters(tmp_path):
    rows = ["1\t10\t100", "1\t11\t101", "1\t12\t102", "1\t13\t103",          # 4 distinct
            "2\t10\t200", "2\t11\t201", "2\t10\t202", "2\t12\t203", "2\t13\t204", "2\t14\t205",
            "3\t1\t5", "3\t2\t6", "3\t3\t7", "3\t4\t8", "3\t5\t9"]
    p = _write(tmp_path, "h.tsv", "\n".join(rows) + "\n")
    hs = load_edit_history(p, min_distinct_articles=5, cutoff_timestamp=0)
    assert [h.user_id for h in hs] == [2, 3]
    assert hs[0].distinct_articles() == [10, 11, 12, 13, 14]
    assert load_edit_history(p, 5, cutoff_timestamp=50)[0].user_id == 2
    assert len(load_edit_history(p, 0, 0)) == 3


def test_history_sorted_by_time(tmp_path):
    p = _write(tmp_path, "h.tsv", "1\t3\t30\n1\t1\t10\n1\t2\t20\n")
    (h,) = load_edit_history(p, 0, 0)
    assert h.events == [(1, 10), (2, 20), (3, 30)]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 12), st.integers(0, 100)),
                max_size=60), st.integers(0, 6), st.integers(0, 100))
def test_history_properties(tmp_path_factory, events, min_d, cutoff):
    p = tmp_path_factory.mktemp("h") / "h.tsv"
    p.write_text("".join(f"{u}\t{a}\t{t}\n" for u, a, t in events), encoding="utf-8")
    hs = load_edit_history(p, min_d, cutoff)
    for h in hs:
        ts = [t for _, t in h.events]
        assert ts == sorted(ts) and min(ts) >= cutoff
        assert len(h.distinct_articles()) >= min_d
    assert [h.user_id for h in hs] == sorted(h.user_id for h in hs)


def test_history_roundtrip(tmp_path):
    hs = [EditHistory(4, [(1, 10), (2, 11)]), EditHistory(9, [(3, 12)])]
    write_edit_history(tmp_path / "h.tsv", hs)
    assert load_edit_history(tmp_path / "h.tsv", 0, 0) == hs


def test_corpus_escapes(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_bytes(b"7\thello\\nworld\n8\t\n9\ta\\tb\\\\c\n")
    assert load_corpus(p) == [(7, "hello\nworld"), (8, ""), (9, "a\tb\\c")]


def test_corpus_duplicate_and_utf8(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_bytes(b"7\ta\n7\tb\n")
    with pytest.raises(CorpusError, match="duplicate"):
        load_corpus(p)
    p.write_bytes(b"7\t\xff\xfe\n")
    with pytest.raises(CorpusError, match="UTF-8"):
        load_corpus(p)


@given(st.text())
def test_escape_roundtrip(s):
    assert unescape_text(escape_text(s)) == s


def test_corpus_roundtrip(tmp_path):
    docs = [(1, "tab\there"), (2, "line\nbreak \\ slash"), (3, "")]
    write_corpus(tmp_path / "c.tsv", docs)
    assert load_corpus(tmp_path / "c.tsv") == docs
