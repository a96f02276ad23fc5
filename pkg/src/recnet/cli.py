"""``recnet`` command-line interface.

Every subcommand resolves its settings (flag > config file > environment >
default), logs them, and writes them next to its primary artifact as
``<artifact>.config``. Failures print one line to stderr of the form
``recnet: error: kind=<kind> code=<exit code> message=<text>``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import config as C
from .annindex import AnnIndex, benchmark, build_index, format_report, load_index, save_index
from .baselines import AlsConfig, als_recommend, als_train, bm25_build, bm25_recommend
from .binio import FormatError
from .corpus import (ArticleGraph, CorpusError, ParseError, RedirectCycleError, filter_category_nodes,
                     graph_stats, load_corpus, load_edge_list, load_edit_history, load_id_set,
                     load_redirects, resolve_redirects)
from .embstore import EmbeddingStore
from .errors import DimensionError

log = logging.getLogger("recnet")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_FILE = 4
EXIT_FORMAT = 5
EXIT_DIMENSION = 6
EXIT_DATA = 7


class UsageError(Exception):
    pass


def _fail(kind: str, code: int, message: str) -> int:
    text = " ".join(str(message).split())
    print(f"recnet: error: kind={kind} code={code} message={text}", file=sys.stderr)
    return code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- subcommand registry ---------------------------------------------------

_COMMANDS: dict[str, tuple[Callable, list[tuple[str, str]], list[str], str]] = {}


def command(name: str, flags: list[tuple[str, str]], required: list[str], help: str):
    """Register a subcommand: ``flags`` map option strings to config keys."""
    def wrap(fn):
        _COMMANDS[name] = (fn, flags, required, help)
        return fn
    return wrap


def _keys_for(flags) -> list[str]:
    return sorted({k for _, k in flags} | {"seed", "workers"})


def _write_sidecar(path, name: str, cfg: dict, flags) -> None:
    text = f"# recnet {name}\n" + C.dump(cfg, _keys_for(flags))
    Path(f"{path}.config").write_text(text, encoding="utf-8")


def _need_file(path) -> str:
    if not Path(path).is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return str(path)


def _warn_workers(cfg) -> None:
    if cfg["workers"] > 1:
        log.warning("workers=%d requested; training runs on a single worker", cfg["workers"])


def _load_store(path) -> EmbeddingStore:
    return EmbeddingStore.read(_need_file(path))


def _index_params(cfg, kind: str) -> dict[str, Any]:
    if kind == "hnsw":
        return dict(M=cfg["index.m"], ef_construction=cfg["index.ef_construction"],
                    ef_search=cfg["index.ef_search"], seed=cfg["seed"])
    if kind == "ivf":
        return dict(nlist=cfg["index.nlist"] or None, nprobe=cfg["index.nprobe"],
                    kmeans_iters=cfg["index.kmeans_iters"], seed=cfg["seed"])
    if kind == "lsh":
        return dict(n_bits=cfg["index.n_bits"], rerank_factor=cfg["index.rerank_factor"],
                    seed=cfg["seed"])
    return {}


def _histories(cfg, path):
    return load_edit_history(_need_file(path), cfg["history.min_distinct"], cfg["history.cutoff"])


def _index_for(cfg, store: EmbeddingStore) -> AnnIndex:
    if cfg["index"]:
        index = load_index(_need_file(cfg["index"]))
        if index.dim != store.dim:
            raise DimensionError(f"index dimension {index.dim} != embedding dimension {store.dim}")
        return index
    log.info("no index given; using an exact index over the embeddings")
    return build_index(store, "exact")


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _ranked_tsv(items) -> str:
    return "".join(f"{a}\t{s:.6f}\n" for a, s in items)


# -- subcommands -------------------------------------------------------------

@command("ingest", [("--edges", "edges"), ("--redirects", "redirects"),
                    ("--categories", "categories"), ("--out", "out")],
         ["edges", "out"], "clean an edge list into a binary graph")
def cmd_ingest(cfg, flags):
    g = load_edge_list(_need_file(cfg["edges"]))
    if cfg["redirects"]:
        g = resolve_redirects(g, load_redirects(_need_file(cfg["redirects"])))
    if cfg["categories"]:
        g = filter_category_nodes(g, load_id_set(_need_file(cfg["categories"])))
    g.write(cfg["out"])
    _write_sidecar(cfg["out"], "ingest", cfg, flags)
    log.info("wrote %s", g)


@command("stats", [("--graph", "graph")], ["graph"], "print graph statistics")
def cmd_stats(cfg, flags):
    sys.stdout.write(graph_stats(ArticleGraph.read(_need_file(cfg["graph"]))).as_tsv())


_D2V = [("--dim", "doc2vec.dim"), ("--window", "doc2vec.window"),
        ("--negatives", "doc2vec.negatives"), ("--epochs", "doc2vec.epochs"),
        ("--lr", "doc2vec.lr"), ("--min-lr", "doc2vec.min_lr"),
        ("--min-count", "doc2vec.min_count"), ("--subsample", "doc2vec.subsample")]


@command("train-doc2vec", [("--corpus", "corpus"), ("--out", "out"), *_D2V],
         ["corpus", "out"], "train PV-DBOW content embeddings")
def cmd_train_doc2vec(cfg, flags):
    from .textembed import Doc2VecConfig, train_pvdbow
    _warn_workers(cfg)
    docs = load_corpus(_need_file(cfg["corpus"]))
    dc = Doc2VecConfig(dim=cfg["doc2vec.dim"], window=cfg["doc2vec.window"],
                       negatives=cfg["doc2vec.negatives"], epochs=cfg["doc2vec.epochs"],
                       initial_lr=cfg["doc2vec.lr"], min_lr=cfg["doc2vec.min_lr"],
                       min_count=cfg["doc2vec.min_count"],
                       subsample_threshold=cfg["doc2vec.subsample"], seed=cfg["seed"])
    res = train_pvdbow(docs, dc)
    res.store.write(cfg["out"])
    _write_sidecar(cfg["out"], "train-doc2vec", cfg, flags)


_GS = [("--epochs", "graphsage.epochs"), ("--batch-size", "graphsage.batch_size"),
       ("--k", "graphsage.k"), ("--hidden-dim", "graphsage.hidden_dim"),
       ("--out-dim", "graphsage.out_dim"), ("--margin", "graphsage.margin"),
       ("--negatives", "graphsage.negatives"), ("--lr", "graphsage.lr"),
       ("--max-neighbors", "graphsage.max_neighbors"), ("--directed", "graphsage.directed")]


@command("train-graphsage", [("--graph", "graph"), ("--features", "features"), ("--out", "out"),
                             ("--model", "model"), *_GS],
         ["graph", "features", "out"], "train GraphSAGE and embed every node")
def cmd_train_graphsage(cfg, flags):
    from .graphembed import GraphSageConfig, build_sampled_adjacency, embed_all, train_graphsage
    _warn_workers(cfg)
    g = ArticleGraph.read(_need_file(cfg["graph"]))
    feats = _load_store(cfg["features"])
    gc = GraphSageConfig(batch_size=cfg["graphsage.batch_size"], k=cfg["graphsage.k"],
                         hidden_dim=cfg["graphsage.hidden_dim"], out_dim=cfg["graphsage.out_dim"],
                         margin=cfg["graphsage.margin"],
                         negatives_per_edge=cfg["graphsage.negatives"],
                         epochs=cfg["graphsage.epochs"], lr=cfg["graphsage.lr"],
                         max_neighbors=cfg["graphsage.max_neighbors"],
                         directed=cfg["graphsage.directed"], seed=cfg["seed"])
    adj = build_sampled_adjacency(g, gc.max_neighbors, gc.seed, gc.directed)
    model = train_graphsage(g, feats, gc, adj=adj)
    embed_all(model, g, feats, adj, seed=cfg["seed"]).write(cfg["out"])
    _write_sidecar(cfg["out"], "train-graphsage", cfg, flags)
    if cfg["model"]:
        model.save(cfg["model"])
        _write_sidecar(cfg["model"], "train-graphsage", cfg, flags)


_IDX = [("--kind", "index.kind"), ("--m", "index.m"),
        ("--ef-construction", "index.ef_construction"), ("--ef-search", "index.ef_search"),
        ("--nlist", "index.nlist"), ("--nprobe", "index.nprobe"),
        ("--kmeans-iters", "index.kmeans_iters"), ("--n-bits", "index.n_bits"),
        ("--rerank-factor", "index.rerank_factor")]


@command("build-index", [("--emb", "emb"), ("--out", "out"), *_IDX], ["emb", "out"],
         "build an ANN index over embeddings")
def cmd_build_index(cfg, flags):
    store = _load_store(cfg["emb"])
    kind = cfg["index.kind"]
    save_index(build_index(store, kind, **_index_params(cfg, kind)), cfg["out"])
    _write_sidecar(cfg["out"], "build-index", cfg, flags)


@command("bench-ann", [("--emb", "emb"), ("--queries", "queries"), ("--k", "bench.k"),
                       ("--kinds", "bench.kinds"), ("--out", "out"), *_IDX[1:]],
         ["emb", "queries"], "compare index kinds on recall, MRR and latency")
def cmd_bench_ann(cfg, flags):
    store = _load_store(cfg["emb"])
    queries = _load_store(cfg["queries"])
    if queries.dim != store.dim:
        raise DimensionError(f"query dimension {queries.dim} != embedding dimension {store.dim}")
    kinds = cfg["bench.kinds"]
    params = {k: _index_params(cfg, k) for k in kinds}
    reports = benchmark(store, queries.vectors, kinds, cfg["bench.k"], params)
    _emit(format_report(reports), cfg["out"])
    if cfg["out"]:
        _write_sidecar(cfg["out"], "bench-ann", cfg, flags)


_HIST = [("--min-distinct", "history.min_distinct"), ("--cutoff", "history.cutoff")]
_RK = [("--epochs", "ranker.epochs"), ("--batch-size", "ranker.batch_size"),
       ("--lr", "ranker.lr"), ("--neg-per-pos", "ranker.neg_per_pos"),
       ("--pool", "ranker.pool"), ("--hidden", "ranker.hidden")]


@command("train-ranker", [("--history", "history"), ("--emb", "emb"), ("--index", "index"),
                          ("--out", "out"), *_RK, *_HIST],
         ["history", "emb", "out"], "train the pointwise deep ranker")
def cmd_train_ranker(cfg, flags):
    from .ranker import RankerConfig, build_training_set, train_ranker
    _warn_workers(cfg)
    store = _load_store(cfg["emb"])
    index = _index_for(cfg, store)
    hist = _histories(cfg, cfg["history"])
    examples = build_training_set(hist, store, index, neg_per_pos=cfg["ranker.neg_per_pos"],
                                  seed=cfg["seed"], pool=cfg["ranker.pool"])
    rc = RankerConfig(hidden=cfg["ranker.hidden"], batch_size=cfg["ranker.batch_size"],
                      epochs=cfg["ranker.epochs"], lr=cfg["ranker.lr"], seed=cfg["seed"])
    model = train_ranker(examples, store, rc)
    model.save(cfg["out"])
    _write_sidecar(cfg["out"], "train-ranker", cfg, flags)


def _load_ranker(cfg, store: EmbeddingStore):
    from .ranker import RankingModel
    model = RankingModel.load(_need_file(cfg["ranker"]))
    rstore = _load_store(cfg["content"]) if cfg["content"] else store
    if model.input_dim != 6 * rstore.dim:
        raise DimensionError(f"ranker expects {model.input_dim // 6}-dimensional embeddings, "
                             f"got {rstore.dim}")
    return model, rstore


@command("recommend", [("--index", "index"), ("--emb", "emb"), ("--history", "recommend.articles"),
                       ("--mode", "recommend.mode"), ("--n", "recommend.n"),
                       ("--ranker", "ranker"), ("--content", "content"),
                       ("--rerank-pool", "recommend.rerank_pool"), ("--out", "out")],
         ["index", "emb", "recommend.articles"], "recommend articles for an edit history")
def cmd_recommend(cfg, flags):
    from .candidates import UserRepresentation, generate_candidates
    from .evaluation import fit_history
    from .ranker import rank_candidates
    store = _load_store(cfg["emb"])
    index = _index_for(cfg, store)
    articles = list(cfg["recommend.articles"])
    n = cfg["recommend.n"]
    user = UserRepresentation.from_history(store, articles, cfg["recommend.mode"])
    if cfg["ranker"]:
        model, rstore = _load_ranker(cfg, store)
        pool = max(n, cfg["recommend.rerank_pool"] or n)
        cands = generate_candidates(user, index, pool, exclude=articles)
        ids = [a for a in cands.ids if a in rstore]
        items = rank_candidates(model, fit_history(articles), ids, rstore)[:n]
    else:
        items = generate_candidates(user, index, n, exclude=articles).items
    _emit(_ranked_tsv(items), cfg["out"])


@command("baseline-bm25", [("--corpus", "corpus"), ("--history", "recommend.articles"),
                           ("--n", "recommend.n"), ("--k1", "bm25.k1"), ("--b", "bm25.b"),
                           ("--out", "out")],
         ["corpus", "recommend.articles"], "BM25 content-based recommendations")
def cmd_baseline_bm25(cfg, flags):
    from .textembed import tokenize
    docs = load_corpus(_need_file(cfg["corpus"]))
    index = bm25_build([(a, tokenize(t)) for a, t in docs], cfg["bm25.k1"], cfg["bm25.b"])
    articles = list(cfg["recommend.articles"])
    _emit(_ranked_tsv(bm25_recommend(index, articles, cfg["recommend.n"], exclude=articles)),
          cfg["out"])


_ALS = [("--factors", "als.factors"), ("--regularization", "als.regularization"),
        ("--alpha", "als.alpha"), ("--iterations", "als.iterations")]


def _als_config(cfg) -> AlsConfig:
    return AlsConfig(factors=cfg["als.factors"], regularization=cfg["als.regularization"],
                     alpha=cfg["als.alpha"], iterations=cfg["als.iterations"], seed=cfg["seed"])


@command("baseline-als", [("--train-history", "train_history"), ("--user", "recommend.user"),
                          ("--history", "recommend.articles"), ("--n", "recommend.n"),
                          ("--out", "out"), *_ALS, *_HIST],
         ["train_history"], "implicit-feedback ALS recommendations")
def cmd_baseline_als(cfg, flags):
    _warn_workers(cfg)
    hist = _histories(cfg, cfg["train_history"])
    user = cfg["recommend.user"]
    articles = list(cfg["recommend.articles"])
    inter = [(h.user_id, a, 1) for h in hist for a in h.distinct_articles()]
    known = {h.user_id for h in hist}
    if articles and user not in known:
        inter += [(user, a, 1) for a in dict.fromkeys(articles)]
    model = als_train(inter, _als_config(cfg))
    exclude = set(articles)
    exclude.update(a for h in hist if h.user_id == user for a in h.distinct_articles())
    _emit(_ranked_tsv(als_recommend(model, user, cfg["recommend.n"], exclude)), cfg["out"])


@command("evaluate", [("--recommender", "eval.recommender"), ("--mode", "recommend.mode"),
                      ("--rank", "eval.rank"), ("--history", "history"), ("--emb", "emb"),
                      ("--index", "index"), ("--ranker", "ranker"), ("--content", "content"),
                      ("--corpus", "corpus"), ("--train-history", "train_history"),
                      ("--ks", "eval.ks"), ("--rerank-pool", "recommend.rerank_pool"),
                      ("--out", "out"), *_ALS, *_HIST],
         ["history"], "offline evaluation over held-out users")
def cmd_evaluate(cfg, flags):
    from . import evaluation as E
    name = cfg["eval.recommender"]
    windows = E.make_eval_windows(_histories(cfg, cfg["history"]), seed=cfg["seed"])
    mode, rank = cfg["recommend.mode"], cfg["eval.rank"]
    if name == "wikirecnet":
        _require(cfg, "emb", "evaluate --recommender wikirecnet")
        store = _load_store(cfg["emb"])
        index = _index_for(cfg, store)
        model = rstore = None
        if rank == "deep":
            _require(cfg, "ranker", "evaluate --rank deep")
            model, rstore = _load_ranker(cfg, store)
        elif rank != "cosine":
            raise UsageError(f"unknown rank method {rank!r}; expected cosine or deep")
        rec = E.WikiRecNetRecommender(store, index, mode, model, rstore,
                                      cfg["recommend.rerank_pool"] or None)
        label = "WikiRecNet"
    elif name == "bm25":
        from .textembed import tokenize
        _require(cfg, "corpus", "evaluate --recommender bm25")
        docs = load_corpus(_need_file(cfg["corpus"]))
        rec = E.Bm25Recommender(bm25_build([(a, tokenize(t)) for a, t in docs]))
        label, mode, rank = "BM25", "-", "-"
    elif name == "als":
        _require(cfg, "train_history", "evaluate --recommender als")
        train = _histories(cfg, cfg["train_history"])
        inter = [(h.user_id, a, 1) for h in train for a in h.distinct_articles()]
        inter += [(w.user_id, a, 1) for w in windows for a in w.profile]
        rec = E.AlsRecommender(als_train(inter, _als_config(cfg)))
        label, mode, rank = "ALS MF", "-", "-"
    elif name == "random":
        if cfg["emb"]:
            items = _load_store(cfg["emb"]).ids
        elif cfg["corpus"]:
            items = np.array([a for a, _ in load_corpus(_need_file(cfg["corpus"]))],
                             dtype=np.uint64)
        else:
            raise UsageError("evaluate --recommender random needs --emb or --corpus for the catalog")
        rec = E.RandomRecommender(np.sort(items), cfg["seed"])
        label, mode, rank = "Random", "-", "-"
    else:
        raise UsageError(f"unknown recommender {name!r}; expected wikirecnet, bm25, als or random")
    ks = tuple(sorted(cfg["eval.ks"]))
    row = E.evaluate(rec, windows, ks, label, mode, rank)
    report = E.EvalReport(ks, [row])
    _emit(report.to_tsv(), cfg["out"])
    if cfg["out"]:
        _write_sidecar(cfg["out"], "evaluate", cfg, flags)


@command("gen-synth", [("--out-dir", "out_dir"), ("--nodes", "synth.nodes"),
                       ("--blocks", "synth.blocks"), ("--subtopic-size", "synth.subtopic_size"),
                       ("--p-in", "synth.p_in"), ("--p-topic", "synth.p_topic"),
                       ("--p-out", "synth.p_out"), ("--users", "synth.users"),
                       ("--train-users", "synth.train_users"), ("--affinity", "synth.affinity")],
         ["out_dir"], "generate a synthetic dataset")
def cmd_gen_synth(cfg, flags):
    from .synth import SynthConfig, generate, write_dataset
    sc = SynthConfig(nodes=cfg["synth.nodes"], blocks=cfg["synth.blocks"],
                     subtopic_size=cfg["synth.subtopic_size"], p_in=cfg["synth.p_in"],
                     p_topic=cfg["synth.p_topic"], p_out=cfg["synth.p_out"],
                     users=cfg["synth.users"], train_users=cfg["synth.train_users"],
                     affinity=cfg["synth.affinity"], seed=cfg["seed"])
    write_dataset(generate(sc), cfg["out_dir"])
    _write_sidecar(Path(cfg["out_dir"]) / "gen-synth", "gen-synth", cfg, flags)


def _require(cfg, key: str, what: str) -> None:
    if cfg[key] in (None, "", ()):
        raise UsageError(f"{what} requires --{key.split('.')[-1].replace('_', '-')}")


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="recnet", description="Two-stage article recommender pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, flags, _, help_text) in _COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--seed", dest="seed", default=None, help=C.KEYS["seed"].help)
        sp.add_argument("--workers", dest="workers", default=None, help=C.KEYS["workers"].help)
        sp.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
        for flag, key in flags:
            sp.add_argument(flag, dest=key, default=None, metavar="VALUE",
                            help=f"{C.KEYS[key].help} [{key}]")
    return p


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, force=True,
                        format="level=%(levelname)s logger=%(name)s msg=%(message)s")


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _setup_logging(args.verbose)
        fn, flags, required, _ = _COMMANDS[args.command]
        file_values = C.read_config_file(_need_file(args.config)) if args.config else {}
        given = {k: v for k, v in vars(args).items() if k in C.KEYS}
        cfg = C.resolve(given, file_values)
        for key in required:
            if cfg[key] in (None, "", ()):
                flag = next((f for f, k in flags if k == key), key)
                raise UsageError(f"{args.command} requires {flag} (or '{key}' in the config file)")
        log.info("resolved config for %s: %s", args.command,
                 "; ".join(f"{k}={C.format_value(cfg[k])}" for k in _keys_for(flags)))
        fn(cfg, flags)
        return EXIT_OK
    except UsageError as e:
        return _fail("usage", EXIT_USAGE, e)
    except C.ConfigError as e:
        return _fail("config", EXIT_CONFIG, e)
    except FileNotFoundError as e:
        return _fail("missing-file", EXIT_MISSING_FILE, e.args[-1] if e.filename is None
                     else f"{e.strerror}: {e.filename}")
    except (FormatError, ParseError, CorpusError) as e:
        return _fail("format", EXIT_FORMAT, e)
    except DimensionError as e:
        return _fail("dimension", EXIT_DIMENSION, e)
    except (RedirectCycleError, ValueError, KeyError) as e:
        return _fail("data", EXIT_DATA, e.args[0] if isinstance(e, KeyError) and e.args else e)
    except Exception as e:  # noqa: BLE001 - last-resort single-line report
        return _fail("internal", EXIT_INTERNAL, f"{type(e).__name__}: {e}")


def main() -> None:
    sys.exit(run())
