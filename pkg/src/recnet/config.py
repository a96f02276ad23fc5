"""Pipeline configuration: a flat registry of typed keys.

Config files are UTF-8 ``key = value`` lines; ``#`` starts a comment.
Resolution order is command-line flag, then config file, then the
``RECNET_SEED`` environment variable (for ``seed`` only), then the default.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from os import PathLike
from typing import Any, Callable


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> tuple[int, ...]:
    items = [p.strip() for p in str(s).split(",") if p.strip()]
    return tuple(int(p) for p in items)


def _str_list(s: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in str(s).split(",") if p.strip())


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str = ""


def _k(name, parse, default, help=""):
    return Key(name, parse, default, help)


_PATH = str
KEYS: dict[str, Key] = {k.name: k for k in [
    _k("seed", int, 0, "global random seed"),
    _k("workers", int, 1, "worker count (training is deterministic only with 1)"),
    # paths
    _k("edges", _PATH, None, "edge list TSV"),
    _k("redirects", _PATH, None, "redirect TSV"),
    _k("categories", _PATH, None, "category id list"),
    _k("graph", _PATH, None, "cleaned graph (GRF1)"),
    _k("corpus", _PATH, None, "article text TSV"),
    _k("features", _PATH, None, "node feature embeddings (EMB1)"),
    _k("emb", _PATH, None, "article embeddings (EMB1)"),
    _k("content", _PATH, None, "embeddings fed to the ranker (EMB1)"),
    _k("queries", _PATH, None, "query embeddings (EMB1)"),
    _k("index", _PATH, None, "ANN index (ANN1)"),
    _k("model", _PATH, None, "GraphSAGE checkpoint (GSM1)"),
    _k("ranker", _PATH, None, "ranker checkpoint (RKM1)"),
    _k("history", _PATH, None, "edit history TSV"),
    _k("train_history", _PATH, None, "edit history TSV for training baselines"),
    _k("out", _PATH, None, "output path"),
    _k("out_dir", _PATH, None, "output directory"),
    # history filters
    _k("history.min_distinct", int, 5, "drop users with fewer distinct articles"),
    _k("history.cutoff", int, 1420070400, "drop edits before this unix time"),
    # doc2vec
    _k("doc2vec.dim", int, 300, "vector size"),
    _k("doc2vec.window", int, 8, "context window (unused by pure PV-DBOW)"),
    _k("doc2vec.negatives", int, 5, "noise words per pair"),
    _k("doc2vec.epochs", int, 10, "passes over the corpus"),
    _k("doc2vec.lr", float, 0.025, "initial learning rate"),
    _k("doc2vec.min_lr", float, 1e-4, "final learning rate"),
    _k("doc2vec.min_count", int, 5, "drop rarer tokens"),
    _k("doc2vec.subsample", float, 1e-4, "frequent-token down-sampling threshold"),
    # graphsage
    _k("graphsage.epochs", int, 5, "passes over the edges"),
    _k("graphsage.batch_size", int, 512, "edges per step"),
    _k("graphsage.k", int, 25, "neighbors sampled per layer"),
    _k("graphsage.hidden_dim", int, 512, "layer-1 width"),
    _k("graphsage.out_dim", int, 512, "output width"),
    _k("graphsage.margin", float, 0.5, "max-margin loss margin"),
    _k("graphsage.negatives", int, 5, "negatives per edge"),
    _k("graphsage.lr", float, 1e-3, "Adam learning rate"),
    _k("graphsage.max_neighbors", int, 128, "sampled adjacency capacity"),
    _k("graphsage.directed", _bool, False, "sample out-neighbors only"),
    # index
    _k("index.kind", str, "hnsw", "exact, hnsw, ivf or lsh"),
    _k("index.m", int, 16, "HNSW links per node"),
    _k("index.ef_construction", int, 200, "HNSW build beam"),
    _k("index.ef_search", int, 64, "HNSW query beam"),
    _k("index.nlist", int, 0, "IVF lists (0: sqrt of count)"),
    _k("index.nprobe", int, 8, "IVF lists probed per query"),
    _k("index.kmeans_iters", int, 20, "IVF k-means iterations"),
    _k("index.n_bits", int, 256, "LSH signature bits"),
    _k("index.rerank_factor", int, 10, "LSH shortlist size as a multiple of k"),
    # benchmark
    _k("bench.k", int, 10, "neighbors per query"),
    _k("bench.kinds", _str_list, ("exact", "hnsw", "ivf", "lsh"), "index kinds to compare"),
    # ranker
    _k("ranker.epochs", int, 10, "passes over the examples"),
    _k("ranker.batch_size", int, 256, "examples per step"),
    _k("ranker.lr", float, 1e-3, "Adam learning rate"),
    _k("ranker.neg_per_pos", int, 20, "negatives per positive"),
    _k("ranker.pool", int, 1000, "ANN neighbors negatives are drawn from"),
    _k("ranker.hidden", _int_list, (1024, 512, 256), "hidden layer widths"),
    # recommend
    _k("recommend.mode", str, "mean", "mean, max or merge"),
    _k("recommend.n", int, 100, "recommendations to return"),
    _k("recommend.user", int, 0, "user id (ALS)"),
    _k("recommend.articles", _int_list, (), "comma-separated history article ids"),
    _k("recommend.rerank_pool", int, 0, "candidates re-ranked by the ranker (0: n)"),
    # baselines
    _k("bm25.k1", float, 1.2, "term-frequency saturation"),
    _k("bm25.b", float, 0.75, "length normalization"),
    _k("als.factors", int, 64, "latent factors"),
    _k("als.regularization", float, 0.01, "L2 penalty"),
    _k("als.alpha", float, 40.0, "confidence scale"),
    _k("als.iterations", int, 15, "alternations"),
    # evaluation
    _k("eval.recommender", str, "wikirecnet", "wikirecnet, bm25, als or random"),
    _k("eval.rank", str, "cosine", "cosine or deep"),
    _k("eval.ks", _int_list, (50, 100), "cutoffs"),
    # synthetic data
    _k("synth.nodes", int, 3000, "articles"),
    _k("synth.blocks", int, 3, "topics"),
    _k("synth.subtopic_size", int, 100, "articles per subtopic"),
    _k("synth.p_in", float, 0.2, "link probability within a subtopic"),
    _k("synth.p_topic", float, 0.01, "link probability within a topic"),
    _k("synth.p_out", float, 0.001, "link probability across topics"),
    _k("synth.users", int, 500, "evaluation users"),
    _k("synth.train_users", int, 500, "training users"),
    _k("synth.affinity", float, 0.8, "probability an edit stays in the home topic"),
]}


def parse_value(name: str, raw: Any) -> Any:
    key = KEYS[name]
    if raw is None or not isinstance(raw, str):
        return raw
    try:
        return key.parse(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {name!r}: {e}") from None


def read_config_file(path: str | PathLike) -> dict[str, Any]:
    out: dict[str, Any] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except UnicodeDecodeError as e:
        raise ConfigError(f"{path}: not valid UTF-8 ({e.reason})") from None
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        name, sep, value = text.partition("=")
        name = name.strip()
        if not sep or not name:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if name not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {name!r}")
        out[name] = parse_value(name, value.strip())
    return out


def resolve(flags: dict[str, Any], file_values: dict[str, Any],
            environ: dict[str, str] | None = None) -> dict[str, Any]:
    """Fully resolved values for every registered key."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, key in KEYS.items():
        if flags.get(name) is not None:
            out[name] = parse_value(name, flags[name])
        elif name in file_values:
            out[name] = file_values[name]
        elif name == "seed" and environ.get("RECNET_SEED"):
            out[name] = parse_value("seed", environ["RECNET_SEED"])
        else:
            out[name] = key.default
    return out


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return "" if v is None else str(v)


def dump(values: dict[str, Any], keys=None) -> str:
    names = sorted(keys if keys is not None else values)
    return "".join(f"{n} = {format_value(values[n])}\n" for n in names)
