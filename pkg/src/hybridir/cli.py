"""Command-line pipelines: index, gen-training, embed, search, evaluate, analyze.

Exit status is 0 on success, 1 when a command produced an empty result and
2 on usage or input errors. Setting ``HYBRIDIR_CONFIG`` to a JSON file
overrides entries of the defaults table.
"""
from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Sequence

from . import __version__
from .corpus import (IngestError, NormalizationConfig, load_documents, load_stopwords, dump_documents, ingest,
                     read_queries, split_passages)
from .defaults import DEFAULTS, DEFAULTS_VERSION, config_hash
from .dense import VectorIndex, VectorIndexError
from .embedder import BaselineProjectionProvider, EmbedError, embed_corpus, load_provider
from .evaluation import (Qrels, build_report, dump_json, evaluate_run, improvement_histogram, lengths_rows, properties_table,
                         quartile_analysis, quartile_table, query_properties, relevant_length_profile,
                         term_comparison, unique_relevant, write_csv)
from .feedback import FeedbackError
from .hybrid import HybridConfig, HybridRetriever, oracle_merge
from .lexical import INDEX_VERSION, LexicalIndex
from .ranking import RunFormatError, ScoredList, read_run, write_run
from .weaksup import WeakSupConfig, write_training_data

logger = logging.getLogger("hybridir")

CONFIG_ENV = "HYBRIDIR_CONFIG"
EXIT_OK, EXIT_EMPTY, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def load_defaults() -> dict:
    cfg = dict(DEFAULTS)
    path = os.environ.get(CONFIG_ENV)
    if path:
        overrides = json.loads(Path(path).read_text("utf-8"))
        unknown = set(overrides) - set(cfg)
        if unknown:
            raise UsageError(f"{path}: unknown config keys {sorted(unknown)}")
        cfg.update(overrides)
    return cfg


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path: Path, command: str, config: dict, inputs: dict, outputs: Sequence[Path],
                   extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": {k: str(v) for k, v in inputs.items()},
        "seeds": {k: v for k, v in config.items() if "seed" in k},
        "versions": {"hybridir": __version__, "defaults": DEFAULTS_VERSION, "index_format": INDEX_VERSION},
        "created": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "outputs": {p.name: file_sha256(p) for p in outputs if p.is_file()},
    }
    if extra:
        manifest.update(extra)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.name + suffix)


def require(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def read_index_manifest(index_dir: Path) -> dict:
    return json.loads(require(index_dir / "manifest.json", "index manifest").read_text("utf-8"))


def normalization_from(manifest: dict) -> NormalizationConfig:
    norm = manifest["normalization"]
    return NormalizationConfig(norm["stemmer"], frozenset(norm["stopwords"]))


# ---------------------------------------------------------------------------
# commands


def cmd_index(args, cfg) -> int:
    corpus = require(args.corpus, "corpus")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stop = load_stopwords(args.stopwords) if args.stopwords else load_stopwords()
    norm = NormalizationConfig(args.stemmer, stop)
    docs = list(ingest(corpus, args.format, norm))
    index = LexicalIndex.build(docs)
    index.save(out)
    dump_documents(docs, out / "docs.jsonl")
    n_passages = 0
    with (out / "passages.tsv").open("w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            for p in split_passages(doc, cfg["window"], cfg["stride"]):
                start = p.ordinal * cfg["stride"]
                fh.write(f"{p.passage_id}\t{p.doc_id}\t{start}\t{start + len(p.tokens)}\n")
                n_passages += 1
    run_cfg = {k: cfg[k] for k in ("window", "stride")} | {"format": args.format}
    outputs = [out / n for n in ("lexical.idx", "lexical.json", "docs.jsonl", "passages.tsv")]
    write_manifest(out / "manifest.json", "index", run_cfg, {"corpus": corpus}, outputs,
                   {"normalization": norm.describe(), "counts": {"documents": index.N, "passages": n_passages,
                                                                 "terms": len(index.terms)}})
    print(f"indexed {index.N} documents, {len(index.terms)} terms, {n_passages} passages -> {out}")
    return EXIT_OK if index.N else EXIT_EMPTY


def load_passages(index_dir: Path, manifest: dict):
    docs = load_documents(require(index_dir / "docs.jsonl", "document table"))
    window, stride = manifest["config"]["window"], manifest["config"]["stride"]
    return docs, [p for d in docs for p in split_passages(d, window, stride)]


def cmd_gen_training(args, cfg) -> int:
    index_dir = Path(args.index)
    manifest = read_index_manifest(index_dir)
    index = LexicalIndex.load(index_dir)
    docs = load_documents(require(index_dir / "docs.jsonl", "document table"))
    wcfg = WeakSupConfig(min_df=args.min_df, min_results=args.min_results, top_docs=cfg["top_docs_per_query"],
                         max_passages=cfg["max_passages_per_doc"], passage_order=args.passage_order,
                         window=manifest["config"]["window"], stride=manifest["config"]["stride"],
                         vocab_min_count=args.vocab_min_count, neg_ratio=args.neg_ratio, seed=args.seed,
                         shard_size=cfg["shard_size"], k1=cfg["k1"], b=cfg["b"])
    result = write_training_data(docs, index, args.out, wcfg, normalization_from(manifest).stopwords)
    counts = result.counts
    print("bigram_queries={bigram_queries} trigram_queries={trigram_queries} "
          "positives={positives} negatives={negatives}".format(**counts))
    return EXIT_OK if counts["positives"] else EXIT_EMPTY


def cmd_embed(args, cfg) -> int:
    index_dir = Path(args.index)
    manifest = read_index_manifest(index_dir)
    index = LexicalIndex.load(index_dir)
    provider = load_provider(args.provider, index)
    _, passages = load_passages(index_dir, manifest)
    out = Path(args.out)
    n = embed_corpus(provider, passages, out, normalize=args.normalize)
    outputs = [out]
    ann_info = None
    if n:
        vindex = VectorIndex.load(out)
        k = min(args.n_centroids, n)
        vindex.build_ann(k, seed=args.seed, max_iter=cfg["kmeans_max_iter"])
        ann_path = sidecar(out, ".ann.npz")
        vindex.save_ann(ann_path)
        outputs.append(ann_path)
        ann_info = {"n_centroids": k}
    if isinstance(provider, BaselineProjectionProvider):
        prov_path = sidecar(out, ".provider.json")
        prov_path.write_text(provider.to_json(), encoding="utf-8")
        outputs.append(prov_path)
    run_cfg = {"provider": args.provider, "normalize": args.normalize, "n_centroids": args.n_centroids,
               "ann_seed": args.seed, "kmeans_max_iter": cfg["kmeans_max_iter"]}
    write_manifest(sidecar(out, ".manifest.json"), "embed", run_cfg,
                   {"index": index_dir, "index_manifest": index_dir / "manifest.json"}, outputs,
                   {"counts": {"passages": n}, "ann": ann_info})
    print(f"embedded {n} passages (dim {provider.dim}) -> {out}")
    return EXIT_OK if n else EXIT_EMPTY


def open_vectors(path: Path) -> VectorIndex:
    vindex = VectorIndex.load(path)
    ann = sidecar(path, ".ann.npz")
    if len(vindex) and ann.exists():
        vindex.load_ann(ann)
    return vindex


def cmd_search(args, cfg) -> int:
    index_dir = Path(args.index)
    manifest = read_index_manifest(index_dir)
    queries = read_queries(require(args.queries, "queries file"), normalization_from(manifest))
    index = LexicalIndex.load(index_dir)
    vindex = provider = None
    if args.mode in ("semantic", "hybrid"):
        if not args.vectors:
            raise UsageError(f"--vectors is required for mode {args.mode}")
        vpath = require(args.vectors, "vector file")
        vindex = open_vectors(vpath)
        if not len(vindex):
            logger.warning("vector file %s is empty; semantic arm disabled", vpath)
        prov_spec = args.provider or sidecar(vpath, ".provider.json")
        if Path(prov_spec).exists() or str(prov_spec).startswith("baseline"):
            provider = load_provider(str(prov_spec), index)
        else:
            logger.warning("no embedding provider found for %s; semantic arm disabled", vpath)
    n_probe = args.n_probe if args.n_probe is not None else cfg["n_probe"]
    if vindex is None or vindex.ann_state is None or n_probe <= 0:
        n_probe = None
    elif n_probe > vindex.ann_state.n_centroids:
        n_probe = vindex.ann_state.n_centroids
    hcfg = HybridConfig(c=args.c, passage_k=max(args.passage_k, args.c), fb_docs=cfg["fb_docs"],
                        fb_terms=cfg["fb_terms"], alpha=cfg["alpha"], mu=cfg["mu"], k1=cfg["k1"], b=cfg["b"],
                        lexical_c=args.lexical_c, semantic_c=args.semantic_c, n_probe=n_probe,
                        induce_from=args.induce_from, parallel=not args.sequential)
    runs: dict[str, ScoredList] = {}
    with HybridRetriever(index, vindex, provider, hcfg) as retriever:
        t0 = time.perf_counter()
        if args.mode == "hybrid":
            results, totals = retriever.retrieve_many(queries)
            rankings = [r.ranking for r in results]
        else:
            arm = retriever.lexical_arm if args.mode == "lexical" else retriever.semantic_arm
            timed = [arm(q) for q in queries]
            rankings = [r for r, _ in timed]
            totals = {args.mode: sum(t for _, t in timed), "total": time.perf_counter() - t0}
    for q, ranking in zip(queries, rankings):
        runs[q.query_id] = ranking
    out = Path(args.out)
    tag = args.tag or args.mode
    n_lines = write_run(runs, out, tag)
    run_cfg = {"mode": args.mode, "tag": tag} | {k: v for k, v in vars(hcfg).items()}
    write_manifest(sidecar(out, ".manifest.json"), "search", run_cfg,
                   {"index": index_dir, "vectors": args.vectors or "", "queries": args.queries,
                    "provider": args.provider or ""}, [out], {"counts": {"queries": len(queries), "lines": n_lines}})
    timing = " ".join(f"{k}={v:.3f}s" for k, v in totals.items())
    print(f"{len(queries)} queries, {n_lines} lines -> {out}")
    print(f"timing: {timing}")
    return EXIT_OK if n_lines else EXIT_EMPTY


def load_runs(paths: Sequence[str]) -> dict[str, dict[str, ScoredList]]:
    runs = {}
    for p in paths:
        path = require(p, "run file")
        try:
            runs[path.stem] = read_run(path)
        except RunFormatError as exc:
            raise RunFormatError(f"{path}: {exc}", exc.lineno) from None
    return runs


def cmd_evaluate(args, cfg) -> int:
    qrels = Qrels.load(require(args.qrels, "qrels file"))
    runs = load_runs(args.runs)
    c_values = args.c or cfg["c_values"]
    baseline = args.baseline
    if baseline is None and len(runs) > 1:
        baseline = next(iter(runs))
    report = build_report(runs, qrels, c_values, baseline)
    if args.oracle:
        base_name, sem_name = args.oracle
        extra = load_runs([base_name, sem_name])
        base_run, sem_run = extra[Path(base_name).stem], extra[Path(sem_name).stem]
        by_c = {}
        for c in c_values:
            oracle = {q: oracle_merge(base_run.get(q, ScoredList()).truncate(c),
                                      sem_run.get(q, ScoredList()).truncate(c), qrels.relevant(q), c)
                      for q in sorted(set(base_run) | set(sem_run))}
            by_c[c] = evaluate_run(oracle, qrels, c)
        report.runs["oracle"] = by_c
        if report.baseline is None:
            report.baseline = Path(base_name).stem
            report.runs.setdefault(report.baseline, {c: evaluate_run(base_run, qrels, c) for c in c_values})
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        dump_json(report.to_json(), out)
        sidecar(out, ".txt").write_text(text, encoding="utf-8")
        write_manifest(sidecar(out, ".manifest.json"), "evaluate", {"c_values": list(c_values),
                       "baseline": report.baseline, "oracle": bool(args.oracle)},
                       {"qrels": args.qrels, **{f"run{i}": p for i, p in enumerate(args.runs)}},
                       [out, sidecar(out, ".txt")])
    return EXIT_OK if qrels.evaluable() else EXIT_EMPTY


def cmd_analyze(args, cfg) -> int:
    kind = args.kind
    out = Path(args.out)

    def need(*names):
        missing = [n for n in names if getattr(args, n) is None]
        if missing:
            raise UsageError(f"analyze {kind} needs " + ", ".join("--" + n.replace("_", "-") for n in missing))

    if kind == "properties":
        need("index", "queries")
        index_dir = Path(args.index)
        manifest = read_index_manifest(index_dir)
        index = LexicalIndex.load(index_dir)
        queries = read_queries(require(args.queries, "queries file"), normalization_from(manifest))
        props = {q.query_id: query_properties(q, index) for q in queries if q.tokens}
        dump_json(props, out)
        sys.stdout.write(properties_table(props))
        return EXIT_OK if props else EXIT_EMPTY

    need("baseline", "test", "qrels")
    qrels = Qrels.load(require(args.qrels, "qrels file"))
    runs = load_runs([args.baseline, args.test])
    base, test = runs[Path(args.baseline).stem], runs[Path(args.test).stem]
    c = args.c or cfg["c"]
    if kind == "quartiles":
        groups = quartile_analysis(base, test, qrels, c)
        dump_json({"c": c, "groups": groups}, out)
        sys.stdout.write(quartile_table(groups))
        return EXIT_OK
    if kind == "histogram":
        edges = args.edges or [-50, -25, -10, -1, 1, 10, 25, 50]
        buckets = improvement_histogram(base, test, qrels, edges, c)
        write_csv(out, ["bucket", "lo", "hi", "count"], [[b.label, b.lo, b.hi, b.count] for b in buckets])
        for b in buckets:
            print(f"{b.label:>16} {b.count}")
        return EXIT_OK
    need("index")
    index = LexicalIndex.load(Path(args.index))
    if kind == "terms":
        only_base = unique_relevant(test, base, qrels, c)
        only_test = unique_relevant(base, test, qrels, c)
        result = {}
        for q in qrels.evaluable():
            if only_base[q] and only_test[q]:
                result[q] = term_comparison(only_base[q], only_test[q], index, args.n_terms)
        dump_json(result, out)
        for q, r in result.items():
            print(f"{q}\tJ={r['jaccard']:.3f}")
        return EXIT_OK if result else EXIT_EMPTY
    if kind == "lengths":
        seq_a, seq_b = relevant_length_profile(base, test, qrels, index.doc_len, args.per_query)
        write_csv(out, ["position", "baseline_length", "test_length"], lengths_rows(seq_a, seq_b))
        print(f"{len(seq_a)} baseline and {len(seq_b)} test relevant documents -> {out}")
        return EXIT_OK if seq_a or seq_b else EXIT_EMPTY
    raise UsageError(f"unknown analysis {kind!r}")


# ---------------------------------------------------------------------------
# parser


def build_parser(cfg: dict) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridir", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--show-config", action="store_true", help="print the defaults table and exit")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("index", help="build the lexical index and passage table")
    p.add_argument("corpus", help="corpus file (JSONL with id/text, or TREC SGML)")
    p.add_argument("--format", choices=["jsonl", "trec-sgml"], default="jsonl", help="corpus format")
    p.add_argument("--out", required=True, help="output index directory")
    p.add_argument("--stemmer", choices=["porter2", "porter", "none"], default="porter2", help="stemmer")
    p.add_argument("--stopwords", help="stopword file (default: bundled English list)")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("gen-training", help="generate weakly supervised training pairs")
    p.add_argument("--index", required=True, help="index directory")
    p.add_argument("--out", required=True, help="output directory for shards and manifest")
    p.add_argument("--seed", type=int, default=cfg["seed"], help="random seed")
    p.add_argument("--neg-ratio", type=float, default=cfg["neg_ratio"], help="negatives per positive")
    p.add_argument("--min-df", type=int, default=cfg["min_ngram_df"], help="minimum n-gram document frequency")
    p.add_argument("--min-results", type=int, default=cfg["min_bm25_results"],
                   help="minimum number of BM25 matches for a mined query")
    p.add_argument("--vocab-min-count", type=int, default=cfg["vocab_min_count"],
                   help="minimum collection frequency of replacement terms")
    p.add_argument("--passage-order", choices=["document", "bm25-passage-score"], default="document",
                   help="which full-match passages of a document are kept first")
    p.set_defaults(func=cmd_gen_training)

    p = sub.add_parser("embed", help="embed passages and build the vector index")
    p.add_argument("--index", required=True, help="index directory")
    p.add_argument("--provider", default=f"baseline:dim={cfg['embed_dim']},seed={cfg['seed']}",
                   help="baseline:dim=D,seed=S[,min_count=M] | provider .json | vectors .tsv | vector file")
    p.add_argument("--out", required=True, help="output vector file")
    p.add_argument("--n-centroids", type=int, default=cfg["n_centroids"], help="IVF cells")
    p.add_argument("--seed", type=int, default=cfg["seed"], help="k-means seed")
    p.add_argument("--normalize", action="store_true", help="L2-normalise vectors (cosine similarity)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("search", help="retrieve a run for a queries file")
    p.add_argument("--index", required=True, help="index directory")
    p.add_argument("--vectors", help="vector file (semantic and hybrid modes)")
    p.add_argument("--provider", help="query embedding provider (default: the vector file's sidecar)")
    p.add_argument("--queries", required=True, help="TSV qid<TAB>text")
    p.add_argument("--mode", choices=["lexical", "semantic", "hybrid"], default="hybrid", help="retrieval mode")
    p.add_argument("--c", type=int, default=cfg["c"], help="result list size")
    p.add_argument("--lexical-c", type=int, help="lexical arm list size (default c)")
    p.add_argument("--semantic-c", type=int, help="semantic arm list size (default c)")
    p.add_argument("--passage-k", type=int, default=cfg["passage_k"], help="passages retrieved by the semantic arm")
    p.add_argument("--n-probe", type=int, help=f"IVF cells probed; 0 = exhaustive (default {cfg['n_probe']})")
    p.add_argument("--induce-from", choices=["lexical", "pool"], default="lexical",
                   help="feedback documents for the relevance model")
    p.add_argument("--sequential", action="store_true", help="run the two arms one after the other")
    p.add_argument("--tag", help="run tag (default: the mode)")
    p.add_argument("--out", required=True, help="output run file")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("evaluate", help="recall / MAP / #rel / RI report")
    p.add_argument("runs", nargs="+", help="TREC run files; names are file stems")
    p.add_argument("--qrels", required=True, help="TREC qrels")
    p.add_argument("--c", type=int, nargs="+", help=f"cutoffs (default {cfg['c_values']})")
    p.add_argument("--baseline", help="run name RI is measured against (default: the first run)")
    p.add_argument("--oracle", nargs=2, metavar=("LEXICAL_RUN", "SEMANTIC_RUN"),
                   help="also evaluate the ground-truth merge of two runs")
    p.add_argument("--out", help="JSON report path; a text table is written next to it")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="per-query analyses")
    p.add_argument("kind", choices=["quartiles", "histogram", "properties", "terms", "lengths"])
    p.add_argument("--baseline", help="baseline run file")
    p.add_argument("--test", help="test run file")
    p.add_argument("--qrels", help="TREC qrels")
    p.add_argument("--index", help="index directory (properties, terms, lengths)")
    p.add_argument("--queries", help="queries file (properties)")
    p.add_argument("--c", type=int, help=f"cutoff (default {cfg['c']})")
    p.add_argument("--edges", type=float, nargs="+", help="histogram bucket edges in percent")
    p.add_argument("--n-terms", type=int, default=50, help="representative terms per document set")
    p.add_argument("--per-query", type=int, default=5, help="relevant documents per query (lengths)")
    p.add_argument("--out", required=True, help="output JSON/CSV path")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = load_defaults()
    except (OSError, ValueError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    parser = build_parser(cfg)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.show_config:
        print(json.dumps({"version": DEFAULTS_VERSION, "defaults": cfg}, indent=2))
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, cfg)
    except (UsageError, FileNotFoundError, IngestError, RunFormatError, VectorIndexError, EmbedError,
            FeedbackError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
