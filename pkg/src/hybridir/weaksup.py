"""Weakly supervised training pairs mined from the collection itself.

Queries are frequent bi-/tri-grams; BM25 pairs them with passages that
contain every query term, and each positive is expanded into partial-match
variants by replacing query terms in the passage with random vocabulary.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .corpus import Document, Passage, split_passages
from .defaults import config_hash
from .embedder import TrainingPair
from .lexical import B, K1, LexicalIndex, idf_value

logger = logging.getLogger(__name__)

FULL_MATCH = 1.0
# score for a passage matching m of n query terms, keyed by (n, m)
PARTIAL_MATCH = {(2, 1): 0.6, (3, 2): 0.65, (3, 1): 0.55}


@dataclass(frozen=True)
class MinedQuery:
    terms: tuple[str, ...]
    df: int
    bm25_result_count: int

    @property
    def key(self) -> str:
        return " ".join(self.terms)


@dataclass
class WeakSupConfig:
    min_df: int = 5
    min_results: int = 10
    top_docs: int = 10
    max_passages: int = 5
    passage_order: str = "document"  # or "bm25-passage-score"
    window: int = 20
    stride: int = 10
    vocab_min_count: int = 300
    neg_ratio: float = 1.0
    seed: int = 13
    shard_size: int = 100_000
    k1: float = K1
    b: float = B

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def derive_rng(seed: int, *parts: object) -> np.random.Generator:
    """Generator keyed by ``(seed, parts)``, independent of processing order."""
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(np.random.SeedSequence([seed, int.from_bytes(digest, "little")]))


def ngram_doc_freq(docs: Iterable[Document], orders: Sequence[int] = (2, 3)) -> Counter:
    """Number of documents containing each contiguous n-gram with distinct terms."""
    df: Counter = Counter()
    for doc in docs:
        toks = doc.tokens
        seen = set()
        for n in orders:
            for i in range(len(toks) - n + 1):
                gram = toks[i : i + n]
                if len(set(gram)) == n:
                    seen.add(gram)
        df.update(seen)
    return df


def mine_queries(docs: Iterable[Document], index: LexicalIndex, min_df: int = 5,
                 min_results: int = 10) -> Iterator[MinedQuery]:
    """Frequent bi-/tri-grams with enough BM25 matches, in lexicographic order.

    n-grams repeating a term are skipped: their partial-match variants
    would not be well defined.
    """
    df = ngram_doc_freq(docs)
    for gram in sorted(g for g, n in df.items() if n >= min_df):
        count = index.match_count(gram)
        if count >= min_results:
            yield MinedQuery(gram, df[gram], count)


def _contains_all(tokens: Sequence[str], terms: Iterable[str]) -> bool:
    present = set(tokens)
    return all(t in present for t in terms)


def _passage_bm25(index: LexicalIndex, terms: Sequence[str], tokens: Sequence[str], window: int,
                  k1: float, b: float) -> float:
    counts = Counter(tokens)
    norm = k1 * (1.0 - b + b * len(tokens) / window)
    return sum(idf_value(index.N, index.df(t)) * counts[t] * (k1 + 1.0) / (counts[t] + norm)
               for t in terms if counts[t])


def positive_pairs(query: MinedQuery, index: LexicalIndex, passages: Mapping[str, Sequence[Passage]],
                   config: WeakSupConfig | None = None) -> list[tuple[MinedQuery, Passage]]:
    """Pair the query with up to ``max_passages`` full-match passages of each top BM25 document."""
    cfg = config or WeakSupConfig()
    pairs = []
    for doc_id, _ in index.search(query.terms, cfg.top_docs, cfg.k1, cfg.b):
        matching = [p for p in passages.get(doc_id, ()) if _contains_all(p.tokens, query.terms)]
        if cfg.passage_order == "bm25-passage-score":
            matching.sort(key=lambda p: (-_passage_bm25(index, query.terms, p.tokens, cfg.window, cfg.k1, cfg.b),
                                         p.ordinal))
        elif cfg.passage_order != "document":
            raise ValueError(f"unknown passage order {cfg.passage_order!r}")
        pairs.extend((query, p) for p in matching[: cfg.max_passages])
    return pairs


def perturb(pair: tuple[MinedQuery | Sequence[str], Passage | Sequence[str]], vocab: Sequence[str],
            seed: int | np.random.Generator) -> list[TrainingPair]:
    """Expand a full-match pair into graded partial-match pairs.

    For every non-empty proper subset of query terms, all occurrences of
    those terms in the passage are replaced by random vocabulary terms that
    are not query terms. Bi-grams yield 3 pairs, tri-grams 7.
    """
    query, passage = pair
    terms = tuple(query.terms if isinstance(query, MinedQuery) else query)
    tokens = tuple(passage.tokens if isinstance(passage, Passage) else passage)
    n = len(terms)
    if n not in (2, 3) or len(set(terms)) != n:
        raise ValueError(f"perturbation needs 2 or 3 distinct terms, got {terms}")
    if not _contains_all(tokens, terms):
        raise ValueError("passage does not contain every query term")
    qset = set(terms)
    if not any(v not in qset for v in vocab):
        raise ValueError("replacement vocabulary has no non-query terms")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def draw() -> str:
        while True:
            term = vocab[int(rng.integers(len(vocab)))]
            if term not in qset:
                return term

    out = [TrainingPair(terms, tokens, 1, FULL_MATCH)]
    for n_removed in range(1, n):
        for removed in itertools.combinations(range(n), n_removed):
            mapping = {terms[i]: draw() for i in removed}
            new_tokens = tuple(mapping.get(t, t) for t in tokens)
            out.append(TrainingPair(terms, new_tokens, 1, PARTIAL_MATCH[(n, n - n_removed)]))
    return out


def negative_pairs(queries: Mapping[tuple[str, ...], int], passages: Sequence[Passage], ratio: float,
                   seed: int, max_attempts: int = 100) -> Iterator[TrainingPair]:
    """Random non-relevant pairs: ``round(ratio * n)`` per query with ``n`` positives.

    A sampled passage containing every query term is rejected and redrawn.
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    if not passages:
        return
    for terms, n_pos in queries.items():
        rng = derive_rng(seed, "neg", *terms)
        wanted = int(round(ratio * n_pos))
        emitted = attempts = 0
        while emitted < wanted:
            if attempts >= max_attempts * max(wanted, 1):
                logger.warning("query %r: only %d of %d negatives found", " ".join(terms), emitted, wanted)
                break
            attempts += 1
            p = passages[int(rng.integers(len(passages)))]
            if _contains_all(p.tokens, terms):
                continue
            emitted += 1
            yield TrainingPair(tuple(terms), p.tokens, 0, 0.0)


def replacement_vocab(index: LexicalIndex, min_count: int, stopwords: Iterable[str] = ()) -> list[str]:
    stop = set(stopwords)
    return [t for t in index.terms if index.collection_tf(t) >= min_count and t not in stop]


@dataclass
class GenerationResult:
    counts: dict[str, int]
    shards: list[dict] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)


def generate_pairs(docs: Sequence[Document], index: LexicalIndex, config: WeakSupConfig | None = None,
                   stopwords: Iterable[str] = ()) -> Iterator[tuple[MinedQuery, list[TrainingPair], list[TrainingPair]]]:
    """Run the pipeline, yielding ``(query, positives, negatives)`` per mined query."""
    cfg = config or WeakSupConfig()
    by_doc = {d.doc_id: split_passages(d, cfg.window, cfg.stride) for d in docs}
    all_passages = [p for d in docs for p in by_doc[d.doc_id]]
    vocab = replacement_vocab(index, cfg.vocab_min_count, stopwords)
    for query in mine_queries(docs, index, cfg.min_df, cfg.min_results):
        positives: list[TrainingPair] = []
        for q, passage in positive_pairs(query, index, by_doc, cfg):
            rng = derive_rng(cfg.seed, "perturb", query.key, passage.passage_id)
            positives.extend(perturb((q, passage), vocab, rng))
        negatives = []
        if positives:
            negatives = list(negative_pairs({query.terms: len(positives)}, all_passages, cfg.neg_ratio, cfg.seed))
        yield query, positives, negatives


def write_training_data(docs: Sequence[Document], index: LexicalIndex, out_dir: str | Path,
                        config: WeakSupConfig | None = None, stopwords: Iterable[str] = ()) -> GenerationResult:
    """Write JSONL shards plus ``manifest.json`` with counts and a config hash."""
    cfg = config or WeakSupConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = Counter({"bigram_queries": 0, "trigram_queries": 0, "positives": 0, "negatives": 0})
    shards: list[dict] = []
    fh = None
    digest = None
    in_shard = 0

    def close_shard():
        nonlocal fh
        if fh is not None:
            fh.close()
            shards[-1].update(count=in_shard, sha256=digest.hexdigest())
            fh = None

    for query, positives, negatives in generate_pairs(docs, index, cfg, stopwords):
        counts["bigram_queries" if len(query.terms) == 2 else "trigram_queries"] += 1
        counts["positives"] += len(positives)
        counts["negatives"] += len(negatives)
        for pair in itertools.chain(positives, negatives):
            if fh is None or in_shard >= cfg.shard_size:
                close_shard()
                name = f"train-{len(shards):05d}.jsonl"
                shards.append({"path": name})
                fh = (out_dir / name).open("w", encoding="utf-8", newline="\n")
                digest = hashlib.sha256()
                in_shard = 0
            line = json.dumps(pair.to_json(), ensure_ascii=False, separators=(",", ":")) + "\n"
            fh.write(line)
            digest.update(line.encode("utf-8"))
            in_shard += 1
    close_shard()
    output_hash = hashlib.sha256("".join(s["sha256"] for s in shards).encode()).hexdigest()
    manifest = {
        "shards": shards,
        "counts": dict(counts),
        "config": cfg.as_dict(),
        "config_hash": config_hash(cfg.as_dict()),
        "output_hash": output_hash,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return GenerationResult(dict(counts), shards, manifest)
