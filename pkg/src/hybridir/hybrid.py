"""Parallel lexical + semantic retrieval merged by a relevance model."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Collection, Sequence

import numpy as np

from .corpus import Query
from .dense import PASSAGE_K, VectorIndex
from .embedder import EmbeddingLookupError, EmbeddingProvider
from .feedback import ALPHA, FB_DOCS, FB_TERMS, MU, induce_rm1, interpolate_rm3, rerank
from .lexical import B, K1, LexicalIndex
from .ranking import ScoredList

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HybridConfig:
    c: int = 1000
    passage_k: int = PASSAGE_K
    fb_docs: int = FB_DOCS
    fb_terms: int = FB_TERMS
    alpha: float = ALPHA
    mu: float = MU
    k1: float = K1
    b: float = B
    # per-arm list sizes; None means c
    lexical_c: int | None = None
    semantic_c: int | None = None
    # None searches the vector index exhaustively
    n_probe: int | None = None
    induce_from: str = "lexical"  # or "pool"
    parallel: bool = True

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.passage_k < self.c:
            raise ValueError("passage_k must be at least c")
        if self.induce_from not in ("lexical", "pool"):
            raise ValueError(f"unknown induction source {self.induce_from!r}")

    @property
    def lexical_size(self) -> int:
        return self.lexical_c or self.c

    @property
    def semantic_size(self) -> int:
        return self.semantic_c or self.c


@dataclass
class HybridRun:
    ranking: ScoredList
    lexical: ScoredList
    semantic: ScoredList
    flags: frozenset[str] = frozenset()
    timings: dict[str, float] = field(default_factory=dict)


class HybridRetriever:
    """Runs both arms concurrently against read-only indexes.

    The lexical arm is submitted to a worker thread while the semantic arm
    runs on the calling thread; the merge waits for both.
    """

    def __init__(self, lexical_index: LexicalIndex, vector_index: VectorIndex | None,
                 provider: EmbeddingProvider | None, config: HybridConfig | None = None):
        self.lexical_index = lexical_index
        self.vector_index = vector_index
        self.provider = provider
        self.config = config or HybridConfig()
        self._pool = ThreadPoolExecutor(max_workers=1, thread_name_prefix="lexical-arm") if self.config.parallel else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- arms -------------------------------------------------------------

    def lexical_arm(self, query: Query | Sequence[str]) -> tuple[ScoredList, float]:
        t0 = time.perf_counter()
        cfg = self.config
        ranking = self.lexical_index.search(query, cfg.lexical_size, cfg.k1, cfg.b)
        return ranking, time.perf_counter() - t0

    def semantic_arm(self, query: Query | Sequence[str]) -> tuple[ScoredList, float]:
        t0 = time.perf_counter()
        cfg = self.config
        if self.vector_index is None or not len(self.vector_index) or self.provider is None:
            return ScoredList(flags=frozenset({"semantic-unavailable"})), time.perf_counter() - t0
        try:
            vec = self.provider.embed_query(query)
        except EmbeddingLookupError as exc:
            logger.warning("semantic arm skipped: %s", exc)
            return ScoredList(flags=frozenset({"semantic-unavailable"})), time.perf_counter() - t0
        if not np.any(vec):
            return ScoredList(flags=frozenset({"semantic-oov"})), time.perf_counter() - t0
        ranking = self.vector_index.search_docs(vec, cfg.passage_k, cfg.semantic_size, cfg.n_probe)
        return ranking, time.perf_counter() - t0

    # -- merge ------------------------------------------------------------

    def merge(self, query: Query | Sequence[str], lexical: ScoredList, semantic: ScoredList) -> ScoredList:
        cfg = self.config
        index = self.lexical_index
        if not len(lexical):
            return semantic.truncate(cfg.c).with_flags("lexical-empty")
        pool = list(dict.fromkeys(lexical.doc_ids + semantic.doc_ids))
        unknown = [d for d in pool if d not in index.doc_index]
        if unknown:
            logger.warning("%d pooled documents missing from the lexical index; dropped", len(unknown))
            pool = [d for d in pool if d in index.doc_index]
        if cfg.induce_from == "lexical":
            feedback, fb_docs = lexical, cfg.fb_docs
        else:
            # top fb_docs of each arm
            fb = dict.fromkeys(lexical.doc_ids[: cfg.fb_docs] + semantic.doc_ids[: cfg.fb_docs])
            feedback = ScoredList(tuple((d, 0.0) for d in fb if d in index.doc_index))
            fb_docs = len(feedback)
        rm1 = induce_rm1(index, query, feedback, fb_docs, cfg.fb_terms, cfg.mu)
        rm3 = interpolate_rm3(rm1, query, cfg.alpha)
        return rerank(index, rm3, pool, cfg.c, cfg.mu)

    def retrieve(self, query: Query | Sequence[str]) -> HybridRun:
        t0 = time.perf_counter()
        if self._pool is not None:
            fut = self._pool.submit(self.lexical_arm, query)
            semantic, t_sem = self.semantic_arm(query)
            lexical, t_lex = fut.result()
        else:
            lexical, t_lex = self.lexical_arm(query)
            semantic, t_sem = self.semantic_arm(query)
        t1 = time.perf_counter()
        ranking = self.merge(query, lexical, semantic)
        t2 = time.perf_counter()
        flags = lexical.flags | semantic.flags | ranking.flags
        timings = {"lexical": t_lex, "semantic": t_sem, "arms": t1 - t0, "merge": t2 - t1, "total": t2 - t0}
        return HybridRun(ranking, lexical, semantic, flags, timings)

    def run_arms(self, queries: Sequence[Query | Sequence[str]]) -> list[tuple[tuple[ScoredList, float], tuple[ScoredList, float]]]:
        """Both arms for a batch: lexical on the worker thread, semantic on the caller.

        One hand-off per batch instead of per query keeps thread overhead out
        of the per-query latency.
        """
        if self._pool is not None:
            fut = self._pool.submit(lambda: [self.lexical_arm(q) for q in queries])
            semantic = [self.semantic_arm(q) for q in queries]
            lexical = fut.result()
        else:
            lexical = [self.lexical_arm(q) for q in queries]
            semantic = [self.semantic_arm(q) for q in queries]
        return list(zip(lexical, semantic))

    def retrieve_many(self, queries: Sequence[Query | Sequence[str]]) -> tuple[list[HybridRun], dict[str, float]]:
        """Hybrid runs in input order plus batch wall-clock timings."""
        t0 = time.perf_counter()
        arms = self.run_arms(queries)
        t1 = time.perf_counter()
        runs = []
        for q, ((lexical, t_lex), (semantic, t_sem)) in zip(queries, arms):
            m0 = time.perf_counter()
            ranking = self.merge(q, lexical, semantic)
            t_merge = time.perf_counter() - m0
            runs.append(HybridRun(ranking, lexical, semantic, lexical.flags | semantic.flags | ranking.flags,
                                  {"lexical": t_lex, "semantic": t_sem, "merge": t_merge}))
        t2 = time.perf_counter()
        return runs, {"lexical": sum(r.timings["lexical"] for r in runs),
                      "semantic": sum(r.timings["semantic"] for r in runs),
                      "arms": t1 - t0, "merge": t2 - t1, "total": t2 - t0}


def retrieve_hybrid(query: Query | Sequence[str], lexical_index: LexicalIndex, vector_index: VectorIndex | None,
                    provider: EmbeddingProvider | None, config: HybridConfig | None = None) -> HybridRun:
    with HybridRetriever(lexical_index, vector_index, provider, config) as retriever:
        return retriever.retrieve(query)


def oracle_merge(lexical: ScoredList, semantic: ScoredList, relevant: Collection[str], c: int) -> ScoredList:
    """Upper-bound merge using ground truth.

    Relevant semantic documents missing from the lexical list first fill
    free slots, then replace non-relevant lexical documents from the bottom
    up. Scores in the output encode rank only.
    """
    relevant = set(relevant)
    lex = lexical.doc_ids[:c]
    present = set(lex)
    incoming = [d for d in semantic.doc_ids if d in relevant and d not in present]
    out = list(lex)
    while len(out) < c and incoming:
        out.append(incoming.pop(0))
    for pos in range(len(lex) - 1, -1, -1):
        if not incoming:
            break
        if out[pos] not in relevant:
            out[pos] = incoming.pop(0)
    return ScoredList(tuple((d, float(len(out) - r)) for r, d in enumerate(out)))
