"""Inverted index and BM25 retrieval."""
from __future__ import annotations

import json
import logging
import math
import struct
from collections import Counter
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Document, Query
from .ranking import ScoredList, top_k_indices

logger = logging.getLogger(__name__)

K1 = 0.9
B = 0.4

INDEX_MAGIC = b"HLXI"
INDEX_VERSION = 1
INDEX_FILE = "lexical.idx"
STATS_FILE = "lexical.json"
_HEADER = struct.Struct("<4sHHIIQ")


class IndexLookupError(LookupError):
    """Unknown document id or unreadable index file."""


def query_terms(query: Query | Sequence[str]) -> tuple[str, ...]:
    if isinstance(query, Query):
        return query.tokens
    return tuple(query)


def idf_value(n_docs: int, df: int) -> float:
    """``ln(1 + (N - df + 0.5) / (df + 0.5))``; finite for ``df == 0``."""
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


class LexicalIndex:
    """Immutable inverted index with per-document forward vectors.

    Postings are stored CSR-style: the postings of term ``t`` occupy
    ``post_doc[term_ptr[t]:term_ptr[t+1]]`` (ascending document index) with
    matching frequencies in ``post_tf``.
    """

    def __init__(self, doc_ids: list[str], doc_len: np.ndarray, terms: list[str],
                 term_ptr: np.ndarray, post_doc: np.ndarray, post_tf: np.ndarray):
        self.doc_ids = doc_ids
        self.terms = terms
        self._doc_len = np.asarray(doc_len, dtype=np.int64)
        self._term_ptr = np.asarray(term_ptr, dtype=np.int64)
        self._post_doc = np.asarray(post_doc, dtype=np.int64)
        self._post_tf = np.asarray(post_tf, dtype=np.int64)
        self.doc_index = {d: i for i, d in enumerate(doc_ids)}
        self.term_index = {t: i for i, t in enumerate(terms)}
        self.N = len(doc_ids)
        self.total_tokens = int(self._doc_len.sum())
        self.avg_len = self.total_tokens / self.N if self.N else 0.0
        df = np.diff(self._term_ptr)
        self._df = df
        post_term = np.repeat(np.arange(len(terms)), df)
        self._ctf = np.bincount(post_term, weights=self._post_tf, minlength=len(terms)).astype(np.int64)
        # rank of each doc_id in lexicographic order; used for tie-breaking
        self.doc_rank = np.empty(self.N, dtype=np.int64)
        self.doc_rank[np.argsort(np.array(doc_ids, dtype=object), kind="stable")] = np.arange(self.N)
        self.term_rank = np.empty(len(terms), dtype=np.int64)
        self.term_rank[np.argsort(np.array(terms, dtype=object), kind="stable")] = np.arange(len(terms))
        # forward index, same CSR layout keyed by document
        order = np.argsort(self._post_doc, kind="stable")
        self._fwd_term = post_term[order]
        self._fwd_tf = self._post_tf[order]
        self._doc_ptr = np.zeros(self.N + 1, dtype=np.int64)
        np.cumsum(np.bincount(self._post_doc, minlength=self.N), out=self._doc_ptr[1:])

    # -- construction -----------------------------------------------------

    @classmethod
    def build(cls, docs: Iterable[Document]) -> "LexicalIndex":
        doc_ids: list[str] = []
        lengths: list[int] = []
        per_term: dict[str, list[tuple[int, int]]] = {}
        for doc in docs:
            i = len(doc_ids)
            doc_ids.append(doc.doc_id)
            lengths.append(len(doc.tokens))
            for term, tf in Counter(doc.tokens).items():
                per_term.setdefault(term, []).append((i, tf))
        if not doc_ids:
            raise ValueError("cannot build an index from an empty corpus")
        if len(set(doc_ids)) != len(doc_ids):
            raise ValueError("duplicate doc_id in corpus")
        terms = sorted(per_term)
        ptr = np.zeros(len(terms) + 1, dtype=np.int64)
        post_doc, post_tf = [], []
        for t, term in enumerate(terms):
            plist = per_term[term]
            ptr[t + 1] = ptr[t] + len(plist)
            post_doc.extend(p[0] for p in plist)
            post_tf.extend(p[1] for p in plist)
        return cls(doc_ids, np.array(lengths), terms, ptr,
                   np.array(post_doc, dtype=np.int64), np.array(post_tf, dtype=np.int64))

    # -- statistics -------------------------------------------------------

    def _tid(self, term: str) -> int | None:
        return self.term_index.get(term)

    def _didx(self, doc_id: str) -> int:
        try:
            return self.doc_index[doc_id]
        except KeyError:
            raise IndexLookupError(f"unknown doc_id {doc_id!r}") from None

    def df(self, term: str) -> int:
        t = self._tid(term)
        return 0 if t is None else int(self._df[t])

    def idf(self, term: str) -> float:
        return idf_value(self.N, self.df(term))

    def collection_tf(self, term: str) -> int:
        t = self._tid(term)
        return 0 if t is None else int(self._ctf[t])

    def collection_prob(self, term: str) -> float:
        return self.collection_tf(term) / self.total_tokens if self.total_tokens else 0.0

    def doc_length(self, doc_id: str) -> int:
        return int(self._doc_len[self._didx(doc_id)])

    @cached_property
    def doc_len(self) -> dict[str, int]:
        return {d: int(n) for d, n in zip(self.doc_ids, self._doc_len)}

    def postings(self, term: str) -> list[tuple[str, int]]:
        t = self._tid(term)
        if t is None:
            return []
        lo, hi = self._term_ptr[t], self._term_ptr[t + 1]
        return [(self.doc_ids[d], int(f)) for d, f in zip(self._post_doc[lo:hi], self._post_tf[lo:hi])]

    def posting_arrays(self, term: str) -> tuple[np.ndarray, np.ndarray]:
        """Document indices and term frequencies for ``term`` (empty if unseen)."""
        t = self._tid(term)
        if t is None:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        lo, hi = self._term_ptr[t], self._term_ptr[t + 1]
        return self._post_doc[lo:hi], self._post_tf[lo:hi]

    def tf(self, term: str, doc_id: str) -> int:
        i = self._didx(doc_id)
        docs, tfs = self.posting_arrays(term)
        j = np.searchsorted(docs, i)
        return int(tfs[j]) if j < len(docs) and docs[j] == i else 0

    def tf_many(self, term: str, doc_idx: np.ndarray) -> np.ndarray:
        """Term frequencies of ``term`` for an array of document indices."""
        docs, tfs = self.posting_arrays(term)
        out = np.zeros(len(doc_idx), dtype=np.int64)
        if len(docs) == 0:
            return out
        j = np.searchsorted(docs, doc_idx)
        j_clip = np.minimum(j, len(docs) - 1)
        hit = docs[j_clip] == doc_idx
        out[hit] = tfs[j_clip[hit]]
        return out

    def forward_gather(self, doc_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Row number and forward-index position of every posting of ``doc_idx``."""
        starts = self._doc_ptr[doc_idx]
        lens = self._doc_ptr[doc_idx + 1] - starts
        rows = np.repeat(np.arange(len(doc_idx)), lens)
        pos = np.arange(int(lens.sum())) + np.repeat(starts - (np.cumsum(lens) - lens), lens)
        return rows, pos

    def tf_matrix(self, terms: Sequence[str], doc_idx: np.ndarray) -> np.ndarray:
        """``(len(doc_idx), len(terms))`` frequencies gathered from the forward index."""
        tids = np.array([-1 if (t := self._tid(term)) is None else t for term in terms], dtype=np.int64)
        out = np.zeros((len(doc_idx), len(terms)), dtype=np.int64)
        known = np.flatnonzero(tids >= 0)
        if not len(known):
            return out
        rows, pos = self.forward_gather(doc_idx)
        fwd = self._fwd_term[pos]
        # match postings against the (few) requested terms by sorted lookup
        order = known[np.argsort(tids[known])]
        sorted_tids = tids[order]
        j = np.minimum(np.searchsorted(sorted_tids, fwd), len(sorted_tids) - 1)
        keep = sorted_tids[j] == fwd
        out[rows[keep], order[j[keep]]] = self._fwd_tf[pos[keep]]
        return out

    def doc_arrays(self, doc_idx: int) -> tuple[np.ndarray, np.ndarray]:
        """Term ids and frequencies of one document (forward index)."""
        lo, hi = self._doc_ptr[doc_idx], self._doc_ptr[doc_idx + 1]
        return self._fwd_term[lo:hi], self._fwd_tf[lo:hi]

    def doc_vector(self, doc_id: str) -> dict[str, int]:
        tids, tfs = self.doc_arrays(self._didx(doc_id))
        return {self.terms[t]: int(f) for t, f in zip(tids, tfs)}

    def match_count(self, terms: Iterable[str]) -> int:
        """Number of documents containing at least one of ``terms``."""
        arrays = [self.posting_arrays(t)[0] for t in set(terms)]
        arrays = [a for a in arrays if len(a)]
        if not arrays:
            return 0
        return int(len(np.unique(np.concatenate(arrays))))

    # -- scoring ----------------------------------------------------------

    def bm25_score(self, query: Query | Sequence[str], doc_id: str, k1: float = K1, b: float = B) -> float:
        i = self._didx(doc_id)
        norm = k1 * (1.0 - b + b * self._doc_len[i] / self.avg_len) if self.avg_len else k1
        score = 0.0
        for term in query_terms(query):
            tf = self.tf(term, doc_id)
            if tf:
                score += self.idf(term) * tf * (k1 + 1.0) / (tf + norm)
        return score

    def bm25_scores(self, query: Query | Sequence[str], k1: float = K1, b: float = B) -> tuple[np.ndarray, np.ndarray]:
        """Dense score accumulator over all documents plus a matched-doc mask."""
        scores = np.zeros(self.N)
        matched = np.zeros(self.N, dtype=bool)
        norm = k1 * (1.0 - b + b * self._doc_len / self.avg_len) if self.avg_len else np.full(self.N, k1)
        for term in query_terms(query):
            docs, tfs = self.posting_arrays(term)
            if not len(docs):
                continue
            idf = idf_value(self.N, len(docs))
            scores[docs] += idf * tfs * (k1 + 1.0) / (tfs + norm[docs])
            matched[docs] = True
        return scores, matched

    def search(self, query: Query | Sequence[str], c: int, k1: float = K1, b: float = B) -> ScoredList:
        """Top-``c`` documents containing at least one query term."""
        if c <= 0:
            raise ValueError("c must be positive")
        terms = query_terms(query)
        if not terms:
            logger.warning("empty query; returning no results")
            return ScoredList(flags=frozenset({"empty-query"}))
        scores, matched = self.bm25_scores(terms, k1, b)
        cand = np.flatnonzero(matched)
        top = cand[top_k_indices(scores[cand], self.doc_rank[cand], c)]
        return ScoredList(tuple((self.doc_ids[i], float(scores[i])) for i in top))

    # -- persistence ------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        """Write ``lexical.idx`` (binary, little-endian) and ``lexical.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with (directory / INDEX_FILE).open("wb") as fh:
            fh.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, 0, self.N, len(self.terms), len(self._post_doc)))
            fh.write(self._doc_len.astype("<u4").tobytes())
            fh.write(self._term_ptr.astype("<u8").tobytes())
            fh.write(self._post_doc.astype("<u4").tobytes())
            fh.write(self._post_tf.astype("<u4").tobytes())
            for strings in (self.doc_ids, self.terms):
                blob = "\0".join(strings).encode("utf-8")
                fh.write(struct.pack("<Q", len(blob)))
                fh.write(blob)
        stats = {
            "format": "hybridir-lexical",
            "version": INDEX_VERSION,
            "N": self.N,
            "n_terms": len(self.terms),
            "total_tokens": self.total_tokens,
            "avg_len": self.avg_len,
        }
        (directory / STATS_FILE).write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "LexicalIndex":
        path = Path(directory) / INDEX_FILE
        data = path.read_bytes()
        if len(data) < _HEADER.size:
            raise IndexLookupError(f"{path}: truncated header")
        magic, version, _, n_docs, n_terms, n_post = _HEADER.unpack_from(data, 0)
        if magic != INDEX_MAGIC:
            raise IndexLookupError(f"{path}: bad magic {magic!r}")
        if version != INDEX_VERSION:
            raise IndexLookupError(f"{path}: unsupported version {version}")
        off = _HEADER.size

        def take(dtype: str, count: int) -> np.ndarray:
            nonlocal off
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
            off += arr.nbytes
            return arr.astype(np.int64)

        doc_len = take("<u4", n_docs)
        term_ptr = take("<u8", n_terms + 1)
        post_doc = take("<u4", n_post)
        post_tf = take("<u4", n_post)
        strings = []
        for count in (n_docs, n_terms):
            (size,) = struct.unpack_from("<Q", data, off)
            off += 8
            blob = data[off : off + size].decode("utf-8")
            off += size
            strings.append(blob.split("\0") if count else [])
        return cls(strings[0], doc_len, strings[1], term_ptr, post_doc, post_tf)


def build_index(docs: Iterable[Document]) -> LexicalIndex:
    return LexicalIndex.build(docs)


def bm25_score(index: LexicalIndex, query: Query | Sequence[str], doc_id: str, k1: float = K1, b: float = B) -> float:
    return index.bm25_score(query, doc_id, k1, b)


def search(index: LexicalIndex, query: Query | Sequence[str], c: int, k1: float = K1, b: float = B) -> ScoredList:
    return index.search(query, c, k1, b)
