"""Relevance models (RM1/RM3) and relevance-model document scoring."""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import Query
from .lexical import IndexLookupError, LexicalIndex, query_terms
from .ranking import ScoredList, top_k_indices

logger = logging.getLogger(__name__)

FB_DOCS = 10
FB_TERMS = 10
ALPHA = 0.5
MU = 1000.0


class FeedbackError(ValueError):
    pass


@dataclass(frozen=True)
class RelevanceModel:
    """Truncated term distribution; ``weights`` sums to one."""

    weights: dict[str, float]
    fb_terms: int
    origin: str  # "rm1" or "rm3"

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.weights.items(), key=lambda x: (-x[1], x[0]))

    def to_json(self) -> str:
        return json.dumps(
            {"origin": self.origin, "fb_terms": self.fb_terms, "terms": self.ranked()},
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "RelevanceModel":
        obj = json.loads(text)
        return cls({t: float(p) for t, p in obj["terms"]}, int(obj["fb_terms"]), obj["origin"])


def _normalize(weights: dict[str, float]) -> dict[str, float]:
    total = math.fsum(weights.values())
    return {t: w / total for t, w in weights.items()}


def query_log_likelihood(index: LexicalIndex, terms: Sequence[str], doc_idx: np.ndarray, mu: float = MU) -> np.ndarray:
    """``ln P(q|d)`` under Dirichlet-smoothed document models, per document.

    Query terms absent from the collection cannot be smoothed and are skipped.
    """
    lengths = index._doc_len[doc_idx].astype(float)
    out = np.zeros(len(doc_idx))
    for term in terms:
        pc = index.collection_prob(term)
        if pc == 0.0:
            continue
        tf = index.tf_many(term, doc_idx)
        out += np.log((tf + mu * pc) / (lengths + mu))
    return out


def induce_rm1(
    index: LexicalIndex,
    query: Query | Sequence[str],
    ranking: ScoredList,
    fb_docs: int = FB_DOCS,
    fb_terms: int = FB_TERMS,
    mu: float = MU,
) -> RelevanceModel:
    """Relevance model from the top ``fb_docs`` documents of ``ranking``.

    ``P(w|R) ∝ Σ_d P_mle(w|d) · P(q|d)``, truncated to the ``fb_terms`` most
    probable terms (ties by term) and renormalised.
    """
    if fb_docs <= 0 or fb_terms <= 0:
        raise FeedbackError("fb_docs and fb_terms must be positive")
    if not len(ranking):
        raise FeedbackError("cannot induce a relevance model from an empty list")
    terms = query_terms(query)
    doc_idx = np.array([index.doc_index[d] for d in ranking.doc_ids[:fb_docs]], dtype=np.int64)
    doc_idx = doc_idx[index._doc_len[doc_idx] > 0]
    if not len(doc_idx):
        raise FeedbackError("feedback documents are all empty")
    loglik = query_log_likelihood(index, terms, doc_idx, mu)
    # a common factor cancels in the final normalisation
    doc_weight = np.exp(loglik - loglik.max())
    rows, pos = index.forward_gather(doc_idx)
    share = (doc_weight / index._doc_len[doc_idx])[rows] * index._fwd_tf[pos]
    acc = np.bincount(index._fwd_term[pos], weights=share, minlength=len(index.terms))
    nz = np.flatnonzero(acc)
    top = nz[top_k_indices(acc[nz], index.term_rank[nz], fb_terms)]
    weights = {index.terms[t]: float(acc[t]) for t in top.tolist()}
    return RelevanceModel(_normalize(weights), fb_terms, "rm1")


def query_mle(query: Query | Sequence[str]) -> dict[str, float]:
    counts = Counter(query_terms(query))
    n = sum(counts.values())
    return {t: c / n for t, c in counts.items()}


def interpolate_rm3(rm1: RelevanceModel, query: Query | Sequence[str], alpha: float = ALPHA) -> RelevanceModel:
    """``(1 - alpha) · P_mle(w|q) + alpha · P_rm1(w)``; zero-weight terms dropped."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    qmle = query_mle(query)
    if alpha == 1.0 or not qmle:
        weights = dict(rm1.weights)
    elif alpha == 0.0:
        weights = qmle
    else:
        weights = {}
        for t in set(qmle) | set(rm1.weights):
            weights[t] = (1.0 - alpha) * qmle.get(t, 0.0) + alpha * rm1.weights.get(t, 0.0)
        weights = _normalize(weights)
    return RelevanceModel(weights, len(weights), "rm3")


def rm_scores(index: LexicalIndex, rm: RelevanceModel, doc_idx: np.ndarray, mu: float = MU) -> np.ndarray:
    """Negative cross-entropy ``Σ_w P(w|R) ln P_dir(w|d)`` for many documents."""
    terms, weights, priors = [], [], []
    for term, weight in rm.ranked():
        pc = index.collection_prob(term)
        if pc == 0.0:
            logger.warning("relevance-model term %r unseen in collection; skipped", term)
            continue
        terms.append(term)
        weights.append(weight)
        priors.append(mu * pc)
    lengths = index._doc_len[doc_idx].astype(float)
    if not terms:
        return np.zeros(len(doc_idx))
    tf = index.tf_matrix(terms, doc_idx)
    priors = np.array(priors)
    logp = np.log((tf + priors) / (lengths[:, None] + mu))
    return logp @ np.array(weights)


def rm_score(index: LexicalIndex, rm: RelevanceModel, doc_id: str, mu: float = MU) -> float:
    idx = np.array([index._didx(doc_id)], dtype=np.int64)
    return float(rm_scores(index, rm, idx, mu)[0])


def rerank(index: LexicalIndex, rm: RelevanceModel, doc_ids: Iterable[str], c: int, mu: float = MU) -> ScoredList:
    """Score ``doc_ids`` with ``rm`` and keep the best ``c`` (ties by doc_id)."""
    ids = list(dict.fromkeys(doc_ids))
    if not ids:
        return ScoredList()
    try:
        idx = np.fromiter(map(index.doc_index.__getitem__, ids), dtype=np.int64, count=len(ids))
    except KeyError as exc:
        raise IndexLookupError(f"unknown doc_id {exc.args[0]!r}") from None
    scores = rm_scores(index, rm, idx, mu)
    top = top_k_indices(scores, index.doc_rank[idx], c)
    return ScoredList(tuple((ids[i], float(scores[i])) for i in top.tolist()))
