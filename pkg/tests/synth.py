"""Seeded synthetic corpora for the pipeline-level tests."""
from dataclasses import dataclass, field

import numpy as np

from hybridir.corpus import Document, Query


def zipf_words(rng, words, n, s=1.0):
    p = 1.0 / np.arange(1, len(words) + 1) ** s
    return list(rng.choice(words, size=n, p=p / p.sum()))


def weaksup_corpus(seed=0, n_docs=400, doc_len=60, vocab=250):
    """Zipf-distributed documents; frequent terms yield many repeated n-grams."""
    rng = np.random.default_rng(seed)
    words = [f"w{i:03d}" for i in range(vocab)]
    return [Document(f"doc{i:04d}", "", tuple(zipf_words(rng, words, doc_len))) for i in range(n_docs)]


@dataclass
class HybridFixture:
    docs: list
    queries: list
    qrels: dict  # qid -> {doc_id: 1}
    aliases: dict  # synonym -> query term
    substituted: dict = field(default_factory=dict)  # qid -> relevant docs without query terms

    @property
    def affected(self):
        return [q for q, docs in self.substituted.items() if docs]


def hybrid_corpus(seed=0, n_docs=2000, n_queries=50, rel_per_query=10, n_affected=30, sub_per_affected=5,
                  topic_terms=5, noise_terms_per_doc=4, doc_len=50, background=2000, bg_skew=0.5):
    """Corpus where some relevant documents use synonyms instead of the query terms.

    Every query has two terms, a private topical vocabulary and one synonym
    per query term. Relevant documents mention topical terms; substituted
    ones swap every query term for its synonym, so they share no term with
    the query. The remaining documents are background text with a few query
    terms sprinkled in as lexical distractors.
    """
    rng = np.random.default_rng(seed)
    bg = [f"bg{i:04d}" for i in range(background)]
    queries, qrels, aliases, substituted = [], {}, {}, {}
    docs = []
    for qi in range(n_queries):
        qid = f"q{qi:02d}"
        terms = (f"qa{qi:02d}", f"qb{qi:02d}")
        syn = (f"sa{qi:02d}", f"sb{qi:02d}")
        aliases.update(zip(syn, terms))
        topic = [f"t{qi:02d}x{j}" for j in range(topic_terms)]
        queries.append(Query(qid, " ".join(terms), terms))
        n_sub = sub_per_affected if qi < n_affected else 0
        qrels[qid] = {}
        substituted[qid] = []
        for r in range(rel_per_query):
            doc_id = f"r{qi:02d}{r:02d}"
            use = syn if r >= rel_per_query - n_sub else terms
            toks = list(use) * 2 + list(rng.choice(topic, size=6)) + zipf_words(rng, bg, doc_len - 10, bg_skew)
            rng.shuffle(toks)
            docs.append(Document(doc_id, "", tuple(toks)))
            qrels[qid][doc_id] = 1
            if use is syn:
                substituted[qid].append(doc_id)
    all_terms = [t for q in queries for t in q.tokens]
    for i in range(n_docs - len(docs)):
        toks = list(rng.choice(all_terms, size=noise_terms_per_doc)) + zipf_words(rng, bg, doc_len - noise_terms_per_doc, bg_skew)
        rng.shuffle(toks)
        docs.append(Document(f"n{i:04d}", "", tuple(toks)))
    return HybridFixture(docs, queries, qrels, aliases, substituted)
