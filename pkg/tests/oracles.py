"""Independent brute-force reference implementations used as test oracles.

Written straight from the definitions, with plain Python containers, so
they share no code path with the package.
"""
import math
from collections import Counter


def bm25_all(docs, query, k1=0.9, b=0.4):
    """Score every document; returns {doc_id: score} for docs matching any query term."""
    n = len(docs)
    avg = sum(len(t) for t in docs.values()) / n
    df = Counter()
    for toks in docs.values():
        df.update(set(toks))
    out = {}
    for doc_id, toks in docs.items():
        tf = Counter(toks)
        if not any(tf[t] for t in query):
            continue
        s = 0.0
        for t in query:
            if tf[t]:
                idf = math.log(1 + (n - df[t] + 0.5) / (df[t] + 0.5))
                s += idf * tf[t] * (k1 + 1) / (tf[t] + k1 * (1 - b + b * len(toks) / avg))
        out[doc_id] = s
    return out


def ranked(scores, c=None):
    items = sorted(scores.items(), key=lambda x: (-x[1], x[0]))
    return items if c is None else items[:c]


def knn_brute(ids, vectors, q, k):
    scores = [(pid, sum(float(a) * float(b) for a, b in zip(v, q))) for pid, v in zip(ids, vectors)]
    scores.sort(key=lambda x: (-x[1], x[0]))
    return scores[:k]


def recall(ranking, relevant, c):
    return len([d for d in ranking[:c] if d in relevant]) / len(relevant)


def average_precision(ranking, relevant, c):
    precisions = []
    for r in range(1, min(c, len(ranking)) + 1):
        if ranking[r - 1] in relevant:
            precisions.append(len([d for d in ranking[:r] if d in relevant]) / r)
    return sum(precisions) / len(relevant)


def ri(deltas):
    return (len([d for d in deltas if d > 0]) - len([d for d in deltas if d < 0])) / len(deltas)


def ngrams(docs, min_df):
    """Bi-/tri-grams of distinct terms occurring in at least ``min_df`` documents."""
    df = Counter()
    for toks in docs.values():
        grams = set()
        for n in (2, 3):
            for i in range(len(toks) - n + 1):
                g = tuple(toks[i:i + n])
                if len(set(g)) == n:
                    grams.add(g)
        for g in grams:
            df[g] += 1
    return {g for g, v in df.items() if v >= min_df}


def dirichlet(tf, dlen, ctf, total, mu):
    return (tf + mu * ctf / total) / (dlen + mu)


def rm1(docs, query, fb, fb_terms, mu):
    """Relevance model from feedback docs, weighting each by Dirichlet query likelihood."""
    total = sum(len(t) for t in docs.values())
    ctf = Counter(t for toks in docs.values() for t in toks)
    acc = {}
    for d in fb:
        toks = docs[d]
        lik = 1.0
        for q in query:
            if q in ctf:
                lik *= dirichlet(toks.count(q), len(toks), ctf[q], total, mu)
        for t in set(toks):
            acc[t] = acc.get(t, 0.0) + toks.count(t) / len(toks) * lik
    top = sorted(acc.items(), key=lambda x: (-x[1], x[0]))[:fb_terms]
    z = sum(w for _, w in top)
    return {t: w / z for t, w in top}


def rm3(rm1_weights, query, alpha):
    mle = {t: query.count(t) / len(query) for t in set(query)}
    mixed = {t: (1 - alpha) * mle.get(t, 0.0) + alpha * rm1_weights.get(t, 0.0) for t in set(mle) | set(rm1_weights)}
    z = sum(mixed.values())
    return {t: w / z for t, w in mixed.items() if w > 0}


def rm_score(docs, weights, doc_id, mu):
    total = sum(len(t) for t in docs.values())
    ctf = Counter(t for toks in docs.values() for t in toks)
    toks = docs[doc_id]
    return sum(w * math.log(dirichlet(toks.count(t), len(toks), ctf[t], total, mu))
               for t, w in weights.items() if ctf[t])
