"""Retrieval metrics, per-query comparisons, and the analysis procedures."""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Query, load_stopwords
from .lexical import LexicalIndex, query_terms
from .ranking import RunFormatError, ScoredList

logger = logging.getLogger(__name__)

Run = Mapping[str, ScoredList]


class UndefinedMetric(ValueError):
    """The query has no relevant documents, so recall and MAP are undefined."""


class Qrels:
    """Binary judgments; graded labels collapse to relevant at ``rel >= 1``."""

    def __init__(self, judgments: Mapping[str, Mapping[str, int]]):
        self._relevant = {q: frozenset(d for d, r in docs.items() if r >= 1) for q, docs in judgments.items()}

    @classmethod
    def load(cls, path: str | Path) -> "Qrels":
        judgments: dict[str, dict[str, int]] = defaultdict(dict)
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 4:
                    raise RunFormatError(f"expected 4 columns, got {len(parts)}", lineno)
                qid, _, doc_id, rel = parts
                try:
                    judgments[qid][doc_id] = int(rel)
                except ValueError:
                    raise RunFormatError(f"relevance {rel!r} is not an integer", lineno) from None
        return cls(judgments)

    @property
    def query_ids(self) -> list[str]:
        return sorted(self._relevant)

    def relevant(self, query_id: str) -> frozenset[str]:
        return self._relevant.get(query_id, frozenset())

    def evaluable(self) -> list[str]:
        return [q for q in self.query_ids if self._relevant[q]]


def _doc_ids(run: ScoredList | Sequence[str]) -> list[str]:
    return run.doc_ids if isinstance(run, ScoredList) else list(run)


def _relevant_or_raise(qrels: Qrels, query_id: str) -> frozenset[str]:
    rel = qrels.relevant(query_id)
    if not rel:
        raise UndefinedMetric(f"query {query_id!r} has no relevant documents")
    return rel


def recall_at(run: ScoredList | Sequence[str], qrels: Qrels, query_id: str, c: int) -> float:
    rel = _relevant_or_raise(qrels, query_id)
    hits = sum(1 for d in _doc_ids(run)[:c] if d in rel)
    return hits / len(rel)


def map_at(run: ScoredList | Sequence[str], qrels: Qrels, query_id: str, c: int) -> float:
    """Average precision over the top ``c``, normalised by all relevant documents."""
    rel = _relevant_or_raise(qrels, query_id)
    hits = 0
    total = 0.0
    for rank, d in enumerate(_doc_ids(run)[:c], 1):
        if d in rel:
            hits += 1
            total += hits / rank
    return total / len(rel)


def reliability_of_improvement(deltas: Iterable[float]) -> float:
    """``(|Q+| - |Q-|) / |Q|``; zero deltas count toward neither side."""
    deltas = list(deltas)
    if not deltas:
        raise ValueError("RI needs at least one query")
    pos = sum(1 for d in deltas if d > 0)
    neg = sum(1 for d in deltas if d < 0)
    return (pos - neg) / len(deltas)


# ---------------------------------------------------------------------------
# whole-run evaluation


@dataclass
class RunMetrics:
    c: int
    recall: dict[str, float]
    ap: dict[str, float]
    rel_retrieved: dict[str, int]
    excluded: list[str] = field(default_factory=list)

    @property
    def mean_recall(self) -> float:
        return float(np.mean(list(self.recall.values()))) if self.recall else 0.0

    @property
    def mean_ap(self) -> float:
        return float(np.mean(list(self.ap.values()))) if self.ap else 0.0

    @property
    def total_rel_retrieved(self) -> int:
        return sum(self.rel_retrieved.values())

    def summary(self) -> dict:
        return {"c": self.c, "recall": self.mean_recall, "map": self.mean_ap,
                "rel_retrieved": self.total_rel_retrieved, "n_queries": len(self.recall),
                "excluded": list(self.excluded)}


def evaluate_run(run: Run, qrels: Qrels, c: int) -> RunMetrics:
    """Per-query recall/AP over judged queries with at least one relevant document.

    Judged queries missing from the run score zero. Queries without relevant
    documents are excluded and listed.
    """
    recall, ap, rel_ret = {}, {}, {}
    excluded = [q for q in sorted(set(qrels.query_ids) | set(run)) if not qrels.relevant(q)]
    for qid in qrels.evaluable():
        docs = _doc_ids(run.get(qid, ScoredList()))
        recall[qid] = recall_at(docs, qrels, qid, c)
        ap[qid] = map_at(docs, qrels, qid, c)
        rel = qrels.relevant(qid)
        rel_ret[qid] = sum(1 for d in docs[:c] if d in rel)
    return RunMetrics(c, recall, ap, rel_ret, excluded)


def per_query_deltas(baseline: RunMetrics, test: RunMetrics, metric: str = "recall") -> dict[str, float]:
    a, b = getattr(baseline, metric), getattr(test, metric)
    return {q: b[q] - a[q] for q in sorted(a) if q in b}


@dataclass
class EvalReport:
    runs: dict[str, dict[int, RunMetrics]]
    baseline: str | None = None

    def ri(self, name: str, c: int, metric: str = "recall") -> float | None:
        if self.baseline is None or name == self.baseline:
            return None
        deltas = per_query_deltas(self.runs[self.baseline][c], self.runs[name][c], metric)
        return reliability_of_improvement(deltas.values()) if deltas else None

    def to_json(self) -> dict:
        out: dict = {"baseline": self.baseline, "runs": {}}
        for name, by_c in self.runs.items():
            entry = {}
            for c, m in by_c.items():
                s = m.summary()
                s["ri"] = self.ri(name, c)
                s["per_query"] = {q: {"recall": m.recall[q], "map": m.ap[q], "rel_retrieved": m.rel_retrieved[q]}
                                  for q in m.recall}
                if self.baseline and name != self.baseline:
                    s["deltas"] = per_query_deltas(self.runs[self.baseline][c], m)
                entry[str(c)] = s
            out["runs"][name] = entry
        return out

    def to_text(self) -> str:
        rows = []
        for name, by_c in self.runs.items():
            for c, m in sorted(by_c.items()):
                ri = self.ri(name, c)
                rows.append([name, str(c), f"{m.mean_recall:.4f}", f"{m.mean_ap:.4f}",
                             str(m.total_rel_retrieved), "-" if ri is None else f"{ri:.3f}"])
        return format_table(["run", "c", "recall", "MAP", "#rel", "RI"], rows)


def build_report(runs: Mapping[str, Run], qrels: Qrels, c_values: Sequence[int], baseline: str | None = None) -> EvalReport:
    if baseline is not None and baseline not in runs:
        raise KeyError(f"baseline run {baseline!r} not among the evaluated runs")
    return EvalReport({name: {c: evaluate_run(run, qrels, c) for c in c_values} for name, run in runs.items()},
                      baseline)


def format_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Aligned columns; the first column is left-justified, the rest right-justified."""
    widths = [max(len(str(x)) for x in col) for col in zip(headers, *rows)]

    def line(cells):
        return "  ".join(str(v).ljust(w) if i == 0 else str(v).rjust(w)
                         for i, (v, w) in enumerate(zip(cells, widths))).rstrip()

    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(headers), sep, *(line(r) for r in rows)]) + "\n"


# ---------------------------------------------------------------------------
# analyses


@dataclass
class QuartileGroup:
    group: int
    query_ids: list[str]
    baseline_mean: float
    test_mean: float


def quartile_analysis(baseline_run: Run, test_run: Run, qrels: Qrels, c: int) -> list[QuartileGroup]:
    """Split queries into four groups by baseline recall (ascending, ties by id).

    When the count is not divisible by four, the extra queries go to the
    lowest-recall groups.
    """
    base = evaluate_run(baseline_run, qrels, c).recall
    test = evaluate_run(test_run, qrels, c).recall
    if len(base) < 4:
        raise ValueError("quartile analysis needs at least 4 evaluable queries")
    order = sorted(base, key=lambda q: (base[q], q))
    size, extra = divmod(len(order), 4)
    groups, start = [], 0
    for g in range(4):
        n = size + (1 if g < extra else 0)
        ids = order[start : start + n]
        start += n
        groups.append(QuartileGroup(g + 1, ids, float(np.mean([base[q] for q in ids])),
                                    float(np.mean([test[q] for q in ids]))))
    return groups


def percent_change(before: float, after: float) -> float:
    if before == 0:
        return 0.0 if after == 0 else math.copysign(math.inf, after)
    return 100.0 * (after - before) / before


@dataclass
class Bucket:
    lo: float
    hi: float
    count: int = 0

    @property
    def label(self) -> str:
        if self.lo == self.hi:
            return "0"
        lo = "-inf" if self.lo == -math.inf else f"{self.lo:g}"
        hi = "inf" if self.hi == math.inf else f"{self.hi:g}"
        left = "(" if self.lo in (-math.inf, 0.0) else "["
        return f"{left}{lo}, {hi})"

    def holds(self, x: float) -> bool:
        if self.lo == self.hi:
            return x == self.lo
        if x == 0.0:
            return False
        if self.lo == -math.inf:
            return x < self.hi
        if self.hi == math.inf:
            return x >= self.lo
        return self.lo <= x < self.hi


def histogram_buckets(edges: Sequence[float]) -> list[Bucket]:
    """Partition of the real line at ``edges`` with an exact-zero bucket of its own."""
    edges = sorted(set(float(e) for e in edges))
    if any(not math.isfinite(e) for e in edges):
        raise ValueError("bucket edges must be finite")
    bounds = [-math.inf, *edges, math.inf]
    out = []
    for lo, hi in zip(bounds, bounds[1:]):
        if lo < 0.0 < hi:
            out += [Bucket(lo, 0.0), Bucket(0.0, 0.0), Bucket(0.0, hi)]
        else:
            if lo == 0.0:
                out.append(Bucket(0.0, 0.0))
            out.append(Bucket(lo, hi))
    return out


def improvement_histogram(baseline_run: Run, test_run: Run, qrels: Qrels, bucket_edges: Sequence[float],
                          c: int) -> list[Bucket]:
    """Count queries by percentage recall change; a zero baseline maps to ±inf."""
    base = evaluate_run(baseline_run, qrels, c).recall
    test = evaluate_run(test_run, qrels, c).recall
    buckets = histogram_buckets(bucket_edges)
    for q in base:
        change = percent_change(base[q], test[q])
        next(b for b in buckets if b.holds(change)).count += 1
    return buckets


def query_properties(query: Query | Sequence[str], index: LexicalIndex) -> dict[str, float]:
    """idf statistics over the query terms; the standard deviation is the population one."""
    terms = query_terms(query)
    if not terms:
        raise ValueError("query has no terms")
    idfs = np.array([index.idf(t) for t in terms])
    return {"mean_idf": float(idfs.mean()), "max_idf": float(idfs.max()),
            "std_idf": float(idfs.std()), "n_terms": len(terms)}


def representative_terms(doc_ids: Sequence[str], index: LexicalIndex, n: int,
                         stopwords: Iterable[str] | None = None) -> list[str]:
    """Top ``n`` terms by summed ``tf * idf`` over the documents, ties by term."""
    if not doc_ids:
        raise ValueError("need at least one document")
    stop = load_stopwords() if stopwords is None else frozenset(stopwords)
    acc = np.zeros(len(index.terms))
    for d in doc_ids:
        tids, tfs = index.doc_arrays(index._didx(d))
        acc[tids] += tfs
    nz = np.flatnonzero(acc)
    idf = np.array([index.idf(index.terms[t]) for t in nz])
    scored = [(index.terms[t], s) for t, s in zip(nz, acc[nz] * idf) if index.terms[t] not in stop]
    scored.sort(key=lambda x: (-x[1], x[0]))
    return [t for t, _ in scored[:n]]


def jaccard(list_a: Iterable[str], list_b: Iterable[str]) -> float:
    a, b = set(list_a), set(list_b)
    if not a or not b:
        raise ValueError("jaccard needs two nonempty lists")
    return len(a & b) / len(a | b)


def unique_relevant(run_a: Run, run_b: Run, qrels: Qrels, c: int) -> dict[str, list[str]]:
    """Relevant documents in the top ``c`` of ``run_b`` but not of ``run_a``, per query."""
    out = {}
    for qid in qrels.evaluable():
        rel = qrels.relevant(qid)
        in_a = set(_doc_ids(run_a.get(qid, ScoredList()))[:c])
        out[qid] = [d for d in _doc_ids(run_b.get(qid, ScoredList()))[:c] if d in rel and d not in in_a]
    return out


def term_comparison(docs_a: Sequence[str], docs_b: Sequence[str], index: LexicalIndex, n: int = 50,
                    stopwords: Iterable[str] | None = None) -> dict:
    """Representative terms of two document sets and their Jaccard index."""
    ta = representative_terms(docs_a, index, n, stopwords)
    tb = representative_terms(docs_b, index, n, stopwords)
    return {"terms_a": ta, "terms_b": tb, "jaccard": jaccard(ta, tb)}


def relevant_length_profile(run_a: Run, run_b: Run, qrels: Qrels, doc_lengths: Mapping[str, int],
                            per_query: int = 5) -> tuple[list[int], list[int]]:
    """Lengths of the first ``per_query`` relevant documents per query in each run, pooled and sorted."""
    if per_query <= 0:
        raise ValueError("per_query must be positive")

    def collect(run: Run) -> list[int]:
        lengths = []
        for qid in qrels.evaluable():
            rel = qrels.relevant(qid)
            found = [d for d in _doc_ids(run.get(qid, ScoredList())) if d in rel][:per_query]
            lengths.extend(doc_lengths[d] for d in found)
        return sorted(lengths)

    return collect(run_a), collect(run_b)


# ---------------------------------------------------------------------------
# exports


def write_csv(path: str | Path, headers: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(headers)
        w.writerows(rows)


def lengths_rows(seq_a: Sequence[int], seq_b: Sequence[int]) -> list[list]:
    n = max(len(seq_a), len(seq_b))
    return [[i + 1, seq_a[i] if i < len(seq_a) else "", seq_b[i] if i < len(seq_b) else ""] for i in range(n)]


def quartile_table(groups: Sequence[QuartileGroup]) -> str:
    rows = [[f"Q{g.group}", str(len(g.query_ids)), f"{g.baseline_mean:.4f}", f"{g.test_mean:.4f}",
             f"{percent_change(g.baseline_mean, g.test_mean):+.1f}%"] for g in groups]
    return format_table(["group", "queries", "baseline", "test", "change"], rows)


def properties_table(props: Mapping[str, Mapping[str, float]]) -> str:
    rows = [[qid, str(p["n_terms"]), f"{p['mean_idf']:.3f}", f"{p['max_idf']:.3f}", f"{p['std_idf']:.3f}"]
            for qid, p in props.items()]
    return format_table(["query", "terms", "mean_idf", "max_idf", "std_idf"], rows)


def dump_json(obj, path: str | Path) -> None:
    def default(o):
        if isinstance(o, (QuartileGroup, Bucket)):
            return asdict(o)
        if isinstance(o, float) and not math.isfinite(o):
            return str(o)
        raise TypeError(type(o).__name__)

    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n", encoding="utf-8")
