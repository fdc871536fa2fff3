"""Ranked result lists and TREC run-file I/O."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np


class RunFormatError(ValueError):
    def __init__(self, message: str, lineno: int):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


@dataclass(frozen=True)
class ScoredList(Sequence):
    """Deduplicated ``(doc_id, score)`` pairs, best first.

    Ordering is total: descending score, then ascending ``doc_id``.
    ``flags`` carries warnings such as ``empty-query``.
    """

    entries: tuple[tuple[str, float], ...] = ()
    flags: frozenset[str] = field(default_factory=frozenset)

    @classmethod
    def from_scores(
        cls,
        scores: Mapping[str, float] | Iterable[tuple[str, float]],
        c: int | None = None,
        flags: Iterable[str] = (),
    ) -> "ScoredList":
        items = scores.items() if isinstance(scores, Mapping) else scores
        ranked = sorted(((d, float(s)) for d, s in items), key=lambda x: (-x[1], x[0]))
        if len({d for d, _ in ranked}) != len(ranked):
            raise ValueError("duplicate doc_id in scored list")
        if c is not None:
            ranked = ranked[:c]
        return cls(tuple(ranked), frozenset(flags))

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __iter__(self) -> Iterator[tuple[str, float]]:
        return iter(self.entries)

    @property
    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.entries]

    def scores(self) -> dict[str, float]:
        return dict(self.entries)

    def truncate(self, c: int) -> "ScoredList":
        return ScoredList(self.entries[:c], self.flags)

    def with_flags(self, *flags: str) -> "ScoredList":
        return ScoredList(self.entries, self.flags | frozenset(flags))


def top_k_indices(scores: np.ndarray, tiebreak: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` best scores, descending, ties by ascending ``tiebreak``."""
    n = len(scores)
    if k <= 0 or n == 0:
        return np.empty(0, dtype=np.int64)
    if k < n:
        part = np.argpartition(-scores, k - 1)[:k]
        kth = scores[part].min()
        cand = np.flatnonzero(scores >= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((tiebreak[cand], -scores[cand]))
    return cand[order[:k]]


def write_run(runs: Mapping[str, ScoredList] | Iterable[tuple[str, ScoredList]], path: str | Path, tag: str) -> int:
    """Write ``qid Q0 docid rank score tag`` lines in the given query order."""
    items = runs.items() if isinstance(runs, Mapping) else runs
    n = 0
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for qid, ranking in items:
            for rank, (doc_id, score) in enumerate(ranking, 1):
                fh.write(f"{qid} Q0 {doc_id} {rank} {float(score)!r} {tag}\n")
                n += 1
    return n


def read_run(path: str | Path) -> dict[str, ScoredList]:
    """Parse a TREC run file; rankings are rebuilt from scores (ties by doc_id)."""
    per_query: dict[str, dict[str, float]] = defaultdict(dict)
    order: list[str] = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise RunFormatError(f"expected 6 columns, got {len(parts)}", lineno)
            qid, _, doc_id, rank, score, _tag = parts
            try:
                int(rank)
                value = float(score)
            except ValueError:
                raise RunFormatError("rank/score not numeric", lineno) from None
            if qid not in per_query:
                order.append(qid)
            if doc_id in per_query[qid]:
                raise RunFormatError(f"duplicate doc {doc_id} for query {qid}", lineno)
            per_query[qid][doc_id] = value
    return {qid: ScoredList.from_scores(per_query[qid]) for qid in order}
