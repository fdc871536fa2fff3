"""Document ingestion, text normalisation and passage splitting."""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import snowballstemmer

logger = logging.getLogger(__name__)

STOPWORDS_VERSION = "en-v1"

# Unicode letters and digits; underscores and all other punctuation split tokens.
_TOKEN_RE = re.compile(r"[^\W_]+")


class IngestError(ValueError):
    """Raised for malformed records or doc_id collisions during ingestion."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at record/line {position})"
        super().__init__(message)


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Read a stopword file (one word per line, ``#`` comments allowed).

    Without ``path`` the bundled versioned English list is returned.
    """
    if path is None:
        text = resources.files("hybridir.data").joinpath("stopwords-en-v1.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    words = (line.strip().lower() for line in text.splitlines())
    return frozenset(w for w in words if w and not w.startswith("#"))


@lru_cache(maxsize=None)
def _snowball(algorithm: str) -> Callable[[str], str]:
    stemmer = snowballstemmer.stemmer(algorithm)
    cache: dict[str, str] = {}

    def stem(word: str) -> str:
        out = cache.get(word)
        if out is None:
            out = stemmer.stemWord(word)
            cache[word] = out
        return out

    return stem


def _identity(word: str) -> str:
    return word


def get_stemmer(name: str) -> Callable[[str], str]:
    """Resolve a stemmer by name: ``porter2`` (default), ``porter`` or ``none``."""
    if name == "porter2":
        return _snowball("english")
    if name == "porter":
        return _snowball("porter")
    if name == "none":
        return _identity
    raise ValueError(f"unknown stemmer {name!r}")


@dataclass(frozen=True)
class NormalizationConfig:
    """Tokenisation settings shared by documents and queries.

    ``stemmer`` is a registered name, or any ``str -> str`` callable for a
    custom stemmer (e.g. a dictionary-backed Krovetz implementation).
    """

    stemmer: str | Callable[[str], str] = "porter2"
    stopwords: frozenset[str] = field(default_factory=load_stopwords)

    def stem_fn(self) -> Callable[[str], str]:
        if callable(self.stemmer):
            return self.stemmer
        return get_stemmer(self.stemmer)

    def describe(self) -> dict:
        name = self.stemmer if isinstance(self.stemmer, str) else getattr(
            self.stemmer, "__name__", "custom"
        )
        return {"stemmer": name, "stopwords": sorted(self.stopwords)}


DEFAULT_CONFIG = NormalizationConfig()


def tokenize(text: str, config: NormalizationConfig = DEFAULT_CONFIG) -> list[str]:
    """Lowercase, split on punctuation, drop stopwords, stem."""
    stem = config.stem_fn()
    stop = config.stopwords
    out = []
    for raw in _TOKEN_RE.findall(text.lower()):
        if raw in stop:
            continue
        term = stem(raw)
        if term:
            out.append(term)
    return out


@dataclass(frozen=True)
class Document:
    doc_id: str
    raw_text: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class Passage:
    doc_id: str
    ordinal: int
    tokens: tuple[str, ...]

    @property
    def passage_id(self) -> str:
        return passage_key(self.doc_id, self.ordinal)


@dataclass(frozen=True)
class Query:
    query_id: str
    raw_text: str
    tokens: tuple[str, ...]

    @property
    def answerable(self) -> bool:
        return bool(self.tokens)


def passage_key(doc_id: str, ordinal: int) -> str:
    return f"{doc_id}#{ordinal}"


def make_document(doc_id: str, text: str, config: NormalizationConfig = DEFAULT_CONFIG) -> Document:
    return Document(doc_id, text, tuple(tokenize(text, config)))


def make_query(query_id: str, text: str, config: NormalizationConfig = DEFAULT_CONFIG) -> Query:
    query = Query(query_id, text, tuple(tokenize(text, config)))
    if not query.answerable:
        logger.warning("query %s is empty after normalisation", query_id)
    return query


def passage_count(n_tokens: int, window: int = 20, stride: int = 10) -> int:
    return math.ceil(max(n_tokens - window, 0) / stride) + 1


def split_passages(doc: Document, window: int = 20, stride: int = 10) -> list[Passage]:
    """Split a document into overlapping fixed-size windows.

    Passage ``k`` covers tokens ``[k*stride, k*stride + window)``; the final
    passage may be short. A document with no tokens still yields one (empty)
    passage so every document is addressable.
    """
    if window <= 0 or not 0 < stride <= window:
        raise ValueError(f"invalid window/stride: window={window}, stride={stride}")
    toks = doc.tokens
    return [
        Passage(doc.doc_id, k, tuple(toks[k * stride : k * stride + window]))
        for k in range(passage_count(len(toks), window, stride))
    ]


# ---------------------------------------------------------------------------
# ingestion

_DOC_RE = re.compile(r"<DOC>(.*?)</DOC>", re.S | re.I)
_DOCNO_RE = re.compile(r"<DOCNO>\s*(.*?)\s*</DOCNO>", re.S | re.I)
_TEXT_RE = re.compile(r"<TEXT>(.*?)</TEXT>", re.S | re.I)
_TAG_RE = re.compile(r"<[^>]+>")


def _iter_jsonl(path: Path) -> Iterator[tuple[int, str, str]]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"malformed JSON: {exc.msg}", lineno) from exc
            if not isinstance(rec, dict):
                raise IngestError("record is not a JSON object", lineno)
            doc_id, text = rec.get("id"), rec.get("text")
            if not isinstance(doc_id, str) or not doc_id or not isinstance(text, str):
                raise IngestError("record needs string fields 'id' and 'text'", lineno)
            yield lineno, doc_id, text


def _iter_trec(path: Path) -> Iterator[tuple[int, str, str]]:
    content = path.read_text(encoding="utf-8", errors="replace")
    for ordinal, m in enumerate(_DOC_RE.finditer(content), 1):
        body = m.group(1)
        lineno = content.count("\n", 0, m.start()) + 1
        docno = _DOCNO_RE.search(body)
        if docno is None or not docno.group(1).strip():
            raise IngestError("<DOC> without <DOCNO>", lineno)
        texts = _TEXT_RE.findall(body)
        if texts:
            text = "\n".join(texts)
        else:
            text = body[: docno.start()] + body[docno.end() :]
        yield lineno, docno.group(1).strip(), _TAG_RE.sub(" ", text)


def ingest(
    path: str | Path,
    format: str = "jsonl",
    config: NormalizationConfig = DEFAULT_CONFIG,
) -> Iterator[Document]:
    """Stream normalised documents from a ``jsonl`` or ``trec-sgml`` file."""
    path = Path(path)
    if format == "jsonl":
        records = _iter_jsonl(path)
    elif format in ("trec-sgml", "trec"):
        records = _iter_trec(path)
    else:
        raise ValueError(f"unsupported corpus format {format!r}")
    seen: set[str] = set()
    for position, doc_id, text in records:
        if doc_id in seen:
            raise IngestError(f"duplicate doc_id {doc_id!r}", position)
        seen.add(doc_id)
        yield make_document(doc_id, text, config)


def read_queries(path: str | Path, config: NormalizationConfig = DEFAULT_CONFIG) -> list[Query]:
    """Read a ``qid<TAB>text`` topics file."""
    queries = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            qid, sep, text = line.partition("\t")
            if not sep or not qid.strip():
                raise IngestError("expected 'qid<TAB>text'", lineno)
            queries.append(make_query(qid.strip(), text, config))
    return queries


def iter_passages(docs: Iterable[Document], window: int = 20, stride: int = 10) -> Iterator[Passage]:
    for doc in docs:
        yield from split_passages(doc, window, stride)


def dump_documents(docs: Sequence[Document], path: str | Path) -> None:
    """Write normalised documents as JSONL (``id``, ``tokens``)."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(json.dumps({"id": doc.doc_id, "tokens": list(doc.tokens)}, ensure_ascii=False))
            fh.write("\n")


def load_documents(path: str | Path) -> list[Document]:
    docs = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            docs.append(Document(rec["id"], "", tuple(rec["tokens"])))
    return docs
