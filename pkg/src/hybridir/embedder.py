"""Embedding providers for queries and passages, and the dual-encoder pair loss."""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Passage, Query
from .dense import VectorIndex
from .lexical import LexicalIndex

logger = logging.getLogger(__name__)

VOCAB_MIN_COUNT = 300


class EmbeddingLookupError(KeyError):
    pass


class EmbedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingPair:
    query_terms: tuple[str, ...]
    passage_tokens: tuple[str, ...]
    label: int
    score: float

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")
        if self.label == 1 and self.score <= 0.0:
            raise ValueError("relevant pairs need a positive score")
        if self.label == 0 and self.score != 0.0:
            raise ValueError("non-relevant pairs have score 0")

    def to_json(self) -> dict:
        return {"query": list(self.query_terms), "passage": list(self.passage_tokens),
                "label": self.label, "score": self.score}


# ---------------------------------------------------------------------------
# loss


def _softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def pair_loss(label: int, target_score: float, dot: float) -> float:
    """Binary cross-entropy on ``sigmoid(dot)`` plus squared error against the target.

    Cross-entropy is evaluated through softplus, which stays finite for any
    finite ``dot`` without clamping the sigmoid.
    """
    for name, v in (("target_score", target_score), ("dot", dot)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v}")
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    if not 0.0 <= target_score <= 1.0:
        raise ValueError("target_score must lie in [0, 1]")
    # -ln sigmoid(x) = softplus(-x); -ln(1 - sigmoid(x)) = softplus(x)
    ce = _softplus(-dot) if label == 1 else _softplus(dot)
    return ce + (target_score - dot) ** 2


def pair_loss_grad(label: int, target_score: float, dot: float) -> float:
    """Analytic derivative of :func:`pair_loss` with respect to ``dot``."""
    return sigmoid(dot) - label + 2.0 * (dot - target_score)


# ---------------------------------------------------------------------------
# providers


class EmbeddingProvider:
    """Maps token sequences to fixed-size vectors.

    Separate query and passage entry points exist so a provider may keep
    distinct output layers per side; both default to :meth:`embed`.
    """

    kind = "abstract"
    dim: int

    def embed(self, tokens: Sequence[str], key: str | None = None) -> np.ndarray:
        raise NotImplementedError

    def embed_query(self, query: Query | Sequence[str]) -> np.ndarray:
        if isinstance(query, Query):
            return self.embed(query.tokens, key=query.query_id)
        return self.embed(query)

    def embed_passage(self, passage: Passage | Sequence[str]) -> np.ndarray:
        if isinstance(passage, Passage):
            return self.embed(passage.tokens, key=passage.passage_id)
        return self.embed(passage)


class BaselineProjectionProvider(EmbeddingProvider):
    """idf-weighted bag of terms through a seeded Gaussian random projection.

    ``aliases`` rewrites terms before weighting, so synonyms can share a
    projection row.
    """

    kind = "baseline-projection"

    def __init__(self, vocabulary: Sequence[str], idf: Sequence[float], dim: int, seed: int,
                 aliases: Mapping[str, str] | None = None):
        if len(vocabulary) != len(idf):
            raise ValueError("vocabulary and idf lengths differ")
        self.vocabulary = list(vocabulary)
        self.term_id = {t: i for i, t in enumerate(self.vocabulary)}
        self.idf = np.asarray(idf, dtype=np.float64)
        self.dim = dim
        self.seed = seed
        self.aliases = dict(aliases or {})
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((len(self.vocabulary), dim)) / math.sqrt(dim)

    @classmethod
    def from_index(cls, index: LexicalIndex, dim: int, seed: int, min_count: int = VOCAB_MIN_COUNT,
                   aliases: Mapping[str, str] | None = None) -> "BaselineProjectionProvider":
        vocab = [t for t in index.terms if index.collection_tf(t) >= min_count]
        if not vocab:
            logger.warning("no term reaches %d occurrences; baseline vocabulary is empty", min_count)
        return cls(vocab, [index.idf(t) for t in vocab], dim, seed, aliases)

    def weights(self, tokens: Sequence[str]) -> dict[int, float]:
        """Pre-projection weights: count times idf per in-vocabulary term."""
        counts = Counter(self.aliases.get(t, t) for t in tokens)
        return {self.term_id[t]: n * self.idf[self.term_id[t]] for t, n in counts.items() if t in self.term_id}

    def embed(self, tokens: Sequence[str], key: str | None = None) -> np.ndarray:
        w = self.weights(tokens)
        if not w:
            logger.warning("no in-vocabulary tokens to embed%s; returning zero vector",
                           f" for {key}" if key else "")
            return np.zeros(self.dim)
        ids = np.fromiter(w.keys(), dtype=np.int64, count=len(w))
        vals = np.fromiter(w.values(), dtype=np.float64, count=len(w))
        return vals @ self.projection[ids]

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "dim": self.dim, "seed": self.seed,
                           "vocabulary": self.vocabulary, "idf": self.idf.tolist(),
                           "aliases": self.aliases}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BaselineProjectionProvider":
        obj = json.loads(text)
        return cls(obj["vocabulary"], obj["idf"], obj["dim"], obj["seed"], obj.get("aliases"))


class PrecomputedProvider(EmbeddingProvider):
    """Looks vectors up by key (passage id, query id, or the joined tokens)."""

    kind = "precomputed-file"

    def __init__(self, vectors: Mapping[str, np.ndarray], dim: int):
        self.vectors = dict(vectors)
        self.dim = dim

    def embed(self, tokens: Sequence[str], key: str | None = None) -> np.ndarray:
        lookup = key if key is not None else " ".join(tokens)
        try:
            return np.asarray(self.vectors[lookup], dtype=np.float64)
        except KeyError:
            raise EmbeddingLookupError(f"no precomputed vector for {lookup!r}") from None

    @classmethod
    def from_vector_file(cls, path: str | Path) -> "PrecomputedProvider":
        index = VectorIndex.load(path)
        m = index.matrix
        return cls({pid: m[i] for i, pid in enumerate(index.passage_ids)}, index.dim)

    @classmethod
    def from_tsv(cls, path: str | Path) -> "PrecomputedProvider":
        vectors: dict[str, np.ndarray] = {}
        dim = None
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                key, sep, values = line.rstrip("\n").partition("\t")
                if not sep:
                    raise ValueError(f"{path}:{lineno}: expected key<TAB>values")
                vec = np.array(values.split(), dtype=np.float64)
                if dim is None:
                    dim = len(vec)
                elif len(vec) != dim:
                    raise ValueError(f"{path}:{lineno}: dim {len(vec)} != {dim}")
                vectors[key] = vec
        if dim is None:
            raise ValueError(f"{path}: no vectors")
        return cls(vectors, dim)


def load_provider(spec: str, index: LexicalIndex | None = None) -> EmbeddingProvider:
    """Resolve a provider spec.

    ``baseline:dim=D,seed=S[,min_count=M]`` builds a projection provider from
    ``index``; a ``.json`` path restores a saved baseline provider; a ``.tsv``
    path or a vector file loads precomputed vectors.
    """
    if spec.startswith("baseline"):
        if index is None:
            raise ValueError("baseline provider needs a lexical index")
        opts = {"dim": 128, "seed": 13, "min_count": VOCAB_MIN_COUNT}
        _, _, rest = spec.partition(":")
        for item in filter(None, rest.split(",")):
            name, eq, value = item.partition("=")
            if not eq or name not in opts:
                raise ValueError(f"bad provider option {item!r}")
            opts[name] = int(value)
        return BaselineProjectionProvider.from_index(index, opts["dim"], opts["seed"], opts["min_count"])
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(spec)
    if path.suffix == ".json":
        return BaselineProjectionProvider.from_json(path.read_text("utf-8"))
    if path.suffix in (".tsv", ".txt"):
        return PrecomputedProvider.from_tsv(path)
    return PrecomputedProvider.from_vector_file(path)


def embed_corpus(provider: EmbeddingProvider, passages: Iterable[Passage], out: str | Path,
                 normalize: bool = False) -> int:
    """Embed every passage and write a vector file; returns the record count."""
    index = VectorIndex(provider.dim, normalize=normalize)
    for position, passage in enumerate(passages):
        try:
            vec = provider.embed_passage(passage)
            index.add(passage.passage_id, passage.doc_id, vec)
        except Exception as exc:
            raise EmbedError(f"passage {position} ({passage.passage_id}): {exc}") from exc
    try:
        index.save(out)
    except OSError as exc:
        raise EmbedError(f"writing {out}: {exc}") from exc
    return len(index)
