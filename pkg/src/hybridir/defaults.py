"""Versioned table of default parameters shared by every pipeline stage."""
from __future__ import annotations

import hashlib
import json
from typing import Any, Mapping

DEFAULTS_VERSION = "1"

DEFAULTS: dict[str, Any] = {
    # result list sizes evaluated by the harness
    "c_values": [500, 1000, 1500, 2000],
    "c": 1000,
    "passage_k": 10_000,
    # BM25
    "k1": 0.9,
    "b": 0.4,
    # relevance-model merger
    "fb_docs": 10,
    "fb_terms": 10,
    "alpha": 0.5,
    "mu": 1000.0,
    # passages
    "window": 20,
    "stride": 10,
    # dense index
    "n_centroids": 64,
    "n_probe": 16,
    "kmeans_max_iter": 25,
    # embedder / weak supervision
    "embed_dim": 128,
    "vocab_min_count": 300,
    "seed": 13,
    "min_ngram_df": 5,
    "min_bm25_results": 10,
    "top_docs_per_query": 10,
    "max_passages_per_doc": 5,
    "neg_ratio": 1.0,
    "shard_size": 100_000,
}


def config_hash(config: Mapping[str, Any]) -> str:
    """Stable short hash of a JSON-serialisable config mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
