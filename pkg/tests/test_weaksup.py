import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridir.corpus import Document, Passage, split_passages
from hybridir.lexical import build_index
from hybridir.weaksup import (
    MinedQuery,
    WeakSupConfig,
    derive_rng,
    generate_pairs,
    mine_queries,
    negative_pairs,
    perturb,
    positive_pairs,
    write_training_data,
)

import oracles
from synth import weaksup_corpus

VOCAB = [f"v{i}" for i in range(30)]


def doc(doc_id, text):
    return Document(doc_id, "", tuple(text.split()))


def contained(tokens, terms):
    present = set(tokens)
    return sum(t in present for t in terms)


def test_df_threshold_boundary():
    docs = [doc(f"a{i}", "storm damage report") for i in range(6)] + [doc(f"b{i}", "flood risk") for i in range(4)]
    docs += [doc(f"c{i}", f"storm flood filler{i}") for i in range(10)]
    idx = build_index(docs)
    mined = {q.terms for q in mine_queries(docs, idx, min_df=5, min_results=1)}
    assert ("storm", "damage") in mined
    assert ("flood", "risk") not in mined


def test_mined_df_and_result_count():
    docs = [doc(f"a{i}", "storm damage") for i in range(5)] + [doc(f"b{i}", "storm") for i in range(7)]
    idx = build_index(docs)
    (q,) = mine_queries(docs, idx, min_df=5, min_results=10)
    assert q == MinedQuery(("storm", "damage"), 5, 12)
    assert list(mine_queries(docs, idx, min_df=5, min_results=13)) == []


def test_no_cross_document_ngrams():
    # "end start" only appears when documents are concatenated
    docs = [doc(f"d{i}", "alpha end") for i in range(6)] + [doc(f"e{i}", "start beta") for i in range(6)]
    idx = build_index(docs)
    mined = {q.terms for q in mine_queries(docs, idx, min_df=1, min_results=1)}
    assert mined == {("alpha", "end"), ("start", "beta")}


def test_mining_matches_brute_force_on_20_docs():
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(8)]
    docs = {f"d{i:02d}": list(rng.choice(words, size=rng.integers(3, 25))) for i in range(20)}
    corpus = [Document(k, "", tuple(v)) for k, v in docs.items()]
    idx = build_index(corpus)
    mined = [q.terms for q in mine_queries(corpus, idx, min_df=5, min_results=1)]
    assert mined == sorted(mined)
    assert set(mined) == oracles.ngrams(docs, 5)


@settings(max_examples=30)
@given(seed=st.integers(0, 2**32 - 1), min_df=st.integers(1, 6))
def test_mining_oracle_property(seed, min_df):
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(6)]
    docs = {f"d{i:02d}": list(rng.choice(words, size=rng.integers(0, 15))) for i in range(15)}
    corpus = [Document(k, "", tuple(v)) for k, v in docs.items()]
    idx = build_index(corpus)
    assert {q.terms for q in mine_queries(corpus, idx, min_df, 1)} == oracles.ngrams(docs, min_df)


def passages_of(docs, window=4, stride=4):
    return {d.doc_id: split_passages(d, window, stride) for d in docs}


def test_only_full_match_passage_paired():
    # window 4: passages "x a x x", "x x b x", "x x x x", "a b x x"; only the last has both
    d = doc("d1", "x a x x x x b x x x x x a b x x")
    idx = build_index([d])
    q = MinedQuery(("a", "b"), 5, 1)
    pairs = positive_pairs(q, idx, passages_of([d]), WeakSupConfig(window=4, stride=4))
    assert [p.ordinal for _, p in pairs] == [3]


def test_at_most_five_passages_in_document_order():
    d = doc("d1", " ".join(["a b x x"] * 7))
    idx = build_index([d])
    pairs = positive_pairs(MinedQuery(("a", "b"), 5, 1), idx, passages_of([d]), WeakSupConfig(window=4, stride=4))
    assert [p.ordinal for _, p in pairs] == [0, 1, 2, 3, 4]


def test_bm25_passage_order_option():
    # passage 2 has the most query-term mass, then passage 1
    d = doc("d1", "a b x x a b b x a a b b x x x x")
    idx = build_index([d])
    cfg = WeakSupConfig(window=4, stride=4, max_passages=2, passage_order="bm25-passage-score")
    pairs = positive_pairs(MinedQuery(("a", "b"), 5, 1), idx, passages_of([d]), cfg)
    assert [p.ordinal for _, p in pairs] == [2, 1]
    with pytest.raises(ValueError):
        positive_pairs(MinedQuery(("a", "b"), 5, 1), idx, passages_of([d]), WeakSupConfig(passage_order="random"))


def test_positive_pairs_hand_enumeration_10_docs():
    # window 4, stride 4; full-match passages enumerated by hand per document
    texts = {
        "d00": "a b x x",                      # p0
        "d01": "a x x x b x x x",              # none
        "d02": "a b a b x x x x a x b x",      # p0, p2
        "d03": "b a x x",                      # p0
        "d04": "a x x x",                      # none
        "d05": "x x x x a b x x",              # p1
        "d06": " ".join(["a b x x"] * 6),      # p0..p4
        "d07": "b x x x",                      # none
        "d08": "x b x a",                      # p0
        "d09": "a a a a b x x x",              # none
        "d10": "y y y y",                      # never retrieved
    }
    docs = [doc(k, v) for k, v in texts.items()]
    idx = build_index(docs)
    cfg = WeakSupConfig(window=4, stride=4)
    pairs = positive_pairs(MinedQuery(("a", "b"), 5, 10), idx, passages_of(docs), cfg)
    got = {p.passage_id for _, p in pairs}
    expect = {"d00#0", "d02#0", "d02#2", "d03#0", "d05#1", "d08#0"} | {f"d06#{i}" for i in range(5)}
    assert got == expect


def test_perturb_bigram():
    out = perturb((("a", "b"), ("x", "a", "b", "a")), VOCAB, 3)
    assert len(out) == 3
    assert sorted(p.score for p in out) == [0.6, 0.6, 1.0]
    assert all(p.label == 1 for p in out)
    assert out[0].passage_tokens == ("x", "a", "b", "a")
    # all occurrences of the removed term are replaced
    assert contained(out[1].passage_tokens, ["a"]) == 0 and "b" in out[1].passage_tokens
    assert contained(out[2].passage_tokens, ["b"]) == 0 and out[2].passage_tokens.count("a") == 2


def test_perturb_trigram():
    out = perturb((("a", "b", "c"), ("c", "b", "a", "x")), VOCAB, 4)
    assert Counter(p.score for p in out) == Counter({1.0: 1, 0.65: 3, 0.55: 3})
    for p in out:
        matched = contained(p.passage_tokens, ("a", "b", "c"))
        assert matched == {1.0: 3, 0.65: 2, 0.55: 1}[p.score]


def test_perturb_deterministic():
    pair = (("a", "b", "c"), ("a", "b", "c", "x"))
    assert perturb(pair, VOCAB, 11) == perturb(pair, VOCAB, 11)


def test_perturb_never_draws_query_terms():
    vocab = ["a", "b", "z"]
    for seed in range(20):
        for p in perturb((("a", "b"), ("a", "b")), vocab, seed)[1:]:
            assert "z" in p.passage_tokens


def test_perturb_rejects_bad_input():
    with pytest.raises(ValueError):
        perturb((("a", "b"), ("a", "x")), VOCAB, 0)
    with pytest.raises(ValueError):
        perturb((("a",), ("a",)), VOCAB, 0)
    with pytest.raises(ValueError):
        perturb((("a", "a"), ("a",)), VOCAB, 0)
    with pytest.raises(ValueError):
        perturb((("a", "b"), ("a", "b")), ["a", "b"], 0)


@settings(max_examples=100)
@given(n=st.sampled_from([2, 3]), seed=st.integers(0, 2**32 - 1), extra=st.lists(st.sampled_from(VOCAB), max_size=10))
def test_perturb_laws(n, seed, extra):
    terms = ("q1", "q2", "q3")[:n]
    rng = np.random.default_rng(seed)
    tokens = list(terms) + extra + list(rng.choice(terms, size=3))
    rng.shuffle(tokens)
    out = perturb((terms, tuple(tokens)), VOCAB, seed)
    expect = {2: [0.6, 0.6, 1.0], 3: [0.55, 0.55, 0.55, 0.65, 0.65, 0.65, 1.0]}[n]
    assert sorted(p.score for p in out) == expect
    matched = {1.0: n, 0.6: 1, 0.65: 2, 0.55: 1}
    for p in out:
        assert contained(p.passage_tokens, terms) == matched[p.score]
        assert len(p.passage_tokens) == len(tokens)


def neg_passages():
    return [Passage(f"d{i}", 0, ("a", "b") if i % 2 else ("a", f"x{i}")) for i in range(20)]


def test_negatives_reject_full_matches():
    negs = list(negative_pairs({("a", "b"): 50}, neg_passages(), 1.0, seed=1))
    assert len(negs) == 50
    for p in negs:
        assert p.label == 0 and p.score == 0.0
        assert contained(p.passage_tokens, ("a", "b")) < 2


def test_negative_ratio_cardinality():
    negs = list(negative_pairs({("a", "b"): 100}, neg_passages(), 1.0, seed=2))
    assert len(negs) == 100
    assert len(list(negative_pairs({("a", "b"): 100}, neg_passages(), 0.5, seed=2))) == 50


def test_negatives_deterministic():
    a = list(negative_pairs({("a", "b"): 30, ("a", "x3"): 10}, neg_passages(), 1.0, seed=5))
    b = list(negative_pairs({("a", "x3"): 10, ("a", "b"): 30}, neg_passages(), 1.0, seed=5))
    # per-query generators make the sample independent of query order
    assert sorted(map(repr, a)) == sorted(map(repr, b))


def test_negatives_give_up_when_impossible(caplog):
    only_matches = [Passage("d", 0, ("a", "b"))]
    assert list(negative_pairs({("a", "b"): 3}, only_matches, 1.0, seed=0, max_attempts=5)) == []
    assert "negatives" in caplog.text
    with pytest.raises(ValueError):
        list(negative_pairs({("a", "b"): 3}, only_matches, 0.0, seed=0))


def test_derive_rng_is_keyed():
    a = derive_rng(1, "q", "x").integers(1 << 30, size=4)
    assert np.array_equal(a, derive_rng(1, "q", "x").integers(1 << 30, size=4))
    assert not np.array_equal(a, derive_rng(2, "q", "x").integers(1 << 30, size=4))


@pytest.fixture(scope="module")
def small_corpus():
    docs = weaksup_corpus(seed=1, n_docs=120, doc_len=40, vocab=60)
    return docs, build_index(docs)


def test_pipeline_pair_laws(small_corpus):
    docs, idx = small_corpus
    cfg = WeakSupConfig(vocab_min_count=5)
    n_queries = 0
    for query, positives, negatives in generate_pairs(docs, idx, cfg):
        n_queries += 1
        per_pair = 3 if len(query.terms) == 2 else 7
        assert len(positives) % per_pair == 0
        assert len(negatives) == len(positives)
        for p in positives:
            assert contained(p.passage_tokens, query.terms) == {1.0: len(query.terms), 0.6: 1, 0.65: 2, 0.55: 1}[p.score]
        for p in negatives:
            assert contained(p.passage_tokens, query.terms) < len(query.terms)
    assert n_queries > 0


def test_write_training_data(tmp_path, small_corpus):
    docs, idx = small_corpus
    cfg = WeakSupConfig(vocab_min_count=5, shard_size=500)
    res = write_training_data(docs, idx, tmp_path / "a", cfg)
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["counts"] == res.counts
    assert sum(s["count"] for s in manifest["shards"]) == res.counts["positives"] + res.counts["negatives"]
    assert len(manifest["shards"]) > 1
    first = json.loads((tmp_path / "a" / manifest["shards"][0]["path"]).open().readline())
    assert set(first) == {"query", "passage", "label", "score"}
    again = write_training_data(docs, idx, tmp_path / "b", cfg)
    assert again.manifest["output_hash"] == res.manifest["output_hash"]
    other = write_training_data(docs, idx, tmp_path / "c", WeakSupConfig(vocab_min_count=5, shard_size=500, seed=99))
    assert other.manifest["output_hash"] != res.manifest["output_hash"]
    assert other.manifest["config_hash"] != res.manifest["config_hash"]
