import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridir.dense import (
    AnnStateError,
    PassageHit,
    VectorIndex,
    VectorIndexError,
    aggregate_to_docs,
    build_ann,
    knn_approx,
    knn_exact,
)

import oracles


def quantized(rng, n, dim):
    # multiples of 1/16 keep float32 dot products exact, so ties are real ties
    return np.round(rng.standard_normal((n, dim)) * 16).clip(-64, 64) / 16


def make_index(vectors, per_doc=1):
    idx = VectorIndex(vectors.shape[1])
    idx.add_many([f"p{i:05d}" for i in range(len(vectors))], [f"d{i // per_doc:04d}" for i in range(len(vectors))],
                 vectors)
    return idx


def test_add_and_errors():
    idx = VectorIndex(4)
    idx.add("p1", "d1", [1, 0, 0, 0])
    assert len(idx) == 1
    with pytest.raises(VectorIndexError):
        idx.add("p1", "d1", [0, 1, 0, 0])
    with pytest.raises(VectorIndexError):
        idx.add("p2", "d1", [1, 0, 0])


def test_basis_vectors():
    idx = make_index(np.eye(4))
    top = knn_exact(idx, [1, 0, 0, 0], 1)
    assert top == [PassageHit("p00000", "d0000", 1.0)]


def test_k_larger_than_records():
    idx = make_index(np.eye(3))
    assert len(knn_exact(idx, [1, 1, 1], 10)) == 3


def test_exact_matches_brute_force_small():
    rng = np.random.default_rng(1)
    x = quantized(rng, 100, 8)
    idx = make_index(x)
    for q in quantized(rng, 5, 8):
        got = [(h.passage_id, h.score) for h in knn_exact(idx, q, 100)]
        assert got == oracles.knn_brute(idx.passage_ids, x, q, 100)


@settings(max_examples=25)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 300), k=st.integers(1, 50))
def test_exact_oracle_property(seed, n, k):
    rng = np.random.default_rng(seed)
    x = quantized(rng, n, 6)
    idx = make_index(x)
    q = quantized(rng, 1, 6)[0]
    assert [(h.passage_id, h.score) for h in knn_exact(idx, q, k)] == oracles.knn_brute(idx.passage_ids, x, q, k)


def test_empty_index_search():
    idx = VectorIndex(3)
    with pytest.raises(VectorIndexError):
        knn_exact(idx, [1, 2, 3], 1)
    assert "empty-vector-index" in idx.search_docs([1, 2, 3], 10, 5).flags


def test_single_centroid_is_exact():
    rng = np.random.default_rng(2)
    idx = make_index(rng.standard_normal((200, 8)))
    build_ann(idx, 1)
    assert idx.ann_state.cell_ptr.tolist() == [0, 200]
    q = rng.standard_normal(8)
    assert knn_approx(idx, q, 20, 1) == knn_exact(idx, q, 20)


def test_full_probe_is_exact():
    rng = np.random.default_rng(3)
    idx = make_index(rng.standard_normal((500, 16)))
    build_ann(idx, 8, seed=1)
    for q in rng.standard_normal((5, 16)):
        assert knn_approx(idx, q, 50, 8) == knn_exact(idx, q, 50)


def test_two_separated_clusters_are_pure():
    rng = np.random.default_rng(4)
    a = rng.normal(0, 1, (100, 4)) + np.array([20, 0, 0, 0])
    b = rng.normal(0, 1, (100, 4)) - np.array([20, 0, 0, 0])
    idx = make_index(np.vstack([a, b]))
    build_ann(idx, 2, seed=0)
    assign = idx.ann_state.assignment
    assert len(set(assign[:100])) == 1 and len(set(assign[100:])) == 1
    assert assign[0] != assign[100]


def test_ann_deterministic():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((400, 8))
    i1, i2 = make_index(x), make_index(x)
    build_ann(i1, 6, seed=9)
    build_ann(i2, 6, seed=9)
    np.testing.assert_array_equal(i1.ann_state.centroids, i2.ann_state.centroids)


def test_approx_subset_of_exact():
    rng = np.random.default_rng(6)
    idx = make_index(rng.standard_normal((600, 8)))
    build_ann(idx, 10, seed=0)
    q = rng.standard_normal(8)
    full = {h.passage_id: h.score for h in knn_exact(idx, q, len(idx))}
    for h in knn_approx(idx, q, 40, 3):
        assert full[h.passage_id] == h.score


def test_approx_requires_ann():
    idx = make_index(np.eye(3))
    with pytest.raises(AnnStateError):
        knn_approx(idx, [1, 0, 0], 1, 1)
    build_ann(idx, 2)
    with pytest.raises(VectorIndexError):
        knn_approx(idx, [1, 0, 0], 1, 3)


def test_clustered_data_reaches_high_recall():
    # embedding-like data: topical clusters rather than isotropic noise
    rng = np.random.default_rng(7)
    centers = rng.standard_normal((64, 64)) * 3
    x = (centers[rng.integers(0, 64, 10_000)] + rng.standard_normal((10_000, 64))).astype(np.float32)
    idx = make_index(x)
    build_ann(idx, 64, seed=0)
    qs = centers[rng.integers(0, 64, 20)] + rng.standard_normal((20, 64))
    rec = []
    for q in qs:
        exact = {h.passage_id for h in knn_exact(idx, q, 100)}
        approx = {h.passage_id for h in knn_approx(idx, q, 100, 16)}
        rec.append(len(exact & approx) / 100)
    assert np.mean(rec) >= 0.95


def test_aggregate_sums_passages():
    hits = [PassageHit("d1#0", "d1", 0.5), PassageHit("d1#1", "d1", 0.3), PassageHit("d2#0", "d2", 0.7)]
    agg = aggregate_to_docs(hits, 10)
    assert agg.doc_ids == ["d1", "d2"]
    assert agg.scores() == pytest.approx({"d1": 0.8, "d2": 0.7})


def test_aggregate_identity_single_passage():
    hits = [PassageHit(f"d{i}#0", f"d{i}", float(i)) for i in range(5)]
    assert aggregate_to_docs(hits, 5).scores() == {f"d{i}": float(i) for i in range(5)}


def test_aggregate_group_sum_oracle():
    rng = np.random.default_rng(8)
    hits = [PassageHit(f"p{i}", f"d{rng.integers(10)}", float(rng.normal())) for i in range(50)]
    groups = {}
    for h in hits:
        groups.setdefault(h.doc_id, []).append(h.score)
    agg = aggregate_to_docs(hits, 10)
    assert agg.scores() == pytest.approx({d: sum(v) for d, v in groups.items()})
    assert sum(agg.scores().values()) == pytest.approx(sum(h.score for h in hits))


def test_search_docs_matches_hit_aggregation():
    rng = np.random.default_rng(9)
    idx = make_index(quantized(rng, 300, 8), per_doc=3)
    q = quantized(rng, 1, 8)[0]
    direct = idx.search_docs(q, 60, 10)
    via_hits = aggregate_to_docs(knn_exact(idx, q, 60), 10)
    assert direct.doc_ids == via_hits.doc_ids
    np.testing.assert_allclose([s for _, s in direct], [s for _, s in via_hits])


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    idx = make_index(rng.standard_normal((50, 5)).astype(np.float32), per_doc=2)
    idx.save(tmp_path / "v.bin")
    back = VectorIndex.load(tmp_path / "v.bin")
    assert back.passage_ids == idx.passage_ids
    assert [back.doc_of(p) for p in back.passage_ids] == [idx.doc_of(p) for p in idx.passage_ids]
    np.testing.assert_array_equal(back.matrix, idx.matrix)
    back.save(tmp_path / "w.bin")
    assert (tmp_path / "v.bin").read_bytes() == (tmp_path / "w.bin").read_bytes()


def test_empty_file_roundtrip(tmp_path):
    VectorIndex(7).save(tmp_path / "e.bin")
    back = VectorIndex.load(tmp_path / "e.bin")
    assert len(back) == 0 and back.dim == 7


def test_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(VectorIndexError):
        VectorIndex.load(tmp_path / "x.bin")


def test_ann_save_load(tmp_path):
    rng = np.random.default_rng(11)
    idx = make_index(rng.standard_normal((100, 4)))
    build_ann(idx, 4, seed=2)
    idx.save_ann(tmp_path / "a.npz")
    other = make_index(idx.matrix)
    other.load_ann(tmp_path / "a.npz")
    q = rng.standard_normal(4)
    assert knn_approx(other, q, 10, 2) == knn_approx(idx, q, 10, 2)


def test_normalized_flag():
    idx = VectorIndex(2, normalize=True)
    idx.add("p", "d", [3, 4])
    np.testing.assert_allclose(idx.vector("p"), [0.6, 0.8], rtol=1e-6)
