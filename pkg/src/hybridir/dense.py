"""Passage vector index: exact and IVF-style approximate inner-product search.

On-disk format (little-endian)::

    header   4s magic "HVEC" | u16 version | u16 flags | u32 dim | u64 count | u64 strtab_bytes
    records  count x (u64 passage_id offset | u64 doc_id offset | dim x f32)
    strtab   NUL-terminated UTF-8 strings addressed by the record offsets

``flags`` bit 0 marks vectors that were L2-normalised at insertion.
"""
from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2, vq

from .ranking import ScoredList, top_k_indices

logger = logging.getLogger(__name__)

VECTOR_MAGIC = b"HVEC"
VECTOR_VERSION = 1
FLAG_NORMALIZED = 1
_HEADER = struct.Struct("<4sHHIQQ")
PASSAGE_K = 10_000


class VectorIndexError(ValueError):
    pass


class AnnStateError(RuntimeError):
    pass


@dataclass(frozen=True, slots=True)
class PassageHit:
    passage_id: str
    doc_id: str
    score: float


def record_dtype(dim: int) -> np.dtype:
    return np.dtype([("pid", "<u8"), ("doc", "<u8"), ("vec", "<f4", (dim,))])


@dataclass
class AnnState:
    centroids: np.ndarray  # (n_centroids, dim) float32
    assignment: np.ndarray  # (n_records,) cell id per record
    cell_ptr: np.ndarray  # CSR offsets into cell_members
    cell_members: np.ndarray  # record indices grouped by cell, ascending within a cell

    @property
    def n_centroids(self) -> int:
        return len(self.centroids)


class VectorIndex:
    """Passage vectors with their owning documents.

    Records are appended with :meth:`add`; search stacks them into a
    contiguous float32 matrix on first use after a mutation.
    """

    def __init__(self, dim: int, normalize: bool = False):
        if dim <= 0:
            raise VectorIndexError("dim must be positive")
        self.dim = dim
        self.normalize = normalize
        self.passage_ids: list[str] = []
        self._pid_pos: dict[str, int] = {}
        self.doc_names: list[str] = []
        self._doc_lookup: dict[str, int] = {}
        self._rec_doc_list: list[int] = []
        self._pending: list[np.ndarray] = []
        self._matrix = np.empty((0, dim), dtype=np.float32)
        self._rec_doc = np.empty(0, dtype=np.int64)
        self._pid_rank = np.empty(0, dtype=np.int64)
        self._doc_rank = np.empty(0, dtype=np.int64)
        self.ann_state: AnnState | None = None

    def __len__(self) -> int:
        return len(self.passage_ids)

    # -- mutation ---------------------------------------------------------

    def add(self, passage_id: str, doc_id: str, vector) -> None:
        vec = np.asarray(vector, dtype=np.float32).reshape(-1)
        if vec.shape[0] != self.dim:
            raise VectorIndexError(f"vector has dim {vec.shape[0]}, index expects {self.dim}")
        if passage_id in self._pid_pos:
            raise VectorIndexError(f"duplicate passage_id {passage_id!r}")
        if self.normalize:
            norm = float(np.linalg.norm(vec))
            if norm > 0:
                vec = vec / norm
        self._pid_pos[passage_id] = len(self.passage_ids)
        self.passage_ids.append(passage_id)
        d = self._doc_lookup.get(doc_id)
        if d is None:
            d = self._doc_lookup[doc_id] = len(self.doc_names)
            self.doc_names.append(doc_id)
        self._rec_doc_list.append(d)
        self._pending.append(vec)
        self.ann_state = None

    def add_many(self, passage_ids: Sequence[str], doc_ids: Sequence[str], vectors: np.ndarray) -> None:
        for pid, did, vec in zip(passage_ids, doc_ids, vectors):
            self.add(pid, did, vec)

    def _finalize(self) -> None:
        if not self._pending:
            return
        self._matrix = np.ascontiguousarray(np.vstack([self._matrix, np.stack(self._pending)]), dtype=np.float32)
        self._pending = []
        self._refresh_meta()

    def _refresh_meta(self) -> None:
        self._rec_doc = np.asarray(self._rec_doc_list, dtype=np.int64)
        self._pid_rank = _lexical_rank(self.passage_ids)
        self._doc_rank = _lexical_rank(self.doc_names)

    @property
    def matrix(self) -> np.ndarray:
        self._finalize()
        return self._matrix

    def doc_of(self, passage_id: str) -> str:
        return self.doc_names[self._rec_doc_list[self._pid_pos[passage_id]]]

    def vector(self, passage_id: str) -> np.ndarray:
        return self.matrix[self._pid_pos[passage_id]]

    # -- exact search -----------------------------------------------------

    def _query(self, query_vec) -> np.ndarray:
        q = np.asarray(query_vec, dtype=np.float32).reshape(-1)
        if q.shape[0] != self.dim:
            raise VectorIndexError(f"query has dim {q.shape[0]}, index expects {self.dim}")
        return q

    def search_arrays(self, query_vec, k: int, n_probe: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Record indices and scores of the top-``k`` records.

        ``n_probe=None`` searches exhaustively; otherwise the built IVF state
        restricts the scan to the ``n_probe`` best cells.
        """
        if k <= 0:
            raise VectorIndexError("k must be positive")
        q = self._query(query_vec)
        m = self.matrix
        if n_probe is None or (self.ann_state is not None and n_probe == self.ann_state.n_centroids):
            if n_probe is not None:
                self._check_probe(n_probe)
            scores = (m @ q).astype(np.float64)
            top = top_k_indices(scores, self._pid_rank, k)
            return top, scores[top]
        self._check_probe(n_probe)
        ann = self.ann_state
        cells = top_k_indices((ann.centroids @ q).astype(np.float64), np.arange(ann.n_centroids), n_probe)
        cand = np.concatenate([ann.cell_members[ann.cell_ptr[c] : ann.cell_ptr[c + 1]] for c in cells])
        scores = (m[cand] @ q).astype(np.float64)
        top = top_k_indices(scores, self._pid_rank[cand], k)
        return cand[top], scores[top]

    def _hits(self, idx: np.ndarray, scores: np.ndarray) -> list[PassageHit]:
        return [
            PassageHit(self.passage_ids[i], self.doc_names[self._rec_doc[i]], float(s))
            for i, s in zip(idx.tolist(), scores.tolist())
        ]

    def knn_exact(self, query_vec, k: int) -> list[PassageHit]:
        if not len(self):
            raise VectorIndexError("index is empty")
        return self._hits(*self.search_arrays(query_vec, k))

    # -- approximate search -----------------------------------------------

    def build_ann(self, n_centroids: int, seed: int = 0, max_iter: int = 25) -> None:
        """Partition records with a seeded k-means coarse quantiser."""
        m = self.matrix
        if not 1 <= n_centroids <= len(m):
            raise VectorIndexError(f"need 1 <= n_centroids <= {len(m)} records, got {n_centroids}")
        if n_centroids == 1:
            centroids = m.mean(axis=0, keepdims=True).astype(np.float32)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # empty clusters keep their previous centre
                centroids, _ = kmeans2(m.astype(np.float64), n_centroids, iter=max_iter,
                                       minit="++", seed=np.random.default_rng(seed))
            centroids = centroids.astype(np.float32)
        assignment = vq(m, centroids, check_finite=False)[0].astype(np.int64)
        self.ann_state = _ann_from_assignment(centroids, assignment)

    def _check_probe(self, n_probe: int) -> None:
        if self.ann_state is None:
            raise AnnStateError("approximate search needs build_ann() first")
        if not 1 <= n_probe <= self.ann_state.n_centroids:
            raise VectorIndexError(f"n_probe must lie in [1, {self.ann_state.n_centroids}]")

    def knn_approx(self, query_vec, k: int, n_probe: int) -> list[PassageHit]:
        self._check_probe(n_probe)
        return self._hits(*self.search_arrays(query_vec, k, n_probe))

    # -- document-level retrieval -----------------------------------------

    def aggregate_arrays(self, idx: np.ndarray, scores: np.ndarray, c: int) -> ScoredList:
        if not len(idx):
            return ScoredList()
        docs = self._rec_doc[idx]
        sums = np.bincount(docs, weights=scores, minlength=len(self.doc_names))
        present = np.unique(docs)
        top = present[top_k_indices(sums[present], self._doc_rank[present], c)]
        return ScoredList(tuple((self.doc_names[d], float(sums[d])) for d in top.tolist()))

    def search_docs(self, query_vec, passage_k: int, c: int, n_probe: int | None = None) -> ScoredList:
        """Retrieve ``passage_k`` passages and sum their scores per document."""
        if not len(self):
            return ScoredList(flags=frozenset({"empty-vector-index"}))
        idx, scores = self.search_arrays(query_vec, passage_k, n_probe)
        return self.aggregate_arrays(idx, scores, c)

    # -- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        m = self.matrix
        strtab = bytearray()
        offsets: dict[str, int] = {}

        def intern(s: str) -> int:
            off = offsets.get(s)
            if off is None:
                off = offsets[s] = len(strtab)
                strtab.extend(s.encode("utf-8") + b"\0")
            return off

        rec = np.zeros(len(m), dtype=record_dtype(self.dim))
        rec["pid"] = [intern(p) for p in self.passage_ids]
        rec["doc"] = [intern(self.doc_names[d]) for d in self._rec_doc_list]
        rec["vec"] = m
        flags = FLAG_NORMALIZED if self.normalize else 0
        with Path(path).open("wb") as fh:
            fh.write(_HEADER.pack(VECTOR_MAGIC, VECTOR_VERSION, flags, self.dim, len(m), len(strtab)))
            fh.write(rec.tobytes())
            fh.write(bytes(strtab))

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        dim, flags, rec, strtab = read_vector_file(path)
        index = cls(dim, normalize=bool(flags & FLAG_NORMALIZED))
        pids = [_cstr(strtab, int(o)) for o in rec["pid"]]
        docs = [_cstr(strtab, int(o)) for o in rec["doc"]]
        if len(set(pids)) != len(pids):
            raise VectorIndexError(f"{path}: duplicate passage ids")
        index.passage_ids = pids
        index._pid_pos = {p: i for i, p in enumerate(pids)}
        for d in docs:
            if d not in index._doc_lookup:
                index._doc_lookup[d] = len(index.doc_names)
                index.doc_names.append(d)
        index._rec_doc_list = [index._doc_lookup[d] for d in docs]
        # one contiguous copy; the record block interleaves ids with floats
        index._matrix = np.ascontiguousarray(rec["vec"], dtype=np.float32).reshape(len(rec), dim)
        index._refresh_meta()
        return index

    def save_ann(self, path: str | Path) -> None:
        if self.ann_state is None:
            raise AnnStateError("no ANN state to save")
        np.savez(path, centroids=self.ann_state.centroids, assignment=self.ann_state.assignment)

    def load_ann(self, path: str | Path) -> None:
        with np.load(path) as data:
            centroids, assignment = data["centroids"], data["assignment"]
        if len(assignment) != len(self) or centroids.shape[1] != self.dim:
            raise AnnStateError(f"{path}: ANN state does not match index")
        self.ann_state = _ann_from_assignment(centroids.astype(np.float32), assignment.astype(np.int64))


def _ann_from_assignment(centroids: np.ndarray, assignment: np.ndarray) -> AnnState:
    order = np.argsort(assignment, kind="stable")
    ptr = np.zeros(len(centroids) + 1, dtype=np.int64)
    np.cumsum(np.bincount(assignment, minlength=len(centroids)), out=ptr[1:])
    return AnnState(centroids, assignment, ptr, order)


def _lexical_rank(names: Sequence[str]) -> np.ndarray:
    rank = np.empty(len(names), dtype=np.int64)
    rank[np.argsort(np.array(names, dtype=object), kind="stable")] = np.arange(len(names))
    return rank


def _cstr(strtab: bytes, offset: int) -> str:
    end = strtab.index(b"\0", offset)
    return strtab[offset:end].decode("utf-8")


def read_vector_file(path: str | Path) -> tuple[int, int, np.ndarray, bytes]:
    """Memory-map a vector file; returns ``(dim, flags, records, string_table)``."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise VectorIndexError(f"{path}: truncated header")
        magic, version, flags, dim, count, strtab_size = _HEADER.unpack(head)
        if magic != VECTOR_MAGIC:
            raise VectorIndexError(f"{path}: bad magic {magic!r}")
        if version != VECTOR_VERSION:
            raise VectorIndexError(f"{path}: unsupported version {version}")
        dtype = record_dtype(dim)
        fh.seek(_HEADER.size + count * dtype.itemsize)
        strtab = fh.read(strtab_size)
    if count:
        rec = np.memmap(path, dtype=dtype, mode="r", offset=_HEADER.size, shape=(count,))
    else:
        rec = np.zeros(0, dtype=dtype)
    return dim, flags, rec, strtab


def knn_exact(index: VectorIndex, query_vec, k: int) -> list[PassageHit]:
    return index.knn_exact(query_vec, k)


def knn_approx(index: VectorIndex, query_vec, k: int, n_probe: int) -> list[PassageHit]:
    return index.knn_approx(query_vec, k, n_probe)


def build_ann(index: VectorIndex, n_centroids: int, seed: int = 0, max_iter: int = 25) -> None:
    index.build_ann(n_centroids, seed, max_iter)


def aggregate_to_docs(hits: Iterable[PassageHit], c: int) -> ScoredList:
    """Sum passage scores per document and keep the best ``c`` documents."""
    sums: dict[str, float] = {}
    for hit in hits:
        sums[hit.doc_id] = sums.get(hit.doc_id, 0.0) + hit.score
    return ScoredList.from_scores(sums, c)
