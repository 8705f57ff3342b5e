"""Binary-code galleries and asymmetric-distance top-k search.

Gallery rows are hard-assigned to their nearest codewords and stored as
packed codes.  A query is scored against every code by building one
M x K table of query-subvector/codeword cosines and summing M table
lookups per gallery item, so scores are similarities in [-M, M] (higher
is better).  An exhaustive raw-cosine search is included as the
uncompressed reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError
from .numerics import as_finite_array, cosine_sim_matrix
from .quantizer import Codebooks, _unit_rows, hard_assign_batch, pack_codes, \
    unpack_codes


@dataclass
class SearchCost:
    """Operation counter for the scaling contract tests."""

    table_mults: int = 0   # multiply-adds spent building lookup tables
    lookups: int = 0       # table lookups spent scoring codes


@dataclass
class Index:
    """Immutable gallery: packed codes + codebooks + ids (+ labels).

    ``sub_indices`` caches the unpacked (N_g, M) codeword indices used for
    scoring; it is derived from ``codes`` and rebuilt on load.
    """

    codes: np.ndarray                 # (N_g, code_bytes) uint8
    codebooks: Codebooks
    ids: np.ndarray                   # (N_g,) int64
    labels: np.ndarray | None = None  # (N_g, L) uint8 or None
    sub_indices: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.uint8)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.codes.shape[0] != self.ids.shape[0]:
            raise ShapeError("code and id counts differ")
        if len(set(self.ids.tolist())) != len(self.ids):
            raise ParameterError("gallery ids must be unique")
        if self.sub_indices is None:
            self.sub_indices = unpack_codes(self.codes, self.codebooks.m,
                                            self.codebooks.k)

    @property
    def size(self) -> int:
        return self.codes.shape[0]


def build_index(gallery, books: Codebooks, labels=None, ids=None) -> Index:
    """Encode D-dim gallery embeddings into an immutable code gallery."""
    g = as_finite_array(gallery, "gallery")
    if g.ndim != 2 or g.shape[1] != books.dim:
        raise ShapeError(
            f"gallery must be (N, {books.dim}) for these codebooks, got {g.shape}"
        )
    n = g.shape[0]
    assigned = hard_assign_batch(g, books) if n else \
        np.zeros((0, books.m), dtype=np.int32)
    codes = pack_codes(assigned, books.k)
    if ids is None:
        ids = np.arange(n, dtype=np.int64)
    if labels is not None:
        labels = np.asarray(labels, dtype=np.uint8)
        if labels.shape[0] != n:
            raise ShapeError("label row count does not match gallery size")
    return Index(codes, books, ids, labels, sub_indices=assigned.astype(np.int32))


def make_lookup_table(query, books: Codebooks,
                      cost: SearchCost | None = None) -> np.ndarray:
    """(M, K) table of cosines between query sub-vectors and codewords."""
    q = as_finite_array(query, "query")
    if q.shape != (books.dim,):
        raise ShapeError(f"query must have dim {books.dim}, got shape {q.shape}")
    qs = q.reshape(books.m, books.subdim)
    q_unit, _ = _unit_rows(qs, axis=1)
    c_unit, _ = _unit_rows(books.codewords, axis=2)
    table = np.einsum("md,mkd->mk", q_unit, c_unit)
    if cost is not None:
        cost.table_mults += books.m * books.k * books.subdim
    return table


def _ranked_topk(scores, ids, k):
    # Descending score; ties broken by ascending id.
    order = np.lexsort((ids, -scores))[:k]
    return [(int(ids[i]), float(scores[i])) for i in order]


def adc_search(query, index: Index, k: int,
               cost: SearchCost | None = None) -> list[tuple[int, float]]:
    """Top-k gallery entries by summed lookup-table similarity.

    Returns at most min(k, gallery size) (id, score) pairs, score
    descending with ascending-id tie-break.  An empty index yields an
    empty list.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if index.size == 0:
        return []
    table = make_lookup_table(query, index.codebooks, cost)
    scores = np.zeros(index.size, dtype=np.float64)
    for m in range(index.codebooks.m):
        scores += table[m, index.sub_indices[:, m]]
        if cost is not None:
            cost.lookups += index.size
    return _ranked_topk(scores, index.ids, k)


def exact_search(query, gallery, k: int, ids=None) -> list[tuple[int, float]]:
    """Uncompressed full-cosine ranking (reference for quantization loss).

    Same result contract as :func:`adc_search` but scores are plain
    cosines of the raw gallery rows.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    q = as_finite_array(query, "query")
    g = as_finite_array(gallery, "gallery")
    if g.ndim != 2 or q.shape != (g.shape[1],):
        raise ShapeError(
            f"query shape {q.shape} incompatible with gallery {g.shape}"
        )
    if g.shape[0] == 0:
        return []
    scores = cosine_sim_matrix(q[None], g)[0]
    if ids is None:
        ids = np.arange(g.shape[0], dtype=np.int64)
    return _ranked_topk(scores, np.asarray(ids, dtype=np.int64), k)
