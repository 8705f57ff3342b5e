"""Retrieval metrics: mAP@R, top-N precision curves, recall@N.

Relevance follows the multi-label convention: a gallery item is relevant
to a query iff the two share at least one active label.  Queries with no
relevant gallery item at all are excluded from metric means (0/0 guard).
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import ParameterError, ShapeError

AP_DENOMS = ("retrieved", "bounded")


class RelevanceJudge:
    """Shared-label relevance between query and gallery label rows."""

    def __init__(self, query_labels, gallery_labels):
        q = np.asarray(query_labels)
        g = np.asarray(gallery_labels)
        if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
            raise ShapeError(
                f"label matrices disagree: {q.shape} vs {g.shape}"
            )
        self._rel = ((q != 0).astype(np.int64) @ (g != 0).astype(np.int64).T) > 0

    @property
    def n_queries(self) -> int:
        return self._rel.shape[0]

    def flags(self, query: int, gallery_ids) -> np.ndarray:
        """Boolean relevance flags for a ranked list of gallery ids."""
        return self._rel[query, np.asarray(gallery_ids, dtype=np.int64)]

    def total_relevant(self, query: int) -> int:
        """Number of relevant items in the whole gallery."""
        return int(self._rel[query].sum())


def average_precision_at(rel_flags, r: int, denom: str = "retrieved",
                         total_relevant: int | None = None) -> float:
    """Average precision over the top r of a ranked list.

    ``denom`` selects the normalizer: "retrieved" divides by the number of
    relevant items found within the top r (the deep-hashing convention);
    "bounded" divides by min(r, total_relevant) and needs
    ``total_relevant``.  Returns 0.0 when the top r holds no relevant item.
    """
    if r < 1:
        raise ParameterError(f"r must be >= 1, got {r}")
    if denom not in AP_DENOMS:
        raise ParameterError(f"denom must be one of {AP_DENOMS}, got {denom!r}")
    rel = np.asarray(rel_flags, dtype=bool)[:r]
    hits = int(rel.sum())
    if hits == 0:
        return 0.0
    positions = np.flatnonzero(rel)
    precision_sum = float(((np.arange(hits) + 1) / (positions + 1)).sum())
    if denom == "retrieved":
        return precision_sum / hits
    if total_relevant is None:
        raise ParameterError("denom='bounded' requires total_relevant")
    return precision_sum / min(r, total_relevant)


def map_at(rankings, judge: RelevanceJudge, r: int,
           denom: str = "retrieved") -> float:
    """Mean AP@r over queries; zero-relevant queries are excluded."""
    aps = []
    for q, ranked_ids in enumerate(rankings):
        total = judge.total_relevant(q)
        if total == 0:
            continue
        aps.append(average_precision_at(judge.flags(q, ranked_ids), r,
                                        denom=denom, total_relevant=total))
    if not aps:
        return 0.0
    return float(np.mean(aps))


def precision_curve(rankings, judge: RelevanceJudge, n_top: int,
                    stride: int = 1) -> list[tuple[int, float]]:
    """Mean precision@n for n in 1..n_top, emitted every ``stride`` steps.

    Rankings shorter than a cutoff still divide by the cutoff (the gallery
    simply has nothing more to offer).
    """
    if n_top < 1 or stride < 1:
        raise ParameterError("n_top and stride must be >= 1")
    cutoffs = list(range(1, n_top + 1, stride))
    sums = np.zeros(len(cutoffs))
    used = 0
    for q, ranked_ids in enumerate(rankings):
        if judge.total_relevant(q) == 0:
            continue
        used += 1
        hits = np.cumsum(judge.flags(q, ranked_ids))
        for j, n in enumerate(cutoffs):
            got = hits[min(n, len(hits)) - 1] if len(hits) else 0
            sums[j] += got / n
    if used == 0:
        return [(n, 0.0) for n in cutoffs]
    return [(n, float(s / used)) for n, s in zip(cutoffs, sums)]


def recall_at(rankings, judge: RelevanceJudge, n: int) -> float:
    """Mean fraction of each query's relevant items found in the top n."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    vals = []
    for q, ranked_ids in enumerate(rankings):
        total = judge.total_relevant(q)
        if total == 0:
            continue
        flags = judge.flags(q, np.asarray(ranked_ids)[:n])
        vals.append(float(flags.sum()) / total)
    if not vals:
        return 0.0
    return float(np.mean(vals))


def recall_curve(rankings, judge: RelevanceJudge, n_max: int,
                 stride: int = 1) -> list[tuple[int, float]]:
    """Mean recall@n for n in 1..n_max, emitted every ``stride`` steps."""
    if n_max < 1 or stride < 1:
        raise ParameterError("n_max and stride must be >= 1")
    cutoffs = list(range(1, n_max + 1, stride))
    sums = np.zeros(len(cutoffs))
    used = 0
    for q, ranked_ids in enumerate(rankings):
        total = judge.total_relevant(q)
        if total == 0:
            continue
        used += 1
        hits = np.cumsum(judge.flags(q, ranked_ids))
        for j, n in enumerate(cutoffs):
            got = hits[min(n, len(hits)) - 1] if len(hits) else 0
            sums[j] += got / total
    if used == 0:
        return [(n, 0.0) for n in cutoffs]
    return [(n, float(s / used)) for n, s in zip(cutoffs, sums)]


def write_curve_csv(path, curve, value_name: str) -> None:
    """Write (cutoff, value) pairs as CSV with header ``cutoff,<name>``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cutoff", value_name])
        for cutoff, value in curve:
            writer.writerow([cutoff, f"{value:.10g}"])
