"""Distillation targets built from cached teacher embeddings.

The training signal is an N x N cross-modal similarity matrix.  Raw
teacher similarities tend to bunch up in a narrow band, so the default
pipeline rescales each row onto [-1, 1] and pins the paired (diagonal)
entry to 1.  Identity and multi-hot constructions are provided as
ablation alternatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .numerics import as_finite_array, cosine_sim_matrix


@dataclass
class TargetMatrix:
    """N x N similarity target.

    ``normalized`` records whether rows have been rescaled onto [-1, 1]
    with the diagonal pinned to 1 (the contract every trainer-facing
    constructor satisfies).
    """

    values: np.ndarray
    normalized: bool


def _matrix(t) -> np.ndarray:
    if isinstance(t, TargetMatrix):
        return t.values
    return as_finite_array(t, "target")


def compute_similarity(teacher_img, teacher_txt) -> TargetMatrix:
    """Cross-modal cosine similarity between paired teacher embeddings.

    Rows are normalized internally; inputs must agree in both row count
    and dimensionality (row i of each matrix describes the same sample).
    """
    vi = as_finite_array(teacher_img, "teacher_img")
    vt = as_finite_array(teacher_txt, "teacher_txt")
    if vi.shape != vt.shape:
        raise ShapeError(
            f"teacher matrices must share a shape, got {vi.shape} and {vt.shape}"
        )
    return TargetMatrix(cosine_sim_matrix(vi, vt), normalized=False)


def npc(t) -> TargetMatrix:
    """Row-wise affine rescale onto [-1, 1] with the diagonal pinned to 1.

    Per row, the minimum maps to -1 and the maximum to +1; afterwards the
    diagonal entry is overridden to 1.0 to keep image-text pairs aligned.
    Degenerate rows (max == min) carry no ranking information and map to
    all zeros before the diagonal override.

    The map is invariant to any positive affine change of the input row,
    which is exactly what lets it undo a teacher whose scores sit in a
    narrow band.
    """
    values = _matrix(t)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ShapeError(f"target must be square, got shape {values.shape}")
    row_max = values.max(axis=1, keepdims=True)
    row_min = values.min(axis=1, keepdims=True)
    span = row_max - row_min
    degenerate = span == 0.0
    safe_span = np.where(degenerate, 1.0, span)
    slope = 2.0 / safe_span
    intercept = -(row_max + row_min) / safe_span
    out = slope * values + intercept
    out = np.where(degenerate, 0.0, out)
    np.fill_diagonal(out, 1.0)
    return TargetMatrix(out, normalized=True)


def target_identity(n: int) -> TargetMatrix:
    """Identity target: each sample is relevant only to its own pair."""
    if n < 1:
        raise ParameterError(f"target size must be >= 1, got {n}")
    return TargetMatrix(np.eye(n, dtype=np.float64), normalized=True)


def target_multihot(labels) -> TargetMatrix:
    """Label-sharing target: +1 if two samples share a class, else -1.

    The diagonal is forced to 1 so fully unlabeled rows still count as
    self-relevant.  The +/-1 coding spans the same range as the rescaled
    teacher target, keeping the two directly comparable.
    """
    lab = np.asarray(labels)
    if lab.ndim != 2:
        raise ShapeError(f"labels must be an N x L matrix, got shape {lab.shape}")
    active = (lab != 0).astype(np.float64)
    share = active @ active.T > 0
    out = np.where(share, 1.0, -1.0)
    np.fill_diagonal(out, 1.0)
    return TargetMatrix(out, normalized=True)
