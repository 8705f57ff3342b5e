"""Dense-vector kernels used by every other module.

All public operations compute in float64 regardless of the caller's dtype,
so norms and softmax sums keep full precision even when values originate
from float32 files.  Functions are pure; randomness enters only through an
explicit :class:`SeededRng`.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericInputError, ParameterError, ShapeError

# Uniform draws are clamped to [GUMBEL_EPS, 1 - GUMBEL_EPS] before the
# double-log transform so -ln(-ln(u)) stays finite at the open endpoints.
GUMBEL_EPS = 1e-12


class SeededRng:
    """Deterministic random source: PCG64 keyed by a 64-bit seed.

    Identical seeds produce identical sample streams across runs and
    platforms.  The stream advances only through explicit method calls,
    never implicitly, so consumers can reason about draw order.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ParameterError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size=None) -> np.ndarray:
        """Uniform draws in [0, 1)."""
        return self._gen.random(size=size)

    def normal(self, size=None) -> np.ndarray:
        """Standard normal draws."""
        return self._gen.standard_normal(size=size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Integer draws in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def as_finite_array(x, name: str = "input") -> np.ndarray:
    """Convert to a float64 array, rejecting NaN/Inf entries."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericInputError(f"{name} contains non-finite entries")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Scale a vector to unit L2 norm.

    An all-zero vector is returned unchanged (sentinel for padded or
    degenerate rows).  The norm is accumulated in float64, so inputs down
    at the float32 denormal range still normalize correctly.
    """
    arr = as_finite_array(v, "vector")
    norm = np.linalg.norm(arr)
    if norm == 0.0:
        return arr.copy()
    return arr / norm


def l2_normalize_rows(mat) -> np.ndarray:
    """Row-wise :func:`l2_normalize`; zero rows stay zero."""
    arr = as_finite_array(mat, "matrix")
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {arr.shape}")
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return arr / safe


def cosine_sim_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarities between rows of ``a`` and rows of ``b``.

    Rows are normalized internally, so callers may pass raw vectors.
    Returns an (N, N') matrix with entries in [-1, 1].
    """
    a = as_finite_array(a, "a")
    b = as_finite_array(b, "b")
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"expected 2-d matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(
            f"column counts differ: {a.shape[1]} vs {b.shape[1]}"
        )
    return l2_normalize_rows(a) @ l2_normalize_rows(b).T


def softmax_temp(logits, tau: float) -> np.ndarray:
    """Temperature softmax with max-subtraction stabilization.

    Supports 1-d logits or a 2-d batch (softmax along the last axis).
    """
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    arr = as_finite_array(logits, "logits")
    shifted = (arr - arr.max(axis=-1, keepdims=True)) / tau
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sample_gumbel(rng: SeededRng, size) -> np.ndarray:
    """Standard Gumbel(0, 1) noise via inverse CDF g = -ln(-ln(u))."""
    u = np.clip(rng.uniform(size=size), GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    return -np.log(-np.log(u))


def gumbel_softmax(logits, tau: float, rng: SeededRng | None = None,
                   noise: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Softmax over Gumbel-perturbed logits.

    Returns ``(probabilities, noise)`` so callers can freeze the sampled
    noise for gradient checks or reproduction.  Passing ``noise``
    explicitly skips sampling; with all-zero noise the result is bitwise
    identical to :func:`softmax_temp` because it runs the same reduction.
    """
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    arr = as_finite_array(logits, "logits")
    if noise is None:
        if rng is None:
            raise ParameterError("either rng or noise must be provided")
        noise = sample_gumbel(rng, arr.shape)
    else:
        noise = as_finite_array(noise, "noise")
        if noise.shape != arr.shape:
            raise ShapeError(
                f"noise shape {noise.shape} does not match logits {arr.shape}"
            )
    return softmax_temp(arr + noise, tau), noise
