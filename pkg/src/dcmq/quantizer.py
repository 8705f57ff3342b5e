"""Product-quantization codebooks, soft quantization, and code packing.

Training uses a differentiable soft assignment: per sub-space, codewords
are pooled by a temperature softmax over cosine similarities, plus an
optional Gumbel-perturbed branch that keeps gradient flowing to
non-attentive codewords.  Inference switches to hard nearest-codeword
assignment and packs the sub-indices into compact binary codes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError, ShapeError
from .numerics import SeededRng, as_finite_array, sample_gumbel, softmax_temp


@dataclass
class Codebooks:
    """M codebooks of K codewords, each a (D/M)-dimensional sub-vector.

    Shared across modalities: image and text sub-vectors quantize against
    the same codewords.
    """

    codewords: np.ndarray  # (M, K, d)

    def __post_init__(self):
        cw = np.asarray(self.codewords, dtype=np.float64)
        if cw.ndim != 3:
            raise ShapeError(f"codewords must be (M, K, d), got shape {cw.shape}")
        if not _is_power_of_two(cw.shape[1]):
            raise ParameterError(f"K must be a power of two, got {cw.shape[1]}")
        if not np.all(np.isfinite(cw)):
            raise ParameterError("codewords contain non-finite entries")
        self.codewords = cw

    @property
    def m(self) -> int:
        return self.codewords.shape[0]

    @property
    def k(self) -> int:
        return self.codewords.shape[1]

    @property
    def subdim(self) -> int:
        return self.codewords.shape[2]

    @property
    def dim(self) -> int:
        return self.m * self.subdim

    @property
    def bits(self) -> int:
        """Total code width in bits: M * log2(K)."""
        return self.m * _log2_int(self.k)


@dataclass
class UsageHistogram:
    """Codeword selection counts per book, with Shannon entropy in bits."""

    counts: np.ndarray  # (M, K) int64
    entropy_per_book: np.ndarray  # (M,) float64


def _is_power_of_two(k: int) -> bool:
    return k >= 1 and (k & (k - 1)) == 0


def _log2_int(k: int) -> int:
    return k.bit_length() - 1


def code_size_bytes(m: int, k: int) -> int:
    """Packed code length: ceil(M * log2(K) / 8) bytes."""
    if not _is_power_of_two(k):
        raise ParameterError(f"K must be a power of two, got {k}")
    return (m * _log2_int(k) + 7) // 8


def init_codebooks(m: int, k: int, dim: int, rng: SeededRng) -> Codebooks:
    """Random unit-norm codewords: i.i.d. standard normal, then normalized.

    Unit codewords keep the initial cosine logits well scaled.
    """
    if m < 1 or dim < 1:
        raise ParameterError(f"M and D must be positive, got M={m}, D={dim}")
    if dim % m != 0:
        raise ParameterError(f"D={dim} must be divisible by M={m}")
    if not _is_power_of_two(k):
        raise ParameterError(f"K must be a power of two, got {k}")
    cw = rng.normal(size=(m, k, dim // m))
    norms = np.linalg.norm(cw, axis=2, keepdims=True)
    cw = cw / np.where(norms == 0.0, 1.0, norms)
    return Codebooks(cw)


def attention_pool(sub_vector, book, weights) -> np.ndarray:
    """Convex pooling of one book's codewords: sum_k weights_k * c_k.

    ``sub_vector`` is accepted for interface symmetry with the similarity
    step that produced the weights; only its dimensionality is checked.
    """
    sub = as_finite_array(sub_vector, "sub_vector")
    cw = as_finite_array(book, "book")
    w = as_finite_array(weights, "weights")
    if cw.ndim != 2:
        raise ShapeError(f"book must be (K, d), got shape {cw.shape}")
    if sub.shape != (cw.shape[1],):
        raise ShapeError(
            f"sub_vector dim {sub.shape} does not match book dim {cw.shape[1]}"
        )
    if w.shape != (cw.shape[0],):
        raise ShapeError(f"weights shape {w.shape} does not match K={cw.shape[0]}")
    return w @ cw


# ---------------------------------------------------------------------------
# Soft quantization (training path)
# ---------------------------------------------------------------------------

@dataclass
class PQGCache:
    """Intermediate values needed to backpropagate through pqg_forward."""

    x_unit: np.ndarray        # (N, M, d)
    x_norm: np.ndarray        # (N, M, 1)
    c_unit: np.ndarray        # (M, K, d)
    c_norm: np.ndarray        # (M, K, 1)
    det_weights: np.ndarray   # (N, M, K)
    gum_weights: np.ndarray | None
    codewords: np.ndarray     # (M, K, d)
    lam: float
    tau_s: float
    tau_g: float


@dataclass
class PQGResult:
    """Per-vector soft quantization output (training-time surrogate)."""

    z: np.ndarray                     # (D,)
    det_weights: np.ndarray           # (M, K)
    gum_weights: np.ndarray | None    # (M, K) or None when lam == 0
    noise: np.ndarray                 # (M, K); zeros when lam == 0


def _unit_rows(arr, axis):
    norms = np.linalg.norm(arr, axis=axis, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return arr / safe, norms


def pqg_forward(x_batch, books: Codebooks, lam: float, tau_s: float, tau_g: float,
                noise: np.ndarray | None = None) -> tuple[np.ndarray, PQGCache]:
    """Soft-quantize a batch of D-dim vectors.

    Per sub-space m: logits are cosines against the book's codewords; the
    output is the softmax(tau_s) pooling plus ``lam`` times the pooling
    under Gumbel-perturbed softmax(tau_g).  ``noise`` of shape (N, M, K)
    must be supplied whenever ``lam > 0``; freezing it makes the whole map
    deterministic and differentiable.
    """
    if lam < 0:
        raise ParameterError(f"lam must be >= 0, got {lam}")
    if tau_s <= 0 or tau_g <= 0:
        raise ParameterError("temperatures must be positive")
    x = as_finite_array(x_batch, "x")
    if x.ndim != 2 or x.shape[1] != books.dim:
        raise ShapeError(
            f"x must be (N, {books.dim}) for these codebooks, got {x.shape}"
        )
    n = x.shape[0]
    m, k, d = books.m, books.k, books.subdim
    xs = x.reshape(n, m, d)
    x_unit, x_norm = _unit_rows(xs, axis=2)
    c_unit, c_norm = _unit_rows(books.codewords, axis=2)
    logits = np.einsum("nmd,mkd->nmk", x_unit, c_unit)

    det_w = softmax_temp(logits, tau_s)
    z_sub = np.einsum("nmk,mkd->nmd", det_w, books.codewords)
    gum_w = None
    if lam > 0:
        if noise is None:
            raise ParameterError("noise is required when lam > 0")
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != (n, m, k):
            raise ShapeError(f"noise must be {(n, m, k)}, got {noise.shape}")
        gum_w = softmax_temp(logits + noise, tau_g)
        z_sub = z_sub + lam * np.einsum("nmk,mkd->nmd", gum_w, books.codewords)

    cache = PQGCache(x_unit, x_norm, c_unit, c_norm, det_w, gum_w,
                     books.codewords, lam, tau_s, tau_g)
    return z_sub.reshape(n, books.dim), cache


def _softmax_backward(weights, d_weights, tau):
    inner = (weights * d_weights).sum(axis=-1, keepdims=True)
    return weights * (d_weights - inner) / tau


def pqg_backward(d_z, cache: PQGCache) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a scalar loss through pqg_forward.

    Returns ``(d_x, d_codewords)`` for upstream gradient ``d_z`` of shape
    (N, D).  Sub-vectors (or codewords) that were exactly zero receive
    zero gradient: the cosine is not differentiable there.
    """
    n = d_z.shape[0]
    m, k, d = cache.codewords.shape
    dz = np.asarray(d_z, dtype=np.float64).reshape(n, m, d)

    # Value path: z_m = sum_k w_k c_k (both branches share the codewords).
    base = np.einsum("nmd,mkd->nmk", dz, cache.codewords)
    combined_w = cache.det_weights.copy()
    if cache.gum_weights is not None:
        combined_w += cache.lam * cache.gum_weights
    d_cw = np.einsum("nmk,nmd->mkd", combined_w, dz)

    # Weight path back to the cosine logits.
    d_logits = _softmax_backward(cache.det_weights, base, cache.tau_s)
    if cache.gum_weights is not None:
        d_logits += _softmax_backward(cache.gum_weights, cache.lam * base,
                                      cache.tau_g)

    # Cosine path: logits = x_unit . c_unit.
    d_xu = np.einsum("nmk,mkd->nmd", d_logits, cache.c_unit)
    d_cu = np.einsum("nmk,nmd->mkd", d_logits, cache.x_unit)

    d_xs = (d_xu - (d_xu * cache.x_unit).sum(axis=2, keepdims=True)
            * cache.x_unit) / np.where(cache.x_norm == 0.0, 1.0, cache.x_norm)
    d_xs = np.where(cache.x_norm == 0.0, 0.0, d_xs)
    d_cw += np.where(
        cache.c_norm == 0.0,
        0.0,
        (d_cu - (d_cu * cache.c_unit).sum(axis=2, keepdims=True) * cache.c_unit)
        / np.where(cache.c_norm == 0.0, 1.0, cache.c_norm),
    )
    return d_xs.reshape(n, m * d), d_cw


def pqg_soft_quantize(x, books: Codebooks, lam: float, tau_s: float, tau_g: float,
                      rng: SeededRng | None = None,
                      noise: np.ndarray | None = None) -> PQGResult:
    """Soft-quantize a single vector; see :func:`pqg_forward`.

    With ``lam > 0`` fresh Gumbel noise is drawn from ``rng`` unless an
    explicit (M, K) ``noise`` array is given.  The sampled noise and both
    weight sets are returned so callers can freeze them.
    """
    x = as_finite_array(x, "x")
    if x.ndim != 1:
        raise ShapeError(f"x must be a vector, got shape {x.shape}")
    m, k = books.m, books.k
    if lam > 0 and noise is None:
        if rng is None:
            raise ParameterError("rng is required to sample noise when lam > 0")
        noise = sample_gumbel(rng, (m, k))
    batch_noise = None if noise is None else np.asarray(noise, np.float64)[None]
    z, cache = pqg_forward(x[None], books, lam, tau_s, tau_g, batch_noise)
    gum = None if cache.gum_weights is None else cache.gum_weights[0]
    out_noise = np.zeros((m, k)) if noise is None else np.asarray(noise, np.float64)
    return PQGResult(z[0], cache.det_weights[0], gum, out_noise)


# ---------------------------------------------------------------------------
# Hard assignment and code packing (inference path)
# ---------------------------------------------------------------------------

def hard_assign_batch(x_batch, books: Codebooks) -> np.ndarray:
    """Nearest codeword per sub-space by cosine similarity, for each row.

    Ties resolve to the lowest codeword index.  Returns (N, M) int32.
    """
    x = as_finite_array(x_batch, "x")
    if x.ndim != 2 or x.shape[1] != books.dim:
        raise ShapeError(
            f"x must be (N, {books.dim}) for these codebooks, got {x.shape}"
        )
    n = x.shape[0]
    xs = x.reshape(n, books.m, books.subdim)
    x_unit, _ = _unit_rows(xs, axis=2)
    c_unit, _ = _unit_rows(books.codewords, axis=2)
    sims = np.einsum("nmd,mkd->nmk", x_unit, c_unit)
    return np.argmax(sims, axis=2).astype(np.int32)


def hard_assign(x, books: Codebooks) -> np.ndarray:
    """Single-vector :func:`hard_assign_batch`; returns (M,) int32."""
    x = as_finite_array(x, "x")
    if x.ndim != 1:
        raise ShapeError(f"x must be a vector, got shape {x.shape}")
    return hard_assign_batch(x[None], books)[0]


def pack_code(indices, k: int) -> bytes:
    """Pack M sub-indices into ceil(M*log2(K)/8) bytes.

    Sub-index m occupies bit positions [m*b, (m+1)*b) with b = log2(K),
    LSB-first within each byte; trailing pad bits are zero.
    """
    if not _is_power_of_two(k):
        raise ParameterError(f"K must be a power of two, got {k}")
    idx = np.asarray(indices)
    if idx.ndim != 1:
        raise ShapeError(f"indices must be a vector, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise ParameterError(f"indices must lie in [0, {k}), got {idx.tolist()}")
    b = _log2_int(k)
    value = 0
    for m, i in enumerate(idx.tolist()):
        value |= int(i) << (m * b)
    return value.to_bytes(code_size_bytes(len(idx), k), "little")


def unpack_code(code: bytes, m: int, k: int) -> np.ndarray:
    """Inverse of :func:`pack_code`; validates length and zero padding."""
    if not _is_power_of_two(k):
        raise ParameterError(f"K must be a power of two, got {k}")
    expected = code_size_bytes(m, k)
    if len(code) != expected:
        raise FormatError(
            f"code is {len(code)} bytes, expected {expected} for M={m}, K={k}"
        )
    b = _log2_int(k)
    value = int.from_bytes(code, "little")
    if value >> (m * b):
        raise FormatError("nonzero padding bits in packed code")
    return np.array([(value >> (i * b)) & (k - 1) for i in range(m)],
                    dtype=np.int32)


def pack_codes(index_rows, k: int) -> np.ndarray:
    """Pack an (N, M) index matrix into an (N, code_bytes) uint8 array."""
    rows = np.asarray(index_rows)
    if rows.ndim != 2:
        raise ShapeError(f"index rows must be (N, M), got shape {rows.shape}")
    width = code_size_bytes(rows.shape[1], k)
    out = np.empty((rows.shape[0], width), dtype=np.uint8)
    for i, row in enumerate(rows):
        out[i] = np.frombuffer(pack_code(row, k), dtype=np.uint8)
    return out


def unpack_codes(packed: np.ndarray, m: int, k: int) -> np.ndarray:
    """Unpack an (N, code_bytes) uint8 array into (N, M) int32 indices."""
    arr = np.asarray(packed, dtype=np.uint8)
    if arr.ndim != 2:
        raise ShapeError(f"packed codes must be 2-d, got shape {arr.shape}")
    return np.stack([unpack_code(row.tobytes(), m, k) for row in arr]) \
        if arr.shape[0] else np.zeros((0, m), dtype=np.int32)


def usage_histogram(codes, m: int, k: int) -> UsageHistogram:
    """Codeword usage counts and per-book entropy for a set of packed codes.

    Entropy is Shannon entropy in bits, in [0, log2(K)]; an empty code set
    yields zero entropy.
    """
    counts = np.zeros((m, k), dtype=np.int64)
    for code in codes:
        idx = unpack_code(bytes(code), m, k)
        counts[np.arange(m), idx] += 1
    entropy = np.zeros(m, dtype=np.float64)
    total = counts.sum(axis=1)
    for book in range(m):
        if total[book] == 0:
            continue
        p = counts[book] / total[book]
        nz = p[p > 0]
        entropy[book] = float(-(nz * np.log2(nz)).sum())
    return UsageHistogram(counts, entropy)
