"""Bit-exact codecs for the on-disk artifact formats.

Five single-file formats, all little-endian, each opened by an 8-byte
ASCII magic (see FORMATS.md for layouts and hex dumps):

    DCMQEMB1  embedding matrix        N x D float32 rows
    DCMQLBL1  multi-hot labels        N rows of ceil(L/8) bytes, LSB-first
    DCMQCBK1  codebooks               M x K x d float32
    DCMQMDL1  trained model           heads + codebooks + config snapshot
    DCMQIDX1  code gallery            codebooks + ids + packed codes (+labels)

Floats are stored as 32-bit IEEE-754; reading then rewriting a file is
byte-identical.  Every reader either returns a value or raises a
classified error (unsupported format vs corrupt file), never crashes.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CorruptFileError, ParameterError, UnsupportedFormatError
from .index_search import Index
from .quantizer import Codebooks, code_size_bytes
from .student import MLPHead, StudentModel, TrainConfig, TARGET_MODES

MAGIC_EMB = b"DCMQEMB1"
MAGIC_LBL = b"DCMQLBL1"
MAGIC_CBK = b"DCMQCBK1"
MAGIC_MDL = b"DCMQMDL1"
MAGIC_IDX = b"DCMQIDX1"
FORMAT_VERSION = 1

_F32 = np.dtype("<f4")


class _Reader:
    """Cursor over a fully loaded byte buffer with checked reads."""

    def __init__(self, data: bytes, path):
        self.data = data
        self.path = str(path)
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise CorruptFileError(
                f"{self.path}: truncated while reading {what}: need {end} "
                f"bytes, file has {len(self.data)}"
            )
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def f32(self, what: str) -> float:
        return struct.unpack("<f", self.take(4, what))[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self.take(8, what))[0]

    def f32_array(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype=_F32).astype(np.float64)

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise CorruptFileError(
                f"{self.path}: {len(self.data) - self.pos} trailing bytes "
                f"after offset {self.pos}"
            )


def _open(path, magic: bytes) -> _Reader:
    with open(path, "rb") as fh:
        data = fh.read()
    reader = _Reader(data, path)
    got = reader.take(len(magic), "magic")
    if got != magic:
        raise UnsupportedFormatError(
            f"{path}: magic {got!r} is not {magic.decode()}"
        )
    return reader


def _check_version(reader: _Reader) -> None:
    version = reader.u8("version")
    if version != FORMAT_VERSION:
        raise UnsupportedFormatError(
            f"{reader.path}: unsupported format version {version}"
        )


def _f32_bytes(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype=_F32).tobytes()


# ---------------------------------------------------------------------------
# Embeddings (DCMQ-EMB v1)
# ---------------------------------------------------------------------------

def write_embeddings(path, matrix) -> None:
    """Write an (N, D) real matrix as float32 rows."""
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise ParameterError(f"embeddings must be 2-d, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC_EMB)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(_f32_bytes(arr))


def read_embeddings(path) -> np.ndarray:
    """Read an embedding file; returns float64 (values are exact f32)."""
    reader = _open(path, MAGIC_EMB)
    n = reader.u32("row count")
    d = reader.u32("dimension")
    payload = reader.f32_array(n * d, f"{n}x{d} float payload")
    reader.finish()
    return payload.reshape(n, d)


# ---------------------------------------------------------------------------
# Labels (DCMQ-LBL v1)
# ---------------------------------------------------------------------------

def write_labels(path, labels) -> None:
    """Write an (N, L) multi-hot matrix, one LSB-first bit row per sample."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ParameterError(f"labels must be 2-d, got shape {arr.shape}")
    bits = (arr != 0).astype(np.uint8)
    packed = np.packbits(bits, axis=1, bitorder="little")
    with open(path, "wb") as fh:
        fh.write(MAGIC_LBL)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(packed.tobytes())


def read_labels(path) -> np.ndarray:
    """Read a label file into an (N, L) uint8 0/1 matrix."""
    reader = _open(path, MAGIC_LBL)
    n = reader.u32("row count")
    l = reader.u32("label count")
    row_bytes = (l + 7) // 8
    raw = reader.take(n * row_bytes, f"{n} label rows")
    reader.finish()
    packed = np.frombuffer(raw, dtype=np.uint8).reshape(n, row_bytes) \
        if n else np.zeros((0, row_bytes), dtype=np.uint8)
    unpacked = np.unpackbits(packed, axis=1, bitorder="little") \
        if n else np.zeros((0, row_bytes * 8), dtype=np.uint8)
    if n and unpacked[:, l:].any():
        raise CorruptFileError(f"{path}: nonzero padding bits in label rows")
    return unpacked[:, :l]


# ---------------------------------------------------------------------------
# Codebooks (DCMQ-CBK v1)
# ---------------------------------------------------------------------------

def write_codebooks(path, books: Codebooks) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC_CBK)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<III", books.m, books.k, books.subdim))
        fh.write(_f32_bytes(books.codewords))


def read_codebooks(path) -> Codebooks:
    reader = _open(path, MAGIC_CBK)
    _check_version(reader)
    m = reader.u32("M")
    k = reader.u32("K")
    d = reader.u32("subdim")
    payload = reader.f32_array(m * k * d, "codeword payload")
    reader.finish()
    return Codebooks(payload.reshape(m, k, d))


# ---------------------------------------------------------------------------
# Trained model (DCMQ-MDL v1)
# ---------------------------------------------------------------------------

def _write_head(fh, head: MLPHead) -> None:
    fh.write(struct.pack("<I", len(head.dims)))
    fh.write(struct.pack(f"<{len(head.dims)}I", *head.dims))


def _write_head_params(fh, head: MLPHead) -> None:
    for w, b in zip(head.weights, head.biases):
        fh.write(_f32_bytes(w))
        fh.write(_f32_bytes(b))


def _read_head_dims(reader: _Reader, what: str) -> tuple[int, ...]:
    count = reader.u32(f"{what} dim count")
    if count < 2:
        raise CorruptFileError(f"{reader.path}: {what} needs >= 2 dims")
    return tuple(reader.u32(f"{what} dims") for _ in range(count))


def _read_head_params(reader: _Reader, dims, what: str) -> MLPHead:
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(reader.f32_array(fan_in * fan_out, f"{what} weights")
                       .reshape(fan_in, fan_out))
        biases.append(reader.f32_array(fan_out, f"{what} biases"))
    return MLPHead.from_arrays(dims, weights, biases)


def write_model(path, model: StudentModel) -> None:
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(MAGIC_MDL)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<III", cfg.M, cfg.K, cfg.D // cfg.M))
        # Config scalars are f64: hyperparameters must survive exactly.
        fh.write(struct.pack("<ddddd", cfg.lam, cfg.tau_s, cfg.tau_g,
                             cfg.tau_ce, cfg.lr))
        fh.write(struct.pack("<III", cfg.epochs, cfg.lr_drop_epoch,
                             cfg.batch_size))
        fh.write(struct.pack("<Q", cfg.seed))
        fh.write(struct.pack("<BBBB", int(cfg.joint_training),
                             int(cfg.use_gumbel), int(cfg.global_targets),
                             TARGET_MODES.index(cfg.target_mode)))
        _write_head(fh, model.image_head)
        _write_head(fh, model.text_head)
        _write_head_params(fh, model.image_head)
        _write_head_params(fh, model.text_head)
        fh.write(_f32_bytes(model.codebooks.codewords))


def read_model(path) -> StudentModel:
    reader = _open(path, MAGIC_MDL)
    _check_version(reader)
    m = reader.u32("M")
    k = reader.u32("K")
    d = reader.u32("subdim")
    lam = reader.f64("lam")
    tau_s = reader.f64("tau_s")
    tau_g = reader.f64("tau_g")
    tau_ce = reader.f64("tau_ce")
    lr = reader.f64("lr")
    epochs = reader.u32("epochs")
    lr_drop = reader.u32("lr_drop_epoch")
    batch = reader.u32("batch_size")
    seed = reader.u64("seed")
    joint = reader.u8("joint flag")
    use_gumbel = reader.u8("gumbel flag")
    global_targets = reader.u8("global-target flag")
    mode_code = reader.u8("target mode")
    if mode_code >= len(TARGET_MODES):
        raise CorruptFileError(f"{path}: unknown target mode {mode_code}")
    img_dims = _read_head_dims(reader, "image head")
    txt_dims = _read_head_dims(reader, "text head")
    if img_dims[-1] != m * d or txt_dims[-1] != m * d:
        raise CorruptFileError(f"{path}: head output dims do not match M*d")
    image_head = _read_head_params(reader, img_dims, "image head")
    text_head = _read_head_params(reader, txt_dims, "text head")
    codewords = reader.f32_array(m * k * d, "codeword payload").reshape(m, k, d)
    reader.finish()
    cfg = TrainConfig(M=m, K=k, D=m * d, lam=lam, tau_s=tau_s, tau_g=tau_g,
                      tau_ce=tau_ce, lr=lr, epochs=epochs,
                      lr_drop_epoch=lr_drop, batch_size=batch, seed=seed,
                      joint_training=bool(joint), use_gumbel=bool(use_gumbel),
                      global_targets=bool(global_targets),
                      target_mode=TARGET_MODES[mode_code],
                      img_hidden=img_dims[1:-1], txt_hidden=txt_dims[1:-1])
    return StudentModel(image_head, text_head, Codebooks(codewords), cfg)


def write_loss_trace(path, trace) -> None:
    """Loss trace CSV: epoch,batch,loss rows."""
    with open(path, "w", newline="") as fh:
        fh.write("epoch,batch,loss\n")
        for epoch, batch, loss in trace:
            fh.write(f"{epoch},{batch},{loss:.10g}\n")


# ---------------------------------------------------------------------------
# Index (DCMQ-IDX v1)
# ---------------------------------------------------------------------------

def write_index(path, index: Index) -> None:
    books = index.codebooks
    with open(path, "wb") as fh:
        fh.write(MAGIC_IDX)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<IIII", index.size, books.m, books.k,
                             books.subdim))
        fh.write(struct.pack("<B", int(index.labels is not None)))
        fh.write(_f32_bytes(books.codewords))
        fh.write(np.ascontiguousarray(index.ids, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(index.codes, dtype=np.uint8).tobytes())
        if index.labels is not None:
            fh.write(struct.pack("<I", index.labels.shape[1]))
            packed = np.packbits((index.labels != 0).astype(np.uint8),
                                 axis=1, bitorder="little")
            fh.write(packed.tobytes())


def read_index(path) -> Index:
    reader = _open(path, MAGIC_IDX)
    _check_version(reader)
    n = reader.u32("gallery size")
    m = reader.u32("M")
    k = reader.u32("K")
    d = reader.u32("subdim")
    labels_present = reader.u8("labels flag")
    codewords = reader.f32_array(m * k * d, "codeword payload").reshape(m, k, d)
    ids_raw = reader.take(8 * n, "gallery ids")
    ids = np.frombuffer(ids_raw, dtype="<u8").astype(np.int64)
    width = code_size_bytes(m, k)
    codes_raw = reader.take(n * width, "packed codes")
    codes = np.frombuffer(codes_raw, dtype=np.uint8).reshape(n, width) \
        if n else np.zeros((0, width), dtype=np.uint8)
    labels = None
    if labels_present:
        l = reader.u32("label count")
        row_bytes = (l + 7) // 8
        raw = reader.take(n * row_bytes, "label rows")
        packed = np.frombuffer(raw, dtype=np.uint8).reshape(n, row_bytes) \
            if n else np.zeros((0, row_bytes), dtype=np.uint8)
        unpacked = np.unpackbits(packed, axis=1, bitorder="little") \
            if n else np.zeros((0, row_bytes * 8), dtype=np.uint8)
        if n and unpacked[:, l:].any():
            raise CorruptFileError(f"{path}: nonzero padding bits in labels")
        labels = unpacked[:, :l]
    reader.finish()
    return Index(codes.copy(), Codebooks(codewords), ids, labels)
