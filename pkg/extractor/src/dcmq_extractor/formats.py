"""Writers for the engine's embedding and label file formats.

Implemented here against the published byte layout (see the engine's
FORMATS.md) rather than imported, so the files themselves are the only
coupling between the extractor and the engine:

    DCMQEMB1 | u32 N | u32 D | N*D little-endian float32, row-major
    DCMQLBL1 | u32 N | u32 L | N rows of ceil(L/8) bytes, LSB-first bits
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC_EMB = b"DCMQEMB1"
MAGIC_LBL = b"DCMQLBL1"


def write_embeddings(path, matrix) -> None:
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise ValueError(f"embeddings must be 2-d, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC_EMB)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def write_labels(path, labels) -> None:
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError(f"labels must be 2-d, got shape {arr.shape}")
    packed = np.packbits((arr != 0).astype(np.uint8), axis=1,
                         bitorder="little")
    with open(path, "wb") as fh:
        fh.write(MAGIC_LBL)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(packed.tobytes())
