"""Synthetic cross-modal dataset generator.

Produces aligned feature, teacher-embedding, and label files so the whole
engine can be exercised without any real dataset or pretrained model.
Each class gets one random unit prototype per vector space (image
features, text features, teacher space); a sample picks a few classes and
sits at the normalized prototype mean plus Gaussian noise.  Everything is
deterministic given the seed.

The ``range_compress`` option rewrites the teacher training embeddings so
that every cross-modal similarity lands exactly on ``0.07 * s + 0.12``,
squeezing the usual [-1, 1] range into [0.05, 0.19].  This mimics a
teacher whose scores sit in a narrow band and is what makes the
row-rescaling ablation observable at desk scale: the rescaled targets are
unchanged (the row map is affine-invariant) while raw targets collapse
toward uniform.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .io_formats import write_embeddings, write_labels
from .numerics import SeededRng

COMPRESS_SCALE = 0.07   # similarity map: s -> COMPRESS_SCALE * s + COMPRESS_SHIFT
COMPRESS_SHIFT = 0.12


@dataclass
class SynthConfig:
    seed: int = 42
    classes: int = 8
    n_train: int = 2000
    n_gallery: int = 500
    n_query: int = 100
    img_dim: int = 64
    txt_dim: int = 48
    teacher_dim: int = 32
    noise: float = 0.1
    labels_min: int = 1
    labels_max: int = 3
    range_compress: bool = False

    def validate(self) -> None:
        counts = (self.classes, self.n_train, self.n_gallery, self.n_query,
                  self.img_dim, self.txt_dim, self.teacher_dim)
        if min(counts) < 1:
            raise ParameterError("all sizes and dims must be >= 1")
        if self.noise < 0:
            raise ParameterError(f"noise must be >= 0, got {self.noise}")
        if not 1 <= self.labels_min <= self.labels_max <= self.classes:
            raise ParameterError(
                f"need 1 <= labels_min <= labels_max <= classes, got "
                f"{self.labels_min}..{self.labels_max} of {self.classes}"
            )


def _unit_rows(arr):
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    return arr / np.where(norms == 0.0, 1.0, norms)


def _sample_split(rng: SeededRng, cfg: SynthConfig, n: int, protos_img,
                  protos_txt, protos_teacher, with_teacher: bool):
    labels = np.zeros((n, cfg.classes), dtype=np.uint8)
    feats_img = np.zeros((n, cfg.img_dim))
    feats_txt = np.zeros((n, cfg.txt_dim))
    teach_img = np.zeros((n, cfg.teacher_dim)) if with_teacher else None
    teach_txt = np.zeros((n, cfg.teacher_dim)) if with_teacher else None
    for i in range(n):
        n_lab = int(rng.integers(cfg.labels_min, cfg.labels_max + 1)) \
            if cfg.labels_max > cfg.labels_min else cfg.labels_min
        chosen = rng.permutation(cfg.classes)[:n_lab]
        labels[i, chosen] = 1
        for feats, protos, dim in ((feats_img, protos_img, cfg.img_dim),
                                   (feats_txt, protos_txt, cfg.txt_dim)):
            mean = _unit_rows(protos[chosen].mean(axis=0, keepdims=True))[0]
            feats[i] = mean + cfg.noise * rng.normal(size=dim)
        if with_teacher:
            mean = _unit_rows(protos_teacher[chosen].mean(axis=0,
                                                          keepdims=True))[0]
            # Teacher rows are re-normalized after the noise: downstream
            # training assumes unit-norm teacher embeddings.
            teach_img[i] = _unit_rows(
                (mean + cfg.noise * rng.normal(size=cfg.teacher_dim))[None])[0]
            teach_txt[i] = _unit_rows(
                (mean + cfg.noise * rng.normal(size=cfg.teacher_dim))[None])[0]
    return labels, feats_img, feats_txt, teach_img, teach_txt


def compress_teacher(teach_img: np.ndarray, teach_txt: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Rebuild unit-norm teacher rows whose cross-modal cosines equal
    ``0.07 * s + 0.12`` of the originals, exactly.

    Construction: scale the original row to sqrt(0.07), append one shared
    coordinate sqrt(0.12), then a per-row one-hot coordinate scaled
    sqrt(0.81).  Image row i and text row j use disjoint one-hot slots, so
    no cross-modal product ever sees the one-hot mass; it only pads each
    norm back to 1.
    """
    n, d = teach_img.shape
    a = np.sqrt(COMPRESS_SCALE)
    b = np.sqrt(COMPRESS_SHIFT)
    c = np.sqrt(1.0 - COMPRESS_SCALE - COMPRESS_SHIFT)
    out_dim = d + 1 + 2 * n
    out_img = np.zeros((n, out_dim))
    out_txt = np.zeros((n, out_dim))
    for rows, out, offset in ((teach_img, out_img, 0), (teach_txt, out_txt, 1)):
        out[:, :d] = a * rows
        out[:, d] = b
        out[np.arange(n), d + 1 + 2 * np.arange(n) + offset] = c
    return out_img, out_txt


def generate(cfg: SynthConfig, out_dir) -> dict[str, int]:
    """Generate all splits and write them under ``out_dir``.

    Writes features and labels for the train/gallery/query splits and
    teacher embeddings for the train split (the only consumer of teacher
    rows is target construction during training).  Returns a file
    inventory mapping filename to byte size.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = SeededRng(cfg.seed)
    protos_img = _unit_rows(rng.normal(size=(cfg.classes, cfg.img_dim)))
    protos_txt = _unit_rows(rng.normal(size=(cfg.classes, cfg.txt_dim)))
    protos_teacher = _unit_rows(rng.normal(size=(cfg.classes, cfg.teacher_dim)))

    inventory: dict[str, int] = {}

    def _emit(name, writer, value):
        path = out / name
        writer(path, value)
        inventory[name] = path.stat().st_size

    for split, n, with_teacher in (("train", cfg.n_train, True),
                                   ("gallery", cfg.n_gallery, False),
                                   ("query", cfg.n_query, False)):
        labels, fi, ft, ti, tt = _sample_split(
            rng, cfg, n, protos_img, protos_txt, protos_teacher, with_teacher)
        _emit(f"{split}.labels.lbl", write_labels, labels)
        _emit(f"{split}.img.emb", write_embeddings, fi)
        _emit(f"{split}.txt.emb", write_embeddings, ft)
        if with_teacher:
            if cfg.range_compress:
                ti, tt = compress_teacher(ti, tt)
            _emit(f"{split}.teacher_img.emb", write_embeddings, ti)
            _emit(f"{split}.teacher_txt.emb", write_embeddings, tt)
    return inventory
