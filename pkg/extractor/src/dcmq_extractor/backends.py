"""Teacher model backends behind one small interface.

Any object with ``embed_images(pil_images) -> (N, D) array`` and
``embed_texts(strings) -> (N, D) array`` works as a teacher; the method is
teacher-agnostic as long as paired image/text embeddings share a space.

Two backends ship here:

- ``ClipBackend``: a CLIP-family checkpoint via ``transformers`` (weights
  must already be available locally; nothing is downloaded).
- ``ProbeBackend``: a deterministic, dependency-light stand-in (seeded
  random projections over pixel statistics and hashed bags of words) used
  for pipeline tests and dry runs. It produces stable, file-format-exact
  output without any model weights.
"""

from __future__ import annotations

import hashlib

import numpy as np


class BackendLoadError(RuntimeError):
    """The requested teacher model could not be loaded."""


class ProbeBackend:
    """Deterministic local embeddings; no model weights involved.

    Images are reduced to an 8x8 grayscale patch and projected with a
    seeded Gaussian matrix; texts are hashed into a 256-bucket bag of
    words (plus a constant feature so empty text is still nonzero) and
    projected likewise. Same input, same seed, same bytes out.
    """

    name = "probe"
    _PATCH = 8
    _BUCKETS = 256

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        rng = np.random.Generator(np.random.PCG64(seed))
        self._img_proj = rng.standard_normal((self._PATCH * self._PATCH,
                                              dim))
        self._txt_proj = rng.standard_normal((self._BUCKETS + 1, dim))

    def embed_images(self, images) -> np.ndarray:
        from PIL import Image
        rows = np.zeros((len(images), self._PATCH * self._PATCH))
        for i, image in enumerate(images):
            small = image.convert("L").resize(
                (self._PATCH, self._PATCH), Image.BILINEAR)
            rows[i] = np.asarray(small, dtype=np.float64).reshape(-1) / 255.0
        return rows @ self._img_proj

    def embed_texts(self, texts) -> np.ndarray:
        bags = np.zeros((len(texts), self._BUCKETS + 1))
        bags[:, -1] = 1.0  # constant feature keeps empty text nonzero
        for i, text in enumerate(texts):
            for token in text.split():
                digest = hashlib.sha256(token.encode("utf-8")).digest()
                bucket = int.from_bytes(digest[:4], "little") % self._BUCKETS
                bags[i, bucket] += 1.0
        return bags @ self._txt_proj


class ClipBackend:
    """CLIP-family teacher through ``transformers`` (local weights only).

    Inference runs in eval mode under no_grad with the checkpoint's stock
    preprocessing, so repeated runs produce identical embeddings.
    """

    def __init__(self, model_name: str, device: str = "cpu"):
        self.name = model_name
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise BackendLoadError(
                f"clip backend needs torch and transformers: {exc}"
            ) from exc
        try:
            self._torch = torch
            self._model = CLIPModel.from_pretrained(model_name).to(device)
            self._model.eval()
            self._processor = CLIPProcessor.from_pretrained(model_name)
            self._device = device
        except Exception as exc:
            raise BackendLoadError(
                f"could not load teacher model {model_name!r}: {exc}"
            ) from exc

    def embed_images(self, images) -> np.ndarray:
        inputs = self._processor(images=list(images), return_tensors="pt")
        inputs = {k: v.to(self._device) for k, v in inputs.items()}
        with self._torch.no_grad():
            features = self._model.get_image_features(**inputs)
        return features.cpu().numpy().astype(np.float64)

    def embed_texts(self, texts) -> np.ndarray:
        inputs = self._processor(text=list(texts), return_tensors="pt",
                                 padding=True, truncation=True)
        inputs = {k: v.to(self._device) for k, v in inputs.items()}
        with self._torch.no_grad():
            features = self._model.get_text_features(**inputs)
        return features.cpu().numpy().astype(np.float64)


def get_backend(model_name: str, probe_dim: int = 64,
                probe_seed: int = 0):
    """Resolve a backend: ``probe`` for the local stand-in, anything else
    is treated as a CLIP checkpoint name/path."""
    if model_name == "probe":
        return ProbeBackend(dim=probe_dim, seed=probe_seed)
    return ClipBackend(model_name)
