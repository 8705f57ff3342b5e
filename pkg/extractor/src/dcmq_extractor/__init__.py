"""Offline teacher-embedding extractor.

Runs a pretrained vision-language model over an image folder plus label
metadata, converts multi-hot labels to category-name text, and writes
embedding/label files in the retrieval engine's binary formats.
"""

from .labels import LabelVocabulary, labels_to_text, read_manifest
from .backends import BackendLoadError, ClipBackend, ProbeBackend, get_backend
from .extract import ExtractResult, run_extract

__version__ = "0.1.0"

__all__ = [
    "LabelVocabulary", "labels_to_text", "read_manifest",
    "BackendLoadError", "ClipBackend", "ProbeBackend", "get_backend",
    "ExtractResult", "run_extract",
]
