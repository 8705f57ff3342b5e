"""Label vocabulary, manifest parsing, and label-to-text conversion."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class LabelVocabulary:
    """Ordered category names; position defines the label-file bit index."""

    names: list[str]

    def __post_init__(self):
        if not self.names:
            raise ValueError("vocabulary is empty")
        if any(not name for name in self.names):
            raise ValueError("vocabulary contains empty names")
        if len(set(self.names)) != len(self.names):
            raise ValueError("vocabulary contains duplicate names")
        self._index = {name: i for i, name in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def from_file(cls, path) -> "LabelVocabulary":
        """One category name per line; blank lines ignored."""
        with open(path, encoding="utf-8") as fh:
            names = [line.strip() for line in fh if line.strip()]
        return cls(names)

    def encode(self, names) -> np.ndarray:
        """Multi-hot row for a collection of category names."""
        row = np.zeros(len(self.names), dtype=np.uint8)
        for name in names:
            if name not in self._index:
                raise ValueError(f"unknown category {name!r}")
            row[self._index[name]] = 1
        return row


def labels_to_text(row, vocab: LabelVocabulary) -> str:
    """Active category names joined by single spaces, in vocabulary order.

    No prompt template is applied; plain space-joined names work best for
    teacher text encoders. A row with no active labels yields "" with a
    warning.
    """
    row = np.asarray(row)
    if row.shape != (len(vocab),):
        raise ValueError(
            f"label row has {row.shape} entries, vocabulary has {len(vocab)}"
        )
    active = [vocab.names[j] for j in range(len(vocab)) if row[j]]
    if not active:
        warnings.warn("sample has no active labels; emitting empty text",
                      stacklevel=2)
    return " ".join(active)


def read_manifest(path, vocab: LabelVocabulary) -> list[tuple[str, np.ndarray]]:
    """Parse the image manifest CSV.

    Expected header ``image,labels``; ``labels`` holds category names
    separated by ``;`` (names may contain spaces). Row order defines the
    row order of every output file.
    """
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["image", "labels"]:
            raise ValueError(
                f"{path}: manifest header must be image,labels, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            names = [part.strip() for part in row["labels"].split(";")
                     if part.strip()]
            entries.append((row["image"], vocab.encode(names)))
    if not entries:
        raise ValueError(f"{path}: manifest has no rows")
    return entries
