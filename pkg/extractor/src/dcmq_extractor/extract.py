"""Extraction pipeline and command-line entry point.

Reads an image manifest, runs the teacher over images and label-derived
texts in batches, L2-normalizes every embedding row, and writes three
aligned files:

    <out-prefix>.img.emb   teacher image embeddings (DCMQ-EMB v1)
    <out-prefix>.txt.emb   teacher text embeddings  (DCMQ-EMB v1)
    <out-prefix>.lbl       multi-hot labels         (DCMQ-LBL v1)

Row order matches manifest order. Unreadable images are skipped (their
rows are dropped from all three files) and listed, one per line, in
<out-prefix>.skipped.txt; a model load failure is fatal.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import BackendLoadError, get_backend
from .formats import write_embeddings, write_labels
from .labels import LabelVocabulary, labels_to_text, read_manifest


@dataclass
class ExtractResult:
    written: int
    skipped: list[str]
    img_path: Path
    txt_path: Path
    lbl_path: Path


def _l2_rows(arr: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    return arr / np.where(norms == 0.0, 1.0, norms)


def _batched(fn, items, batch_size):
    chunks = [fn(items[i:i + batch_size])
              for i in range(0, len(items), batch_size)]
    return np.vstack(chunks)


def run_extract(images_dir, manifest_path, vocab_path, out_prefix,
                backend, batch_size: int = 16) -> ExtractResult:
    from PIL import Image
    vocab = LabelVocabulary.from_file(vocab_path)
    entries = read_manifest(manifest_path, vocab)

    images, label_rows, skipped = [], [], []
    for filename, row in entries:
        path = Path(images_dir) / filename
        try:
            with Image.open(path) as img:
                images.append(img.convert("RGB"))
        except Exception:
            skipped.append(filename)
            continue
        label_rows.append(row)
    if not images:
        raise ValueError("no readable images in manifest")

    texts = [labels_to_text(row, vocab) for row in label_rows]
    img_emb = _l2_rows(_batched(backend.embed_images, images, batch_size))
    txt_emb = _l2_rows(_batched(backend.embed_texts, texts, batch_size))

    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    result = ExtractResult(
        written=len(images), skipped=skipped,
        img_path=prefix.with_name(prefix.name + ".img.emb"),
        txt_path=prefix.with_name(prefix.name + ".txt.emb"),
        lbl_path=prefix.with_name(prefix.name + ".lbl"))
    write_embeddings(result.img_path, img_emb)
    write_embeddings(result.txt_path, txt_emb)
    write_labels(result.lbl_path, np.stack(label_rows))
    if skipped:
        skip_path = prefix.with_name(prefix.name + ".skipped.txt")
        skip_path.write_text("".join(f"{name}\n" for name in skipped))
    return result


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dcmq-extract", description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--model-name", default="probe",
                        help="teacher checkpoint name/path, or 'probe' for "
                             "the deterministic local stand-in")
    parser.add_argument("--images", required=True, help="image directory")
    parser.add_argument("--labels", required=True,
                        help="manifest CSV with header image,labels "
                             "(labels ;-separated category names)")
    parser.add_argument("--vocab", required=True,
                        help="text file, one category name per line")
    parser.add_argument("--out-prefix", required=True)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--probe-dim", type=int, default=64)
    parser.add_argument("--probe-seed", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        backend = get_backend(args.model_name, probe_dim=args.probe_dim,
                              probe_seed=args.probe_seed)
    except BackendLoadError as exc:
        print(f"dcmq-extract: fatal: {exc}", file=sys.stderr)
        return 1
    try:
        result = run_extract(args.images, args.labels, args.vocab,
                             args.out_prefix, backend,
                             batch_size=args.batch_size)
    except (OSError, ValueError) as exc:
        print(f"dcmq-extract: error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {result.written} rows -> {result.img_path}, "
          f"{result.txt_path}, {result.lbl_path}")
    if result.skipped:
        print(f"skipped {len(result.skipped)} unreadable images "
              f"(see {args.out_prefix}.skipped.txt)", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
