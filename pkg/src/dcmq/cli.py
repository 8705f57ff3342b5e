"""Command-line operator surface.

Subcommands: ``synth`` (generate a synthetic dataset), ``train``,
``build-index``, ``search``, ``eval``, ``inspect``.  Exit codes: 0 on
success, 1 for usage/parameter errors, 2 for data or file-format errors,
3 when training diverges.  Given identical inputs and seeds every
subcommand writes byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .errors import (AlignmentError, FormatError, NumericInputError,
                     ParameterError, ShapeError, TrainingDivergedError)
from . import evalkit, io_formats, synth
from .index_search import adc_search, build_index
from .quantizer import usage_histogram
from .student import TARGET_MODES, TrainConfig, train


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Config files (key=value, mirrors TrainConfig plus file paths)
# ---------------------------------------------------------------------------

_PATH_KEYS = ("images", "texts", "teacher_img", "teacher_txt", "labels",
              "out", "loss_out")
_CONFIG_PARSERS = {
    "m": int, "k": int, "d": int, "lam": float, "tau_s": float,
    "tau_g": float, "tau_ce": float, "lr": float, "epochs": int,
    "lr_drop_epoch": int, "batch_size": int, "seed": int,
    "joint_training": "bool", "use_gumbel": "bool", "global_targets": "bool",
    "target_mode": str, "img_hidden": "dims", "txt_hidden": "dims",
}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"not a boolean: {text!r}")


def _parse_dims(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


def load_run_config(path) -> dict:
    """Parse a key=value run-config file; unknown keys are rejected."""
    values: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParameterError(
                    f"{path}:{lineno}: expected key=value, got {line!r}"
                )
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key in _PATH_KEYS:
                values[key] = value
            elif key in _CONFIG_PARSERS:
                parser = _CONFIG_PARSERS[key]
                if parser == "bool":
                    values[key] = _parse_bool(value)
                elif parser == "dims":
                    values[key] = _parse_dims(value)
                else:
                    values[key] = parser(value)
            else:
                raise ParameterError(f"{path}:{lineno}: unknown key {key!r}")
    return values


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    cfg = synth.SynthConfig(
        seed=args.seed, classes=args.classes, n_train=args.train,
        n_gallery=args.gallery, n_query=args.query, img_dim=args.img_dim,
        txt_dim=args.txt_dim, teacher_dim=args.teacher_dim, noise=args.noise,
        labels_min=args.labels_min, labels_max=args.labels_max,
        range_compress=args.range_compress)
    inventory = synth.generate(cfg, args.out_dir)
    for name in sorted(inventory):
        print(f"{name}\t{inventory[name]} bytes")
    return 0


def _cmd_train(args) -> int:
    file_cfg = load_run_config(args.config) if args.config else {}

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return file_cfg.get(key, default)

    base = TrainConfig()
    cfg = TrainConfig(
        M=pick(args.m, "m", base.M), K=pick(args.k, "k", base.K),
        D=pick(args.dim, "d", base.D),
        lam=pick(args.lam, "lam", base.lam),
        tau_s=file_cfg.get("tau_s", base.tau_s),
        tau_g=file_cfg.get("tau_g", base.tau_g),
        tau_ce=file_cfg.get("tau_ce", base.tau_ce),
        lr=pick(args.lr, "lr", base.lr),
        epochs=pick(args.epochs, "epochs", base.epochs),
        lr_drop_epoch=file_cfg.get("lr_drop_epoch", base.lr_drop_epoch),
        batch_size=pick(args.batch_size, "batch_size", base.batch_size),
        seed=pick(args.seed, "seed", base.seed),
        joint_training=False if args.no_joint
        else file_cfg.get("joint_training", base.joint_training),
        target_mode=pick(args.target, "target_mode", base.target_mode),
        use_gumbel=False if args.no_gumbel
        else file_cfg.get("use_gumbel", base.use_gumbel),
        global_targets=True if args.global_targets
        else file_cfg.get("global_targets", base.global_targets),
        img_hidden=tuple(file_cfg.get("img_hidden", base.img_hidden)),
        txt_hidden=tuple(file_cfg.get("txt_hidden", base.txt_hidden)),
    )

    def path_of(flag_value, key, required=False):
        value = flag_value if flag_value is not None else file_cfg.get(key)
        if required and value is None:
            raise ParameterError(f"missing required input: {key}")
        return value

    images = path_of(args.images, "images", required=True)
    texts = path_of(args.texts, "texts", required=True)
    out = path_of(args.out, "out", required=True)
    teacher_img_path = path_of(args.teacher_img, "teacher_img")
    teacher_txt_path = path_of(args.teacher_txt, "teacher_txt")
    labels_path = path_of(args.labels, "labels")
    loss_out = path_of(args.loss_out, "loss_out") or f"{out}.loss.csv"

    feats_img = io_formats.read_embeddings(images)
    feats_txt = io_formats.read_embeddings(texts)
    teacher_img = io_formats.read_embeddings(teacher_img_path) \
        if teacher_img_path else None
    teacher_txt = io_formats.read_embeddings(teacher_txt_path) \
        if teacher_txt_path else None
    labels = io_formats.read_labels(labels_path) if labels_path else None

    model = train(cfg, feats_img, feats_txt, teacher_img, teacher_txt, labels)
    io_formats.write_model(out, model)
    io_formats.write_loss_trace(loss_out, model.loss_trace)
    final_loss = model.loss_trace[-1][2] if model.loss_trace else float("nan")
    print(f"trained {cfg.epochs} epochs on {feats_img.shape[0]} samples; "
          f"final batch loss {final_loss:.6g}")
    print(f"model -> {out}")
    print(f"loss trace -> {loss_out}")
    return 0


def _read_model_and_features(model_path, features_path):
    model = io_formats.read_model(model_path)
    feats = io_formats.read_embeddings(features_path)
    return model, feats


def _cmd_build_index(args) -> int:
    model, feats = _read_model_and_features(args.model, args.gallery)
    labels = io_formats.read_labels(args.labels) if args.labels else None
    embedded = model.embed(feats, args.modality)
    index = build_index(embedded, model.codebooks, labels=labels)
    io_formats.write_index(args.out, index)
    print(f"indexed {index.size} items "
          f"({model.codebooks.bits} bits/code) -> {args.out}")
    return 0


def _cmd_search(args) -> int:
    model, feats = _read_model_and_features(args.model, args.queries)
    index = io_formats.read_index(args.index)
    if index.codebooks.dim != model.codebooks.dim:
        raise ShapeError("index and model codebook dimensions differ")
    embedded = model.embed(feats, args.modality)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "rank", "gallery_id", "score"])
        for qid in range(embedded.shape[0]):
            ranked = adc_search(embedded[qid], index, args.topk)
            for rank, (gid, score) in enumerate(ranked, 1):
                writer.writerow([qid, rank, gid, f"{score:.10g}"])
    print(f"searched {embedded.shape[0]} queries (top {args.topk}) "
          f"-> {args.out}")
    return 0


def _read_rankings(path, n_queries: int) -> list[list[int]]:
    per_query: dict[int, list[tuple[int, int]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["query_id", "rank", "gallery_id", "score"]
        if reader.fieldnames != expected:
            raise FormatError(
                f"{path}: rankings header must be {','.join(expected)}"
            )
        for row in reader:
            per_query.setdefault(int(row["query_id"]), []).append(
                (int(row["rank"]), int(row["gallery_id"])))
    rankings = []
    for q in range(n_queries):
        entries = sorted(per_query.get(q, []))
        rankings.append([gid for _, gid in entries])
    return rankings


def _cmd_eval(args) -> int:
    labels_q = io_formats.read_labels(args.labels_q)
    labels_g = io_formats.read_labels(args.labels_g)
    rankings = _read_rankings(args.rankings, labels_q.shape[0])
    judge = evalkit.RelevanceJudge(labels_q, labels_g)
    metrics = [
        (f"map@{args.map_at}",
         evalkit.map_at(rankings, judge, args.map_at, denom=args.ap_denom)),
        (f"recall@{args.recall_at}",
         evalkit.recall_at(rankings, judge, args.recall_at)),
    ]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in metrics:
            writer.writerow([name, f"{value:.10g}"])
            print(f"{name} = {value:.6f}")
    if args.precision_out:
        curve = evalkit.precision_curve(rankings, judge, args.top,
                                        stride=args.stride)
        evalkit.write_curve_csv(args.precision_out, curve, "precision")
        print(f"precision curve -> {args.precision_out}")
    if args.recall_out:
        curve = evalkit.recall_curve(rankings, judge, args.recall_at,
                                     stride=args.stride)
        evalkit.write_curve_csv(args.recall_out, curve, "recall")
        print(f"recall curve -> {args.recall_out}")
    return 0


def _cmd_inspect(args) -> int:
    index = io_formats.read_index(args.index)
    books = index.codebooks
    hist = usage_histogram(index.codes, books.m, books.k)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["book", "codeword", "count", "book_entropy_bits"])
        for m in range(books.m):
            for k in range(books.k):
                writer.writerow([m, k, int(hist.counts[m, k]),
                                 f"{hist.entropy_per_book[m]:.10g}"])
    mean_entropy = float(np.mean(hist.entropy_per_book)) if books.m else 0.0
    print(f"{index.size} codes, mean per-book entropy "
          f"{mean_entropy:.4f} bits -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="dcmq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--gallery", type=int, default=500)
    p.add_argument("--query", type=int, default=100)
    p.add_argument("--img-dim", type=int, default=64)
    p.add_argument("--txt-dim", type=int, default=48)
    p.add_argument("--teacher-dim", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--labels-min", type=int, default=1)
    p.add_argument("--labels-max", type=int, default=3)
    p.add_argument("--range-compress", action="store_true",
                   help="squeeze teacher similarities into [0.05, 0.19]")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train heads and codebooks")
    p.add_argument("--config", help="key=value run-config file")
    p.add_argument("--images", help="image feature .emb file")
    p.add_argument("--texts", help="text feature .emb file")
    p.add_argument("--teacher-img", dest="teacher_img")
    p.add_argument("--teacher-txt", dest="teacher_txt")
    p.add_argument("--labels", help="label .lbl file (multihot target)")
    p.add_argument("--target", choices=TARGET_MODES, default=None)
    p.add_argument("--no-gumbel", action="store_true")
    p.add_argument("--no-joint", action="store_true")
    p.add_argument("--global-targets", action="store_true")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output model file")
    p.add_argument("--loss-out", dest="loss_out",
                   help="loss trace CSV (default: <out>.loss.csv)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("build-index", help="encode a gallery into codes")
    p.add_argument("--model", required=True)
    p.add_argument("--gallery", required=True, help="gallery feature .emb")
    p.add_argument("--modality", choices=("image", "text"), required=True)
    p.add_argument("--labels", help="gallery label .lbl to embed in index")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_index)

    p = sub.add_parser("search", help="top-k lookup-table search")
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True, help="query feature .emb")
    p.add_argument("--modality", choices=("image", "text"), required=True)
    p.add_argument("--topk", type=int, default=100)
    p.add_argument("--out", required=True, help="rankings CSV")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("eval", help="score rankings against labels")
    p.add_argument("--rankings", required=True, help="CSV from search")
    p.add_argument("--labels-q", dest="labels_q", required=True)
    p.add_argument("--labels-g", dest="labels_g", required=True)
    p.add_argument("--map-at", dest="map_at", type=int, default=5000)
    p.add_argument("--top", type=int, default=1000)
    p.add_argument("--recall-at", dest="recall_at", type=int, default=1000)
    p.add_argument("--ap-denom", dest="ap_denom",
                   choices=evalkit.AP_DENOMS, default="retrieved")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--precision-out", dest="precision_out")
    p.add_argument("--recall-out", dest="recall_out")
    p.add_argument("--out", required=True, help="metric summary CSV")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("inspect", help="codeword usage histogram of an index")
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"dcmq: error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, ShapeError, AlignmentError, NumericInputError) as exc:
        print(f"dcmq: data error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"dcmq: data error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"dcmq: training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
